//! Temporal regression from marker inputs to body parameters.
//!
//! The network embeds each standardized input frame linearly, runs a stack
//! of gated recurrent layers over time and reads three heads off the shared
//! feature `[h_top, input]`: linear pose and translation heads and a
//! one-hidden-layer tanh MLP for shape.

mod loss;
mod network;
mod train;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::normalization::{encode_sequence, InputMode, InputVector, NormalizationTree};
use crate::rbm::RbmRecording;

pub use loss::{
    composite_loss, composite_loss_grad, LossBreakdown, LossMode, LossWeights, PredictionGrad,
};
pub use network::{backward, forward, forward_with_state, ForwardCache, Gradients, RecurrentState};
pub use train::{
    learning_rate, train, Adam, Dataset, EpochMetrics, TrainOutcome, TrainSettings, TrainingSample,
};

/// Temporal encoder families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Gru,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub encoder: EncoderKind,
    /// Hidden width of the shape MLP.
    pub beta_hidden: usize,
    pub joints: usize,
    /// Truncation length for training, in frames.
    pub window: usize,
}

impl ModelConfig {
    pub fn new(input_dim: usize, joints: usize) -> Self {
        Self {
            input_dim,
            embed_dim: 32,
            hidden_dim: 64,
            layers: 2,
            encoder: EncoderKind::Gru,
            beta_hidden: 32,
            joints,
            window: 120,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.embed_dim,
            self.hidden_dim,
            self.layers,
            self.beta_hidden,
            self.joints,
            self.window,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.hidden_dim + self.input_dim
    }

    /// Name, rows and columns of every trainable tensor.
    pub fn shapes(&self) -> Vec<(String, usize, usize)> {
        let (e, h) = (self.embed_dim, self.hidden_dim);
        let f = self.feature_dim();
        let mut s = vec![
            ("embed.w".to_string(), e, self.input_dim),
            ("embed.b".to_string(), e, 1),
        ];
        for l in 0..self.layers {
            let input = if l == 0 { e } else { h };
            s.push((format!("gru{l}.w_ih"), 3 * h, input));
            s.push((format!("gru{l}.w_hh"), 3 * h, h));
            s.push((format!("gru{l}.b_ih"), 3 * h, 1));
            s.push((format!("gru{l}.b_hh"), 3 * h, 1));
        }
        s.extend([
            ("theta.w".to_string(), 3 * self.joints, f),
            ("theta.b".to_string(), 3 * self.joints, 1),
            ("gamma.w".to_string(), 3, f),
            ("gamma.b".to_string(), 3, 1),
            ("beta.w1".to_string(), self.beta_hidden, f),
            ("beta.b1".to_string(), self.beta_hidden, 1),
            ("beta.w2".to_string(), SHAPE_DIM, self.beta_hidden),
            ("beta.b2".to_string(), SHAPE_DIM, 1),
        ]);
        s
    }

    pub fn parameter_count(&self) -> usize {
        self.shapes().iter().map(|(_, r, c)| r * c).sum()
    }
}

/// Row-major matrix; vectors have one column.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Trainable tensors by name plus the fixed input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// Seed the weights were initialized from.
    pub init_seed: u64,
}

impl ModelParams {
    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[name]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Checks names and shapes against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let shapes = config.shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Dimension(
                "parameter set does not match the model".into(),
            ));
        }
        for (name, r, c) in shapes {
            match self.tensors.get(&name) {
                Some(t) if t.rows == r && t.cols == c && t.data.len() == r * c => {}
                _ => {
                    return Err(Error::Dimension(format!(
                        "tensor `{name}` missing or mis-shaped"
                    )))
                }
            }
        }
        if self.input_mean.len() != config.input_dim || self.input_scale.len() != config.input_dim {
            return Err(Error::Dimension(
                "input standardization has the wrong length".into(),
            ));
        }
        Ok(())
    }

    pub fn zero_heads(&mut self) {
        for name in [
            "theta.w", "theta.b", "gamma.w", "gamma.b", "beta.w2", "beta.b2",
        ] {
            self.tensors.get_mut(name).unwrap().data.fill(0.0);
        }
    }
}

/// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, with the
/// weight's fan-in also used for its bias; identity standardization.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = config.shapes();
    let mut tensors = BTreeMap::new();
    let mut fan_in = 1;
    for (name, rows, cols) in shapes {
        if !name.rsplit('.').next().is_some_and(|n| n.starts_with('b')) {
            fan_in = cols;
        }
        let fan = if name.starts_with("gru") {
            config.hidden_dim
        } else {
            fan_in
        };
        let bound = 1.0 / (fan as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        tensors.insert(name, Tensor { rows, cols, data });
    }
    Ok(ModelParams {
        tensors,
        input_mean: vec![0.0; config.input_dim],
        input_scale: vec![1.0; config.input_dim],
        init_seed: seed,
    })
}

/// One frame of network output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionFrame {
    pub theta: Vec<crate::so3::AxisAngle>,
    pub beta: [f64; SHAPE_DIM],
    pub gamma: Vector3<f64>,
}

impl PredictionFrame {
    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
            && self.beta.iter().all(|b| b.is_finite())
            && self.gamma.iter().all(|g| g.is_finite())
    }
}

/// The input encoding a model was trained on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLayout {
    pub mode: InputMode,
    pub tree: NormalizationTree,
}

impl InputLayout {
    pub fn input_dim(&self) -> usize {
        self.mode.input_dim(self.tree.len())
    }

    /// Mean marker position of an encoded frame. The network predicts the
    /// root translation relative to this point.
    pub fn centroid(&self, x: &InputVector) -> Vector3<f64> {
        let v = &x.values;
        match self.mode {
            InputMode::Normalized => Vector3::new(v[0], v[1], v[2]),
            InputMode::Global => {
                let n = self.tree.len();
                (0..n)
                    .map(|i| Vector3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]))
                    .sum::<Vector3<f64>>()
                    / n as f64
            }
        }
    }
}

/// Trained model with everything needed to run it on new recordings.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub layout: InputLayout,
    pub rbm_config: String,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        params: ModelParams,
        layout: InputLayout,
        rbm_config: String,
    ) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        if layout.input_dim() != config.input_dim {
            return Err(Error::ConfigMismatch(format!(
                "layout gives {} inputs, model expects {}",
                layout.input_dim(),
                config.input_dim
            )));
        }
        Ok(Self {
            config,
            params,
            layout,
            rbm_config,
        })
    }

    pub fn check_compatible(
        &self,
        recording: &RbmRecording,
        tree: &NormalizationTree,
    ) -> Result<()> {
        if recording.config_name != self.rbm_config {
            return Err(Error::ConfigMismatch(format!(
                "recording uses `{}`, checkpoint was trained on `{}`",
                recording.config_name, self.rbm_config
            )));
        }
        if *tree != self.layout.tree {
            return Err(Error::ConfigMismatch(
                "normalization tree differs from the checkpoint's".into(),
            ));
        }
        if let Some(n) = recording.marker_count() {
            if n != tree.len() {
                return Err(Error::ConfigMismatch(format!(
                    "recording has {n} markers, checkpoint expects {}",
                    tree.len()
                )));
            }
        }
        Ok(())
    }

    /// Runs the whole recording through the network. Windows of
    /// `config.window` frames are processed back to back with the recurrent
    /// state carried across, so the result equals one pass over the sequence.
    /// Shape is averaged over the sequence and the marker centroid is added
    /// back to the predicted translation.
    pub fn predict_inputs(&self, inputs: &[InputVector]) -> Result<Vec<BodyParams>> {
        let mut state = RecurrentState::zeros(&self.config);
        let mut frames = Vec::with_capacity(inputs.len());
        for window in inputs.chunks(self.config.window) {
            let (out, next) = forward_with_state(&self.config, &self.params, window, &state)?;
            frames.extend(out);
            state = next;
        }
        if frames.is_empty() {
            return Ok(vec![]);
        }
        let mut beta = [0.0; SHAPE_DIM];
        for f in &frames {
            for (b, v) in beta.iter_mut().zip(&f.beta) {
                *b += v / frames.len() as f64;
            }
        }
        Ok(frames
            .into_iter()
            .zip(inputs)
            .map(|(f, x)| BodyParams {
                beta,
                theta: f.theta,
                gamma: f.gamma + self.layout.centroid(x),
            })
            .collect())
    }
}

/// Normalizes a recording and predicts body parameters for every frame.
pub fn predict_sequence(
    checkpoint: &Checkpoint,
    recording: &RbmRecording,
    tree: &NormalizationTree,
) -> Result<Vec<BodyParams>> {
    checkpoint.check_compatible(recording, tree)?;
    let inputs = encode_sequence(recording, tree, checkpoint.layout.mode)?;
    checkpoint.predict_inputs(&inputs)
}
