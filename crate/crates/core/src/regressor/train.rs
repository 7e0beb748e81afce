use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{composite_loss_grad, LossBreakdown, LossMode, LossWeights};
use super::network::{backward_cached, forward_cached, zero_gradients, Gradients, RecurrentState};
use super::{init_model, Checkpoint, ModelConfig, ModelParams};
use crate::body::BodyParams;
use crate::error::{Error, Result};
use crate::metrics::mpjae;
use crate::normalization::InputVector;
use crate::so3::UnitQuaternion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_interval` epochs.
    pub decay: f64,
    pub decay_interval: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossMode,
    pub weights: LossWeights,
    /// Global gradient-norm clip, if any.
    pub grad_clip: Option<f64>,
    /// Validate every this many epochs (and after the last one).
    pub validate_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 5e-4,
            decay: 0.8,
            decay_interval: 100,
            batch_size: 1,
            seed: 0,
            loss: LossMode::Geodesic,
            weights: LossWeights::default(),
            grad_clip: None,
            validate_every: 1,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = self.epochs > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.decay_interval > 0
            && self.batch_size > 0
            && self.validate_every > 0
            && self.grad_clip.is_none_or(|c| c > 0.0);
        if !positive {
            return Err(Error::Config("training settings must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("decay factor must lie in (0, 1]".into()));
        }
        self.weights.validate()
    }
}

/// Step-decayed rate for a 1-based epoch.
pub fn learning_rate(settings: &TrainSettings, epoch: usize) -> f64 {
    let steps = epoch.saturating_sub(1) / settings.decay_interval;
    settings.learning_rate * settings.decay.powi(steps as i32)
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .tensors
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (name, t) in params.tensors.iter_mut() {
            let g = &grads[name].data;
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            for i in 0..t.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                t.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub name: String,
    pub inputs: Vec<InputVector>,
    pub targets: Vec<BodyParams>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<TrainingSample>,
    pub validation: Vec<TrainingSample>,
}

impl Dataset {
    fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        for s in self.train.iter().chain(&self.validation) {
            if s.inputs.len() != s.targets.len() {
                return Err(Error::Dimension(format!(
                    "sample `{}`: inputs and targets differ in length",
                    s.name
                )));
            }
            if s.inputs.iter().any(|x| x.values.len() != config.input_dim) {
                return Err(Error::Dimension(format!(
                    "sample `{}`: input width differs from the model",
                    s.name
                )));
            }
            if s.targets.iter().any(|y| y.theta.len() != config.joints) {
                return Err(Error::Dimension(format!(
                    "sample `{}`: joint count differs from the model",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train: LossBreakdown,
    pub val_loss: Option<f64>,
    /// Degrees.
    pub val_mpjae: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochMetrics>,
}

fn standardization(config: &ModelConfig, data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let d = config.input_dim;
    let frames: Vec<&InputVector> = data.train.iter().flat_map(|s| &s.inputs).collect();
    let n = frames.len().max(1) as f64;
    let mut mean = vec![0.0; d];
    for f in &frames {
        for (m, v) in mean.iter_mut().zip(&f.values) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for f in &frames {
        for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    (mean, scale)
}

/// Log of the sign-aligned mean target rotation per joint.
fn mean_rotations(config: &ModelConfig, data: &Dataset) -> Vec<Vector3<f64>> {
    (0..config.joints)
        .map(|j| {
            let mut acc = [0.0; 4];
            let mut first: Option<UnitQuaternion> = None;
            for t in data.train.iter().flat_map(|s| &s.targets) {
                let q = UnitQuaternion::exp(t.theta[j].vector());
                let r = *first.get_or_insert(q);
                let sign = if q.dot(&r) < 0.0 { -1.0 } else { 1.0 };
                for (a, v) in acc.iter_mut().zip(q.to_array()) {
                    *a += sign * v;
                }
            }
            UnitQuaternion::new_normalize(acc[0], acc[1], acc[2], acc[3])
                .map(|q| *q.log().vector())
                .unwrap_or_else(|_| Vector3::zeros())
        })
        .collect()
}

/// Validation loss (frame-weighted) and MPJAE in degrees.
fn evaluate_split(
    config: &ModelConfig,
    params: &ModelParams,
    samples: &[TrainingSample],
    settings: &TrainSettings,
) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut angle = 0.0;
    let mut frames = 0usize;
    for s in samples {
        if s.inputs.is_empty() {
            continue;
        }
        let (preds, _, _) =
            forward_cached(config, params, &s.inputs, &RecurrentState::zeros(config))?;
        let (l, _) = composite_loss_grad(&preds, &s.targets, &settings.weights, settings.loss)?;
        let predicted: Vec<BodyParams> = preds
            .into_iter()
            .map(|p| BodyParams {
                beta: p.beta,
                theta: p.theta,
                gamma: p.gamma,
            })
            .collect();
        let n = s.inputs.len();
        loss += l.total * n as f64;
        angle += mpjae(&predicted, &s.targets)? * n as f64;
        frames += n;
    }
    let n = frames.max(1) as f64;
    Ok((loss / n, angle / n))
}

fn finish_step(
    params: &mut ModelParams,
    adam: &mut Adam,
    grads: &mut Gradients,
    windows: usize,
    lr: f64,
    clip: Option<f64>,
    epoch: usize,
) -> Result<()> {
    let mut scale = 1.0 / windows as f64;
    if let Some(c) = clip {
        let norm = grads
            .values()
            .flat_map(|t| &t.data)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
            * scale;
        if norm > c {
            scale *= c / norm;
        }
    }
    for t in grads.values_mut() {
        for g in &mut t.data {
            *g *= scale;
        }
    }
    adam.step(params, grads, lr);
    for t in grads.values_mut() {
        t.data.fill(0.0);
    }
    if !params.is_finite() {
        return Err(Error::Diverged {
            epoch,
            message: "non-finite parameters after an optimizer step".into(),
        });
    }
    Ok(())
}

/// Truncated backpropagation through time with Adam.
///
/// Each epoch visits the training sequences in a seeded random order; a
/// sequence is cut into consecutive windows of `config.window` frames whose
/// recurrent state is carried over (without gradient) from the previous
/// window. Every `batch_size` windows the mean gradient is applied.
pub fn train(
    config: &ModelConfig,
    data: &Dataset,
    settings: &TrainSettings,
) -> Result<TrainOutcome> {
    settings.validate()?;
    config.validate()?;
    data.validate(config)?;
    let mut params = init_model(config, settings.seed)?;
    (params.input_mean, params.input_scale) = standardization(config, data);
    let bias = &mut params.tensors.get_mut("theta.b").expect("theta head").data;
    for (j, r) in mean_rotations(config, data).iter().enumerate() {
        bias[3 * j..3 * j + 3].copy_from_slice(r.as_slice());
    }
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut grads = zero_gradients(config);
    let mut log = Vec::with_capacity(settings.epochs);
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 1..=settings.epochs {
        let lr = learning_rate(settings, epoch);
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut frames = 0usize;
        let mut windows = 0usize;
        for &i in &order {
            let sample = &data.train[i];
            let mut state = RecurrentState::zeros(config);
            for (x, y) in sample
                .inputs
                .chunks(config.window)
                .zip(sample.targets.chunks(config.window))
            {
                let (preds, cache, next) = forward_cached(config, &params, x, &state)?;
                let (l, dpred) = composite_loss_grad(&preds, y, &settings.weights, settings.loss)?;
                if !l.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        message: format!("non-finite loss on `{}`", sample.name),
                    });
                }
                backward_cached(config, &params, &cache, &dpred, &mut grads)?;
                let n = x.len() as f64;
                sums.total += l.total * n;
                sums.theta += l.theta * n;
                sums.beta += l.beta * n;
                sums.gamma += l.gamma * n;
                frames += x.len();
                state = next;
                windows += 1;
                if windows == settings.batch_size {
                    finish_step(
                        &mut params,
                        &mut adam,
                        &mut grads,
                        windows,
                        lr,
                        settings.grad_clip,
                        epoch,
                    )?;
                    windows = 0;
                }
            }
        }
        if windows > 0 {
            finish_step(
                &mut params,
                &mut adam,
                &mut grads,
                windows,
                lr,
                settings.grad_clip,
                epoch,
            )?;
        }
        let n = frames.max(1) as f64;
        let train = LossBreakdown {
            total: sums.total / n,
            theta: sums.theta / n,
            beta: sums.beta / n,
            gamma: sums.gamma / n,
        };
        let validate = !data.validation.is_empty()
            && (epoch % settings.validate_every == 0 || epoch == settings.epochs);
        let (val_loss, val_mpjae) = if validate {
            let (l, a) = evaluate_split(config, &params, &data.validation, settings)?;
            (Some(l), Some(a))
        } else {
            (None, None)
        };
        log.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            train,
            val_loss,
            val_mpjae,
        });
    }
    Ok(TrainOutcome { params, log })
}

impl TrainOutcome {
    pub fn into_checkpoint(
        self,
        config: ModelConfig,
        layout: super::InputLayout,
        rbm_config: String,
    ) -> Result<Checkpoint> {
        Checkpoint::new(config, self.params, layout, rbm_config)
    }
}
