//! End-to-end orchestration: data generation, marker synthesis, training,
//! evaluation and the configuration ablation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::body::{BodyModel, BodyParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::motion::{
    generate_toy_motions, trim_and_resample, MotionSequence, ToyMotionParams, MIN_FRAMES,
};
use crate::normalization::{build_tree, encode_sequence, InputMode};
use crate::rbm::{synthesize_sequence, NoiseModel, RbmConfiguration, RbmRecording};
use crate::regressor::{
    predict_sequence, train, Checkpoint, Dataset, EncoderKind, EpochMetrics, InputLayout, LossMode,
    ModelConfig, TrainSettings, TrainingSample,
};

/// Seed for one pipeline stage: the first eight bytes (little endian) of
/// SHA-256 over the global seed's little-endian bytes followed by the stage name.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    /// Seconds per generated sequence.
    pub duration: f64,
    pub frame_rate: f64,
    pub min_frames: usize,
    pub motion: ToyMotionParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: 50,
            validation: 10,
            test: 0,
            duration: 2.0,
            frame_rate: 60.0,
            min_frames: MIN_FRAMES,
            motion: ToyMotionParams::default(),
        }
    }
}

/// Model sizes; input width and joint count follow from the data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub encoder: EncoderKind,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub beta_hidden: usize,
    pub window: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Gru,
            embed_dim: 32,
            hidden_dim: 64,
            layers: 2,
            beta_hidden: 32,
            window: 120,
        }
    }
}

/// Everything a run depends on. `train.seed` is always replaced by the
/// seed derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seed of the procedural body definition.
    pub body_seed: u64,
    pub rbm_config: String,
    pub input_mode: InputMode,
    pub data: DataConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub noise: NoiseModel,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            body_seed: 42,
            rbm_config: "RBM-ALL".into(),
            input_mode: InputMode::Normalized,
            data: DataConfig::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            noise: NoiseModel::default(),
        }
    }
}

impl ExperimentConfig {
    /// Fills derived fields and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        self.train.seed = stage_seed(self.seed, "train");
        self.train.validate()?;
        self.data.motion.validate()?;
        if !(self.data.frame_rate > 0.0 && self.data.duration > 0.0) {
            return Err(Error::Config(
                "data duration and frame rate must be positive".into(),
            ));
        }
        Ok(self)
    }

    pub fn model_config(&self, input_dim: usize, joints: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            embed_dim: self.model.embed_dim,
            hidden_dim: self.model.hidden_dim,
            layers: self.model.layers,
            encoder: self.model.encoder,
            beta_hidden: self.model.beta_hidden,
            joints,
            window: self.model.window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<MotionSequence>,
    pub validation: Vec<MotionSequence>,
    pub test: Vec<MotionSequence>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[MotionSequence] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

/// Generates and resamples the toy motions of every split.
pub fn generate_splits(cfg: &ExperimentConfig) -> Result<Splits> {
    let d = &cfg.data;
    let make = |split: Split, count: usize| -> Result<Vec<MotionSequence>> {
        let seed = stage_seed(cfg.seed, &format!("gen.{}", split.name()));
        generate_toy_motions(seed, count, d.duration, d.frame_rate, &d.motion)?
            .into_iter()
            .map(|mut m| {
                m.subject = format!("{}_{}", split.name(), m.subject);
                trim_and_resample(&m, d.frame_rate, d.min_frames)
            })
            .collect()
    };
    Ok(Splits {
        train: make(Split::Train, d.train)?,
        validation: make(Split::Validation, d.validation)?,
        test: make(Split::Test, d.test)?,
    })
}

/// Marker recordings for a split, with seeded noise if configured.
pub fn synthesize_split(
    body: &BodyModel,
    motions: &[MotionSequence],
    config: &RbmConfiguration,
    noise: &NoiseModel,
    seed: u64,
    split: Split,
) -> Result<Vec<RbmRecording>> {
    motions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rec = synthesize_sequence(body, m, config)?;
            noise.apply(
                &mut rec,
                stage_seed(seed, &format!("noise.{}.{i}", split.name())),
            )?;
            Ok(rec)
        })
        .collect()
}

/// Pairs encoded recordings with their ground truth. Target translations
/// are taken relative to the marker centroid of the same frame.
pub fn build_samples(
    recordings: &[RbmRecording],
    motions: &[MotionSequence],
    layout: &InputLayout,
) -> Result<Vec<TrainingSample>> {
    if recordings.len() != motions.len() {
        return Err(Error::Dimension(
            "recordings and motions differ in count".into(),
        ));
    }
    recordings
        .iter()
        .zip(motions)
        .map(|(r, m)| {
            let inputs = encode_sequence(r, &layout.tree, layout.mode)?;
            let mut targets = m.body_params_all();
            if inputs.len() != targets.len() {
                return Err(Error::Dimension(format!(
                    "`{}`: recording and motion differ in length",
                    m.sequence
                )));
            }
            for (t, x) in targets.iter_mut().zip(&inputs) {
                t.gamma -= layout.centroid(x);
            }
            Ok(TrainingSample {
                name: m.sequence.clone(),
                inputs,
                targets,
            })
        })
        .collect()
}

/// Trains one model on synthesized recordings.
#[allow(clippy::too_many_arguments)]
pub fn train_on_recordings(
    body: &BodyModel,
    cfg: &ExperimentConfig,
    rbm: &RbmConfiguration,
    mode: InputMode,
    loss: LossMode,
    train_set: (&[RbmRecording], &[MotionSequence]),
    val_set: (&[RbmRecording], &[MotionSequence]),
) -> Result<(Checkpoint, Vec<EpochMetrics>)> {
    let layout = InputLayout {
        mode,
        tree: build_tree(rbm, &body.topology)?,
    };
    let data = Dataset {
        train: build_samples(train_set.0, train_set.1, &layout)?,
        validation: build_samples(val_set.0, val_set.1, &layout)?,
    };
    let model = cfg.model_config(layout.input_dim(), body.joint_count());
    let settings = TrainSettings {
        loss,
        ..cfg.train.clone()
    };
    let outcome = train(&model, &data, &settings)?;
    let log = outcome.log.clone();
    Ok((
        outcome.into_checkpoint(model, layout, rbm.name.clone())?,
        log,
    ))
}

/// Predicts every recording and scores against the motions.
pub fn evaluate_checkpoint(
    body: &BodyModel,
    checkpoint: &Checkpoint,
    recordings: &[RbmRecording],
    motions: &[MotionSequence],
) -> Result<EvalReport> {
    if recordings.len() != motions.len() {
        return Err(Error::Dimension(
            "recordings and motions differ in count".into(),
        ));
    }
    let pred = recordings
        .iter()
        .map(|r| predict_sequence(checkpoint, r, &checkpoint.layout.tree))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<Vec<BodyParams>> = motions
        .iter()
        .map(MotionSequence::body_params_all)
        .collect();
    evaluate(body, &pred, &truth)
}

/// One trained and evaluated model of an ablation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationCell {
    pub rbm_config: String,
    pub input_mode: InputMode,
    pub loss: LossMode,
}

impl AblationCell {
    pub fn new(rbm_config: &str, input_mode: InputMode, loss: LossMode) -> Self {
        Self {
            rbm_config: rbm_config.into(),
            input_mode,
            loss,
        }
    }

    /// Normalization on/off crossed with geodesic/squared-error pose loss.
    pub fn loss_grid(rbm_config: &str) -> Vec<Self> {
        let mut v = vec![];
        for mode in [InputMode::Normalized, InputMode::Global] {
            for loss in [LossMode::Geodesic, LossMode::Mse] {
                v.push(Self::new(rbm_config, mode, loss));
            }
        }
        v
    }

    pub fn label(&self) -> String {
        let mode = match self.input_mode {
            InputMode::Normalized => "norm",
            InputMode::Global => "global",
        };
        let loss = match self.loss {
            LossMode::Geodesic => "geodesic",
            LossMode::Mse => "mse",
        };
        format!("{}/{mode}/{loss}", self.rbm_config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub cell: AblationCell,
    pub report: EvalReport,
    pub final_train_loss: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn find(&self, cell: &AblationCell) -> Option<&AblationRow> {
        self.rows.iter().find(|r| &r.cell == cell)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("rbm_config,input_mode,loss,");
        s.push_str(EvalReport::csv_header());
        s.push_str(",final_train_loss\n");
        for r in &self.rows {
            let c = &r.cell;
            let mode = serde_json::to_value(c.input_mode).unwrap();
            let loss = serde_json::to_value(c.loss).unwrap();
            s.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                c.rbm_config,
                mode.as_str().unwrap(),
                loss.as_str().unwrap(),
                r.report.csv_row(),
                r.final_train_loss
            ));
        }
        s
    }

    /// One `x,y` series per metric, with rows in table order as x labels.
    pub fn plot_series(&self) -> String {
        let mut s = String::from("series,x,y\n");
        for (metric, get) in [
            (
                "mpjpe_mm",
                (|r: &EvalReport| r.mpjpe) as fn(&EvalReport) -> f64,
            ),
            ("pa_mpjpe_mm", |r| r.pa_mpjpe),
            ("mpjae_deg", |r| r.mpjae),
        ] {
            for r in &self.rows {
                s.push_str(&format!(
                    "{metric},{},{:.3}\n",
                    r.cell.label(),
                    get(&r.report)
                ));
            }
        }
        s
    }
}

/// Trains and evaluates one model per cell with the same seed and budget,
/// scoring on the validation split.
pub fn run_ablation(
    body: &BodyModel,
    cfg: &ExperimentConfig,
    splits: &Splits,
    cells: &[AblationCell],
) -> Result<AblationTable> {
    let mut cache: Vec<(String, Vec<RbmRecording>, Vec<RbmRecording>)> = vec![];
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        if !cache.iter().any(|(n, _, _)| *n == cell.rbm_config) {
            let rbm = RbmConfiguration::preset(&cell.rbm_config, body)?;
            let tr = synthesize_split(
                body,
                &splits.train,
                &rbm,
                &cfg.noise,
                cfg.seed,
                Split::Train,
            )?;
            let va = synthesize_split(
                body,
                &splits.validation,
                &rbm,
                &cfg.noise,
                cfg.seed,
                Split::Validation,
            )?;
            cache.push((cell.rbm_config.clone(), tr, va));
        }
        let (_, tr, va) = cache
            .iter()
            .find(|(n, _, _)| *n == cell.rbm_config)
            .unwrap();
        let rbm = RbmConfiguration::preset(&cell.rbm_config, body)?;
        let (ckpt, log) = train_on_recordings(
            body,
            cfg,
            &rbm,
            cell.input_mode,
            cell.loss,
            (tr, &splits.train),
            (va, &splits.validation),
        )?;
        let report = evaluate_checkpoint(body, &ckpt, va, &splits.validation)?;
        rows.push(AblationRow {
            cell: cell.clone(),
            report,
            final_train_loss: log.last().map_or(f64::NAN, |e| e.train.total),
            epochs: log.len(),
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_seeds_are_stable_and_distinct() {
        assert_eq!(stage_seed(7, "train"), stage_seed(7, "train"));
        assert_ne!(stage_seed(7, "train"), stage_seed(7, "gen.train"));
        assert_ne!(stage_seed(7, "train"), stage_seed(8, "train"));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"sed": 1}"#);
        assert!(err.is_err());
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 3, "train": {"epochs": 5}}"#).unwrap();
        let cfg = cfg.resolve().unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.seed, stage_seed(3, "train"));
    }

    #[test]
    fn grid_has_four_cells() {
        let g = AblationCell::loss_grid("RBM-ALL");
        assert_eq!(g.len(), 4);
        assert_eq!(g[0].label(), "RBM-ALL/norm/geodesic");
    }
}
