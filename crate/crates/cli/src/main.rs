mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rbm_core::io::{
    self, DatasetManifest, ManifestEntry, ABLATION_MAGIC, BODY_MAGIC, RBM_CONFIG_MAGIC,
    REPORT_MAGIC, TRAIN_LOG_MAGIC,
};
use rbm_core::pipeline::{
    evaluate_checkpoint, generate_splits, run_ablation, synthesize_split, train_on_recordings,
};
use rbm_core::rbm::{average_frames, preset_names, tpose_calibrate};
use rbm_core::regressor::EpochMetrics;
use rbm_core::{
    build_default_body, AblationCell, BodyModel, Error, ErrorCategory, ExperimentConfig,
    MotionSequence, RbmConfiguration, RbmRecording, Result, Split,
};

const MOTION_MANIFEST: &str = "manifest.json";
const RECORDING_MANIFEST: &str = "recordings.json";

#[derive(Parser)]
#[command(
    name = "rbm",
    version,
    about = "Rigid-body-marker motion capture pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "rbm-out")]
    out: PathBuf,
    /// Configuration override `key.path=value`; repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, value_parser = ["geodesic", "mse"])]
    loss: Option<String>,
    #[arg(long, global = true)]
    rbm_config: Option<String>,
    #[arg(long, global = true, value_parser = ["gru"])]
    encoder: Option<String>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Generate toy motion sequences and a dataset manifest.
    Gen {
        /// Number of training sequences.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Synthesize marker recordings for a generated dataset.
    Synth {
        /// Directory written by `gen`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a regressor on synthesized recordings.
    Train {
        /// Directory written by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on one split of synthesized recordings.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["train", "validation", "test"], default_value = "validation")]
        split: String,
    },
    /// Estimate marker mounting offsets from T-pose frames of a recording.
    Calibrate {
        #[arg(long)]
        recording: PathBuf,
        /// Leading frames averaged into the reference measurement.
        #[arg(long, default_value_t = 1)]
        frames: usize,
    },
    /// Train and evaluate one model per marker configuration.
    Ablate {
        /// Comma-separated configuration names; all presets by default.
        #[arg(long, value_delimiter = ',')]
        configs: Vec<String>,
        /// Cross each configuration with normalization on/off and both losses.
        #[arg(long)]
        grid: bool,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    verbose: u8,
    explicit_rbm: bool,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn body(&self) -> BodyModel {
        build_default_body(self.cfg.body_seed)
    }

    fn snapshot(&self) -> Result<()> {
        config::write_snapshot(&self.out, &self.cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Io => 3,
        ErrorCategory::Format => 4,
        ErrorCategory::ConfigMismatch => 5,
        ErrorCategory::Divergence => 6,
        ErrorCategory::Input => 1,
    }
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.display().to_string(),
        source: e,
    })
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

fn split_of(name: &str) -> Split {
    Split::ALL
        .into_iter()
        .find(|s| s.name() == name)
        .expect("clap restricts split names")
}

fn cmd_gen(ctx: &mut Ctx, count: Option<usize>) -> Result<()> {
    if let Some(n) = count {
        ctx.cfg.data.train = n;
    }
    create_dir(&ctx.out.join("motions"))?;
    ctx.snapshot()?;
    let splits = generate_splits(&ctx.cfg)?;
    let mut entries = vec![];
    for (split, seqs) in [
        (Split::Train, &splits.train),
        (Split::Validation, &splits.validation),
        (Split::Test, &splits.test),
    ] {
        for (i, m) in seqs.iter().enumerate() {
            let rel = format!("motions/{}_{i:04}.rbms", split.name());
            io::write_motion(ctx.out.join(&rel), m)?;
            entries.push(ManifestEntry { path: rel, split });
        }
    }
    let manifest = DatasetManifest {
        seed: ctx.cfg.seed,
        generator: ctx.cfg.data.clone(),
        source: None,
        entries,
    };
    io::write_manifest(ctx.out.join(MOTION_MANIFEST), &manifest)?;
    io::write_json_document(
        ctx.out.join("body.json"),
        BODY_MAGIC,
        &io::BodyDefinition::from_model(&ctx.body()),
    )?;
    println!(
        "wrote {} sequences to {}",
        manifest.entries.len(),
        ctx.out.display()
    );
    Ok(())
}

fn load_motions(
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
) -> Result<Vec<MotionSequence>> {
    manifest
        .paths(split)
        .map(|p| io::read_motion(dir.join(p)))
        .collect()
}

fn cmd_synth(ctx: &Ctx, data: &Path) -> Result<()> {
    let manifest = io::read_manifest(data.join(MOTION_MANIFEST))?;
    let body = ctx.body();
    let rbm = RbmConfiguration::preset(&ctx.cfg.rbm_config, &body)?;
    create_dir(&ctx.out.join("recordings"))?;
    ctx.snapshot()?;
    let mut entries = vec![];
    for split in Split::ALL {
        let motions = load_motions(data, &manifest, split)?;
        let recs = synthesize_split(&body, &motions, &rbm, &ctx.cfg.noise, ctx.cfg.seed, split)?;
        for (path, rec) in manifest.paths(split).zip(&recs) {
            let stem = Path::new(path).file_stem().unwrap().to_string_lossy();
            let rel = format!("recordings/{stem}.rbmr");
            io::write_recording(ctx.out.join(&rel), rec)?;
            entries.push(ManifestEntry { path: rel, split });
        }
        ctx.log(format!("{}: {} recordings", split.name(), recs.len()));
    }
    let source = std::fs::canonicalize(data.join(MOTION_MANIFEST)).map_err(|e| Error::Io {
        path: data.display().to_string(),
        source: e,
    })?;
    let out = DatasetManifest {
        seed: ctx.cfg.seed,
        generator: manifest.generator,
        source: Some(path_string(&source)),
        entries,
    };
    io::write_manifest(ctx.out.join(RECORDING_MANIFEST), &out)?;
    println!(
        "wrote {} recordings ({}) to {}",
        out.entries.len(),
        rbm.name,
        ctx.out.display()
    );
    Ok(())
}

struct Recorded {
    config_name: Option<String>,
    recordings: Vec<RbmRecording>,
    motions: Vec<MotionSequence>,
}

/// Recordings of one split with their ground-truth motions.
fn load_recorded(data: &Path, split: Split) -> Result<Recorded> {
    let manifest = io::read_manifest(data.join(RECORDING_MANIFEST))?;
    let source = manifest.source.as_deref().ok_or_else(|| {
        Error::Config("recording manifest does not name its motion manifest".into())
    })?;
    let source = PathBuf::from(source);
    let motion_manifest = io::read_manifest(&source)?;
    let motion_dir = source.parent().unwrap_or(Path::new("."));
    let recordings: Vec<RbmRecording> = manifest
        .paths(split)
        .map(|p| io::read_recording(data.join(p)))
        .collect::<Result<_>>()?;
    let motions = load_motions(motion_dir, &motion_manifest, split)?;
    if motions.len() != recordings.len() {
        return Err(Error::Config(format!(
            "{} recordings but {} motions in the {} split",
            recordings.len(),
            motions.len(),
            split.name()
        )));
    }
    let mut names = recordings.iter().map(|r| r.config_name.clone());
    let config_name = names.next();
    if let Some(first) = &config_name {
        if names.any(|n| n != *first) {
            return Err(Error::ConfigMismatch(
                "recordings use different marker configurations".into(),
            ));
        }
    }
    Ok(Recorded {
        config_name,
        recordings,
        motions,
    })
}

/// Uses the marker configuration of the data unless one was given explicitly.
fn adopt_config(ctx: &mut Ctx, found: Option<&str>, what: &str) -> Result<()> {
    if let Some(found) = found {
        if ctx.explicit_rbm && !found.eq_ignore_ascii_case(&ctx.cfg.rbm_config) {
            return Err(Error::ConfigMismatch(format!(
                "{what} uses `{found}`, but `{}` was requested",
                ctx.cfg.rbm_config
            )));
        }
        ctx.cfg.rbm_config = found.to_string();
    }
    Ok(())
}

fn train_log_csv(log: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,learning_rate,loss,theta,beta,gamma,val_loss,val_mpjae_deg\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for e in log {
        s.push_str(&format!(
            "{},{:e},{:.6},{:.6},{:.6},{:.6},{},{}\n",
            e.epoch,
            e.learning_rate,
            e.train.total,
            e.train.theta,
            e.train.beta,
            e.train.gamma,
            opt(e.val_loss),
            opt(e.val_mpjae)
        ));
    }
    s
}

fn cmd_train(ctx: &mut Ctx, data: &Path) -> Result<()> {
    let train = load_recorded(data, Split::Train)?;
    let val = load_recorded(data, Split::Validation)?;
    if train.recordings.is_empty() {
        return Err(Error::Config("no training recordings".into()));
    }
    adopt_config(ctx, train.config_name.as_deref(), "the training data")?;
    create_dir(&ctx.out)?;
    ctx.snapshot()?;
    let body = ctx.body();
    let rbm = RbmConfiguration::preset(&ctx.cfg.rbm_config, &body)?;
    ctx.log(format!(
        "training on {} sequences, {} epochs",
        train.recordings.len(),
        ctx.cfg.train.epochs
    ));
    let (ckpt, log) = train_on_recordings(
        &body,
        &ctx.cfg,
        &rbm,
        ctx.cfg.input_mode,
        ctx.cfg.train.loss,
        (&train.recordings, &train.motions),
        (&val.recordings, &val.motions),
    )?;
    io::write_checkpoint(ctx.out.join("checkpoint.rbmk"), &ckpt)?;
    io::write_file(
        ctx.out.join("train_log.csv"),
        train_log_csv(&log).as_bytes(),
    )?;
    io::write_json_document(ctx.out.join("train_log.json"), TRAIN_LOG_MAGIC, &log)?;
    let last = log.last().expect("at least one epoch");
    println!("epoch {} loss {:.6}", last.epoch, last.train.total);
    Ok(())
}

fn cmd_eval(ctx: &mut Ctx, data: &Path, checkpoint: &Path, split: Split) -> Result<()> {
    let ckpt = io::read_checkpoint(checkpoint)?;
    adopt_config(ctx, Some(&ckpt.rbm_config), "the checkpoint")?;
    let set = load_recorded(data, split)?;
    if set.recordings.is_empty() {
        return Err(Error::Config(format!(
            "no recordings in the {} split",
            split.name()
        )));
    }
    let report = evaluate_checkpoint(&ctx.body(), &ckpt, &set.recordings, &set.motions)?;
    create_dir(&ctx.out)?;
    ctx.snapshot()?;
    io::write_json_document(ctx.out.join("report.json"), REPORT_MAGIC, &report)?;
    let csv = format!(
        "{}\n{}\n",
        rbm_core::EvalReport::csv_header(),
        report.csv_row()
    );
    io::write_file(ctx.out.join("report.csv"), csv.as_bytes())?;
    io::write_file(
        ctx.out.join("per_joint.csv"),
        report.per_joint_csv().as_bytes(),
    )?;
    print!("{csv}");
    Ok(())
}

fn cmd_calibrate(ctx: &mut Ctx, recording: &Path, frames: usize) -> Result<()> {
    let mut rec = io::read_recording(recording)?;
    adopt_config(ctx, Some(&rec.config_name), "the recording")?;
    if frames == 0 || frames > rec.frames.len() {
        return Err(Error::Config(format!(
            "cannot average {frames} frames of a {}-frame recording",
            rec.frames.len()
        )));
    }
    let body = ctx.body();
    let rbm = RbmConfiguration::preset(&ctx.cfg.rbm_config, &body)?;
    let reference = average_frames(&rec.frames[..frames])?;
    let offsets = tpose_calibrate(&reference, &body, &rbm)?;
    let calibrated = rbm.with_offsets(&offsets)?;
    create_dir(&ctx.out)?;
    ctx.snapshot()?;
    io::write_json_document(
        ctx.out.join("calibration.json"),
        RBM_CONFIG_MAGIC,
        &calibrated,
    )?;
    rec.calibration = Some(offsets.clone());
    let stem = recording.file_stem().unwrap_or_default().to_string_lossy();
    io::write_recording(ctx.out.join(format!("{stem}_calibrated.rbmr")), &rec)?;
    println!("rbm,offset_mm,offset_deg");
    for (spec, t) in rbm.specs.iter().zip(&offsets) {
        println!(
            "{},{:.3},{:.3}",
            spec.name,
            t.translation.norm() * 1000.0,
            t.quaternion().log().angle().to_degrees()
        );
    }
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, configs: &[String], grid: bool) -> Result<()> {
    let names: Vec<String> = if configs.is_empty() {
        preset_names().map(String::from).collect()
    } else {
        configs.to_vec()
    };
    let body = ctx.body();
    for n in &names {
        RbmConfiguration::preset(n, &body)?;
    }
    let cells: Vec<AblationCell> = names
        .iter()
        .flat_map(|n| {
            if grid {
                AblationCell::loss_grid(n)
            } else {
                vec![AblationCell::new(n, ctx.cfg.input_mode, ctx.cfg.train.loss)]
            }
        })
        .collect();
    create_dir(&ctx.out)?;
    ctx.snapshot()?;
    let splits = generate_splits(&ctx.cfg)?;
    ctx.log(format!("{} cells", cells.len()));
    let table = run_ablation(&body, &ctx.cfg, &splits, &cells)?;
    let csv = table.to_csv();
    io::write_file(ctx.out.join("ablation.csv"), csv.as_bytes())?;
    io::write_file(
        ctx.out.join("plot_series.csv"),
        table.plot_series().as_bytes(),
    )?;
    io::write_json_document(ctx.out.join("ablation.json"), ABLATION_MAGIC, &table)?;
    print!("{csv}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    let mut overrides = g.overrides.clone();
    if let Some(s) = g.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(l) = &g.loss {
        overrides.push(format!("train.loss=\"{l}\""));
    }
    if let Some(r) = &g.rbm_config {
        overrides.push(format!(
            "rbm_config={}",
            serde_json::Value::String(r.clone())
        ));
    }
    if let Some(e) = &g.encoder {
        overrides.push(format!("model.encoder=\"{e}\""));
    }
    let explicit_rbm =
        g.rbm_config.is_some() || g.overrides.iter().any(|o| o.starts_with("rbm_config="));
    let mut ctx = Ctx {
        cfg: config::load(g.config.as_deref(), &overrides)?,
        out: g.out,
        verbose: g.verbose,
        explicit_rbm,
    };
    match cli.command {
        Command::Gen { count } => cmd_gen(&mut ctx, count),
        Command::Synth { data } => cmd_synth(&ctx, &data),
        Command::Train { data } => cmd_train(&mut ctx, &data),
        Command::Eval {
            data,
            checkpoint,
            split,
        } => cmd_eval(&mut ctx, &data, &checkpoint, split_of(&split)),
        Command::Calibrate { recording, frames } => cmd_calibrate(&mut ctx, &recording, frames),
        Command::Ablate { configs, grid } => cmd_ablate(&ctx, &configs, grid),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
