use std::path::Path;
use std::process::{Command, Output};

use rbm_core::io::{read_json_document, ABLATION_MAGIC};
use rbm_core::pipeline::{generate_splits, run_ablation};
use rbm_core::{
    build_default_body, AblationCell, AblationTable, ExperimentConfig, InputMode, LossMode,
};

const SMALL: &[&str] = &[
    "data.train=3",
    "data.validation=2",
    "train.epochs=2",
    "model.hidden_dim=8",
    "model.embed_dim=8",
    "model.beta_hidden=8",
    "model.window=60",
];

fn rbm(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rbm"));
    cmd.args(args);
    for o in SMALL {
        cmd.args(["--override", o]);
    }
    cmd.output().expect("run rbm")
}

fn ok(args: &[&str]) -> Output {
    let out = rbm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen", "--seed", "7", "--count", "5", "--out", s(&a)]);
    ok(&["gen", "--seed", "7", "--count", "5", "--out", s(&b)]);
    assert_eq!(read(a.join("manifest.json")), read(b.join("manifest.json")));
    assert_eq!(
        read(a.join("motions/train_0004.rbms")),
        read(b.join("motions/train_0004.rbms"))
    );
    assert!(a.join("resolved_config.json").exists());
    let c = dir.path().join("c");
    ok(&["gen", "--seed", "8", "--count", "5", "--out", s(&c)]);
    assert_ne!(
        read(a.join("motions/train_0000.rbms")),
        read(c.join("motions/train_0000.rbms"))
    );
}

fn pipeline(root: &Path) -> Vec<u8> {
    let (d, r, m, e) = (
        root.join("data"),
        root.join("rec"),
        root.join("model"),
        root.join("eval"),
    );
    ok(&["gen", "--seed", "3", "--out", s(&d)]);
    ok(&[
        "synth",
        "--seed",
        "3",
        "--data",
        s(&d),
        "--rbm-config",
        "RBM-D",
        "--out",
        s(&r),
    ]);
    ok(&["train", "--seed", "3", "--data", s(&r), "--out", s(&m)]);
    let ckpt = m.join("checkpoint.rbmk");
    ok(&[
        "eval",
        "--seed",
        "3",
        "--data",
        s(&r),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&e),
    ]);
    for f in ["resolved_config.json", "report.csv", "per_joint.csv"] {
        assert!(e.join(f).exists(), "{f}");
    }
    read(e.join("report.json"))
}

#[test]
fn end_to_end_is_bit_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(pipeline(a.path()), pipeline(b.path()));
}

#[test]
fn mismatched_checkpoint_is_rejected_without_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let (d, r1, r2, m) = (
        root.join("data"),
        root.join("r1"),
        root.join("r2"),
        root.join("m"),
    );
    ok(&["gen", "--out", s(&d)]);
    ok(&[
        "synth",
        "--data",
        s(&d),
        "--rbm-config",
        "RBM-A",
        "--out",
        s(&r1),
    ]);
    ok(&[
        "synth",
        "--data",
        s(&d),
        "--rbm-config",
        "RBM-E",
        "--out",
        s(&r2),
    ]);
    ok(&["train", "--data", s(&r1), "--out", s(&m)]);
    let ckpt = m.join("checkpoint.rbmk");
    let e = root.join("e");
    let out = rbm(&[
        "eval",
        "--data",
        s(&r2),
        "--checkpoint",
        s(&ckpt),
        "--out",
        s(&e),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!e.join("report.json").exists());
    let out = rbm(&[
        "eval",
        "--data",
        s(&r1),
        "--checkpoint",
        s(&ckpt),
        "--rbm-config",
        "RBM-B",
        "--out",
        s(&e),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!e.join("report.json").exists());
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = rbm(&["gen", "--override", "data.trian=3", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let missing = dir.path().join("missing");
    let out = rbm(&["synth", "--data", s(&missing), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let bad = dir.path().join("bad.rbmk");
    std::fs::write(&bad, b"RBMK\x01\x00").unwrap();
    let out = rbm(&[
        "eval",
        "--data",
        s(dir.path()),
        "--checkpoint",
        s(&bad),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn training_divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r) = (dir.path().join("d"), dir.path().join("r"));
    ok(&["gen", "--out", s(&d)]);
    ok(&["synth", "--data", s(&d), "--out", s(&r)]);
    let out = rbm(&[
        "train",
        "--data",
        s(&r),
        "--override",
        "train.learning_rate=1e200",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(
        out.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn calibrate_writes_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let (d, r, c) = (
        dir.path().join("d"),
        dir.path().join("r"),
        dir.path().join("c"),
    );
    ok(&["gen", "--out", s(&d)]);
    ok(&[
        "synth",
        "--data",
        s(&d),
        "--rbm-config",
        "RBM-F",
        "--out",
        s(&r),
    ]);
    let rec = r.join("recordings/train_0000.rbmr");
    let out = ok(&[
        "calibrate",
        "--recording",
        s(&rec),
        "--frames",
        "3",
        "--out",
        s(&c),
    ]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1 + 6);
    assert!(c.join("calibration.json").exists());
    let calibrated = rbm_core::io::read_recording(c.join("train_0000_calibrated.rbmr")).unwrap();
    assert_eq!(calibrated.calibration.map(|v| v.len()), Some(6));
}

#[test]
fn ablate_matches_library_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "ablate",
        "--seed",
        "4",
        "--configs",
        "RBM-ALL,RBM-A,RBM-D",
        "--out",
        s(dir.path()),
    ]);
    let table: AblationTable =
        read_json_document(dir.path().join("ablation.json"), ABLATION_MAGIC).unwrap();
    assert_eq!(table.rows.len(), 3);

    let mut cfg = ExperimentConfig::default();
    cfg.seed = 4;
    cfg.data.train = 3;
    cfg.data.validation = 2;
    cfg.train.epochs = 2;
    cfg.model.hidden_dim = 8;
    cfg.model.embed_dim = 8;
    cfg.model.beta_hidden = 8;
    cfg.model.window = 60;
    let cfg = cfg.resolve().unwrap();
    let body = build_default_body(cfg.body_seed);
    let cells: Vec<_> = ["RBM-ALL", "RBM-A", "RBM-D"]
        .iter()
        .map(|n| AblationCell::new(n, InputMode::Normalized, LossMode::Geodesic))
        .collect();
    let expected = run_ablation(&body, &cfg, &generate_splits(&cfg).unwrap(), &cells).unwrap();
    assert_eq!(table, expected);
    assert_eq!(String::from_utf8_lossy(&out.stdout), expected.to_csv());
    let plot = std::fs::read_to_string(dir.path().join("plot_series.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 3 * 3);
}
