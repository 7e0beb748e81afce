//! Pose metrics: MPJPE, Procrustes-aligned MPJPE and MPJAE.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::body::{BodyModel, BodyParams, JointSet};
use crate::error::{Error, Result};
use crate::so3::{geodesic_angle, UnitQuaternion};

fn check_shapes(pred: &[JointSet], truth: &[JointSet]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames for {} true frames",
            pred.len(),
            truth.len()
        )));
    }
    if pred
        .iter()
        .zip(truth)
        .any(|(p, t)| p.positions.len() != t.positions.len())
    {
        return Err(Error::Dimension("joint counts differ".into()));
    }
    Ok(())
}

fn per_joint_mean(errors: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = errors.first() else {
        return vec![];
    };
    let mut out = vec![0.0; first.len()];
    for frame in errors {
        for (o, e) in out.iter_mut().zip(frame) {
            *o += e / errors.len() as f64;
        }
    }
    out
}

fn mean_all(errors: &[Vec<f64>]) -> f64 {
    let n: usize = errors.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    errors.iter().flatten().sum::<f64>() / n as f64
}

fn position_errors(pred: &[JointSet], truth: &[JointSet]) -> Vec<Vec<f64>> {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            p.positions
                .iter()
                .zip(&t.positions)
                .map(|(a, b)| (a - b).norm() * 1000.0)
                .collect()
        })
        .collect()
}

/// Mean joint position error in millimeters, without alignment.
pub fn mpjpe(pred: &[JointSet], truth: &[JointSet]) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(mean_all(&position_errors(pred, truth)))
}

/// Least-squares similarity transform taking `source` onto `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    pub aligned: Vec<Vector3<f64>>,
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Similarity Procrustes: the rotation comes from the SVD of the
/// cross-covariance with the reflection removed, then the optimal scale and
/// the centroid translation.
pub fn procrustes_align(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Procrustes> {
    if source.len() != target.len() {
        return Err(Error::Dimension("point sets differ in size".into()));
    }
    if source.len() < 3 {
        return Err(Error::Degenerate(
            "alignment needs at least three points".into(),
        ));
    }
    let n = source.len() as f64;
    let mu_s = source.iter().sum::<Vector3<f64>>() / n;
    let mu_t = target.iter().sum::<Vector3<f64>>() / n;
    let var_s = source
        .iter()
        .map(|s| (s - mu_s).norm_squared())
        .sum::<f64>()
        / n;
    if var_s < 1e-18 {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    let cov = source
        .iter()
        .zip(target)
        .map(|(s, t)| (t - mu_t) * (s - mu_s).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u.determinant() * v_t.determinant()) < 0.0 {
        -1.0
    } else {
        1.0
    };
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = u * fix * v_t;
    let scale =
        (svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2]) / var_s;
    let translation = mu_t - scale * rotation * mu_s;
    let aligned = source
        .iter()
        .map(|s| scale * rotation * s + translation)
        .collect();
    Ok(Procrustes {
        aligned,
        scale,
        rotation,
        translation,
    })
}

fn aligned_errors(pred: &[JointSet], truth: &[JointSet]) -> Result<Vec<Vec<f64>>> {
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            let a = procrustes_align(&p.positions, &t.positions)?;
            Ok(a.aligned
                .iter()
                .zip(&t.positions)
                .map(|(x, y)| (x - y).norm() * 1000.0)
                .collect())
        })
        .collect()
}

/// MPJPE after aligning every predicted frame to its true frame.
pub fn pa_mpjpe(pred: &[JointSet], truth: &[JointSet]) -> Result<f64> {
    check_shapes(pred, truth)?;
    Ok(mean_all(&aligned_errors(pred, truth)?))
}

fn angle_errors(pred: &[BodyParams], truth: &[BodyParams]) -> Result<Vec<Vec<f64>>> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted frames for {} true frames",
            pred.len(),
            truth.len()
        )));
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| {
            if p.theta.len() != t.theta.len() {
                return Err(Error::Dimension("joint counts differ".into()));
            }
            Ok(p.theta
                .iter()
                .zip(&t.theta)
                .map(|(a, b)| {
                    geodesic_angle(
                        &UnitQuaternion::exp(a.vector()),
                        &UnitQuaternion::exp(b.vector()),
                    )
                    .to_degrees()
                })
                .collect())
        })
        .collect()
}

/// Mean geodesic angle in degrees between per-joint relative rotations,
/// root included.
pub fn mpjae(pred: &[BodyParams], truth: &[BodyParams]) -> Result<f64> {
    Ok(mean_all(&angle_errors(pred, truth)?))
}

/// Metrics over a set of sequences, pooled over frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub mpjae: f64,
    pub per_joint_mpjpe: Vec<f64>,
    pub per_joint_pa_mpjpe: Vec<f64>,
    pub per_joint_mpjae: Vec<f64>,
    pub joint_names: Vec<String>,
    pub sequences: usize,
    pub frames: usize,
}

/// Runs forward kinematics on predictions and ground truth and reports all
/// three metrics. `pred[i]` and `truth[i]` are the frames of sequence `i`.
pub fn evaluate(
    body: &BodyModel,
    pred: &[Vec<BodyParams>],
    truth: &[Vec<BodyParams>],
) -> Result<EvalReport> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predicted sequences for {} true ones",
            pred.len(),
            truth.len()
        )));
    }
    let fk = |seqs: &[Vec<BodyParams>]| -> Result<Vec<JointSet>> {
        seqs.iter()
            .flatten()
            .map(|p| body.forward_kinematics(p))
            .collect()
    };
    let (jp, jt) = (fk(pred)?, fk(truth)?);
    check_shapes(&jp, &jt)?;
    let flat = |s: &[Vec<BodyParams>]| s.iter().flatten().cloned().collect::<Vec<_>>();
    let pos = position_errors(&jp, &jt);
    let pa = aligned_errors(&jp, &jt)?;
    let ang = angle_errors(&flat(pred), &flat(truth))?;
    Ok(EvalReport {
        mpjpe: mean_all(&pos),
        pa_mpjpe: mean_all(&pa),
        mpjae: mean_all(&ang),
        per_joint_mpjpe: per_joint_mean(&pos),
        per_joint_pa_mpjpe: per_joint_mean(&pa),
        per_joint_mpjae: per_joint_mean(&ang),
        joint_names: body.topology.names.clone(),
        sequences: pred.len(),
        frames: jp.len(),
    })
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "mpjpe_mm,pa_mpjpe_mm,mpjae_deg,sequences,frames"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{:.3},{:.3},{:.3},{},{}",
            self.mpjpe, self.pa_mpjpe, self.mpjae, self.sequences, self.frames
        )
    }

    /// Per-joint breakdown as CSV.
    pub fn per_joint_csv(&self) -> String {
        let mut s = String::from("joint,mpjpe_mm,pa_mpjpe_mm,mpjae_deg\n");
        for (i, name) in self.joint_names.iter().enumerate() {
            s.push_str(&format!(
                "{name},{:.3},{:.3},{:.3}\n",
                self.per_joint_mpjpe[i], self.per_joint_pa_mpjpe[i], self.per_joint_mpjae[i]
            ));
        }
        s
    }
}
