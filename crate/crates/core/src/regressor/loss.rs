use serde::{Deserialize, Serialize};

use super::PredictionFrame;
use crate::body::{BodyParams, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::so3::{geodesic_loss_and_grad, UnitQuaternion};

/// How the pose term compares rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// `4 sin^2(angle / 2)` between predicted and true joint rotations.
    #[default]
    Geodesic,
    /// Squared difference of the raw axis-angle components.
    Mse,
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geodesic" => Ok(LossMode::Geodesic),
            "mse" => Ok(LossMode::Mse),
            _ => Err(Error::Config(format!(
                "unknown loss `{s}` (expected geodesic or mse)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub beta: f64,
    pub theta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 1.0,
            theta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.beta, self.theta, self.gamma];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(
                "loss weights must be nonnegative and not all zero".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub theta: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// Gradient of the loss with respect to one frame's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrad {
    pub theta: Vec<f64>,
    pub beta: [f64; SHAPE_DIM],
    pub gamma: [f64; 3],
}

/// `w_beta L_beta + w_theta L_theta + w_gamma L_gamma`. Each term is a mean:
/// over frames and joints for the geodesic pose term, and over frames and
/// components for the squared-error terms.
pub fn composite_loss(
    pred: &[PredictionFrame],
    truth: &[BodyParams],
    weights: &LossWeights,
    mode: LossMode,
) -> Result<LossBreakdown> {
    Ok(composite_loss_grad(pred, truth, weights, mode)?.0)
}

pub fn composite_loss_grad(
    pred: &[PredictionFrame],
    truth: &[BodyParams],
    weights: &LossWeights,
    mode: LossMode,
) -> Result<(LossBreakdown, Vec<PredictionGrad>)> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            pred.len(),
            truth.len()
        )));
    }
    let mut out = LossBreakdown::default();
    if pred.is_empty() {
        return Ok((out, vec![]));
    }
    let t = pred.len() as f64;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, y) in pred.iter().zip(truth) {
        let j = y.theta.len();
        if p.theta.len() != j {
            return Err(Error::Dimension(format!(
                "{} predicted joints for {j} targets",
                p.theta.len()
            )));
        }
        let mut g = PredictionGrad {
            theta: vec![0.0; 3 * j],
            beta: [0.0; SHAPE_DIM],
            gamma: [0.0; 3],
        };
        match mode {
            LossMode::Geodesic => {
                let scale = 1.0 / (t * j as f64);
                for (k, (rp, ry)) in p.theta.iter().zip(&y.theta).enumerate() {
                    let (l, d) =
                        geodesic_loss_and_grad(rp.vector(), &UnitQuaternion::exp(ry.vector()));
                    out.theta += l * scale;
                    for c in 0..3 {
                        g.theta[3 * k + c] = weights.theta * scale * d[c];
                    }
                }
            }
            LossMode::Mse => {
                let scale = 1.0 / (t * 3.0 * j as f64);
                for (k, (rp, ry)) in p.theta.iter().zip(&y.theta).enumerate() {
                    let d = rp.0 - ry.0;
                    out.theta += d.norm_squared() * scale;
                    for c in 0..3 {
                        g.theta[3 * k + c] = weights.theta * scale * 2.0 * d[c];
                    }
                }
            }
        }
        let sb = 1.0 / (t * SHAPE_DIM as f64);
        for c in 0..SHAPE_DIM {
            let d = p.beta[c] - y.beta[c];
            out.beta += d * d * sb;
            g.beta[c] = weights.beta * sb * 2.0 * d;
        }
        let sg = 1.0 / (t * 3.0);
        for c in 0..3 {
            let d = p.gamma[c] - y.gamma[c];
            out.gamma += d * d * sg;
            g.gamma[c] = weights.gamma * sg * 2.0 * d;
        }
        grads.push(g);
    }
    out.total = weights.beta * out.beta + weights.theta * out.theta + weights.gamma * out.gamma;
    Ok((out, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::AxisAngle;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn truth(theta: Vec<AxisAngle>) -> BodyParams {
        BodyParams {
            beta: [0.5; SHAPE_DIM],
            theta,
            gamma: Vector3::new(0.1, 1.0, -0.2),
        }
    }

    fn as_pred(b: &BodyParams) -> PredictionFrame {
        PredictionFrame {
            theta: b.theta.clone(),
            beta: b.beta,
            gamma: b.gamma,
        }
    }

    #[test]
    fn exact_prediction_has_zero_loss() {
        let y = truth(vec![AxisAngle::new(0.3, 0.1, -2.0); 24]);
        for mode in [LossMode::Geodesic, LossMode::Mse] {
            let (l, g) =
                composite_loss_grad(&[as_pred(&y)], &[y.clone()], &LossWeights::default(), mode)
                    .unwrap();
            assert_eq!(l.total, 0.0);
            assert!(g[0].theta.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn half_turn_on_one_joint() {
        let y = truth(vec![AxisAngle::zero(); 24]);
        let mut p = as_pred(&y);
        p.theta[5] = AxisAngle::new(0.0, PI, 0.0);
        let w = LossWeights {
            beta: 0.0,
            theta: 1.0,
            gamma: 0.0,
        };
        let l = composite_loss(&[p], &[y], &w, LossMode::Geodesic).unwrap();
        assert!((l.total - 4.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn antipodal_axis_angle_contrast() {
        let r = AxisAngle::new(0.0, 0.0, PI);
        let y = truth(vec![r; 24]);
        let mut p = as_pred(&y);
        p.theta[0] = AxisAngle(-r.0);
        let w = LossWeights {
            beta: 0.0,
            theta: 1.0,
            gamma: 0.0,
        };
        let geo = composite_loss(&[p.clone()], &[y.clone()], &w, LossMode::Geodesic).unwrap();
        let mse = composite_loss(&[p], &[y], &w, LossMode::Mse).unwrap();
        assert!(geo.theta < 1e-20);
        assert!((mse.theta - 4.0 * PI * PI / (3.0 * 24.0)).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_errors() {
        let y = truth(vec![AxisAngle::zero(); 2]);
        assert!(composite_loss(&[], &[y], &LossWeights::default(), LossMode::Mse).is_err());
        assert!(LossWeights {
            beta: 0.0,
            theta: 0.0,
            gamma: 0.0
        }
        .validate()
        .is_err());
    }
}
