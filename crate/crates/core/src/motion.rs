//! Motion sequences, the toy motion generator and resampling.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{BodyParams, JOINT_COUNT, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::so3::{AxisAngle, UnitQuaternion};

/// Minimum length kept after resampling, two seconds at 60 Hz.
pub const MIN_FRAMES: usize = 120;

#[derive(Debug, Clone, PartialEq)]
pub struct MotionFrame {
    pub theta: Vec<AxisAngle>,
    pub gamma: Vector3<f64>,
}

/// A body motion with constant shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub subject: String,
    pub sequence: String,
    pub frame_rate: f64,
    pub beta: [f64; SHAPE_DIM],
    pub frames: Vec<MotionFrame>,
}

impl MotionSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> Option<usize> {
        self.frames.first().map(|f| f.theta.len())
    }

    pub fn body_params(&self, frame: usize) -> BodyParams {
        let f = &self.frames[frame];
        BodyParams {
            beta: self.beta,
            theta: f.theta.clone(),
            gamma: f.gamma,
        }
    }

    pub fn body_params_all(&self) -> Vec<BodyParams> {
        (0..self.frames.len())
            .map(|i| self.body_params(i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::Config(format!(
                "sequence `{}`: frame rate must be positive",
                self.sequence
            )));
        }
        if let Some(j) = self.joint_count() {
            if let Some(i) = self.frames.iter().position(|f| f.theta.len() != j) {
                return Err(Error::Dimension(format!(
                    "sequence `{}`: frame {i} has a different joint count",
                    self.sequence
                )));
            }
        }
        let finite = self.beta.iter().all(|b| b.is_finite())
            && self.frames.iter().all(|f| {
                f.gamma.iter().all(|g| g.is_finite()) && f.theta.iter().all(AxisAngle::is_finite)
            });
        if !finite {
            return Err(Error::Domain(format!(
                "sequence `{}` has non-finite values",
                self.sequence
            )));
        }
        Ok(())
    }

    /// A sub-range of frames.
    pub fn slice(&self, start: usize, len: usize) -> MotionSequence {
        let end = (start + len).min(self.frames.len());
        MotionSequence {
            frames: self.frames[start.min(end)..end].to_vec(),
            ..self.clone()
        }
    }
}

/// Parameters of the synthetic motion generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyMotionParams {
    /// Per-joint bound on the rotation angle of non-root joints (radians).
    pub amplitude_caps: Vec<f64>,
    /// Sinusoid frequency range (Hz).
    pub min_frequency: f64,
    pub max_frequency: f64,
    /// Initial heading is drawn from `heading_center +- heading_spread` (rad).
    pub heading_center: f64,
    pub heading_spread: f64,
    /// Bound on |yaw rate| of the root (rad/s).
    pub max_turn_rate: f64,
    /// Bound on root pitch and roll (radians).
    pub max_tilt: f64,
    /// Walking speed range (m/s).
    pub min_speed: f64,
    pub max_speed: f64,
    /// Bound on |beta_i|.
    pub beta_range: f64,
}

impl Default for ToyMotionParams {
    fn default() -> Self {
        Self {
            amplitude_caps: default_amplitude_caps().to_vec(),
            min_frequency: 0.2,
            max_frequency: 1.2,
            heading_center: PI,
            heading_spread: 1.0,
            max_turn_rate: 0.5,
            max_tilt: 0.1,
            min_speed: 0.3,
            max_speed: 1.2,
            beta_range: 2.0,
        }
    }
}

/// Angle caps per joint: large for limbs, small for the trunk and extremities.
pub fn default_amplitude_caps() -> [f64; JOINT_COUNT] {
    [
        0.0, 0.6, 0.6, 0.1, 0.8, 0.8, 0.1, 0.3, 0.3, 0.1, 0.05, 0.05, 0.05, 0.05, 0.05, 0.3, 0.9,
        0.9, 0.9, 0.9, 0.5, 0.5, 0.05, 0.05,
    ]
}

impl ToyMotionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.amplitude_caps.len() >= 2
            && self.amplitude_caps.iter().all(|c| (0.0..=PI).contains(c))
            && 0.0 < self.min_frequency
            && self.min_frequency <= self.max_frequency
            && self.heading_center.is_finite()
            && (0.0..=PI).contains(&self.heading_spread)
            && self.max_turn_rate >= 0.0
            && (0.0..PI / 2.0).contains(&self.max_tilt)
            && 0.0 <= self.min_speed
            && self.min_speed <= self.max_speed
            && self.beta_range >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid toy motion parameters".into()))
        }
    }
}

struct Channel {
    terms: Vec<(f64, f64, f64)>,
}

impl Channel {
    fn random(rng: &mut ChaCha8Rng, cap: f64, fmin: f64, fmax: f64) -> Self {
        let n = rng.random_range(1..=3);
        let mut amps: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
        // Amplitudes of one channel sum to cap / sqrt(3), so joint angles stay within cap.
        let total: f64 = amps.iter().sum();
        for a in &mut amps {
            *a *= rng.random_range(0.5..1.0) * cap / 3f64.sqrt() / total;
        }
        let terms = amps
            .into_iter()
            .map(|a| {
                (
                    a,
                    rng.random_range(fmin..=fmax),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        Self { terms }
    }

    fn at(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(a, f, p)| a * (2.0 * PI * f * t + p).sin())
            .sum()
    }
}

/// Smooth random motions: per-joint sinusoid mixtures under the amplitude
/// caps, a turning and walking root, and random shapes. Deterministic in `seed`.
///
/// The default heading is centered on a half turn, so root rotations
/// straddle the boundary of the axis-angle ball without wrapping around.
pub fn generate_toy_motions(
    seed: u64,
    count: usize,
    duration: f64,
    frame_rate: f64,
    params: &ToyMotionParams,
) -> Result<Vec<MotionSequence>> {
    params.validate()?;
    if !(frame_rate > 0.0 && duration >= 0.0) {
        return Err(Error::Config(
            "duration and frame rate must be positive".into(),
        ));
    }
    let frame_count = (duration * frame_rate).round() as usize;
    let joints = params.amplitude_caps.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for s in 0..count {
        let mut beta = [0.0; SHAPE_DIM];
        for b in &mut beta {
            *b = rng.random_range(-params.beta_range..=params.beta_range);
        }
        let channels: Vec<[Channel; 3]> = params
            .amplitude_caps
            .iter()
            .map(|&cap| {
                std::array::from_fn(|_| {
                    Channel::random(&mut rng, cap, params.min_frequency, params.max_frequency)
                })
            })
            .collect();
        let yaw0 = params.heading_center
            + rng.random_range(-params.heading_spread..=params.heading_spread);
        let turn = rng.random_range(-params.max_turn_rate..=params.max_turn_rate);
        let pitch = Channel::random(
            &mut rng,
            params.max_tilt * 3f64.sqrt(),
            params.min_frequency,
            params.max_frequency,
        );
        let roll = Channel::random(
            &mut rng,
            params.max_tilt * 3f64.sqrt(),
            params.min_frequency,
            params.max_frequency,
        );
        let speed = rng.random_range(params.min_speed..=params.max_speed);
        let bob = rng.random_range(0.0..0.03);
        let bob_phase = rng.random_range(0.0..2.0 * PI);

        let frames = (0..frame_count)
            .map(|i| {
                let t = i as f64 / frame_rate;
                let mut theta = Vec::with_capacity(joints);
                let yaw = yaw0 + turn * t;
                let root = UnitQuaternion::exp(&Vector3::new(0.0, yaw, 0.0))
                    * UnitQuaternion::exp(&Vector3::new(pitch.at(t), 0.0, roll.at(t)));
                theta.push(root.log());
                for ch in &channels[1..] {
                    theta.push(AxisAngle::new(ch[0].at(t), ch[1].at(t), ch[2].at(t)));
                }
                // Heading is the body's +z axis turned by yaw.
                let (x, z) = if turn.abs() < 1e-9 {
                    (speed * t * yaw0.sin(), speed * t * yaw0.cos())
                } else {
                    (
                        speed / turn * (yaw0.cos() - yaw.cos()),
                        speed / turn * (yaw.sin() - yaw0.sin()),
                    )
                };
                let y = bob * (4.0 * PI * t + bob_phase).sin();
                MotionFrame {
                    theta,
                    gamma: Vector3::new(x, y, z),
                }
            })
            .collect();
        out.push(MotionSequence {
            subject: format!("toy{seed}"),
            sequence: format!("toy{seed}_{s:04}"),
            frame_rate,
            beta,
            frames,
        });
    }
    Ok(out)
}

/// Resamples to `target_rate` on the grid `k / target_rate` covering the
/// original time span, interpolating rotations by slerp and translations
/// linearly. Sequences shorter than `min_frames` afterwards are rejected.
pub fn trim_and_resample(
    seq: &MotionSequence,
    target_rate: f64,
    min_frames: usize,
) -> Result<MotionSequence> {
    seq.validate()?;
    if !(target_rate > 0.0 && target_rate.is_finite()) {
        return Err(Error::Config("target frame rate must be positive".into()));
    }
    let n_in = seq.frames.len();
    if n_in == 0 {
        return Err(Error::TooShort {
            frames: 0,
            min: min_frames,
        });
    }
    let span = (n_in - 1) as f64 / seq.frame_rate;
    let n_out = (span * target_rate + 1e-9).floor() as usize + 1;
    if n_out < min_frames {
        return Err(Error::TooShort {
            frames: n_out,
            min: min_frames,
        });
    }
    let frames = (0..n_out)
        .map(|k| {
            let pos = k as f64 * seq.frame_rate / target_rate;
            let i = (pos.floor() as usize).min(n_in - 1);
            let u = pos - i as f64;
            let a = &seq.frames[i];
            if u <= 1e-12 || i + 1 == n_in {
                return a.clone();
            }
            let b = &seq.frames[i + 1];
            let theta = a
                .theta
                .iter()
                .zip(&b.theta)
                .map(|(ra, rb)| {
                    UnitQuaternion::exp(ra.vector())
                        .slerp(&UnitQuaternion::exp(rb.vector()), u)
                        .log()
                })
                .collect();
            MotionFrame {
                theta,
                gamma: a.gamma.lerp(&b.gamma, u),
            }
        })
        .collect();
    Ok(MotionSequence {
        frame_rate: target_rate,
        frames,
        ..seq.clone()
    })
}
