//! Shared fixtures for the criterion benches.

use rbm_core::regressor::{init_model, ModelConfig};
use rbm_core::{build_default_body, AxisAngle, BodyModel, BodyParams, InputVector, ModelParams};

pub fn body() -> BodyModel {
    build_default_body(42)
}

/// Deterministic non-trivial pose.
pub fn pose(joints: usize, k: usize) -> BodyParams {
    let mut p = BodyParams::rest(joints);
    for (j, t) in p.theta.iter_mut().enumerate() {
        let s = (j + k) as f64;
        *t = AxisAngle(nalgebra::Vector3::new(
            0.3 * s.sin(),
            0.2 * (1.7 * s).cos(),
            0.25 * (0.6 * s).sin(),
        ));
    }
    p.beta[0] = 0.5;
    p
}

pub fn inputs(frames: usize, dim: usize) -> Vec<InputVector> {
    (0..frames)
        .map(|t| InputVector {
            values: (0..dim)
                .map(|d| ((t * dim + d) as f64 * 0.37).sin())
                .collect(),
        })
        .collect()
}

pub fn model(input_dim: usize, window: usize) -> (ModelConfig, ModelParams) {
    let config = ModelConfig {
        window,
        ..ModelConfig::new(input_dim, 24)
    };
    let params = init_model(&config, 0).unwrap();
    (config, params)
}
