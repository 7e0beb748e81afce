use std::collections::BTreeMap;

use nalgebra::Vector3;

use super::loss::{composite_loss_grad, LossBreakdown, LossMode, LossWeights, PredictionGrad};
use super::{ModelConfig, ModelParams, PredictionFrame, Tensor};
use crate::body::{BodyParams, SHAPE_DIM};
use crate::error::{Error, Result};
use crate::normalization::InputVector;
use crate::so3::AxisAngle;

/// Gradients keyed like [`ModelParams::tensors`].
pub type Gradients = BTreeMap<String, Tensor>;

/// Hidden state of every recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentState {
    pub h: Vec<Vec<f64>>,
}

impl RecurrentState {
    pub fn zeros(config: &ModelConfig) -> Self {
        Self {
            h: vec![vec![0.0; config.hidden_dim]; config.layers],
        }
    }
}

struct GruStep {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h_prev + b_hn`, before the reset gate.
    hn: Vec<f64>,
}

struct Step {
    x: Vec<f64>,
    feature: Vec<f64>,
    layers: Vec<GruStep>,
    beta_hidden: Vec<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    steps: Vec<Step>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

struct Layer<'a> {
    w_ih: &'a Tensor,
    w_hh: &'a Tensor,
    b_ih: &'a Tensor,
    b_hh: &'a Tensor,
}

struct Weights<'a> {
    embed_w: &'a Tensor,
    embed_b: &'a Tensor,
    layers: Vec<Layer<'a>>,
    theta_w: &'a Tensor,
    theta_b: &'a Tensor,
    gamma_w: &'a Tensor,
    gamma_b: &'a Tensor,
    beta_w1: &'a Tensor,
    beta_b1: &'a Tensor,
    beta_w2: &'a Tensor,
    beta_b2: &'a Tensor,
}

impl<'a> Weights<'a> {
    fn new(config: &ModelConfig, p: &'a ModelParams) -> Result<Self> {
        p.check_shapes(config)?;
        Ok(Self {
            embed_w: p.get("embed.w"),
            embed_b: p.get("embed.b"),
            layers: (0..config.layers)
                .map(|l| Layer {
                    w_ih: p.get(&format!("gru{l}.w_ih")),
                    w_hh: p.get(&format!("gru{l}.w_hh")),
                    b_ih: p.get(&format!("gru{l}.b_ih")),
                    b_hh: p.get(&format!("gru{l}.b_hh")),
                })
                .collect(),
            theta_w: p.get("theta.w"),
            theta_b: p.get("theta.b"),
            gamma_w: p.get("gamma.w"),
            gamma_b: p.get("gamma.b"),
            beta_w1: p.get("beta.w1"),
            beta_b1: p.get("beta.b1"),
            beta_w2: p.get("beta.w2"),
            beta_b2: p.get("beta.b2"),
        })
    }
}

/// `out = W x + b`.
fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    let mut out = b.data.clone();
    for (o, row) in out.iter_mut().zip(w.data.chunks_exact(w.cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
    out
}

/// `out += W^T g`.
fn matvec_t_add(w: &Tensor, g: &[f64], out: &mut [f64]) {
    for (gi, row) in g.iter().zip(w.data.chunks_exact(w.cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `dw += g x^T`, `db += g`.
fn accumulate(grads: &mut Gradients, w: &str, b: &str, g: &[f64], x: &[f64]) {
    let dw = grads.get_mut(w).unwrap();
    for (gi, row) in g.iter().zip(dw.data.chunks_exact_mut(x.len())) {
        if *gi != 0.0 {
            for (d, xj) in row.iter_mut().zip(x) {
                *d += gi * xj;
            }
        }
    }
    for (d, gi) in grads.get_mut(b).unwrap().data.iter_mut().zip(g) {
        *d += gi;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn forward_cached(
    config: &ModelConfig,
    params: &ModelParams,
    window: &[InputVector],
    state: &RecurrentState,
) -> Result<(Vec<PredictionFrame>, ForwardCache, RecurrentState)> {
    let w = Weights::new(config, params)?;
    let hd = config.hidden_dim;
    if state.h.len() != config.layers || state.h.iter().any(|h| h.len() != hd) {
        return Err(Error::Dimension(
            "recurrent state does not match the model".into(),
        ));
    }
    let mut h = state.h.clone();
    let mut preds = Vec::with_capacity(window.len());
    let mut steps = Vec::with_capacity(window.len());
    for (t, input) in window.iter().enumerate() {
        if input.values.len() != config.input_dim {
            return Err(Error::Dimension(format!(
                "frame {t} has {} inputs, model expects {}",
                input.values.len(),
                config.input_dim
            )));
        }
        let x: Vec<f64> = input
            .values
            .iter()
            .zip(params.input_mean.iter().zip(&params.input_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let e = affine(w.embed_w, w.embed_b, &x);
        let mut layer_in = e.clone();
        let mut layers = Vec::with_capacity(config.layers);
        for (l, lw) in w.layers.iter().enumerate() {
            let gi = affine(lw.w_ih, lw.b_ih, &layer_in);
            let gh = affine(lw.w_hh, lw.b_hh, &h[l]);
            let r: Vec<f64> = (0..hd).map(|i| sigmoid(gi[i] + gh[i])).collect();
            let z: Vec<f64> = (0..hd).map(|i| sigmoid(gi[hd + i] + gh[hd + i])).collect();
            let hn = gh[2 * hd..].to_vec();
            let n: Vec<f64> = (0..hd)
                .map(|i| (gi[2 * hd + i] + r[i] * hn[i]).tanh())
                .collect();
            let h_new: Vec<f64> = (0..hd)
                .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[l][i])
                .collect();
            let h_prev = std::mem::replace(&mut h[l], h_new);
            layers.push(GruStep {
                input: std::mem::replace(&mut layer_in, h[l].clone()),
                h_prev,
                r,
                z,
                n,
                hn,
            });
        }
        let mut feature = layer_in;
        feature.extend_from_slice(&x);
        let theta = affine(w.theta_w, w.theta_b, &feature);
        let gamma = affine(w.gamma_w, w.gamma_b, &feature);
        let beta_hidden: Vec<f64> = affine(w.beta_w1, w.beta_b1, &feature)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let beta_out = affine(w.beta_w2, w.beta_b2, &beta_hidden);
        let mut beta = [0.0; SHAPE_DIM];
        beta.copy_from_slice(&beta_out);
        preds.push(PredictionFrame {
            theta: theta
                .chunks_exact(3)
                .map(|c| AxisAngle::new(c[0], c[1], c[2]))
                .collect(),
            beta,
            gamma: Vector3::new(gamma[0], gamma[1], gamma[2]),
        });
        steps.push(Step {
            x,
            feature,
            layers,
            beta_hidden,
        });
    }
    Ok((preds, ForwardCache { steps }, RecurrentState { h }))
}

/// Per-frame predictions from a zero initial state. Causal: frame `t`
/// depends only on frames up to `t`.
pub fn forward(
    config: &ModelConfig,
    params: &ModelParams,
    window: &[InputVector],
) -> Result<Vec<PredictionFrame>> {
    Ok(forward_cached(config, params, window, &RecurrentState::zeros(config))?.0)
}

/// As [`forward`], starting from `state` and returning the final state.
pub fn forward_with_state(
    config: &ModelConfig,
    params: &ModelParams,
    window: &[InputVector],
    state: &RecurrentState,
) -> Result<(Vec<PredictionFrame>, RecurrentState)> {
    let (p, _, s) = forward_cached(config, params, window, state)?;
    Ok((p, s))
}

pub(crate) fn zero_gradients(config: &ModelConfig) -> Gradients {
    config
        .shapes()
        .into_iter()
        .map(|(n, r, c)| (n, Tensor::zeros(r, c)))
        .collect()
}

/// Adds the gradient of a loss with per-frame output gradients `dpred` to
/// `grads`. The initial state is treated as a constant.
pub(crate) fn backward_cached(
    config: &ModelConfig,
    params: &ModelParams,
    cache: &ForwardCache,
    dpred: &[PredictionGrad],
    grads: &mut Gradients,
) -> Result<()> {
    let w = Weights::new(config, params)?;
    let hd = config.hidden_dim;
    let ed = config.embed_dim;
    let mut dh_next = vec![vec![0.0; hd]; config.layers];
    for (step, dp) in cache.steps.iter().zip(dpred).rev() {
        let mut df = vec![0.0; config.feature_dim()];
        accumulate(grads, "theta.w", "theta.b", &dp.theta, &step.feature);
        matvec_t_add(w.theta_w, &dp.theta, &mut df);
        accumulate(grads, "gamma.w", "gamma.b", &dp.gamma, &step.feature);
        matvec_t_add(w.gamma_w, &dp.gamma, &mut df);
        accumulate(grads, "beta.w2", "beta.b2", &dp.beta, &step.beta_hidden);
        let mut da = vec![0.0; config.beta_hidden];
        matvec_t_add(w.beta_w2, &dp.beta, &mut da);
        for (d, a) in da.iter_mut().zip(&step.beta_hidden) {
            *d *= 1.0 - a * a;
        }
        accumulate(grads, "beta.w1", "beta.b1", &da, &step.feature);
        matvec_t_add(w.beta_w1, &da, &mut df);

        let mut de = vec![0.0; ed];
        let mut dh_above = df[..hd].to_vec();
        for l in (0..config.layers).rev() {
            let g = &step.layers[l];
            let lw = &w.layers[l];
            let dh: Vec<f64> = (0..hd).map(|i| dh_above[i] + dh_next[l][i]).collect();
            let mut d_gi = vec![0.0; 3 * hd];
            let mut d_gh = vec![0.0; 3 * hd];
            let mut dh_prev = vec![0.0; hd];
            for i in 0..hd {
                let (r, z, n, hn) = (g.r[i], g.z[i], g.n[i], g.hn[i]);
                let dn = dh[i] * (1.0 - z);
                let dz = dh[i] * (g.h_prev[i] - n);
                dh_prev[i] = dh[i] * z;
                let dan = dn * (1.0 - n * n);
                let dar = dan * hn * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                d_gi[i] = dar;
                d_gi[hd + i] = daz;
                d_gi[2 * hd + i] = dan;
                d_gh[i] = dar;
                d_gh[hd + i] = daz;
                d_gh[2 * hd + i] = dan * r;
            }
            accumulate(
                grads,
                &format!("gru{l}.w_ih"),
                &format!("gru{l}.b_ih"),
                &d_gi,
                &g.input,
            );
            accumulate(
                grads,
                &format!("gru{l}.w_hh"),
                &format!("gru{l}.b_hh"),
                &d_gh,
                &g.h_prev,
            );
            matvec_t_add(lw.w_hh, &d_gh, &mut dh_prev);
            let mut d_in = vec![0.0; if l == 0 { ed } else { hd }];
            matvec_t_add(lw.w_ih, &d_gi, &mut d_in);
            dh_next[l] = dh_prev;
            if l == 0 {
                for (a, b) in de.iter_mut().zip(&d_in) {
                    *a += b;
                }
            } else {
                dh_above = d_in;
            }
        }
        accumulate(grads, "embed.w", "embed.b", &de, &step.x);
    }
    Ok(())
}

/// Loss of one window from a zero initial state and its exact gradient.
pub fn backward(
    config: &ModelConfig,
    params: &ModelParams,
    window: &[InputVector],
    truth: &[BodyParams],
    weights: &LossWeights,
    mode: LossMode,
) -> Result<(LossBreakdown, Gradients)> {
    let (preds, cache, _) = forward_cached(config, params, window, &RecurrentState::zeros(config))?;
    let (loss, dpred) = composite_loss_grad(&preds, truth, weights, mode)?;
    let mut grads = zero_gradients(config);
    backward_cached(config, params, &cache, &dpred, &mut grads)?;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 9,
            embed_dim: 4,
            hidden_dim: 5,
            layers: 2,
            encoder: super::super::EncoderKind::Gru,
            beta_hidden: 4,
            joints: 3,
            window: 8,
        }
    }

    fn inputs(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Vec<InputVector> {
        (0..t)
            .map(|_| InputVector {
                values: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_heads_give_zero_outputs() {
        let c = tiny();
        let mut p = init_model(&c, 3).unwrap();
        p.zero_heads();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for f in forward(&c, &p, &inputs(&mut rng, 6, 9)).unwrap() {
            assert!(f.theta.iter().all(|t| t.0 == Vector3::zeros()));
            assert_eq!(f.beta, [0.0; SHAPE_DIM]);
            assert_eq!(f.gamma, Vector3::zeros());
        }
    }

    #[test]
    fn forward_is_causal() {
        let c = tiny();
        let p = init_model(&c, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = inputs(&mut rng, 10, 9);
        let a = forward(&c, &p, &x).unwrap();
        let mut y = x.clone();
        y[6].values[2] += 0.5;
        let b = forward(&c, &p, &y).unwrap();
        assert_eq!(a[..6], b[..6]);
        assert_ne!(a[6], b[6]);
    }

    #[test]
    fn constant_input_reaches_a_fixed_point() {
        let c = tiny();
        let p = init_model(&c, 5).unwrap();
        let x = vec![
            InputVector {
                values: vec![0.3; 9]
            };
            300
        ];
        let out = forward(&c, &p, &x).unwrap();
        let delta = |t: usize| -> f64 {
            (out[t].gamma - out[t - 1].gamma).norm()
                + out[t]
                    .theta
                    .iter()
                    .zip(&out[t - 1].theta)
                    .map(|(a, b)| (a.0 - b.0).norm())
                    .sum::<f64>()
        };
        assert!(delta(299) < delta(20));
        assert!(delta(299) < 1e-9);
    }

    #[test]
    fn windows_with_carried_state_match_one_pass() {
        let c = tiny();
        let p = init_model(&c, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = inputs(&mut rng, 13, 9);
        let whole = forward(&c, &p, &x).unwrap();
        let mut state = RecurrentState::zeros(&c);
        let mut pieces = vec![];
        for w in x.chunks(5) {
            let (o, s) = forward_with_state(&c, &p, w, &state).unwrap();
            pieces.extend(o);
            state = s;
        }
        assert_eq!(whole, pieces);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let c = tiny();
        let p = init_model(&c, 2).unwrap();
        let x = vec![InputVector {
            values: vec![0.0; 8],
        }];
        assert!(matches!(forward(&c, &p, &x), Err(Error::Dimension(_))));
    }

    fn targets(rng: &mut ChaCha8Rng, t: usize, j: usize) -> Vec<BodyParams> {
        (0..t)
            .map(|_| {
                let mut b = BodyParams::rest(j);
                for r in &mut b.theta {
                    *r = AxisAngle::new(
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                        rng.random_range(-2.0..2.0),
                    );
                }
                b.beta
                    .iter_mut()
                    .for_each(|v| *v = rng.random_range(-2.0..2.0));
                b.gamma = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    0.9,
                    rng.random_range(-1.0..1.0),
                );
                b
            })
            .collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = inputs(&mut rng, 6, 9);
        let y = targets(&mut rng, 6, 3);
        let w = LossWeights {
            beta: 0.7,
            theta: 1.3,
            gamma: 0.9,
        };
        for mode in [LossMode::Geodesic, LossMode::Mse] {
            let p = init_model(&c, 4).unwrap();
            let (_, g) = backward(&c, &p, &x, &y, &w, mode).unwrap();
            let loss = |q: &ModelParams| {
                let out = forward(&c, q, &x).unwrap();
                super::super::composite_loss(&out, &y, &w, mode)
                    .unwrap()
                    .total
            };
            let h = 1e-4;
            for (name, t) in &p.tensors {
                for i in 0..t.len() {
                    let mut a = p.clone();
                    a.tensors.get_mut(name).unwrap().data[i] += h;
                    let mut b = p.clone();
                    b.tensors.get_mut(name).unwrap().data[i] -= h;
                    let fd = (loss(&a) - loss(&b)) / (2.0 * h);
                    let an = g[name].data[i];
                    let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                    assert!(
                        rel < 1e-3,
                        "{mode:?} {name}[{i}]: analytic {an}, numeric {fd}"
                    );
                }
            }
        }
    }
}
