use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::encoder::{EncoderParams, Gradients};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-6,
        }
    }
}

/// Adam moments for every parameter tensor of one encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<Matrix>>,
    second: Vec<Vec<Matrix>>,
}

impl AdamState {
    pub fn new(params: &EncoderParams, config: AdamConfig) -> Self {
        let zeros = |params: &EncoderParams| -> Vec<Vec<Matrix>> {
            params
                .layers()
                .map(|l| l.params().into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect())
                .collect()
        };
        Self {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One bias-corrected Adam update with decoupled weight decay.
///
/// Frozen layers are skipped entirely: their parameters and moments stay
/// bit-identical.
pub fn adam_step(params: &mut EncoderParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    let n_layers = params.layer_count();
    if grads.layers.len() != n_layers || state.first.len() != n_layers {
        return Err(Error::Shape {
            op: "adam_step",
            left: (n_layers, 0),
            right: (grads.layers.len(), state.first.len()),
        });
    }
    for (layer, lg) in params.layers().zip(&grads.layers) {
        let ps = layer.params();
        let gs = lg.tensors();
        if ps.len() != gs.len() || ps.iter().zip(&gs).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::Shape {
                op: "adam_step",
                left: ps.first().map_or((0, 0), |p| p.shape()),
                right: gs.first().map_or((0, 0), |g| g.shape()),
            });
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (li, (layer, lg)) in params.layers_mut().zip(&grads.layers).enumerate() {
        if !layer.trainable {
            continue;
        }
        for (pi, (p, g)) in layer.params_mut().into_iter().zip(lg.tensors()).enumerate() {
            let m = state.first[li][pi].data_mut();
            let v = state.second[li][pi].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let update = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *w -= lr * (update + weight_decay * *w);
            }
        }
    }
    params.bump_generation();
    Ok(())
}
