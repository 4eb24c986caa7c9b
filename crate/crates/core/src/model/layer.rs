use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Batchnorm variance guard. Small enough that a unit-variance feature is
/// normalized to variance 1 within 1e-8.
pub const BN_EPS: f64 = 1e-8;
/// Weight of the previous running statistic in the exponential average.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub batchnorm: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn hidden(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            batchnorm: true,
            activation: Activation::Relu,
        }
    }

    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            batchnorm: false,
            activation: Activation::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Matrix,
    pub beta: Matrix,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Matrix::filled(1, dim, 1.0),
            beta: Matrix::zeros(1, dim),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }
}

/// Fully connected layer with optional batchnorm and ReLU.
///
/// `weight` is `out_dim × in_dim`; the layer computes `x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Matrix,
    pub bias: Matrix,
    pub bn: Option<BatchNorm>,
    pub trainable: bool,
}

/// Per-layer gradient, shaped like the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weight: Matrix,
    pub bias: Matrix,
    pub gamma: Option<Matrix>,
    pub beta: Option<Matrix>,
}

impl LayerGrads {
    pub fn zeros_like(layer: &Layer) -> Self {
        Self {
            weight: Matrix::zeros(layer.spec.out_dim, layer.spec.in_dim),
            bias: Matrix::zeros(1, layer.spec.out_dim),
            gamma: layer.bn.as_ref().map(|_| Matrix::zeros(1, layer.spec.out_dim)),
            beta: layer.bn.as_ref().map(|_| Matrix::zeros(1, layer.spec.out_dim)),
        }
    }

    pub fn is_zero(&self) -> bool {
        let zero = |m: &Matrix| m.data().iter().all(|v| *v == 0.0);
        zero(&self.weight)
            && zero(&self.bias)
            && self.gamma.as_ref().map_or(true, zero)
            && self.beta.as_ref().map_or(true, zero)
    }
}

/// Values cached by a layer's forward pass for its backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    input: Matrix,
    /// Output after batchnorm, before the activation.
    pre_activation: Matrix,
    bn: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    /// Whether batch statistics (rather than running ones) were used.
    batch_stats: bool,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl Layer {
    pub(crate) fn init(spec: LayerSpec, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (spec.in_dim as f64).sqrt();
        let weight = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| rng.random_range(-bound..bound));
        let bias = Matrix::from_fn(1, spec.out_dim, |_, _| rng.random_range(-bound..bound));
        Self {
            spec,
            weight,
            bias,
            bn: spec.batchnorm.then(|| BatchNorm::new(spec.out_dim)),
            trainable: true,
        }
    }

    /// Uses batch statistics when `train` is set and the layer is trainable;
    /// frozen layers always normalize with their running statistics.
    pub(crate) fn forward(&self, x: &Matrix, train: bool) -> Result<(Matrix, LayerCache)> {
        if x.cols() != self.spec.in_dim {
            return Err(Error::Shape {
                op: "layer forward",
                left: x.shape(),
                right: (self.spec.out_dim, self.spec.in_dim),
            });
        }
        let mut y = x.matmul_nt(&self.weight)?;
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }

        let bn_cache = match &self.bn {
            None => None,
            Some(bn) => {
                let batch_stats = train && self.trainable;
                if batch_stats && y.rows() < 2 {
                    return Err(Error::TooFewRows {
                        op: "batchnorm",
                        needed: 2,
                        got: y.rows(),
                    });
                }
                let (mean, var) = if batch_stats {
                    batch_moments(&y)
                } else {
                    (bn.running_mean.clone(), bn.running_var.clone())
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut normalized = y.clone();
                for r in 0..y.rows() {
                    let row = normalized.row_mut(r);
                    for c in 0..row.len() {
                        row[c] = (row[c] - mean[c]) * inv_std[c];
                    }
                }
                for r in 0..y.rows() {
                    let (nrow, yrow) = (normalized.row(r), y.row_mut(r));
                    for c in 0..yrow.len() {
                        yrow[c] = bn.gamma.data()[c] * nrow[c] + bn.beta.data()[c];
                    }
                }
                Some(BnCache {
                    normalized,
                    inv_std,
                    batch_stats,
                    batch_mean: mean,
                    batch_var: var,
                })
            }
        };

        let pre_activation = y.clone();
        if self.spec.activation == Activation::Relu {
            y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok((
            y,
            LayerCache {
                input: x.clone(),
                pre_activation,
                bn: bn_cache,
            },
        ))
    }

    /// Returns the gradient w.r.t. the layer input and, for trainable
    /// layers, the parameter gradients (zero otherwise).
    pub(crate) fn backward(&self, cache: &LayerCache, grad_out: &Matrix) -> Result<(Matrix, LayerGrads)> {
        if grad_out.shape() != cache.pre_activation.shape() {
            return Err(Error::StaleActivations("layer output gradient shape"));
        }
        let mut g = grad_out.clone();
        if self.spec.activation == Activation::Relu {
            for (gv, p) in g.data_mut().iter_mut().zip(cache.pre_activation.data()) {
                if *p <= 0.0 {
                    *gv = 0.0;
                }
            }
        }

        let mut grads = LayerGrads::zeros_like(self);
        if let (Some(bn), Some(bc)) = (&self.bn, &cache.bn) {
            let (n, d) = g.shape();
            let gamma = bn.gamma.data();
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            for r in 0..n {
                for c in 0..d {
                    dbeta[c] += g[(r, c)];
                    dgamma[c] += g[(r, c)] * bc.normalized[(r, c)];
                }
            }
            let mut dy = Matrix::zeros(n, d);
            if bc.batch_stats {
                // dy = inv_std/N · (N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = γ·g
                let nf = n as f64;
                for c in 0..d {
                    let s1 = gamma[c] * dbeta[c];
                    let s2 = gamma[c] * dgamma[c];
                    for r in 0..n {
                        let dxhat = gamma[c] * g[(r, c)];
                        dy[(r, c)] = bc.inv_std[c] / nf * (nf * dxhat - s1 - bc.normalized[(r, c)] * s2);
                    }
                }
            } else {
                for r in 0..n {
                    for c in 0..d {
                        dy[(r, c)] = gamma[c] * g[(r, c)] * bc.inv_std[c];
                    }
                }
            }
            if self.trainable {
                grads.gamma = Some(Matrix::new(1, d, dgamma)?);
                grads.beta = Some(Matrix::new(1, d, dbeta)?);
            }
            g = dy;
        }

        let grad_in = g.matmul(&self.weight)?;
        if self.trainable {
            grads.weight = g.matmul_tn(&cache.input)?;
            let mut db = vec![0.0; self.spec.out_dim];
            for r in 0..g.rows() {
                for (b, v) in db.iter_mut().zip(g.row(r)) {
                    *b += v;
                }
            }
            grads.bias = Matrix::new(1, self.spec.out_dim, db)?;
        }
        Ok((grad_in, grads))
    }

    /// Folds the batch statistics of a training forward pass into the
    /// running estimates.
    pub(crate) fn absorb_batch_stats(&mut self, cache: &LayerCache) {
        let (Some(bn), Some(bc)) = (self.bn.as_mut(), cache.bn.as_ref()) else {
            return;
        };
        if !bc.batch_stats || !self.trainable {
            return;
        }
        let n = cache.input.rows() as f64;
        let unbias = n / (n - 1.0);
        for c in 0..bn.running_mean.len() {
            bn.running_mean[c] = BN_MOMENTUM * bn.running_mean[c] + (1.0 - BN_MOMENTUM) * bc.batch_mean[c];
            bn.running_var[c] = BN_MOMENTUM * bn.running_var[c] + (1.0 - BN_MOMENTUM) * bc.batch_var[c] * unbias;
        }
    }

    /// Mutable views of every parameter tensor, in a fixed order
    /// (weight, bias, gamma, beta).
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.weight, &mut self.bias];
        if let Some(bn) = self.bn.as_mut() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }

    pub(crate) fn params(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.weight, &self.bias];
        if let Some(bn) = self.bn.as_ref() {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }
}

impl LayerGrads {
    pub(crate) fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![&self.weight, &self.bias];
        if let Some(g) = self.gamma.as_ref() {
            out.push(g);
        }
        if let Some(b) = self.beta.as_ref() {
            out.push(b);
        }
        out
    }

    pub(crate) fn accumulate(&mut self, other: &LayerGrads) {
        self.weight.add_assign(&other.weight);
        self.bias.add_assign(&other.bias);
        if let (Some(a), Some(b)) = (self.gamma.as_mut(), other.gamma.as_ref()) {
            a.add_assign(b);
        }
        if let (Some(a), Some(b)) = (self.beta.as_mut(), other.beta.as_ref()) {
            a.add_assign(b);
        }
    }
}

/// Biased per-column mean and variance.
fn batch_moments(y: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let mean = y.column_means();
    let mut var = vec![0.0; y.cols()];
    for r in 0..y.rows() {
        for (c, v) in y.row(r).iter().enumerate() {
            let d = v - mean[c];
            var[c] += d * d;
        }
    }
    let n = y.rows() as f64;
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}
