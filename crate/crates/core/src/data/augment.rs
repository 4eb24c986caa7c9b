use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Stochastic distortions applied to a raw vector, in this order:
///
/// 1. global scaling by a factor drawn uniformly from `scale_range`;
/// 2. additive Gaussian noise of standard deviation `noise_sigma`;
/// 3. a random contiguous window covering at least `crop_fraction_min` of
///    the coordinates is kept and the rest is zeroed;
/// 4. exactly `round(mask_fraction · dim)` distinct coordinates are zeroed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub noise_sigma: f64,
    pub mask_fraction: f64,
    pub scale_range: [f64; 2],
    pub crop_fraction_min: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            noise_sigma: 0.5,
            mask_fraction: 0.1,
            scale_range: [0.75, 4.0 / 3.0],
            crop_fraction_min: 1.0,
        }
    }
}

impl AugmentConfig {
    /// No distortion at all: every view equals its input.
    pub fn identity() -> Self {
        Self {
            noise_sigma: 0.0,
            mask_fraction: 0.0,
            scale_range: [1.0, 1.0],
            crop_fraction_min: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_range;
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be finite and nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.mask_fraction) {
            return Err(Error::Config("mask_fraction must lie in [0, 1)".into()));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config("scale_range must satisfy 0 < lo ≤ hi".into()));
        }
        if !(self.crop_fraction_min > 0.0 && self.crop_fraction_min <= 1.0) {
            return Err(Error::Config("crop_fraction_min must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn augment(&self, x: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        let dim = x.len();
        let [lo, hi] = self.scale_range;
        let s = if lo < hi { rng.random_range(lo..=hi) } else { lo };
        let mut v: Vec<f64> = x.iter().map(|a| a * s).collect();
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("validated sigma");
            v.iter_mut().for_each(|a| *a += normal.sample(rng));
        }
        if self.crop_fraction_min < 1.0 {
            let min_len = ((self.crop_fraction_min * dim as f64).ceil() as usize).clamp(1, dim);
            let len = rng.random_range(min_len..=dim);
            let start = rng.random_range(0..=dim - len);
            v[..start].iter_mut().for_each(|a| *a = 0.0);
            v[start + len..].iter_mut().for_each(|a| *a = 0.0);
        }
        let masked = ((self.mask_fraction * dim as f64).round() as usize).min(dim);
        if masked > 0 {
            for i in sample(rng, dim, masked) {
                v[i] = 0.0;
            }
        }
        v
    }
}

/// Two independently augmented copies of `x` (one positive pair).
pub fn make_pair(x: &[f64], cfg: &AugmentConfig, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let a = cfg.augment(x, rng);
    let b = cfg.augment(x, rng);
    (a, b)
}

/// `2m` augmented copies of `x`; block `i` owns views `2i` and `2i + 1`.
pub fn make_views(x: &[f64], m: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..m)
        .flat_map(|_| {
            let (a, b) = make_pair(x, cfg, rng);
            [a, b]
        })
        .collect()
}

/// One positive pair per row: returns the batches of first and second views.
pub fn augment_batch(x: &Matrix, cfg: &AugmentConfig, rng: &mut impl Rng) -> (Matrix, Matrix) {
    let mut a = Matrix::zeros(x.rows(), x.cols());
    let mut b = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (va, vb) = make_pair(x.row(r), cfg, rng);
        a.row_mut(r).copy_from_slice(&va);
        b.row_mut(r).copy_from_slice(&vb);
    }
    (a, b)
}
