use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::seed::stream_rng;

/// Shape of a synthetic hierarchical dataset.
///
/// Superclass centers sit at distance `separation` from the origin in
/// uniformly random directions; each class center sits at distance
/// `class_separation` (default `separation / 2`) from its superclass center;
/// samples are unit-variance Gaussians around their class center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_super: usize,
    pub classes_per_super: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub separation: f64,
    pub class_separation: Option<f64>,
}

pub fn generate_synthetic(
    n_super: usize,
    classes_per_super: usize,
    dim: usize,
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    generate_synthetic_with(
        &SyntheticConfig {
            n_super,
            classes_per_super,
            dim,
            n_per_class,
            separation,
            class_separation: None,
        },
        seed,
    )
}

fn random_direction(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Class `s · classes_per_super + k` is the `k`-th class of superclass `s`;
/// samples are stored class by class.
pub fn generate_synthetic_with(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    if cfg.n_super == 0 || cfg.classes_per_super == 0 || cfg.n_per_class == 0 {
        return Err(Error::Config("superclass, class and per-class counts must be positive".into()));
    }
    if cfg.dim < 2 {
        return Err(Error::Config(format!("dim must be at least 2, got {}", cfg.dim)));
    }
    let class_sep = cfg.class_separation.unwrap_or(cfg.separation / 2.0);
    if !(cfg.separation >= 0.0 && cfg.separation.is_finite()) || !(class_sep >= 0.0 && class_sep.is_finite()) {
        return Err(Error::Config("separations must be finite and nonnegative".into()));
    }

    let mut center_rng = stream_rng(seed, "synthetic/centers");
    let mut sample_rng = stream_rng(seed, "synthetic/samples");
    let n_class = cfg.n_super * cfg.classes_per_super;
    let n = n_class * cfg.n_per_class;
    let mut x = Matrix::zeros(n, cfg.dim);
    let mut classes = Vec::with_capacity(n);
    let mut supers = Vec::with_capacity(n);
    let mut row = 0;
    for s in 0..cfg.n_super {
        let super_center: Vec<f64> = random_direction(cfg.dim, &mut center_rng)
            .into_iter()
            .map(|v| v * cfg.separation)
            .collect();
        for k in 0..cfg.classes_per_super {
            let offset = random_direction(cfg.dim, &mut center_rng);
            let center: Vec<f64> = super_center.iter().zip(&offset).map(|(c, o)| c + o * class_sep).collect();
            for _ in 0..cfg.n_per_class {
                for (v, c) in x.row_mut(row).iter_mut().zip(&center) {
                    let noise: f64 = sample_rng.sample(StandardNormal);
                    *v = c + noise;
                }
                classes.push(s * cfg.classes_per_super + k);
                supers.push(s);
                row += 1;
            }
        }
    }
    Dataset::new(x, classes, supers, n_class, cfg.n_super)
}
