//! Sample-level self-supervised objectives with analytic gradients.
//!
//! Every loss returns its value together with one gradient matrix per
//! embedding-batch argument, in argument order. Per-sample terms are
//! averaged over the batch.

mod barlow;
mod contrastive;
mod cosine;
mod triplet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use barlow::barlow_twins_loss;
pub use contrastive::contrastive_loss;
pub use cosine::{cosine_pair_loss, noncontrastive_loss, wmse_loss};
pub use triplet::{npair_loss, npair_loss_in_batch, triplet_loss};

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub grads: Vec<Matrix>,
}

/// Sign convention of the triplet hinge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripletMode {
    /// `max(0, zᵢ·zⱼ − zᵢ·z_k + μ)`, rewarding a dissimilar positive.
    AsWritten,
    /// `max(0, zᵢ·z_k − zᵢ·zⱼ + μ)`.
    #[default]
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub margin: f64,
    pub lambda: f64,
    pub whiten_eps: f64,
    pub triplet_mode: TripletMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            margin: 0.5,
            lambda: 5e-3,
            whiten_eps: 1e-6,
            triplet_mode: TripletMode::Standard,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config("lambda must be positive".into()));
        }
        if !(self.whiten_eps > 0.0) {
            return Err(Error::Config("whiten_eps must be positive".into()));
        }
        if !self.margin.is_finite() {
            return Err(Error::Config("margin must be finite".into()));
        }
        Ok(())
    }
}

fn ensure_rows(z: &Matrix, needed: usize, op: &'static str) -> Result<()> {
    if z.rows() < needed {
        return Err(Error::TooFewRows {
            op,
            needed,
            got: z.rows(),
        });
    }
    Ok(())
}
