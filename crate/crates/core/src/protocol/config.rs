use serde::{Deserialize, Serialize};

use super::labels::LabelMode;
use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::EncoderSpec;

/// Phase-1 objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Triplet,
    Npair,
    Contrastive,
    NonContrastive,
    #[serde(rename = "w-mse")]
    Wmse,
    #[default]
    BarlowTwins,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Triplet,
        LossKind::Npair,
        LossKind::Contrastive,
        LossKind::NonContrastive,
        LossKind::Wmse,
        LossKind::BarlowTwins,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Triplet => "triplet",
            LossKind::Npair => "npair",
            LossKind::Contrastive => "contrastive",
            LossKind::NonContrastive => "non-contrastive",
            LossKind::Wmse => "w-mse",
            LossKind::BarlowTwins => "barlow-twins",
        }
    }

    /// Whether the encoder needs a predictor head.
    pub fn uses_predictor(self) -> bool {
        self == LossKind::NonContrastive
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = LossKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown loss {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Widths of the MLP encoder; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub proj_hidden: usize,
    /// Projector output width = number of pseudo-classes.
    pub proj_out: usize,
    pub predictor_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64, 64],
            proj_hidden: 64,
            proj_out: 16,
            predictor_hidden: 32,
        }
    }
}

impl ArchConfig {
    pub fn encoder_spec(&self, input_dim: usize, with_predictor: bool) -> EncoderSpec {
        EncoderSpec::mlp(
            input_dim,
            &self.hidden,
            self.proj_hidden,
            self.proj_out,
            with_predictor.then_some(self.predictor_hidden),
        )
    }
}

/// Alternating schedule: `phase1_period` ensemble epochs, relabel,
/// `phase2_period` epochs on the labels, repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progressive {
    pub phase1_period: usize,
    pub phase2_period: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Ensemble size.
    pub m: usize,
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Phase-2 epochs before the freeze boundary takes effect.
    pub phase2_full_epochs: usize,
    pub batch_size: usize,
    pub lr_phase1_warm: f64,
    pub lr_phase1_main: f64,
    pub lr_phase2: f64,
    /// Warm-up length; `None` means `ceil(phase1_epochs / 80)`.
    pub warmup_epochs: Option<usize>,
    /// Number of leading backbone layers frozen in phase 2.
    pub freeze_boundary: usize,
    pub label_mode: LabelMode,
    pub progressive: Option<Progressive>,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub arch: ArchConfig,
    /// Momentum-target rate for the non-contrastive loss; `None` uses the
    /// online network itself behind a stop-gradient.
    pub target_momentum: Option<f64>,
    /// Train phase-1 blocks on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Fill `wall_ms` in metrics. Off by default so traces are reproducible.
    pub record_wall_time: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            m: 3,
            loss_kind: LossKind::BarlowTwins,
            loss: LossConfig::default(),
            phase1_epochs: 200,
            phase2_epochs: 100,
            phase2_full_epochs: 25,
            batch_size: 128,
            lr_phase1_warm: 3e-3,
            lr_phase1_main: 1e-3,
            lr_phase2: 1e-3,
            warmup_epochs: None,
            freeze_boundary: 2,
            label_mode: LabelMode::Fuzzy,
            progressive: None,
            seed: 0,
            augment: AugmentConfig::default(),
            arch: ArchConfig::default(),
            target_momentum: None,
            parallel: true,
            record_wall_time: false,
        }
    }
}

impl ProtocolConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.phase1_epochs.div_ceil(80))
    }

    /// Phase-1 learning rate at (0-based) epoch `epoch`.
    pub fn phase1_lr(&self, epoch: usize) -> f64 {
        if epoch < self.warmup() {
            self.lr_phase1_warm
        } else {
            self.lr_phase1_main
        }
    }

    pub fn encoder_spec(&self, input_dim: usize) -> EncoderSpec {
        self.arch.encoder_spec(input_dim, self.loss_kind.uses_predictor())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m == 0 {
            return fail("ensemble size m must be at least 1");
        }
        if self.phase2_full_epochs > self.phase2_epochs {
            return fail("phase2_full_epochs must not exceed phase2_epochs");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        for (lr, name) in [
            (self.lr_phase1_warm, "lr_phase1_warm"),
            (self.lr_phase1_main, "lr_phase1_main"),
            (self.lr_phase2, "lr_phase2"),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.freeze_boundary > self.arch.hidden.len() {
            return Err(Error::Config(format!(
                "freeze_boundary {} exceeds the {} backbone layers",
                self.freeze_boundary,
                self.arch.hidden.len()
            )));
        }
        if self.arch.hidden.is_empty()
            || self.arch.hidden.contains(&0)
            || self.arch.proj_hidden == 0
            || self.arch.proj_out < 2
            || self.arch.predictor_hidden == 0
        {
            return fail("architecture widths must be positive, with at least one backbone layer and two outputs");
        }
        if let Some(p) = self.progressive {
            if p.phase1_period == 0 || p.phase2_period == 0 {
                return fail("progressive periods must be positive");
            }
        }
        if let Some(t) = self.target_momentum {
            if !(0.0..1.0).contains(&t) {
                return fail("target_momentum must lie in [0, 1)");
            }
        }
        self.loss.validate()?;
        self.augment.validate()
    }

    /// Rows per phase-1 step for a dataset of `n` samples.
    pub fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.min(n)
    }

    /// Rejects combinations that cannot train, before any work is done.
    pub fn check_feasible(&self, n: usize) -> Result<()> {
        self.validate()?;
        let b = self.effective_batch(n);
        if b < 2 {
            return Err(Error::Config(format!("need at least 2 samples per batch, dataset has {n}")));
        }
        if self.loss_kind == LossKind::Wmse && b <= self.arch.proj_out {
            return Err(Error::Config(format!(
                "w-mse needs batch size > projector width ({b} ≤ {})",
                self.arch.proj_out
            )));
        }
        Ok(())
    }
}
