use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::ProtocolConfig;
use super::labels::FuzzyLabel;
use super::metrics::MetricRecord;
use super::phase1::{ensemble_outputs, EnsembleState};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossOutput;
use crate::model::{adam_step, AdamConfig, AdamState, EncoderParams, Head, Mode};
use crate::numerics::{log_softmax_rows, softmax_rows, Matrix};
use crate::seed::stream_rng;

/// Mean over rows of `−Σ_c t_c · log softmax(z)_c`, with its gradient
/// `(softmax(z)·Σt − t) / n`.
pub fn soft_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<LossOutput> {
    logits.ensure_same_shape(targets, "soft_cross_entropy")?;
    let n = logits.rows();
    if n == 0 {
        return Err(Error::TooFewRows {
            op: "soft_cross_entropy",
            needed: 1,
            got: 0,
        });
    }
    let logp = log_softmax_rows(logits);
    let p = softmax_rows(logits);
    let mut value = 0.0;
    let mut grad = Matrix::zeros(n, logits.cols());
    for r in 0..n {
        let t = targets.row(r);
        let mass: f64 = t.iter().sum();
        value -= t.iter().zip(logp.row(r)).map(|(t, l)| t * l).sum::<f64>();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (p[(r, c)] * mass - t[c]) / n as f64;
        }
    }
    Ok(LossOutput {
        value: value / n as f64,
        grads: vec![grad],
    })
}

fn target_matrix(labels: &[FuzzyLabel], rows: &[usize], k: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(rows.len(), k);
    for (r, &i) in rows.iter().enumerate() {
        t.row_mut(r).copy_from_slice(&labels[i].target(k)?);
    }
    Ok(t)
}

fn check_labels(labels: &[FuzzyLabel], ds: &Dataset, k: usize) -> Result<()> {
    if labels.len() != ds.len() {
        return Err(Error::Invalid(format!("{} labels for {} samples", labels.len(), ds.len())));
    }
    for l in labels {
        l.target(k)?;
    }
    Ok(())
}

/// Mean soft cross-entropy of each block's eval-mode projector output
/// against the pseudo-labels.
pub fn block_errors(blocks: &[&EncoderParams], labels: &[FuzzyLabel], ds: &Dataset) -> Result<Vec<f64>> {
    let outputs = ensemble_outputs(blocks, ds)?;
    let all: Vec<usize> = (0..ds.len()).collect();
    outputs
        .iter()
        .map(|z| {
            check_labels(labels, ds, z.cols())?;
            Ok(soft_cross_entropy(z, &target_matrix(labels, &all, z.cols())?)?.value)
        })
        .collect()
}

/// Index of the smallest error; the lowest index wins ties.
pub fn argmin_first(errors: &[f64]) -> usize {
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e < errors[best] {
            best = i;
        }
    }
    best
}

pub fn select_block(ens: &EnsembleState, labels: &[FuzzyLabel], ds: &Dataset) -> Result<usize> {
    Ok(argmin_first(&block_errors(&ens.params(), labels, ds)?))
}

/// What `phase2_train_observed` reports to its observer.
#[derive(Debug, Clone, Copy)]
pub enum Phase2Event<'a> {
    /// The freeze boundary was just applied, before the epoch's first step.
    Frozen { epoch: usize, params: &'a EncoderParams },
    /// An optimizer step finished.
    Step {
        epoch: usize,
        step: usize,
        params: &'a EncoderParams,
    },
}

/// Schedule of one phase-2 stretch.
#[derive(Debug, Clone)]
pub struct Phase2Plan {
    pub epochs: usize,
    /// Epochs trained end to end before freezing.
    pub full_epochs: usize,
    pub freeze_boundary: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Added to epoch numbers in the metrics.
    pub epoch_offset: usize,
    /// Reported as `block` in the metrics.
    pub block_index: usize,
    /// RNG stream name for the shuffles.
    pub stage: String,
    pub record_wall_time: bool,
}

impl Phase2Plan {
    pub fn from_config(cfg: &ProtocolConfig, block_index: usize) -> Self {
        Self {
            epochs: cfg.phase2_epochs,
            full_epochs: cfg.phase2_full_epochs,
            freeze_boundary: cfg.freeze_boundary,
            lr: cfg.lr_phase2,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            epoch_offset: 0,
            block_index,
            stage: "phase2".into(),
            record_wall_time: cfg.record_wall_time,
        }
    }
}

pub fn phase2_train(
    block: &EncoderParams,
    labels: &[FuzzyLabel],
    ds: &Dataset,
    cfg: &ProtocolConfig,
    block_index: usize,
) -> Result<(EncoderParams, Vec<MetricRecord>)> {
    phase2_train_observed(block, labels, ds, &Phase2Plan::from_config(cfg, block_index), |_| {})
}

/// Trains on raw samples against the pseudo-labels with soft
/// cross-entropy on the projector output. After `full_epochs` epochs the
/// first `freeze_boundary` backbone layers are frozen for the rest.
pub fn phase2_train_observed(
    block: &EncoderParams,
    labels: &[FuzzyLabel],
    ds: &Dataset,
    plan: &Phase2Plan,
    mut observe: impl FnMut(Phase2Event<'_>),
) -> Result<(EncoderParams, Vec<MetricRecord>)> {
    let mut params = block.without_predictor();
    params.set_freeze(0)?;
    let k = params.projector_dim();
    check_labels(labels, ds, k)?;
    if plan.freeze_boundary > params.backbone_len() {
        return Err(Error::Config(format!(
            "freeze boundary {} exceeds backbone depth {}",
            plan.freeze_boundary,
            params.backbone_len()
        )));
    }
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: plan.lr,
            ..AdamConfig::default()
        },
    );
    let b = plan.batch_size.min(ds.len());
    let mut metrics = Vec::with_capacity(plan.epochs);
    for e in 0..plan.epochs {
        let clock = Instant::now();
        if e == plan.full_epochs && plan.freeze_boundary > 0 {
            params.set_freeze(plan.freeze_boundary)?;
            observe(Phase2Event::Frozen {
                epoch: e,
                params: &params,
            });
        }
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut stream_rng(plan.seed, &format!("{}/shuffle/{e}", plan.stage)));
        let (mut total, mut steps) = (0.0, 0usize);
        for (s, rows) in order.chunks(b).enumerate() {
            if rows.len() < 2 {
                continue;
            }
            let acts = params.forward(&ds.x().select_rows(rows), Mode::Train)?;
            let out = soft_cross_entropy(&acts.projector, &target_matrix(labels, rows, k)?)?;
            if !out.value.is_finite() {
                return Err(Error::NonFinite("phase-2 loss"));
            }
            let grads = params.backward(&acts, Head::Projector, &out.grads[0])?;
            params.absorb_batch_stats(&acts)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += out.value;
            steps += 1;
            observe(Phase2Event::Step {
                epoch: e,
                step: s,
                params: &params,
            });
        }
        let mut rec = MetricRecord::new(
            "phase2",
            plan.epoch_offset + e,
            plan.block_index,
            total / steps.max(1) as f64,
            plan.lr,
            params.frozen_layers(),
        );
        if plan.record_wall_time {
            rec.wall_ms = clock.elapsed().as_millis() as u64;
        }
        metrics.push(rec);
    }
    Ok((params, metrics))
}
