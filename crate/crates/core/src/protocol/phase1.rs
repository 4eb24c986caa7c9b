use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{LossKind, ProtocolConfig};
use super::labels::{labels_from_outputs, FuzzyLabel, LabelMode};
use super::metrics::MetricRecord;
use crate::data::{augment_batch, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    barlow_twins_loss, contrastive_loss, noncontrastive_loss, npair_loss_in_batch, triplet_loss, wmse_loss,
};
use crate::model::{adam_step, init_encoder, AdamConfig, AdamState, EncoderParams, Gradients, Head, Mode};
use crate::numerics::{l2_normalize_rows, l2_normalize_rows_backward, Matrix, NORM_EPS};
use crate::seed::{block_rng, stream_rng, stream_seed};

/// One ensemble member: its encoder, optimizer state, optional momentum
/// target and private augmentation stream.
#[derive(Debug, Clone)]
pub struct Block {
    pub params: EncoderParams,
    pub adam: AdamState,
    pub target: Option<EncoderParams>,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub blocks: Vec<Block>,
    pub shared_init_seed: u64,
    pub block_rng_seeds: Vec<u64>,
    epochs_done: usize,
}

fn fresh_adam(params: &EncoderParams, lr: f64) -> AdamState {
    AdamState::new(
        params,
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
    )
}

impl EnsembleState {
    /// `m` blocks with bit-identical initial parameters and distinct
    /// augmentation streams.
    pub fn new(cfg: &ProtocolConfig, input_dim: usize) -> Result<Self> {
        cfg.validate()?;
        let shared_init_seed = stream_seed(cfg.seed, "init");
        let params = init_encoder(&cfg.encoder_spec(input_dim), shared_init_seed)?;
        let aug_stage = stream_seed(cfg.seed, "phase1/augment");
        let block_rng_seeds: Vec<u64> = (0..cfg.m).map(|i| aug_stage ^ i as u64).collect();
        let blocks = (0..cfg.m)
            .map(|i| Block {
                params: params.clone(),
                adam: fresh_adam(&params, cfg.phase1_lr(0)),
                target: cfg.target_momentum.map(|_| params.without_predictor()),
                rng: block_rng(aug_stage, i),
            })
            .collect();
        Ok(Self {
            blocks,
            shared_init_seed,
            block_rng_seeds,
            epochs_done: 0,
        })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn params(&self) -> Vec<&EncoderParams> {
        self.blocks.iter().map(|b| &b.params).collect()
    }

    /// Restarts every block from `from` (keeping each block's own predictor
    /// and augmentation stream), with fresh optimizer state.
    pub(crate) fn reseed(&mut self, from: &EncoderParams, cfg: &ProtocolConfig) -> Result<()> {
        for b in &mut self.blocks {
            let mut p = from.without_predictor();
            p.predictor = b.params.predictor.clone();
            p.set_freeze(0)?;
            b.adam = fresh_adam(&p, cfg.lr_phase1_main);
            b.target = cfg.target_momentum.map(|_| p.without_predictor());
            b.params = p;
        }
        Ok(())
    }
}

fn two(v: Vec<Matrix>) -> (Matrix, Matrix) {
    let mut it = v.into_iter();
    (it.next().expect("first gradient"), it.next().expect("second gradient"))
}

/// Value and parameter gradient of the phase-1 objective on one positive
/// pair batch `(va, vb)`, plus the forward records of both views.
///
/// `target` is the momentum network for the non-contrastive loss; without
/// one, the online projector output behind a stop-gradient is the target.
pub fn ssl_objective(
    params: &EncoderParams,
    target: Option<&EncoderParams>,
    va: &Matrix,
    vb: &Matrix,
    cfg: &ProtocolConfig,
) -> Result<(f64, Gradients, [crate::model::Activations; 2])> {
    let aa = params.forward(va, Mode::Train)?;
    let ab = params.forward(vb, Mode::Train)?;
    let (pa, pb) = (&aa.projector, &ab.projector);
    let lc = &cfg.loss;
    let (value, head, ga, gb) = match cfg.loss_kind {
        LossKind::BarlowTwins => {
            let o = barlow_twins_loss(pa, pb, lc)?;
            let (ga, gb) = two(o.grads);
            (o.value, Head::Projector, ga, gb)
        }
        LossKind::Wmse => {
            let o = wmse_loss(pa, pb, lc)?;
            let (ga, gb) = two(o.grads);
            (o.value, Head::Projector, ga, gb)
        }
        LossKind::Triplet => {
            let na = l2_normalize_rows(pa, NORM_EPS);
            let nb = l2_normalize_rows(pb, NORM_EPS);
            let b = nb.rows();
            // Negative for anchor r: the second view of the next sample.
            let nk = Matrix::from_fn(b, nb.cols(), |r, c| nb[((r + 1) % b, c)]);
            let o = triplet_loss(&na, &nb, &nk, lc)?;
            let mut it = o.grads.into_iter();
            let (gi, mut gj, gk) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
            for r in 0..b {
                for c in 0..gk.cols() {
                    gj[((r + 1) % b, c)] += gk[(r, c)];
                }
            }
            (
                o.value,
                Head::Projector,
                l2_normalize_rows_backward(pa, &gi, NORM_EPS)?,
                l2_normalize_rows_backward(pb, &gj, NORM_EPS)?,
            )
        }
        LossKind::Npair => {
            let na = l2_normalize_rows(pa, NORM_EPS);
            let nb = l2_normalize_rows(pb, NORM_EPS);
            let o = npair_loss_in_batch(&na, &nb)?;
            let (gi, gj) = two(o.grads);
            (
                o.value,
                Head::Projector,
                l2_normalize_rows_backward(pa, &gi, NORM_EPS)?,
                l2_normalize_rows_backward(pb, &gj, NORM_EPS)?,
            )
        }
        LossKind::Contrastive => {
            let b = pa.rows();
            let views = pa.vstack(pb)?;
            let pairs: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
            let o = contrastive_loss(&views, &pairs, lc)?;
            let g = &o.grads[0];
            (o.value, Head::Projector, g.slice_rows(0, b), g.slice_rows(b, 2 * b))
        }
        LossKind::NonContrastive => {
            let (ta, tb) = match target {
                Some(t) => (t.forward(va, Mode::Train)?.projector, t.forward(vb, Mode::Train)?.projector),
                None => (pa.clone(), pb.clone()),
            };
            let missing = || Error::Config("non-contrastive loss needs a predictor head".into());
            let qa = aa.predictor.as_ref().ok_or_else(missing)?;
            let qb = ab.predictor.as_ref().ok_or_else(missing)?;
            let la = noncontrastive_loss(pa, &tb, qa)?;
            let lb = noncontrastive_loss(pb, &ta, qb)?;
            (
                0.5 * (la.value + lb.value),
                Head::Predictor,
                la.grads[2].scale(0.5),
                lb.grads[2].scale(0.5),
            )
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("phase-1 loss"));
    }
    let mut grads = params.backward(&aa, head, &ga)?;
    grads.accumulate(&params.backward(&ab, head, &gb)?)?;
    Ok((value, grads, [aa, ab]))
}

fn ssl_step(block: &mut Block, va: &Matrix, vb: &Matrix, cfg: &ProtocolConfig) -> Result<f64> {
    let (value, grads, [aa, ab]) = ssl_objective(&block.params, block.target.as_ref(), va, vb, cfg)?;
    block.params.absorb_batch_stats(&aa)?;
    block.params.absorb_batch_stats(&ab)?;
    adam_step(&mut block.params, &grads, &mut block.adam)?;
    if let (Some(t), Some(rate)) = (block.target.as_mut(), cfg.target_momentum) {
        t.ema_update(&block.params, rate)?;
    }
    Ok(value)
}

/// Sample order of phase-1 epoch `epoch`, shared by every block.
pub fn phase1_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, &format!("phase1/shuffle/{epoch}")));
    idx
}

fn train_block(
    index: usize,
    block: &mut Block,
    ds: &Dataset,
    cfg: &ProtocolConfig,
    start: usize,
    epochs: usize,
) -> Result<Vec<MetricRecord>> {
    let b = cfg.effective_batch(ds.len());
    let steps = ds.len() / b;
    let mut out = Vec::with_capacity(epochs);
    for epoch in start..start + epochs {
        let clock = Instant::now();
        let lr = cfg.phase1_lr(epoch);
        block.adam.set_lr(lr);
        let order = phase1_order(ds.len(), epoch, cfg.seed);
        let mut total = 0.0;
        for s in 0..steps {
            let xb = ds.x().select_rows(&order[s * b..(s + 1) * b]);
            let (va, vb) = augment_batch(&xb, &cfg.augment, &mut block.rng);
            total += ssl_step(block, &va, &vb, cfg)?;
        }
        let mut rec = MetricRecord::new("phase1", epoch, index, total / steps as f64, lr, block.params.frozen_layers());
        if cfg.record_wall_time {
            rec.wall_ms = clock.elapsed().as_millis() as u64;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Trains every block for `epochs` more epochs. Blocks never share state,
/// so the parallel schedule reproduces the sequential one bit for bit.
pub fn phase1_continue(
    ens: &mut EnsembleState,
    ds: &Dataset,
    cfg: &ProtocolConfig,
    epochs: usize,
) -> Result<Vec<MetricRecord>> {
    cfg.check_feasible(ds.len())?;
    let start = ens.epochs_done;
    let per_block: Vec<Result<Vec<MetricRecord>>> = if cfg.parallel {
        ens.blocks
            .par_iter_mut()
            .enumerate()
            .map(|(i, b)| train_block(i, b, ds, cfg, start, epochs))
            .collect()
    } else {
        ens.blocks
            .iter_mut()
            .enumerate()
            .map(|(i, b)| train_block(i, b, ds, cfg, start, epochs))
            .collect()
    };
    let mut metrics = Vec::new();
    for r in per_block {
        metrics.extend(r?);
    }
    metrics.sort_by_key(|r| (r.epoch, r.block));
    ens.epochs_done += epochs;
    Ok(metrics)
}

pub fn phase1_train(ds: &Dataset, cfg: &ProtocolConfig) -> Result<(EnsembleState, Vec<MetricRecord>)> {
    cfg.check_feasible(ds.len())?;
    let mut ens = EnsembleState::new(cfg, ds.dim())?;
    let metrics = phase1_continue(&mut ens, ds, cfg, cfg.phase1_epochs)?;
    Ok((ens, metrics))
}

/// Eval-mode projector outputs of every block on the raw samples.
pub fn ensemble_outputs(blocks: &[&EncoderParams], ds: &Dataset) -> Result<Vec<Matrix>> {
    blocks
        .iter()
        .map(|p| p.forward(ds.x(), Mode::Eval).map(|a| a.projector))
        .collect()
}

pub fn pseudo_label(ens: &EnsembleState, ds: &Dataset, mode: LabelMode) -> Result<Vec<FuzzyLabel>> {
    labels_from_outputs(&ensemble_outputs(&ens.params(), ds)?, mode)
}
