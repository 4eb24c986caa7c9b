use super::config::ProtocolConfig;
use super::labels::FuzzyLabel;
use super::metrics::MetricRecord;
use super::phase1::{phase1_continue, pseudo_label, EnsembleState};
use super::phase2::{phase2_train_observed, select_block, Phase2Plan};
use crate::data::Dataset;
use crate::error::Result;
use crate::model::EncoderParams;

/// Everything a full two-phase run produces.
#[derive(Debug, Clone)]
pub struct FusslRun {
    pub ensemble: EnsembleState,
    /// Pseudo-labels of the last labelling round.
    pub labels: Vec<FuzzyLabel>,
    /// Block chosen for phase 2 in the last round.
    pub selected: usize,
    /// The selected block as it left phase 1 (predictor removed).
    pub base: EncoderParams,
    /// The encoder after phase 2.
    pub encoder: EncoderParams,
    pub metrics: Vec<MetricRecord>,
}

/// Phase 1 → pseudo-labels → block selection → phase 2.
///
/// With `cfg.progressive`, the two phases alternate in short periods without
/// freezing; after each phase-2 period every block restarts from the
/// phase-2 encoder and is relabelled in the next round.
pub fn run_fussl(ds: &Dataset, cfg: &ProtocolConfig) -> Result<FusslRun> {
    cfg.check_feasible(ds.len())?;
    let mut ens = EnsembleState::new(cfg, ds.dim())?;
    let mut metrics = Vec::new();

    let Some(prog) = cfg.progressive else {
        metrics.extend(phase1_continue(&mut ens, ds, cfg, cfg.phase1_epochs)?);
        let labels = pseudo_label(&ens, ds, cfg.label_mode)?;
        let selected = select_block(&ens, &labels, ds)?;
        let base = ens.blocks[selected].params.without_predictor();
        let (encoder, m2) = phase2_train_observed(&base, &labels, ds, &Phase2Plan::from_config(cfg, selected), |_| {})?;
        metrics.extend(m2);
        return Ok(FusslRun {
            ensemble: ens,
            labels,
            selected,
            base,
            encoder,
            metrics,
        });
    };

    let mut cycle = 0;
    let mut last = None;
    while ens.epochs_done() < cfg.phase1_epochs || last.is_none() {
        let epochs = prog.phase1_period.min(cfg.phase1_epochs - ens.epochs_done());
        metrics.extend(phase1_continue(&mut ens, ds, cfg, epochs)?);
        let labels = pseudo_label(&ens, ds, cfg.label_mode)?;
        let selected = select_block(&ens, &labels, ds)?;
        let base = ens.blocks[selected].params.without_predictor();
        let plan = Phase2Plan {
            epochs: prog.phase2_period,
            full_epochs: prog.phase2_period,
            freeze_boundary: 0,
            epoch_offset: cycle * prog.phase2_period,
            stage: format!("phase2/cycle{cycle}"),
            ..Phase2Plan::from_config(cfg, selected)
        };
        let (encoder, m2) = phase2_train_observed(&base, &labels, ds, &plan, |_| {})?;
        metrics.extend(m2);
        ens.reseed(&encoder, cfg)?;
        last = Some((labels, selected, base, encoder));
        cycle += 1;
        if epochs == 0 {
            break;
        }
    }
    let (labels, selected, base, encoder) = last.expect("at least one cycle");
    Ok(FusslRun {
        ensemble: ens,
        labels,
        selected,
        base,
        encoder,
        metrics,
    })
}
