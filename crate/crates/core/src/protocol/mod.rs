//! The two-phase training protocol: ensemble self-supervised pretraining,
//! fuzzy pseudo-labelling, block selection, and supervised training on the
//! pseudo-labels with early layers frozen.

mod config;
mod labels;
mod metrics;
mod phase1;
mod phase2;
mod run;

pub use config::{ArchConfig, LossKind, Progressive, ProtocolConfig};
pub use labels::{fuzzy_vote, hard_fraction, labels_from_outputs, FuzzyLabel, LabelMode};
pub use metrics::{read_labels_jsonl, read_metrics_jsonl, write_labels_jsonl, write_metrics_jsonl, MetricRecord};
pub use phase1::{
    ensemble_outputs, phase1_continue, phase1_order, phase1_train, pseudo_label, ssl_objective, Block,
    EnsembleState,
};
pub use phase2::{
    argmin_first, block_errors, phase2_train, phase2_train_observed, select_block, soft_cross_entropy, Phase2Event,
    Phase2Plan,
};
pub use run::{run_fussl, FusslRun};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset};

    fn small_cfg(kind: LossKind) -> ProtocolConfig {
        ProtocolConfig {
            m: 3,
            loss_kind: kind,
            phase1_epochs: 2,
            phase2_epochs: 2,
            phase2_full_epochs: 1,
            batch_size: 32,
            arch: ArchConfig {
                hidden: vec![16, 16],
                proj_hidden: 16,
                proj_out: 6,
                predictor_hidden: 8,
            },
            freeze_boundary: 1,
            seed: 5,
            ..ProtocolConfig::default()
        }
    }

    fn data() -> Dataset {
        generate_synthetic(3, 2, 8, 20, 6.0, 1).unwrap()
    }

    #[test]
    fn blocks_start_identical_and_diverge() {
        let ds = data();
        let cfg = small_cfg(LossKind::BarlowTwins);
        let ens = EnsembleState::new(&cfg, ds.dim()).unwrap();
        let fp = ens.blocks[0].params.fingerprint();
        assert!(ens.blocks.iter().all(|b| b.params.fingerprint() == fp));
        let (ens, metrics) = phase1_train(&ds, &cfg).unwrap();
        assert_eq!(metrics.len(), 2 * 3);
        for i in 0..3 {
            for j in i + 1..3 {
                assert_ne!(ens.blocks[i].params.fingerprint(), ens.blocks[j].params.fingerprint());
            }
        }
    }

    #[test]
    fn every_loss_trains_one_epoch() {
        let ds = data();
        for kind in LossKind::ALL {
            let mut cfg = small_cfg(kind);
            cfg.phase1_epochs = 1;
            let (ens, metrics) = phase1_train(&ds, &cfg).unwrap();
            assert!(metrics.iter().all(|r| r.loss.is_finite()), "{kind}");
            assert_eq!(ens.blocks[0].params.predictor.is_some(), kind.uses_predictor());
        }
        let mut ema = small_cfg(LossKind::NonContrastive);
        ema.target_momentum = Some(0.9);
        ema.phase1_epochs = 1;
        phase1_train(&ds, &ema).unwrap();
    }

    #[test]
    fn infeasible_wmse_fails_before_training() {
        let mut cfg = small_cfg(LossKind::Wmse);
        cfg.batch_size = 6;
        assert!(phase1_train(&data(), &cfg).is_err());
    }

    #[test]
    fn parallel_matches_sequential() {
        let ds = data();
        let mut cfg = small_cfg(LossKind::Contrastive);
        cfg.parallel = true;
        let (a, ma) = phase1_train(&ds, &cfg).unwrap();
        cfg.parallel = false;
        let (b, mb) = phase1_train(&ds, &cfg).unwrap();
        assert_eq!(ma, mb);
        for (x, y) in a.blocks.iter().zip(&b.blocks) {
            assert_eq!(x.params.fingerprint(), y.params.fingerprint());
        }
    }

    #[test]
    fn labels_satisfy_invariants_in_every_mode() {
        let ds = data();
        let (ens, _) = phase1_train(&ds, &small_cfg(LossKind::BarlowTwins)).unwrap();
        for mode in [LabelMode::Fuzzy, LabelMode::HardOnly, LabelMode::SoftOnly] {
            let labels = pseudo_label(&ens, &ds, mode).unwrap();
            assert_eq!(labels.len(), ds.len());
            for l in &labels {
                l.check(3).unwrap();
                assert!(l.support().iter().all(|(c, _)| *c < 6));
            }
            if mode == LabelMode::HardOnly {
                assert_eq!(hard_fraction(&labels), 1.0);
            }
        }
    }

    #[test]
    fn zero_phase2_epochs_returns_base() {
        let ds = data();
        let mut cfg = small_cfg(LossKind::BarlowTwins);
        cfg.phase2_epochs = 0;
        cfg.phase2_full_epochs = 0;
        let run = run_fussl(&ds, &cfg).unwrap();
        assert_eq!(run.encoder, run.base);
        assert_eq!(run.base, run.ensemble.blocks[run.selected].params.without_predictor());
    }

    #[test]
    fn run_is_deterministic_and_records_freezing() {
        let ds = data();
        let cfg = small_cfg(LossKind::BarlowTwins);
        let a = run_fussl(&ds, &cfg).unwrap();
        let b = run_fussl(&ds, &cfg).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.encoder.fingerprint(), b.encoder.fingerprint());
        let p2: Vec<&MetricRecord> = a.metrics.iter().filter(|r| r.phase == "phase2").collect();
        assert_eq!(p2.iter().map(|r| r.frozen_layers).collect::<Vec<_>>(), vec![0, 1]);
        assert!(!a.encoder.backbone[0].trainable);
    }

    #[test]
    fn progressive_alternates_phases() {
        let ds = data();
        let mut cfg = small_cfg(LossKind::BarlowTwins);
        cfg.phase1_epochs = 3;
        cfg.progressive = Some(Progressive {
            phase1_period: 2,
            phase2_period: 1,
        });
        let run = run_fussl(&ds, &cfg).unwrap();
        let phases: Vec<(&str, usize)> = run
            .metrics
            .iter()
            .filter(|r| r.block == run.selected || r.phase == "phase2")
            .map(|r| (r.phase.as_str(), r.epoch))
            .collect();
        assert_eq!(phases.iter().filter(|p| p.0 == "phase2").count(), 2);
        assert_eq!(run.ensemble.epochs_done(), 3);
        assert!(run.metrics.iter().filter(|r| r.phase == "phase2").all(|r| r.frozen_layers == 0));
        assert!(run.encoder.layers().all(|l| l.trainable));
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let ds = data();
        let (ens, _) = phase1_train(&ds, &small_cfg(LossKind::BarlowTwins)).unwrap();
        let labels = vec![FuzzyLabel::Hard(0); ds.len() - 1];
        assert!(select_block(&ens, &labels, &ds).is_err());
        let wide = vec![FuzzyLabel::Hard(6); ds.len()];
        assert!(phase2_train(&ens.blocks[0].params, &wide, &ds, &small_cfg(LossKind::BarlowTwins), 0).is_err());
    }
}
