use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::probe::{linear_probe, ProbeConfig, ProbeResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};
use crate::protocol::{ensemble_outputs, labels_from_outputs, run_fussl, FuzzyLabel, LabelMode, ProtocolConfig};

/// Probability that two distinct classes drawn uniformly share a
/// superclass, with `classes_per_super` classes in each superclass.
pub fn chance_consistency(classes_per_super: usize, total_classes: usize) -> f64 {
    if total_classes < 2 {
        return 0.0;
    }
    (classes_per_super as f64 - 1.0) / (total_classes as f64 - 1.0)
}

/// The same probability for arbitrary superclass sizes:
/// `Σ_s n_s(n_s − 1) / (T(T − 1))` over the classes in `classes`.
pub fn chance_consistency_of(classes: &[usize], class_to_super: &[Option<usize>]) -> f64 {
    let t = classes.len();
    if t < 2 {
        return 0.0;
    }
    let mut sizes = std::collections::BTreeMap::new();
    for &c in classes {
        if let Some(s) = class_to_super[c] {
            *sizes.entry(s).or_insert(0usize) += 1;
        }
    }
    let same: usize = sizes.values().map(|n| n * (n - 1)).sum();
    same as f64 / (t * (t - 1)) as f64
}

/// Maps each pseudo-class to the true class most often behind its votes,
/// pooling every block's argmax (ties → lowest class). Unused pseudo-classes
/// map to `None`.
pub fn pseudo_class_map(outputs: &[Matrix], true_classes: &[usize], n_class: usize) -> Vec<Option<usize>> {
    let k = outputs.first().map_or(0, Matrix::cols);
    let mut counts = vec![vec![0usize; n_class]; k];
    for o in outputs {
        for (r, &c) in true_classes.iter().enumerate() {
            counts[argmax(o.row(r))][c] += 1;
        }
    }
    counts
        .iter()
        .map(|row| {
            let best = argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>());
            (row[best] > 0).then_some(best)
        })
        .collect()
}

/// Among soft labels whose two heaviest classes map to two different true
/// classes, the fraction whose true classes share a superclass. Returns the
/// fraction and the number of such labels.
pub fn superclass_consistency(
    labels: &[FuzzyLabel],
    pseudo_to_class: &[Option<usize>],
    class_to_super: &[Option<usize>],
) -> (f64, usize) {
    let (mut same, mut pairs) = (0usize, 0usize);
    for l in labels {
        let mut mem = l.memberships().to_vec();
        if mem.len() < 2 {
            continue;
        }
        mem.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let map = |p: usize| pseudo_to_class.get(p).copied().flatten();
        let (Some(c1), Some(c2)) = (map(mem[0].0), map(mem[1].0)) else {
            continue;
        };
        if c1 == c2 {
            continue;
        }
        pairs += 1;
        if class_to_super[c1].is_some() && class_to_super[c1] == class_to_super[c2] {
            same += 1;
        }
    }
    let frac = if pairs == 0 { 0.0 } else { same as f64 / pairs as f64 };
    (frac, pairs)
}

/// Splits every superclass's classes in half: the lower half (by class id)
/// goes to the first set, the rest to the second.
pub fn split_classes_by_superclass(ds: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let map = ds.class_to_super();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in 0..ds.n_super() {
        let members: Vec<usize> = (0..ds.n_class()).filter(|&c| map[c] == Some(s)).collect();
        let half = members.len().div_ceil(2);
        a.extend_from_slice(&members[..half]);
        b.extend_from_slice(&members[half..]);
    }
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossClassReport {
    pub mode: LabelMode,
    /// Probe on the held-out classes with the phase-1 encoder.
    pub base: ProbeResult,
    /// Probe on the held-out classes after phase 2.
    pub probe: ProbeResult,
    /// Within-superclass consistency of the phase-1 soft labels.
    pub consistency: f64,
    pub consistency_pairs: usize,
    pub chance: f64,
}

/// Pretrains on classes `classes_a`, probes on the disjoint classes
/// `classes_b` of the same superclasses, and measures whether the soft
/// labels produced on `classes_a` mix classes of one superclass.
///
/// The consistency always uses the soft-only labelling of the phase-1
/// ensemble, so it is comparable across `cfg.label_mode`.
pub fn cross_class_eval(
    ds: &Dataset,
    classes_a: &[usize],
    classes_b: &[usize],
    cfg: &ProtocolConfig,
    probe: &ProbeConfig,
    test_fraction: f64,
) -> Result<CrossClassReport> {
    let a: BTreeSet<usize> = classes_a.iter().copied().collect();
    let b: BTreeSet<usize> = classes_b.iter().copied().collect();
    if let Some(c) = a.intersection(&b).next() {
        return Err(Error::Invalid(format!("class {c} is in both the pretraining and the probe set")));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid("both class sets must be nonempty".into()));
    }
    let map = ds.class_to_super();
    let supers = |set: &BTreeSet<usize>| -> Result<BTreeSet<usize>> {
        set.iter()
            .map(|&c| {
                map.get(c)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Invalid(format!("class {c} has no samples")))
            })
            .collect()
    };
    if supers(&a)? != supers(&b)? {
        return Err(Error::Invalid("class sets must cover the same superclasses".into()));
    }
    let classes_a: Vec<usize> = a.into_iter().collect();
    let classes_b: Vec<usize> = b.into_iter().collect();

    let ds_a = ds.filter_classes(&classes_a)?;
    let (b_train, b_test) = ds.filter_classes(&classes_b)?.split(test_fraction, probe.seed)?;
    let run = run_fussl(&ds_a, cfg)?;

    let outputs = ensemble_outputs(&run.ensemble.params(), &ds_a)?;
    let soft = labels_from_outputs(&outputs, LabelMode::SoftOnly)?;
    let pseudo_to_class = pseudo_class_map(&outputs, ds_a.class_labels(), ds.n_class());
    let (consistency, consistency_pairs) = superclass_consistency(&soft, &pseudo_to_class, &map);

    Ok(CrossClassReport {
        mode: cfg.label_mode,
        base: linear_probe(&run.base, &b_train, &b_test, probe)?,
        probe: linear_probe(&run.encoder, &b_train, &b_test, probe)?,
        consistency,
        consistency_pairs,
        chance: chance_consistency_of(&classes_a, &map),
    })
}
