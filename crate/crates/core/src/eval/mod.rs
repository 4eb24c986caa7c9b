//! Representation quality: linear and kNN probes on frozen backbone
//! features, and the cross-class superclass consistency metric.

mod cross;
mod knn;
mod probe;

pub use cross::{
    chance_consistency, chance_consistency_of, cross_class_eval, pseudo_class_map, split_classes_by_superclass,
    superclass_consistency, CrossClassReport,
};
pub use knn::{cosine_distance, knn_classify, knn_probe};
pub use probe::{backbone_features, linear_probe, ProbeConfig, ProbeResult};

/// Fraction of samples whose hard pseudo-class agrees with the majority
/// true class of that pseudo-class (soft labels are skipped). Returns the
/// purity and the number of hard labels.
pub fn hard_label_purity(labels: &[crate::protocol::FuzzyLabel], classes: &[usize], n_class: usize) -> (f64, usize) {
    use std::collections::BTreeMap;
    let mut counts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut n = 0;
    for (l, &c) in labels.iter().zip(classes) {
        if let Some(p) = l.hard_class() {
            counts.entry(p).or_insert_with(|| vec![0; n_class])[c] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return (0.0, 0);
    }
    let agree: usize = counts.values().map(|v| v.iter().copied().max().unwrap_or(0)).sum();
    (agree as f64 / n as f64, n)
}
