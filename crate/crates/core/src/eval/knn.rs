use super::probe::{backbone_features, check_compatible, ProbeResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::EncoderParams;
use crate::numerics::{dot, Matrix};

/// `1 − cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot(a, b) / (na * nb)
}

/// Majority vote of the `k` training rows nearest in cosine distance.
///
/// Equal distances are ordered by training index; equal vote counts go to
/// the lowest class.
pub fn knn_classify(
    train: &Matrix,
    train_labels: &[usize],
    n_class: usize,
    query: &Matrix,
    k: usize,
) -> Result<Vec<usize>> {
    if k == 0 || k > train.rows() {
        return Err(Error::Invalid(format!("k = {k} must lie in 1..={}", train.rows())));
    }
    if train.cols() != query.cols() || train_labels.len() != train.rows() {
        return Err(Error::Shape {
            op: "knn_classify",
            left: train.shape(),
            right: query.shape(),
        });
    }
    let mut out = Vec::with_capacity(query.rows());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.rows());
    for q in 0..query.rows() {
        dist.clear();
        dist.extend((0..train.rows()).map(|i| (cosine_distance(query.row(q), train.row(i)), i)));
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_class];
        for &(_, i) in &dist[..k] {
            votes[train_labels[i]] += 1;
        }
        let mut best = 0;
        for c in 1..n_class {
            if votes[c] > votes[best] {
                best = c;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// kNN top-1 on eval-mode backbone features; nothing is trained.
pub fn knn_probe(encoder: &EncoderParams, train: &Dataset, test: &Dataset, k: usize) -> Result<ProbeResult> {
    check_compatible(train, test)?;
    let pred = knn_classify(
        &backbone_features(encoder, train)?,
        train.class_labels(),
        train.n_class(),
        &backbone_features(encoder, test)?,
        k,
    )?;
    let hits = pred.iter().zip(test.class_labels()).filter(|(p, t)| p == t).count();
    Ok(ProbeResult {
        top1: hits as f64 / test.len() as f64,
        n_test: test.len(),
        train_epochs: 0,
    })
}
