use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

use super::{LossConfig, LossOutput, TripletMode};

/// Batch-averaged triplet hinge over row-aligned (anchor, positive, negative).
pub fn triplet_loss(zi: &Matrix, zj: &Matrix, zk: &Matrix, cfg: &LossConfig) -> Result<LossOutput> {
    zi.ensure_same_shape(zj, "triplet_loss")?;
    zi.ensure_same_shape(zk, "triplet_loss")?;
    let (rows, cols) = zi.shape();
    let mut gi = Matrix::zeros(rows, cols);
    let mut gj = Matrix::zeros(rows, cols);
    let mut gk = Matrix::zeros(rows, cols);
    if rows == 0 {
        return Ok(LossOutput {
            value: 0.0,
            grads: vec![gi, gj, gk],
        });
    }
    let scale = 1.0 / rows as f64;
    // Sign applied to the (positive − negative) similarity gap.
    let sign = match cfg.triplet_mode {
        TripletMode::AsWritten => 1.0,
        TripletMode::Standard => -1.0,
    };
    let mut total = 0.0;
    for r in 0..rows {
        let (a, p, n) = (zi.row(r), zj.row(r), zk.row(r));
        let gap = sign * (dot(a, p) - dot(a, n)) + cfg.margin;
        if gap <= 0.0 {
            continue;
        }
        total += gap;
        let s = sign * scale;
        for c in 0..cols {
            gi[(r, c)] = s * (p[c] - n[c]);
            gj[(r, c)] = s * a[c];
            gk[(r, c)] = -s * a[c];
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grads: vec![gi, gj, gk],
    })
}

/// Multi-negative N-pair loss with one negative set shared by all anchors:
/// `mean_i log(1 + Σ_k exp(zᵢ·n_k − zᵢ·zⱼ))`.
pub fn npair_loss(zi: &Matrix, zj: &Matrix, negatives: &Matrix, _cfg: &LossConfig) -> Result<LossOutput> {
    zi.ensure_same_shape(zj, "npair_loss")?;
    if negatives.rows() == 0 {
        return Err(Error::Invalid("npair_loss: no negatives".into()));
    }
    if negatives.cols() != zi.cols() {
        return Err(Error::Shape {
            op: "npair_loss",
            left: zi.shape(),
            right: negatives.shape(),
        });
    }
    let (rows, cols) = zi.shape();
    let k = negatives.rows();
    let mut gi = Matrix::zeros(rows, cols);
    let mut gj = Matrix::zeros(rows, cols);
    let mut gn = Matrix::zeros(k, cols);
    if rows == 0 {
        return Ok(LossOutput {
            value: 0.0,
            grads: vec![gi, gj, gn],
        });
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    let mut logits = vec![0.0; k];
    for r in 0..rows {
        let (a, p) = (zi.row(r), zj.row(r));
        let pos = dot(a, p);
        for q in 0..k {
            logits[q] = dot(a, negatives.row(q)) - pos;
        }
        let lse = log1p_sum_exp(&logits);
        total += lse;
        // p_q = exp(logit_q − lse) for the negative terms.
        let mut mass = 0.0;
        for q in 0..k {
            let w = (logits[q] - lse).exp() * scale;
            mass += w;
            let neg = negatives.row(q);
            for c in 0..cols {
                gi[(r, c)] += w * (neg[c] - p[c]);
                gn[(q, c)] += w * a[c];
            }
        }
        for c in 0..cols {
            gj[(r, c)] = -mass * a[c];
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grads: vec![gi, gj, gn],
    })
}

/// N-pair loss where anchor `i` uses the other rows of `zj` as negatives.
pub fn npair_loss_in_batch(zi: &Matrix, zj: &Matrix) -> Result<LossOutput> {
    zi.ensure_same_shape(zj, "npair_loss_in_batch")?;
    let (rows, cols) = zi.shape();
    if rows < 2 {
        return Err(Error::TooFewRows {
            op: "npair_loss_in_batch",
            needed: 2,
            got: rows,
        });
    }
    let sims = zi.matmul_nt(zj)?;
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    // dL/dS, then S = zi·zjᵀ.
    let mut ds = Matrix::zeros(rows, rows);
    let mut logits = vec![0.0; rows];
    for r in 0..rows {
        let pos = sims[(r, r)];
        for q in 0..rows {
            logits[q] = if q == r { 0.0 } else { sims[(r, q)] - pos };
        }
        logits.swap(r, 0);
        let lse = log1p_sum_exp(&logits[1..]);
        logits.swap(r, 0);
        total += lse;
        let mut mass = 0.0;
        for q in 0..rows {
            if q != r {
                let w = (logits[q] - lse).exp() * scale;
                ds[(r, q)] = w;
                mass += w;
            }
        }
        ds[(r, r)] = -mass;
    }
    let gi = ds.matmul(zj)?;
    let gj = ds.matmul_tn(zi)?;
    debug_assert_eq!(gi.shape(), (rows, cols));
    Ok(LossOutput {
        value: total * scale,
        grads: vec![gi, gj],
    })
}

/// `log(1 + Σ exp(xᵢ))`, exact for tiny sums.
fn log1p_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        xs.iter().map(|x| x.exp()).sum::<f64>().ln_1p()
    } else {
        max + ((-max).exp() + xs.iter().map(|x| (x - max).exp()).sum::<f64>()).ln()
    }
}
