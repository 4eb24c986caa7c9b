use crate::error::Result;
use crate::numerics::{dot, whiten_batch, Matrix, NORM_EPS};

use super::{ensure_rows, LossConfig, LossOutput};

/// Mean over rows of `2 − 2·cos(zᵢ, zⱼ)`.
///
/// A row whose norm falls under the guard counts as cosine 0 and receives a
/// zero gradient.
pub fn cosine_pair_loss(zi: &Matrix, zj: &Matrix) -> Result<LossOutput> {
    zi.ensure_same_shape(zj, "cosine_pair_loss")?;
    let (rows, cols) = zi.shape();
    let mut gi = Matrix::zeros(rows, cols);
    let mut gj = Matrix::zeros(rows, cols);
    if rows == 0 {
        return Ok(LossOutput {
            value: 0.0,
            grads: vec![gi, gj],
        });
    }
    let scale = 1.0 / rows as f64;
    let mut total = 0.0;
    for r in 0..rows {
        let (a, b) = (zi.row(r), zj.row(r));
        let na = dot(a, a).sqrt();
        let nb = dot(b, b).sqrt();
        if na < NORM_EPS || nb < NORM_EPS {
            total += 2.0;
            continue;
        }
        let cos = dot(a, b) / (dot(a, a) * dot(b, b)).sqrt();
        total += 2.0 - 2.0 * cos;
        let s = -2.0 * scale;
        for c in 0..cols {
            gi[(r, c)] = s * (b[c] / (na * nb) - cos * a[c] / (na * na));
            gj[(r, c)] = s * (a[c] / (na * nb) - cos * b[c] / (nb * nb));
        }
    }
    Ok(LossOutput {
        value: total * scale,
        grads: vec![gi, gj],
    })
}

/// Predictor-vs-target cosine loss with a stop-gradient on the target.
///
/// `online` is the projector output that fed the predictor; the loss only
/// depends on it through `predictor_output`, so its direct gradient is zero
/// and the encoder carries the predictor gradient back. Gradients are
/// returned as `[online, target, predictor_output]`.
pub fn noncontrastive_loss(online: &Matrix, target: &Matrix, predictor_output: &Matrix) -> Result<LossOutput> {
    predictor_output.ensure_same_shape(target, "noncontrastive_loss")?;
    if online.rows() != target.rows() {
        return Err(crate::Error::Shape {
            op: "noncontrastive_loss",
            left: online.shape(),
            right: target.shape(),
        });
    }
    let inner = cosine_pair_loss(predictor_output, target)?;
    let mut grads = inner.grads;
    let pred_grad = grads.swap_remove(0);
    Ok(LossOutput {
        value: inner.value,
        grads: vec![
            Matrix::zeros(online.rows(), online.cols()),
            Matrix::zeros(target.rows(), target.cols()),
            pred_grad,
        ],
    })
}

/// Hard-whitening MSE: whiten each batch, then the cosine pair loss.
///
/// Within a step the whitening matrix is treated as a constant linear map;
/// only the column centering is differentiated.
pub fn wmse_loss(zi: &Matrix, zj: &Matrix, cfg: &LossConfig) -> Result<LossOutput> {
    zi.ensure_same_shape(zj, "wmse_loss")?;
    ensure_rows(zi, zi.cols() + 1, "wmse_loss")?;
    let wi = whiten_batch(zi, cfg.whiten_eps)?;
    let wj = whiten_batch(zj, cfg.whiten_eps)?;
    let inner = cosine_pair_loss(&wi.whitened, &wj.whitened)?;
    let back = |g: &Matrix, transform: &Matrix| -> Result<Matrix> {
        Ok(g.matmul_nt(transform)?.center_columns())
    };
    let gi = back(&inner.grads[0], &wi.transform)?;
    let gj = back(&inner.grads[1], &wj.transform)?;
    Ok(LossOutput {
        value: inner.value,
        grads: vec![gi, gj],
    })
}
