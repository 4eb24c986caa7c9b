use crate::error::Result;
use crate::numerics::{ColumnStandardizer, Matrix};

use super::{ensure_rows, LossConfig, LossOutput};

/// Redundancy-reduction loss on the column cross-correlation `C` of two
/// batches: `Σᵢ(1 − Cᵢᵢ)² + λ·Σᵢ Σ_{j≠i} Cᵢⱼ²`.
///
/// The loss is a batch statistic, so it is not divided by the batch size.
pub fn barlow_twins_loss(za: &Matrix, zb: &Matrix, cfg: &LossConfig) -> Result<LossOutput> {
    za.ensure_same_shape(zb, "barlow_twins_loss")?;
    ensure_rows(za, 2, "barlow_twins_loss")?;
    let sa = ColumnStandardizer::forward(za);
    let sb = ColumnStandardizer::forward(zb);
    let c = sa.output.matmul_tn(&sb.output)?;
    let value = barlow_value(&c, cfg.lambda);

    let d = c.rows();
    let mut dc = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            dc[(i, j)] = if i == j {
                -2.0 * (1.0 - c[(i, i)])
            } else {
                2.0 * cfg.lambda * c[(i, j)]
            };
        }
    }
    // C = Âᵀ·B̂
    let ga = sb.output.matmul_nt(&dc)?;
    let gb = sa.output.matmul(&dc)?;
    Ok(LossOutput {
        value,
        grads: vec![sa.backward(&ga)?, sb.backward(&gb)?],
    })
}

/// Loss value for a given cross-correlation matrix.
pub(crate) fn barlow_value(c: &Matrix, lambda: f64) -> f64 {
    let mut on = 0.0;
    let mut off = 0.0;
    for i in 0..c.rows() {
        for j in 0..c.cols() {
            if i == j {
                on += (1.0 - c[(i, i)]).powi(2);
            } else {
                off += c[(i, j)].powi(2);
            }
        }
    }
    on + lambda * off
}
