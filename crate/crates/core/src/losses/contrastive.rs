use crate::error::{Error, Result};
use crate::numerics::{l2_normalize_rows, l2_normalize_rows_backward, log_sum_exp, Matrix, NORM_EPS};

use super::{LossConfig, LossOutput};

/// Temperature-scaled contrastive loss over `N` row embeddings.
///
/// For anchor `i` with positive `pair_index[i]`, the denominator sums over
/// every row except the anchor itself, so the positive appears in it too.
/// Rows are L2-normalized before similarities are taken.
pub fn contrastive_loss(views: &Matrix, pair_index: &[usize], cfg: &LossConfig) -> Result<LossOutput> {
    let n = views.rows();
    if n < 3 {
        return Err(Error::TooFewRows {
            op: "contrastive_loss",
            needed: 3,
            got: n,
        });
    }
    if pair_index.len() != n {
        return Err(Error::Invalid(format!(
            "contrastive_loss: pair index has {} entries for {n} views",
            pair_index.len()
        )));
    }
    for (i, &j) in pair_index.iter().enumerate() {
        if j >= n || j == i {
            return Err(Error::Invalid(format!(
                "contrastive_loss: row {i} paired with invalid row {j}"
            )));
        }
    }
    let tau = cfg.temperature;
    let u = l2_normalize_rows(views, NORM_EPS);
    let sims = u.matmul_nt(&u)?;
    let scale = 1.0 / n as f64;

    let mut total = 0.0;
    // dL/dS with S = u·uᵀ/τ; symmetrized afterwards.
    let mut ds = Matrix::zeros(n, n);
    let mut logits = vec![0.0; n - 1];
    for i in 0..n {
        let j = pair_index[i];
        let mut k = 0;
        for c in 0..n {
            if c != i {
                logits[k] = sims[(i, c)] / tau;
                k += 1;
            }
        }
        let lse = log_sum_exp(&logits);
        total += lse - sims[(i, j)] / tau;
        for c in 0..n {
            if c != i {
                ds[(i, c)] += (sims[(i, c)] / tau - lse).exp() * scale / tau;
            }
        }
        ds[(i, j)] -= scale / tau;
    }
    // S_ic depends on u_i and u_c symmetrically.
    let sym = ds.add(&ds.transpose())?;
    let du = sym.matmul(&u)?;
    let grad = l2_normalize_rows_backward(views, &du, NORM_EPS)?;
    Ok(LossOutput {
        value: total * scale,
        grads: vec![grad],
    })
}
