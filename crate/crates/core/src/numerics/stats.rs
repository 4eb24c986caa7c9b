use crate::error::Result;

use super::matrix::dot;
use super::Matrix;

/// Default guard for divisions by a norm.
pub const NORM_EPS: f64 = 1e-12;

/// Divides each row by `max(‖row‖₂, eps)`.
pub fn l2_normalize_rows(z: &Matrix, eps: f64) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = dot(row, row).sqrt().max(eps);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

/// Pulls `grad` (w.r.t. the normalized rows) back to the raw rows `z`.
///
/// Rows below the `eps` guard are a plain division by `eps`.
pub fn l2_normalize_rows_backward(z: &Matrix, grad: &Matrix, eps: f64) -> Result<Matrix> {
    z.ensure_same_shape(grad, "l2_normalize_rows_backward")?;
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for r in 0..z.rows() {
        let x = z.row(r);
        let g = grad.row(r);
        let n = dot(x, x).sqrt();
        let o = out.row_mut(r);
        if n < eps {
            for (o, g) in o.iter_mut().zip(g) {
                *o = g / eps;
            }
        } else {
            let proj = dot(x, g) / (n * n);
            for ((o, g), x) in o.iter_mut().zip(g).zip(x) {
                *o = (g - x * proj) / n;
            }
        }
    }
    Ok(out)
}

/// Normalized cross-correlation of columns over the batch:
/// `C_ij = Σ_m a[m,i]·b[m,j] / (‖a[:,i]‖·‖b[:,j]‖)`.
pub fn cross_correlation(za: &Matrix, zb: &Matrix) -> Result<Matrix> {
    za.ensure_same_shape(zb, "cross_correlation")?;
    let na = column_norms(za);
    let nb = column_norms(zb);
    let mut c = za.matmul_tn(zb)?;
    let d = c.cols();
    for i in 0..c.rows() {
        for j in 0..d {
            c[(i, j)] /= na[i].max(NORM_EPS) * nb[j].max(NORM_EPS);
        }
    }
    Ok(c)
}

pub fn column_norms(z: &Matrix) -> Vec<f64> {
    let mut sq = vec![0.0; z.cols()];
    for r in 0..z.rows() {
        for (s, v) in sq.iter_mut().zip(z.row(r)) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// Column standardization used ahead of the Barlow Twins correlation:
/// center each column, then scale it to unit Euclidean norm.
///
/// This is z-scoring up to the constant `√rows`, to which the normalized
/// cross-correlation is invariant.
#[derive(Debug, Clone)]
pub struct ColumnStandardizer {
    pub output: Matrix,
    norms: Vec<f64>,
}

impl ColumnStandardizer {
    pub fn forward(z: &Matrix) -> Self {
        let centered = z.center_columns();
        let norms: Vec<f64> = column_norms(&centered)
            .into_iter()
            .map(|n| n.max(NORM_EPS))
            .collect();
        let mut output = centered;
        for r in 0..output.rows() {
            for (v, n) in output.row_mut(r).iter_mut().zip(&norms) {
                *v /= n;
            }
        }
        Self { output, norms }
    }

    pub fn backward(&self, grad: &Matrix) -> Result<Matrix> {
        self.output.ensure_same_shape(grad, "ColumnStandardizer::backward")?;
        let (rows, cols) = grad.shape();
        // u = c / ‖c‖ per column: dc = (g − u·(uᵀg)) / ‖c‖
        let mut proj = vec![0.0; cols];
        for r in 0..rows {
            for (p, (u, g)) in proj.iter_mut().zip(self.output.row(r).iter().zip(grad.row(r))) {
                *p += u * g;
            }
        }
        let mut dc = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let u = self.output.row(r);
            let g = grad.row(r);
            for (j, d) in dc.row_mut(r).iter_mut().enumerate() {
                *d = (g[j] - u[j] * proj[j]) / self.norms[j];
            }
        }
        Ok(dc.center_columns())
    }
}

pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

pub fn log_softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Index of the first maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
