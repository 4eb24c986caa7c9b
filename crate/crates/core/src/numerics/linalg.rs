use crate::error::{Error, Result};

use super::Matrix;

const SYMMETRY_TOL: f64 = 1e-9;
const PIVOT_FLOOR: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = a`.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape {
            op: "cholesky",
            left: a.shape(),
            right: (n, n),
        });
    }
    for i in 0..n {
        for j in 0..i {
            let diff = (a[(i, j)] - a[(j, i)]).abs();
            if diff > SYMMETRY_TOL * a[(i, j)].abs().max(1.0) {
                return Err(Error::NotSymmetric {
                    row: i,
                    col: j,
                    diff,
                });
            }
        }
    }

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > PIVOT_FLOOR) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix by forward substitution.
pub fn invert_lower(l: &Matrix) -> Result<Matrix> {
    let n = l.rows();
    let mut inv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = s / l[(i, i)];
        }
    }
    if !inv.is_finite() {
        return Err(Error::NonFinite("invert_lower"));
    }
    Ok(inv)
}

/// Unbiased sample covariance of the columns (rows are samples).
pub fn covariance(z: &Matrix) -> Result<Matrix> {
    if z.rows() < 2 {
        return Err(Error::TooFewRows {
            op: "covariance",
            needed: 2,
            got: z.rows(),
        });
    }
    let centered = z.center_columns();
    let mut cov = centered.matmul_tn(&centered)?;
    let denom = (z.rows() - 1) as f64;
    cov.data_mut().iter_mut().for_each(|v| *v /= denom);
    // Exact symmetry, independent of accumulation order.
    let d = cov.rows();
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    Ok(cov)
}

#[derive(Debug, Clone)]
pub struct WhitenReport {
    /// Right-multiplied whitening map, `cols × cols`.
    pub transform: Matrix,
    pub whitened: Matrix,
    /// Frobenius distance of the whitened covariance from identity.
    pub residual: f64,
}

/// Centers `z` and maps it through `L⁻ᵀ`, where `L·Lᵀ = cov(z) + eps·I`.
///
/// The whitened covariance is `I − eps·L⁻¹L⁻ᵀ`, so the residual equals
/// `eps·‖(cov + eps·I)⁻¹‖_F`. For a full-rank batch this is of order
/// `eps / λ_min`; each null direction of a rank-deficient batch contributes
/// close to 1, which bounds the residual by `√cols`.
pub fn whiten_batch(z: &Matrix, eps: f64) -> Result<WhitenReport> {
    if z.rows() < 2 {
        return Err(Error::TooFewRows {
            op: "whiten_batch",
            needed: 2,
            got: z.rows(),
        });
    }
    let mut cov = covariance(z)?;
    for i in 0..cov.rows() {
        cov[(i, i)] += eps;
    }
    let l = cholesky(&cov)?;
    let transform = invert_lower(&l)?.transpose();
    let whitened = z.center_columns().matmul(&transform)?;
    if !whitened.is_finite() {
        return Err(Error::NonFinite("whiten_batch"));
    }
    let out_cov = covariance(&whitened)?;
    let residual = out_cov.sub(&Matrix::identity(z.cols()))?.frobenius_norm();
    Ok(WhitenReport {
        transform,
        whitened,
        residual,
    })
}
