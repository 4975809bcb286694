//! Orthonormalization operators used by the two solvers.
//!
//! * [`orthonormalize_qr`]: the retraction of the LSRTR baseline, thin QR
//!   with the diagonal of `R` forced nonnegative so the result is unique.
//! * [`newton_schulz_orth`]: the `Orth(M) = M (MᵀM)^{-1/2}` map of LSRTR-M,
//!   approximated by the cubic Newton–Schulz polar iteration
//!   `X ← 1.5 X − 0.5 X XᵀX` started from `M / ‖M‖_F`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Pivots below this fraction of the largest `|R_jj|` count as rank loss.
const RANK_TOL: f64 = 1e-12;

/// Frobenius norm below which `Orth` is considered undefined.
pub const ZERO_NORM_TOL: f64 = 1e-14;

/// Thin QR `m = Q R` with `diag(R) ≥ 0`.
pub fn qr_decompose(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows < cols {
        return Err(Error::WideMatrix { rows, cols });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("QR input"));
    }
    let qr = DMatrix::from_column_slice(rows, cols, m.data()).qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let mut max_pivot: f64 = 0.0;
    let mut min_pivot = f64::INFINITY;
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
        max_pivot = max_pivot.max(r[(j, j)]);
        min_pivot = min_pivot.min(r[(j, j)]);
    }
    if max_pivot == 0.0 || min_pivot <= RANK_TOL * max_pivot {
        return Err(Error::RankDeficient { pivot: min_pivot });
    }
    let q = Matrix::from_col_major(rows, cols, q.as_slice().to_vec())?;
    let r = Matrix::from_col_major(cols, cols, r.as_slice().to_vec())?;
    Ok((q, r))
}

/// Orthonormal basis of `span(m)` with the nonnegative-diagonal sign
/// convention.
pub fn orthonormalize_qr(m: &Matrix) -> Result<Matrix> {
    qr_decompose(m).map(|(q, _)| q)
}

/// Approximate polar factor of `m` after `iters` cubic Newton–Schulz steps.
///
/// Because the start is normalized by the Frobenius norm every singular value
/// lies in `(0, 1]`, where `s ↦ 1.5 s − 0.5 s³` is increasing and bounded by
/// one. The iterates therefore never exceed unit spectral norm and
/// `‖XᵀX − I‖_F` is non-increasing. Small singular values only grow by a
/// factor 1.5 per step, so badly scaled inputs need more iterations.
pub fn newton_schulz_orth(m: &Matrix, iters: usize) -> Result<Matrix> {
    if !m.is_finite() {
        return Err(Error::NonFinite("Newton–Schulz input"));
    }
    let norm = m.frobenius_norm();
    if norm <= ZERO_NORM_TOL {
        return Err(Error::ZeroMatrix);
    }
    let mut x = m.scale(1.0 / norm);
    // For tall inputs the r×r Gram matrix keeps each step at O(m r²).
    let tall = x.rows() >= x.cols();
    for _ in 0..iters {
        let cubic = if tall {
            x.matmul(&x.gram())?
        } else {
            x.matmul_t(&x)?.matmul(&x)?
        };
        x = x.lin_comb(1.5, &cubic, -0.5)?;
    }
    Ok(x)
}
