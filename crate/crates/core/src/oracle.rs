//! Independent reference computations.
//!
//! Nothing here shares a code path with the production routines it is used
//! to check: reconstructions go through explicit Kronecker products or
//! brute-force index sums, polar factors through a symmetric
//! eigendecomposition, and gradients through central differences of the
//! dense-coefficient loss. The `selftest` subcommand and the test suites both
//! use these.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::glm::{BlockGradients, Dataset, GlmFamily};
use crate::lsr::LsrParams;
use crate::tensor::{dot, kron, DenseTensor, Matrix};

/// `Σ_s (B_(K,s) ⊗ ⋯ ⊗ B_(1,s)) vec(G)` with materialized Kronecker products.
pub fn kron_reconstruct(p: &LsrParams) -> Vec<f64> {
    let g = p.core().vec();
    let mut out: Vec<f64> = Vec::new();
    for term in p.factors() {
        let mut w = term[0].clone();
        for f in &term[1..] {
            w = kron(f, &w).expect("small test sizes");
        }
        if out.is_empty() {
            out = vec![0.0; w.rows()];
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += (0..w.cols()).map(|j| w.get(i, j) * g[j]).sum::<f64>();
        }
    }
    out
}

/// `G ×_1 A_1 ⋯ ×_K A_K` by summing over every (output, core) index pair.
pub fn tucker_direct(core: &DenseTensor, factors: &[Matrix]) -> DenseTensor {
    let dims: Vec<usize> = factors.iter().map(Matrix::rows).collect();
    let shape = crate::tensor::Shape::new(dims.clone()).expect("positive dims");
    let mut out = DenseTensor::zeros(shape);
    let out_indices = multi_indices(&dims);
    let core_indices = multi_indices(core.shape().dims());
    for oi in &out_indices {
        let mut acc = 0.0;
        for ci in &core_indices {
            let mut w = core.get(ci);
            for (k, f) in factors.iter().enumerate() {
                w *= f.get(oi[k], ci[k]);
            }
            acc += w;
        }
        out.set(oi, acc);
    }
    out
}

fn multi_indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    (0..total)
        .map(|mut lin| {
            dims.iter()
                .map(|&d| {
                    let i = lin % d;
                    lin /= d;
                    i
                })
                .collect()
        })
        .collect()
}

/// `m (mᵀm)^{-1/2}` through the eigendecomposition of the Gram matrix.
pub fn exact_polar(m: &Matrix) -> Result<Matrix> {
    let gram = m.gram();
    let eig = SymmetricEigen::new(DMatrix::from_column_slice(
        gram.rows(),
        gram.cols(),
        gram.data(),
    ));
    if eig.eigenvalues.iter().any(|&w| w <= 0.0) {
        return Err(Error::RankDeficient {
            pivot: eig.eigenvalues.min(),
        });
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|w| w.powf(-0.5)))
        * eig.eigenvectors.transpose();
    let inv_sqrt = Matrix::from_col_major(gram.rows(), gram.cols(), inv_sqrt.as_slice().to_vec())?;
    Ok(m.matmul(&inv_sqrt)?)
}

/// Singular values in descending order.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let svd = DMatrix::from_column_slice(m.rows(), m.cols(), m.data()).svd(false, false);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    s[0] / s[s.len() - 1]
}

/// Exponential-family negative log-likelihood evaluated from a dense
/// coefficient tensor, one sample at a time.
pub fn dense_loss(family: GlmFamily, b: &DenseTensor, data: &Dataset) -> f64 {
    let n = data.len();
    let mut total = 0.0;
    for i in 0..n {
        let eta = dot(b.vec(), data.covariate(i));
        total += family.log_partition(eta) - data.responses()[i] * eta;
    }
    total / n as f64
}

fn loss_of(family: GlmFamily, p: &LsrParams, data: &Dataset) -> f64 {
    dense_loss(family, &kron_tensor(p), data)
}

fn kron_tensor(p: &LsrParams) -> DenseTensor {
    DenseTensor::from_vec(p.ambient_shape(), kron_reconstruct(p)).expect("sizes agree")
}

/// Central differences of the loss with respect to every factor entry and
/// every core entry.
pub fn fd_block_gradients(
    family: GlmFamily,
    p: &LsrParams,
    data: &Dataset,
    step: f64,
) -> BlockGradients {
    let mut per_factor = Vec::with_capacity(p.sep_rank());
    for s in 0..p.sep_rank() {
        let mut term = Vec::with_capacity(p.order());
        for k in 0..p.order() {
            let f = p.factor(s, k);
            let mut g = Matrix::zeros(f.rows(), f.cols());
            for idx in 0..f.data().len() {
                let probe = |delta: f64| {
                    let mut q = p.clone();
                    let mut m = f.clone();
                    m.data_mut()[idx] += delta;
                    q.set_factor(s, k, m).expect("same shape");
                    loss_of(family, &q, data)
                };
                g.data_mut()[idx] = (probe(step) - probe(-step)) / (2.0 * step);
            }
            term.push(g);
        }
        per_factor.push(term);
    }
    let mut core_grad = DenseTensor::zeros(p.core().shape().clone());
    for idx in 0..core_grad.vec().len() {
        let probe = |delta: f64| {
            let mut q = p.clone();
            q.core_mut().data_mut()[idx] += delta;
            loss_of(family, &q, data)
        };
        core_grad.data_mut()[idx] = (probe(step) - probe(-step)) / (2.0 * step);
    }
    BlockGradients {
        per_factor,
        core_grad,
    }
}

/// Central differences of the dense loss with respect to each entry of `b`.
pub fn fd_dense_gradient(family: GlmFamily, b: &DenseTensor, data: &Dataset, step: f64) -> DenseTensor {
    let mut out = DenseTensor::zeros(b.shape().clone());
    for idx in 0..b.vec().len() {
        let probe = |delta: f64| {
            let mut c = b.clone();
            c.data_mut()[idx] += delta;
            dense_loss(family, &c, data)
        };
        out.data_mut()[idx] = (probe(step) - probe(-step)) / (2.0 * step);
    }
    out
}

/// `‖a − b‖ / max(‖b‖, floor)` over flat buffers.
pub fn relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = dot(reference, reference).sqrt().max(floor);
    diff / scale
}

/// Worst relative error over all blocks of two gradient sets.
pub fn max_block_relative_error(analytic: &BlockGradients, reference: &BlockGradients) -> f64 {
    let mut worst = relative_error(
        analytic.core_grad.vec(),
        reference.core_grad.vec(),
        1e-8,
    );
    for (a, r) in analytic
        .per_factor
        .iter()
        .flatten()
        .zip(reference.per_factor.iter().flatten())
    {
        worst = worst.max(relative_error(a.data(), r.data(), 1e-8));
    }
    worst
}
