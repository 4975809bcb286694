//! Low Separation Rank parameterization of a coefficient tensor:
//!
//! ```text
//! B = Σ_{s=1}^{S} G ×_1 B_(1,s) ×_2 ⋯ ×_K B_(K,s)
//! ```
//!
//! with one core `G` of shape `(r_1, …, r_K)` shared by all `S` terms and
//! factor matrices `B_(k,s)` of size `m_k × r_k`.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::orthonormalize_qr;
use crate::rng::{standard_normal_matrix, standard_normal_tensor, standard_normal_vec};
use crate::tensor::{DenseTensor, Matrix, Shape};

/// Multilinear rank `(r_1, …, r_K)` and separation rank `S`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LsrRank {
    multilinear: Vec<usize>,
    sep_rank: usize,
}

impl LsrRank {
    pub fn new(multilinear: impl Into<Vec<usize>>, sep_rank: usize) -> Result<Self> {
        let multilinear = multilinear.into();
        if multilinear.is_empty() || multilinear.contains(&0) {
            return Err(Error::InvalidConfig(
                "multilinear rank entries must be positive".into(),
            ));
        }
        if sep_rank == 0 {
            return Err(Error::InvalidConfig("separation rank must be ≥ 1".into()));
        }
        Ok(Self {
            multilinear,
            sep_rank,
        })
    }

    pub fn multilinear(&self) -> &[usize] {
        &self.multilinear
    }

    pub fn sep_rank(&self) -> usize {
        self.sep_rank
    }

    /// Checks `r_k ≤ m_k` for every mode.
    pub fn check_against(&self, shape: &Shape) -> Result<()> {
        if shape.order() != self.multilinear.len() {
            return Err(Error::Inconsistent(format!(
                "rank has {} modes, shape {} has {}",
                self.multilinear.len(),
                shape,
                shape.order()
            )));
        }
        for (mode, (&rank, &dim)) in self.multilinear.iter().zip(shape.dims()).enumerate() {
            if rank > dim {
                return Err(Error::RankExceedsDim { mode, rank, dim });
            }
        }
        Ok(())
    }

    pub fn core_shape(&self) -> Shape {
        Shape::new(self.multilinear.clone()).expect("validated in constructor")
    }

    /// `S · Σ_k m_k r_k + ∏_k r_k`.
    pub fn parameter_count(&self, shape: &Shape) -> usize {
        let factors: usize = shape
            .dims()
            .iter()
            .zip(&self.multilinear)
            .map(|(m, r)| m * r)
            .sum();
        self.sep_rank * factors + self.multilinear.iter().product::<usize>()
    }
}

/// Shared core plus an `S × K` grid of factors, indexed `factors[s][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsrParams {
    core: DenseTensor,
    factors: Vec<Vec<Matrix>>,
}

impl LsrParams {
    pub fn new(core: DenseTensor, factors: Vec<Vec<Matrix>>) -> Result<Self> {
        let p = Self { core, factors };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let k = self.core.order();
        if self.factors.is_empty() {
            return Err(Error::Inconsistent("no separable terms".into()));
        }
        let dims: Vec<usize> = self.factors[0].iter().map(Matrix::rows).collect();
        for (s, term) in self.factors.iter().enumerate() {
            if term.len() != k {
                return Err(Error::Inconsistent(format!(
                    "term {s} has {} factors for a {k}-mode core",
                    term.len()
                )));
            }
            for (mode, f) in term.iter().enumerate() {
                if f.cols() != self.core.shape().dim(mode) || f.rows() != dims[mode] {
                    return Err(Error::Inconsistent(format!(
                        "factor ({mode},{s}) is {}×{}, expected {}×{}",
                        f.rows(),
                        f.cols(),
                        dims[mode],
                        self.core.shape().dim(mode)
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    pub fn set_core(&mut self, core: DenseTensor) -> Result<()> {
        if core.shape() != self.core.shape() {
            return Err(Error::Inconsistent(format!(
                "core shape {} does not match {}",
                core.shape(),
                self.core.shape()
            )));
        }
        self.core = core;
        Ok(())
    }

    pub fn factors(&self) -> &[Vec<Matrix>] {
        &self.factors
    }

    pub fn factor(&self, s: usize, k: usize) -> &Matrix {
        &self.factors[s][k]
    }

    pub fn set_factor(&mut self, s: usize, k: usize, m: Matrix) -> Result<()> {
        let old = &self.factors[s][k];
        if old.rows() != m.rows() || old.cols() != m.cols() {
            return Err(Error::Inconsistent(format!(
                "factor ({k},{s}) must stay {}×{}",
                old.rows(),
                old.cols()
            )));
        }
        self.factors[s][k] = m;
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.core.order()
    }

    pub fn sep_rank(&self) -> usize {
        self.factors.len()
    }

    pub fn ambient_shape(&self) -> Shape {
        Shape::new(self.factors[0].iter().map(Matrix::rows).collect::<Vec<_>>())
            .expect("factor rows are positive")
    }

    pub fn rank(&self) -> LsrRank {
        LsrRank::new(self.core.shape().dims().to_vec(), self.sep_rank())
            .expect("validated in constructor")
    }

    /// Largest `‖B_(k,s)ᵀ B_(k,s) − I‖_F` over all blocks.
    pub fn max_orthonormality_residual(&self) -> f64 {
        self.factors
            .iter()
            .flatten()
            .map(Matrix::orthonormality_residual)
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.core.is_finite() && self.factors.iter().flatten().all(Matrix::is_finite)
    }

    /// `Σ_s G ×_1 B_(1,s) ⋯ ×_K B_(K,s)`.
    pub fn reconstruct(&self) -> DenseTensor {
        let mut total = DenseTensor::zeros(self.ambient_shape());
        for term in &self.factors {
            let mut t = self.core.clone();
            for (mode, f) in term.iter().enumerate() {
                t = t.mode_product(f, mode).expect("validated shapes");
            }
            total.axpy(1.0, &t).expect("validated shapes");
        }
        total
    }

    /// Core entries i.i.d. standard normal, each factor the sign-fixed Q of a
    /// Gaussian `m_k × r_k` matrix. Draw order: core, then factors with `s`
    /// outer and `k` inner.
    pub fn random_ground_truth<R: Rng + ?Sized>(
        shape: &Shape,
        rank: &LsrRank,
        rng: &mut R,
    ) -> Result<Self> {
        rank.check_against(shape)?;
        let core = standard_normal_tensor(rng, &rank.core_shape());
        let factors = Self::random_orthonormal_factors(shape, rank, rng)?;
        Self::new(core, factors)
    }

    /// Data-agnostic start: sign-fixed orthonormal Gaussian factors and a
    /// standard-normal core multiplied by `core_scale`. Same draw order as
    /// [`LsrParams::random_ground_truth`].
    pub fn random_init<R: Rng + ?Sized>(
        shape: &Shape,
        rank: &LsrRank,
        core_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(core_scale >= 0.0 && core_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "core scale must be finite and ≥ 0, got {core_scale}"
            )));
        }
        let mut p = Self::random_ground_truth(shape, rank, rng)?;
        p.core = p.core.scale(core_scale);
        Ok(p)
    }

    pub(crate) fn random_orthonormal_factors<R: Rng + ?Sized>(
        shape: &Shape,
        rank: &LsrRank,
        rng: &mut R,
    ) -> Result<Vec<Vec<Matrix>>> {
        let mut factors = Vec::with_capacity(rank.sep_rank());
        for _ in 0..rank.sep_rank() {
            let mut term = Vec::with_capacity(shape.order());
            for (&m, &r) in shape.dims().iter().zip(rank.multilinear()) {
                term.push(orthonormalize_qr(&standard_normal_matrix(rng, m, r))?);
            }
            factors.push(term);
        }
        Ok(factors)
    }

    /// Near-truth initialization: Gaussian noise of scale `noise_scale` on the
    /// core, and on each factor followed by QR re-orthonormalization.
    pub fn perturbed_init<R: Rng + ?Sized>(
        truth: &LsrParams,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(noise_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise scale must be ≥ 0, got {noise_scale}"
            )));
        }
        let noise = standard_normal_vec(rng, truth.core.shape().numel());
        let mut core = truth.core.clone();
        for (c, n) in core.data_mut().iter_mut().zip(noise) {
            *c += noise_scale * n;
        }
        let mut factors = Vec::with_capacity(truth.sep_rank());
        for term in &truth.factors {
            let mut out = Vec::with_capacity(term.len());
            for f in term {
                let noise = standard_normal_matrix(rng, f.rows(), f.cols());
                out.push(orthonormalize_qr(&f.lin_comb(1.0, &noise, noise_scale)?)?);
            }
            factors.push(out);
        }
        Self::new(core, factors)
    }

    /// Byte length of the checkpoint blob produced by [`LsrParams::write_blob`].
    pub fn blob_len(&self) -> usize {
        let k = self.order();
        let floats = self.core.shape().numel()
            + self
                .factors
                .iter()
                .flatten()
                .map(|f| f.rows() * f.cols())
                .sum::<usize>();
        8 * (2 + 2 * k) + 8 * floats
    }

    /// Little-endian blob: `K, S, m_1..m_K, r_1..r_K` as u64, then the core
    /// and the factors in `(s, k)` lexicographic order as f64, all
    /// column-major.
    pub fn write_blob<W: Write>(&self, w: &mut W) -> Result<()> {
        let shape = self.ambient_shape();
        write_u64(w, self.order() as u64)?;
        write_u64(w, self.sep_rank() as u64)?;
        for &d in shape.dims() {
            write_u64(w, d as u64)?;
        }
        for &r in self.core.shape().dims() {
            write_u64(w, r as u64)?;
        }
        write_f64s(w, self.core.vec())?;
        for f in self.factors.iter().flatten() {
            write_f64s(w, f.data())?;
        }
        Ok(())
    }

    pub fn read_blob<R: Read>(r: &mut R) -> Result<Self> {
        let k = read_usize(r)?;
        let s = read_usize(r)?;
        if k == 0 || s == 0 || k > 64 {
            return Err(Error::Checkpoint(format!("implausible header K={k}, S={s}")));
        }
        let dims = (0..k).map(|_| read_usize(r)).collect::<Result<Vec<_>>>()?;
        let ranks = (0..k).map(|_| read_usize(r)).collect::<Result<Vec<_>>>()?;
        let shape = Shape::new(dims)?;
        let rank = LsrRank::new(ranks, s)?;
        rank.check_against(&shape)?;
        let core_shape = rank.core_shape();
        let core = DenseTensor::from_vec(core_shape.clone(), read_f64s(r, core_shape.numel())?)?;
        let mut factors = Vec::with_capacity(s);
        for _ in 0..s {
            let mut term = Vec::with_capacity(k);
            for (&m, &rk) in shape.dims().iter().zip(rank.multilinear()) {
                term.push(Matrix::from_col_major(m, rk, read_f64s(r, m * rk)?)?);
            }
            factors.push(term);
        }
        Self::new(core, factors)
    }
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_usize<R: Read>(r: &mut R) -> Result<usize> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    usize::try_from(u64::from_le_bytes(buf))
        .map_err(|_| Error::Checkpoint("header value exceeds usize".into()))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("truncated payload: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
