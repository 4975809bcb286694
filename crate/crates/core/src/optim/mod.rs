//! Block-coordinate solvers for the factorized LSR-TGLM objective.
//!
//! Both solvers sweep the factor blocks `(s, k)` with `s` outer and `k`
//! inner, then take one gradient step on the core evaluated at the updated
//! factors and the previous core.
//!
//! * [`Algorithm::Lsrtr`]: `B ← qr(B − α ∇_B)` per block, so factors stay
//!   on the Stiefel manifold.
//! * [`Algorithm::LsrtrM`]: per block, momentum `M ← β M + ∇_B`, direction
//!   `Q = Orth(M)` by Newton–Schulz, and `B ← B − α_m (Q + λ B)`. No
//!   projection is applied, so factors drift off orthonormality; the drift is
//!   logged as a diagnostic.
//!
//! Within the factor sweep, gradients are evaluated at the start-of-iteration
//! parameters ([`SweepMode::Jacobi`], default) or at the latest parameters
//! ([`SweepMode::GaussSeidel`]).

mod orth;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

pub use orth::{newton_schulz_orth, orthonormalize_qr, qr_decompose, ZERO_NORM_TOL};

use crate::error::{Error, Result};
use crate::glm::{self, Dataset, GlmFamily};
use crate::lsr::{read_f64s, write_f64s, LsrParams};
use crate::tensor::{DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Lsrtr,
    LsrtrM,
}

impl Algorithm {
    pub const BOTH: [Algorithm; 2] = [Algorithm::Lsrtr, Algorithm::LsrtrM];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Lsrtr => "lsrtr",
            Algorithm::LsrtrM => "lsrtr-m",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lsrtr" => Ok(Algorithm::Lsrtr),
            "lsrtr-m" | "lsrtr_m" | "lsrtrm" => Ok(Algorithm::LsrtrM),
            other => Err(format!("unknown algorithm '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    #[default]
    Jacobi,
    GaussSeidel,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Jacobi => "jacobi",
            SweepMode::GaussSeidel => "gauss_seidel",
        }
    }
}

impl FromStr for SweepMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jacobi" => Ok(SweepMode::Jacobi),
            "gauss_seidel" | "gauss-seidel" => Ok(SweepMode::GaussSeidel),
            other => Err(format!("unknown sweep mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptConfig {
    pub max_iters: usize,
    /// Core stepsize for both solvers and factor stepsize for LSRTR.
    pub alpha: f64,
    /// Muon factor stepsize.
    pub alpha_m: f64,
    pub beta: f64,
    pub lambda: f64,
    pub ns_iters: usize,
    /// Stop once the relative loss change drops below this; 0 disables.
    pub rel_tol: f64,
    pub sweep_mode: SweepMode,
}

impl Default for OptConfig {
    /// Linear-regression reference hyperparameters.
    fn default() -> Self {
        Self {
            max_iters: 40,
            alpha: 0.5,
            alpha_m: 0.05,
            beta: 0.1,
            lambda: 1e-3,
            ns_iters: 5,
            rel_tol: 0.0,
            sweep_mode: SweepMode::Jacobi,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.alpha_m > 0.0 && self.alpha_m.is_finite()) {
            return bad(format!("alpha_m must be > 0, got {}", self.alpha_m));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if self.ns_iters == 0 {
            return bad("ns_iters must be ≥ 1".into());
        }
        if !(self.rel_tol >= 0.0) {
            return bad(format!("rel_tol must be ≥ 0, got {}", self.rel_tol));
        }
        Ok(())
    }
}

/// Per-block momentum matrices, indexed `[s][k]` like the factors.
#[derive(Debug, Clone, PartialEq)]
pub struct MuonState {
    pub momentum: Vec<Vec<Matrix>>,
}

impl MuonState {
    pub fn zeros_like(p: &LsrParams) -> Self {
        Self {
            momentum: p
                .factors()
                .iter()
                .map(|term| term.iter().map(|f| Matrix::zeros(f.rows(), f.cols())).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub iter: usize,
    pub loss: f64,
    pub estimation_error: Option<f64>,
    /// Cumulative solver time since iteration 0, excluding logging.
    pub elapsed_s: f64,
    pub ortho_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateLog {
    pub algorithm: Algorithm,
    pub records: Vec<IterateRecord>,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Last finite iterate.
    pub params: LsrParams,
    pub muon: Option<MuonState>,
    pub log: IterateLog,
}

impl RunOutput {
    /// `B̂ = reconstruct(final)`.
    pub fn estimate(&self) -> DenseTensor {
        self.params.reconstruct()
    }
}

struct Residual {
    tensor: DenseTensor,
}

impl Residual {
    /// Full gradient `R` at `p`; divergence if anything is non-finite.
    fn at(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<Self> {
        let b = p.reconstruct();
        if !b.is_finite() {
            return Err(Error::NonFinite("coefficient tensor"));
        }
        let eta = data.predictors(&b)?;
        let r = glm::residuals_from_predictors(family, &eta, data.responses());
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("residuals"));
        }
        Ok(Self {
            tensor: data.weighted_sum(&r),
        })
    }
}

fn core_step(
    family: GlmFamily,
    p: &mut LsrParams,
    data: &Dataset,
    alpha: f64,
) -> Result<()> {
    let r = Residual::at(family, p, data)?;
    let g = glm::core_gradient(p, &r.tensor)?;
    p.core_mut().axpy(-alpha, &g)?;
    if !p.core().is_finite() {
        return Err(Error::NonFinite("core"));
    }
    Ok(())
}

/// Visits the blocks in sweep order, handing `update` the block gradient.
fn sweep_factors(
    family: GlmFamily,
    p: &LsrParams,
    data: &Dataset,
    mode: SweepMode,
    mut update: impl FnMut(usize, usize, &Matrix, &Matrix) -> Result<Option<Matrix>>,
) -> Result<LsrParams> {
    let mut next = p.clone();
    let mut r = Residual::at(family, p, data)?;
    for s in 0..p.sep_rank() {
        for k in 0..p.order() {
            let at = match mode {
                SweepMode::Jacobi => p,
                SweepMode::GaussSeidel => &next,
            };
            let grad = glm::factor_gradient(at, &r.tensor, s, k)?;
            if !grad.is_finite() {
                return Err(Error::NonFinite("factor gradient"));
            }
            if let Some(new) = update(s, k, p.factor(s, k), &grad)? {
                if !new.is_finite() {
                    return Err(Error::NonFinite("factor"));
                }
                next.set_factor(s, k, new)?;
                if mode == SweepMode::GaussSeidel {
                    r = Residual::at(family, &next, data)?;
                }
            }
        }
    }
    Ok(next)
}

/// One LSRTR outer iteration: projected gradient step with QR retraction on
/// every factor, then a core gradient step.
pub fn lsrtr_step(
    family: GlmFamily,
    p: &LsrParams,
    data: &Dataset,
    cfg: &OptConfig,
) -> Result<LsrParams> {
    let mut next = sweep_factors(family, p, data, cfg.sweep_mode, |_, _, b, grad| {
        orthonormalize_qr(&b.lin_comb(1.0, grad, -cfg.alpha)?).map(Some)
    })?;
    core_step(family, &mut next, data, cfg.alpha)?;
    Ok(next)
}

/// One LSRTR-M outer iteration with the Newton–Schulz `Orth` operator.
pub fn lsrtr_m_step(
    family: GlmFamily,
    p: &LsrParams,
    muon: &MuonState,
    data: &Dataset,
    cfg: &OptConfig,
) -> Result<(LsrParams, MuonState)> {
    lsrtr_m_step_with_orth(family, p, muon, data, cfg, |m| {
        newton_schulz_orth(m, cfg.ns_iters)
    })
}

/// [`lsrtr_m_step`] with a caller-supplied `Orth` operator.
pub fn lsrtr_m_step_with_orth(
    family: GlmFamily,
    p: &LsrParams,
    muon: &MuonState,
    data: &Dataset,
    cfg: &OptConfig,
    orth: impl Fn(&Matrix) -> Result<Matrix>,
) -> Result<(LsrParams, MuonState)> {
    let mut next_muon = muon.clone();
    let mut next = sweep_factors(family, p, data, cfg.sweep_mode, |s, k, b, grad| {
        let m = muon.momentum[s][k].lin_comb(cfg.beta, grad, 1.0)?;
        let norm = m.frobenius_norm();
        next_muon.momentum[s][k] = m;
        if !norm.is_finite() {
            return Err(Error::NonFinite("momentum"));
        }
        // Orth is undefined at zero: a stationary block stays put.
        if norm <= ZERO_NORM_TOL {
            return Ok(None);
        }
        let q = orth(&next_muon.momentum[s][k])?;
        // B − α_m (Q + λ B)
        let decayed = b.scale(1.0 - cfg.alpha_m * cfg.lambda);
        Ok(Some(decayed.lin_comb(1.0, &q, -cfg.alpha_m)?))
    })?;
    core_step(family, &mut next, data, cfg.alpha)?;
    Ok((next, next_muon))
}

/// Runs `cfg.max_iters` outer iterations (or until the stopping rule or a
/// divergence fires) and logs every iterate, including the initial one.
pub fn run(
    algorithm: Algorithm,
    family: GlmFamily,
    init: &LsrParams,
    data: &Dataset,
    cfg: &OptConfig,
    truth: Option<&LsrParams>,
) -> Result<RunOutput> {
    run_with_observer(algorithm, family, init, data, cfg, truth, |_, _| {})
}

/// [`run`], calling `observer(iter, params)` for every logged iterate.
/// Observer time is excluded from the timings.
pub fn run_with_observer(
    algorithm: Algorithm,
    family: GlmFamily,
    init: &LsrParams,
    data: &Dataset,
    cfg: &OptConfig,
    truth: Option<&LsrParams>,
    mut observer: impl FnMut(usize, &LsrParams),
) -> Result<RunOutput> {
    cfg.validate()?;
    data.validate_for(family)?;
    if data.shape() != &init.ambient_shape() {
        return Err(Error::Inconsistent(format!(
            "data shape {} does not match parameter shape {}",
            data.shape(),
            init.ambient_shape()
        )));
    }
    for f in init.factors().iter().flatten() {
        if f.rows() < f.cols() {
            return Err(Error::WideMatrix {
                rows: f.rows(),
                cols: f.cols(),
            });
        }
    }
    let truth_b = match truth {
        Some(t) => {
            if t.ambient_shape() != init.ambient_shape() {
                return Err(Error::Inconsistent("truth shape differs from init".into()));
            }
            let b = t.reconstruct();
            let norm = b.frobenius_norm_sq();
            if norm == 0.0 {
                return Err(Error::Metric("ground truth has zero norm".into()));
            }
            Some((b, norm))
        }
        None => None,
    };
    let est_error = |p: &LsrParams| {
        truth_b.as_ref().map(|(b, norm)| {
            b.sub(&p.reconstruct())
                .expect("shapes checked")
                .frobenius_norm_sq()
                / norm
        })
    };
    let objective = |p: &LsrParams| -> Result<f64> {
        let eta = data.predictors(&p.reconstruct())?;
        Ok(glm::logged_loss_from_predictors(family, &eta, data.responses()))
    };

    let mut params = init.clone();
    let mut muon = (algorithm == Algorithm::LsrtrM).then(|| MuonState::zeros_like(init));
    let mut log = IterateLog {
        algorithm,
        records: Vec::with_capacity(cfg.max_iters + 1),
        diverged: false,
    };
    let mut last_loss = objective(&params)?;
    if !last_loss.is_finite() {
        log.diverged = true;
        return Ok(RunOutput { params, muon, log });
    }
    log.records.push(IterateRecord {
        iter: 0,
        loss: last_loss,
        estimation_error: est_error(&params),
        elapsed_s: 0.0,
        ortho_residual: params.max_orthonormality_residual(),
    });
    observer(0, &params);

    let mut elapsed = 0.0;
    for t in 1..=cfg.max_iters {
        let start = Instant::now();
        let stepped = match algorithm {
            Algorithm::Lsrtr => lsrtr_step(family, &params, data, cfg).map(|p| (p, None)),
            Algorithm::LsrtrM => {
                let state = muon.as_ref().expect("LSRTR-M carries momentum");
                lsrtr_m_step(family, &params, state, data, cfg).map(|(p, m)| (p, Some(m)))
            }
        };
        elapsed += start.elapsed().as_secs_f64();
        let (next, next_muon) = match stepped {
            Ok(v) => v,
            Err(e) if e.is_divergence() => {
                log.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let loss = objective(&next)?;
        if !loss.is_finite() || !next.is_finite() {
            log.diverged = true;
            break;
        }
        params = next;
        if next_muon.is_some() {
            muon = next_muon;
        }
        log.records.push(IterateRecord {
            iter: t,
            loss,
            estimation_error: est_error(&params),
            elapsed_s: elapsed,
            ortho_residual: params.max_orthonormality_residual(),
        });
        observer(t, &params);
        let change = (loss - last_loss).abs() / last_loss.abs().max(1e-12);
        last_loss = loss;
        if change < cfg.rel_tol {
            break;
        }
    }
    Ok(RunOutput { params, muon, log })
}

impl Error {
    /// Numerical failures that end a run with the divergence flag rather
    /// than an error.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::RankDeficient { .. } | Error::ZeroMatrix
        )
    }
}

/// Writes the parameter blob followed by the momentum matrices in the same
/// `(s, k)` order.
pub fn write_checkpoint<W: Write>(w: &mut W, p: &LsrParams, muon: &MuonState) -> Result<()> {
    p.write_blob(w)?;
    for (m, f) in muon.momentum.iter().flatten().zip(p.factors().iter().flatten()) {
        if m.rows() != f.rows() || m.cols() != f.cols() {
            return Err(Error::Inconsistent("momentum shape differs from factor".into()));
        }
        write_f64s(w, m.data())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(LsrParams, MuonState)> {
    let p = LsrParams::read_blob(r)?;
    let mut momentum = Vec::with_capacity(p.sep_rank());
    for term in p.factors() {
        let mut row = Vec::with_capacity(term.len());
        for f in term {
            row.push(Matrix::from_col_major(
                f.rows(),
                f.cols(),
                read_f64s(r, f.rows() * f.cols())?,
            )?);
        }
        momentum.push(row);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after momentum".into()));
    }
    Ok((p, MuonState { momentum }))
}
