//! Exponential-family tensor GLMs: losses and gradients of
//!
//! ```text
//! L_n = (1/n) Σ_i [ a(η_i) − y_i η_i ],   η_i = ⟨B, X_i⟩
//! ```
//!
//! with respect to the full coefficient tensor, each LSR factor block, and
//! the shared core. The chain rule gives, with residual tensor
//! `R = Σ_i ((μ_i − y_i)/n) X_i`,
//!
//! ```text
//! ∇_{B_(k,s)} = R_(k) (B_(K,s) ⊗ ⋯ ⊗ B_(k+1,s) ⊗ B_(k−1,s) ⊗ ⋯ ⊗ B_(1,s)) G_(k)ᵀ
//! ∇_G        = Σ_s R ×_1 B_(1,s)ᵀ ⋯ ×_K B_(K,s)ᵀ
//! ```
//!
//! The Kronecker factor is never formed; it is applied as a chain of
//! transposed mode products. Sums over samples run sequentially in index
//! order so results are bit-reproducible.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lsr::LsrParams;
use crate::tensor::{dot, DenseTensor, Matrix, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GlmFamily {
    Linear,
    Logistic,
    Poisson,
}

impl GlmFamily {
    pub const ALL: [GlmFamily; 3] = [GlmFamily::Linear, GlmFamily::Logistic, GlmFamily::Poisson];

    pub fn name(self) -> &'static str {
        match self {
            GlmFamily::Linear => "linear",
            GlmFamily::Logistic => "logistic",
            GlmFamily::Poisson => "poisson",
        }
    }

    /// Log-partition function `a(η)`.
    pub fn log_partition(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Linear => 0.5 * eta * eta,
            // log(1 + e^η) without overflow for large η.
            GlmFamily::Logistic => {
                if eta > 0.0 {
                    eta + (-eta).exp().ln_1p()
                } else {
                    eta.exp().ln_1p()
                }
            }
            GlmFamily::Poisson => eta.exp(),
        }
    }

    /// Mean map `μ = a'(η)`.
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            GlmFamily::Linear => eta,
            GlmFamily::Logistic => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            GlmFamily::Poisson => eta.exp(),
        }
    }

    pub fn validate_response(self, y: f64) -> bool {
        match self {
            GlmFamily::Linear => y.is_finite(),
            GlmFamily::Logistic => y == 0.0 || y == 1.0,
            GlmFamily::Poisson => y >= 0.0 && y.is_finite() && y.fract() == 0.0,
        }
    }
}

impl fmt::Display for GlmFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GlmFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "gaussian" => Ok(GlmFamily::Linear),
            "logistic" | "bernoulli" => Ok(GlmFamily::Logistic),
            "poisson" => Ok(GlmFamily::Poisson),
            other => Err(format!("unknown family '{other}'")),
        }
    }
}

/// `n` covariate tensors of one shape, stored sample-major, and their
/// responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    shape: Shape,
    covariates: Vec<f64>,
    responses: Vec<f64>,
}

impl Dataset {
    pub fn new(covariates: Vec<DenseTensor>, responses: Vec<f64>) -> Result<Self> {
        let shape = covariates
            .first()
            .ok_or_else(|| Error::InvalidDataset("no samples".into()))?
            .shape()
            .clone();
        let mut flat = Vec::with_capacity(shape.numel() * covariates.len());
        for (i, x) in covariates.into_iter().enumerate() {
            if x.shape() != &shape {
                return Err(Error::InvalidDataset(format!(
                    "covariate {i} has shape {}, expected {shape}",
                    x.shape()
                )));
            }
            flat.extend_from_slice(x.vec());
        }
        Self::from_flat(shape, flat, responses)
    }

    /// `covariates` holds `vec(X_1), vec(X_2), …` back to back.
    pub fn from_flat(shape: Shape, covariates: Vec<f64>, responses: Vec<f64>) -> Result<Self> {
        let n = responses.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        if covariates.len() != n * shape.numel() {
            return Err(Error::InvalidDataset(format!(
                "{} covariate values for {n} samples of shape {shape}",
                covariates.len()
            )));
        }
        Ok(Self {
            shape,
            covariates,
            responses,
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn covariate(&self, i: usize) -> &[f64] {
        let d = self.shape.numel();
        &self.covariates[i * d..(i + 1) * d]
    }

    pub fn covariate_tensor(&self, i: usize) -> DenseTensor {
        DenseTensor::from_vec(self.shape.clone(), self.covariate(i).to_vec())
            .expect("slice has the right length")
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut cov = Vec::with_capacity(indices.len() * self.shape.numel());
        let mut resp = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidDataset(format!("index {i} out of range")));
            }
            cov.extend_from_slice(self.covariate(i));
            resp.push(self.responses[i]);
        }
        Self::from_flat(self.shape.clone(), cov, resp)
    }

    pub fn validate_for(&self, family: GlmFamily) -> Result<()> {
        for (index, &value) in self.responses.iter().enumerate() {
            if !family.validate_response(value) {
                return Err(Error::InvalidResponse {
                    index,
                    value,
                    family: family.name(),
                });
            }
        }
        Ok(())
    }

    /// `η_i = ⟨B, X_i⟩` for every sample.
    pub fn predictors(&self, b: &DenseTensor) -> Result<Vec<f64>> {
        self.check_shape(b.shape())?;
        Ok((0..self.len())
            .map(|i| dot(b.vec(), self.covariate(i)))
            .collect())
    }

    /// `Σ_i w_i X_i`.
    pub fn weighted_sum(&self, weights: &[f64]) -> DenseTensor {
        let mut out = vec![0.0; self.shape.numel()];
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(self.covariate(i)) {
                *o += w * x;
            }
        }
        DenseTensor::from_vec(self.shape.clone(), out).expect("length matches")
    }

    fn check_shape(&self, shape: &Shape) -> Result<()> {
        if shape != &self.shape {
            return Err(Error::InvalidDataset(format!(
                "coefficient shape {shape} does not match covariate shape {}",
                self.shape
            )));
        }
        Ok(())
    }
}

/// Gradients of `L_n` with respect to every factor block and the core.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGradients {
    pub per_factor: Vec<Vec<Matrix>>,
    pub core_grad: DenseTensor,
}

/// `η = ⟨reconstruct(p), x⟩`.
pub fn predictor(p: &LsrParams, x: &DenseTensor) -> Result<f64> {
    Ok(crate::tensor::inner(&p.reconstruct(), x)?)
}

/// Mean response `a'(η)` for covariate `x`.
pub fn predict(family: GlmFamily, p: &LsrParams, x: &DenseTensor) -> Result<f64> {
    Ok(family.mean(predictor(p, x)?))
}

/// Exponential-family loss for a dense coefficient tensor. Non-finite
/// predictors yield a non-finite loss rather than an error.
pub fn loss_dense(family: GlmFamily, b: &DenseTensor, data: &Dataset) -> Result<f64> {
    data.validate_for(family)?;
    let eta = data.predictors(b)?;
    Ok(loss_from_predictors(family, &eta, data.responses()))
}

pub fn loss_from_predictors(family: GlmFamily, eta: &[f64], y: &[f64]) -> f64 {
    let total: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| family.log_partition(e) - yi * e)
        .sum();
    total / eta.len() as f64
}

/// `(1/2n) Σ (y_i − η_i)²`.
pub fn squared_loss_from_predictors(eta: &[f64], y: &[f64]) -> f64 {
    let total: f64 = eta.iter().zip(y).map(|(&e, &yi)| (yi - e).powi(2)).sum();
    0.5 * total / eta.len() as f64
}

pub fn loss(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<f64> {
    loss_dense(family, &p.reconstruct(), data)
}

/// The squared-error form of the linear objective. It differs from the
/// exponential-family form by the constant `(1/2n) Σ y_i²`.
pub fn squared_loss(p: &LsrParams, data: &Dataset) -> Result<f64> {
    let eta = data.predictors(&p.reconstruct())?;
    Ok(squared_loss_from_predictors(&eta, data.responses()))
}

/// The objective recorded in experiment logs: squared form for the linear
/// family, exponential-family form otherwise.
pub fn logged_loss_from_predictors(family: GlmFamily, eta: &[f64], y: &[f64]) -> f64 {
    match family {
        GlmFamily::Linear => squared_loss_from_predictors(eta, y),
        _ => loss_from_predictors(family, eta, y),
    }
}

pub fn logged_loss(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<f64> {
    data.validate_for(family)?;
    let eta = data.predictors(&p.reconstruct())?;
    Ok(logged_loss_from_predictors(family, &eta, data.responses()))
}

/// `r_i = (μ_i − y_i)/n = ∂L_n/∂η_i`.
pub fn residuals_from_predictors(family: GlmFamily, eta: &[f64], y: &[f64]) -> Vec<f64> {
    let n = eta.len() as f64;
    eta.iter()
        .zip(y)
        .map(|(&e, &yi)| (family.mean(e) - yi) / n)
        .collect()
}

pub fn residuals(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<Vec<f64>> {
    data.validate_for(family)?;
    let eta = data.predictors(&p.reconstruct())?;
    Ok(residuals_from_predictors(family, &eta, data.responses()))
}

/// Gradient of `L_n` with respect to a dense coefficient tensor `b`.
pub fn full_gradient_dense(family: GlmFamily, b: &DenseTensor, data: &Dataset) -> Result<DenseTensor> {
    data.validate_for(family)?;
    let eta = data.predictors(b)?;
    let r = residuals_from_predictors(family, &eta, data.responses());
    Ok(data.weighted_sum(&r))
}

/// `R = Σ_i r_i X_i`, the gradient with respect to `B = reconstruct(p)`.
pub fn full_gradient(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<DenseTensor> {
    full_gradient_dense(family, &p.reconstruct(), data)
}

/// `∇_{B_(k,s)}` given the full gradient `r`.
pub fn factor_gradient(p: &LsrParams, r: &DenseTensor, s: usize, k: usize) -> Result<Matrix> {
    let mut y = r.clone();
    for (mode, f) in p.factors()[s].iter().enumerate() {
        if mode != k {
            y = y.mode_product_t(f, mode)?;
        }
    }
    Ok(y.unfold(k)?.matmul_t(&p.core().unfold(k)?)?)
}

/// `∇_G` given the full gradient `r`.
pub fn core_gradient(p: &LsrParams, r: &DenseTensor) -> Result<DenseTensor> {
    let mut total = DenseTensor::zeros(p.core().shape().clone());
    for term in p.factors() {
        let mut y = r.clone();
        for (mode, f) in term.iter().enumerate() {
            y = y.mode_product_t(f, mode)?;
        }
        total.axpy(1.0, &y)?;
    }
    Ok(total)
}

/// All block gradients at `p`, sharing one full-gradient evaluation.
pub fn block_gradients(family: GlmFamily, p: &LsrParams, data: &Dataset) -> Result<BlockGradients> {
    let r = full_gradient(family, p, data)?;
    let mut per_factor = Vec::with_capacity(p.sep_rank());
    for s in 0..p.sep_rank() {
        per_factor.push(
            (0..p.order())
                .map(|k| factor_gradient(p, &r, s, k))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(BlockGradients {
        per_factor,
        core_grad: core_gradient(p, &r)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsr::LsrRank;
    use crate::oracle::{fd_block_gradients, fd_dense_gradient, kron_reconstruct, max_block_relative_error, relative_error};
    use crate::rng::{standard_normal_tensor, Substream};
    use crate::synth::{generate, SynthSpec};

    fn small_problem(family: GlmFamily, seed: u64) -> (LsrParams, Dataset) {
        let mut spec = SynthSpec::defaults(family);
        spec.shape = Shape::new([4, 5, 6]).unwrap();
        spec.rank = LsrRank::new([2, 2, 2], 2).unwrap();
        spec.n_train = 50;
        spec.n_test = 1;
        spec.seed = seed;
        let data = generate(&spec).unwrap();
        let init = LsrParams::perturbed_init(&data.truth, 0.3, &mut Substream::new(seed).rng(99))
            .unwrap();
        (init, data.train)
    }

    #[test]
    fn log_partition_and_mean_values() {
        assert!((GlmFamily::Logistic.log_partition(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(GlmFamily::Poisson.log_partition(0.0), 1.0);
        assert_eq!(GlmFamily::Linear.log_partition(3.0), 4.5);
        assert_eq!(GlmFamily::Logistic.mean(0.0), 0.5);
        assert_eq!(GlmFamily::Poisson.mean(0.0), 1.0);
        assert_eq!(GlmFamily::Linear.mean(-1.25), -1.25);
        // Stable branches at extreme predictors.
        assert_eq!(GlmFamily::Logistic.log_partition(800.0), 800.0);
        assert_eq!(GlmFamily::Logistic.mean(-800.0), 0.0);
        for y in [0.0, 1.0] {
            let per_sample = GlmFamily::Logistic.log_partition(0.0) - y * 0.0;
            assert_eq!(per_sample, 2f64.ln());
        }
    }

    #[test]
    fn zero_core_gives_zero_predictor() {
        let (mut p, data) = small_problem(GlmFamily::Linear, 1);
        p.set_core(DenseTensor::zeros(p.core().shape().clone())).unwrap();
        assert_eq!(predictor(&p, &data.covariate_tensor(0)).unwrap(), 0.0);
        let y = data.responses();
        let expected = y.iter().map(|v| v * v).sum::<f64>() / (2.0 * y.len() as f64);
        assert!((squared_loss(&p, &data).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn predictor_of_own_reconstruction_is_norm() {
        let (p, _) = small_problem(GlmFamily::Linear, 2);
        let b = p.reconstruct();
        let eta = predictor(&p, &b).unwrap();
        assert!((eta - b.frobenius_norm_sq()).abs() <= 1e-12 * eta);
        let kb = kron_reconstruct(&p);
        let eta_k: f64 = kb.iter().zip(b.vec()).map(|(a, c)| a * c).sum();
        assert!((eta - eta_k).abs() <= 1e-10 * eta.abs());
    }

    #[test]
    fn loss_at_zero_predictor() {
        for (family, expected) in [(GlmFamily::Logistic, 2f64.ln()), (GlmFamily::Poisson, 1.0)] {
            let (mut p, data) = small_problem(family, 3);
            p.set_core(DenseTensor::zeros(p.core().shape().clone())).unwrap();
            assert!((loss(family, &p, &data).unwrap() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_responses_are_rejected() {
        let (p, data) = small_problem(GlmFamily::Linear, 4);
        assert!(matches!(
            loss(GlmFamily::Logistic, &p, &data),
            Err(Error::InvalidResponse { .. })
        ));
        let bad = Dataset::from_flat(data.shape().clone(), data.covariate(0).to_vec(), vec![1.5])
            .unwrap();
        assert!(loss(GlmFamily::Poisson, &p, &bad).is_err());
        let neg = Dataset::from_flat(data.shape().clone(), data.covariate(0).to_vec(), vec![-1.0])
            .unwrap();
        assert!(loss(GlmFamily::Poisson, &p, &neg).is_err());
    }

    #[test]
    fn poisson_overflow_is_non_finite_not_error() {
        let (p, data) = small_problem(GlmFamily::Poisson, 5);
        let mut big = p.clone();
        big.set_core(p.core().scale(1e4)).unwrap();
        let l = loss(GlmFamily::Poisson, &big, &data).unwrap();
        assert!(!l.is_finite());
    }

    #[test]
    fn residuals_examples() {
        let eta = [0.0];
        let r = residuals_from_predictors(GlmFamily::Logistic, &eta, &[1.0]);
        assert_eq!(r, vec![-0.5]);
        let r = residuals_from_predictors(GlmFamily::Linear, &[1.0, 2.0], &[1.0, 2.0]);
        assert_eq!(r, vec![0.0, 0.0]);
    }

    #[test]
    fn residuals_match_finite_differences_in_eta() {
        let h = 1e-6;
        let y = [1.0, 0.0, 3.0];
        let eta = [0.3, -1.2, 0.8];
        for family in GlmFamily::ALL {
            let y: Vec<f64> = match family {
                GlmFamily::Logistic => vec![1.0, 0.0, 1.0],
                _ => y.to_vec(),
            };
            let r = residuals_from_predictors(family, &eta, &y);
            for i in 0..eta.len() {
                let mut plus = eta;
                let mut minus = eta;
                plus[i] += h;
                minus[i] -= h;
                let fd = (loss_from_predictors(family, &plus, &y)
                    - loss_from_predictors(family, &minus, &y))
                    / (2.0 * h);
                assert!((fd - r[i]).abs() <= 1e-6 * r[i].abs().max(1e-3), "{family} {i}");
            }
        }
    }

    #[test]
    fn full_gradient_single_sample_linear() {
        let shape = Shape::new([2, 3]).unwrap();
        let x = standard_normal_tensor(&mut Substream::new(6).rng(0), &shape);
        let b = standard_normal_tensor(&mut Substream::new(7).rng(0), &shape);
        let data = Dataset::new(vec![x.clone()], vec![0.0]).unwrap();
        let g = full_gradient_dense(GlmFamily::Linear, &b, &data).unwrap();
        let eta = crate::tensor::inner(&b, &x).unwrap();
        for (gv, xv) in g.vec().iter().zip(x.vec()) {
            assert!((gv - eta * xv).abs() < 1e-15);
        }
    }

    #[test]
    fn full_gradient_matches_dense_finite_differences() {
        for family in GlmFamily::ALL {
            let (p, data) = small_problem(family, 8);
            let b = p.reconstruct();
            let g = full_gradient_dense(family, &b, &data).unwrap();
            let fd = fd_dense_gradient(family, &b, &data, 1e-6);
            assert!(relative_error(g.vec(), fd.vec(), 1e-8) <= 1e-6, "{family}");
        }
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        for family in GlmFamily::ALL {
            for seed in 0..3 {
                let (p, data) = small_problem(family, 20 + seed);
                let analytic = block_gradients(family, &p, &data).unwrap();
                let fd = fd_block_gradients(family, &p, &data, 1e-6);
                let err = max_block_relative_error(&analytic, &fd);
                assert!(err <= 1e-5, "{family} seed {seed}: {err:e}");
            }
        }
    }

    #[test]
    fn perfect_fit_has_zero_gradients() {
        let mut spec = SynthSpec::defaults(GlmFamily::Linear);
        spec.shape = Shape::new([4, 5, 6]).unwrap();
        spec.n_train = 20;
        spec.noise_var = 0.0;
        let data = generate(&spec).unwrap();
        let g = block_gradients(GlmFamily::Linear, &data.truth, &data.train).unwrap();
        assert!(g.core_grad.frobenius_norm() < 1e-12);
        for m in g.per_factor.iter().flatten() {
            assert!(m.frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn identity_factor_core_gradient_is_full_gradient() {
        let shape = Shape::new([3, 2, 2]).unwrap();
        let mut rng = Substream::new(30).rng(0);
        let core = standard_normal_tensor(&mut rng, &shape);
        let p = LsrParams::new(core, vec![shape.dims().iter().map(|&d| Matrix::identity(d)).collect()])
            .unwrap();
        let xs = (0..5).map(|_| standard_normal_tensor(&mut rng, &shape)).collect();
        let data = Dataset::new(xs, vec![0.1, -0.2, 0.3, 0.0, 1.0]).unwrap();
        let g = block_gradients(GlmFamily::Linear, &p, &data).unwrap();
        let r = full_gradient(GlmFamily::Linear, &p, &data).unwrap();
        assert_eq!(g.core_grad, r);
    }

    #[test]
    fn squared_and_exponential_forms_differ_by_constant() {
        let (p, data) = small_problem(GlmFamily::Linear, 40);
        let y = data.responses();
        let c = y.iter().map(|v| v * v).sum::<f64>() / (2.0 * y.len() as f64);
        let a = loss(GlmFamily::Linear, &p, &data).unwrap();
        let b = squared_loss(&p, &data).unwrap();
        assert!((b - a - c).abs() < 1e-12);
    }

    #[test]
    fn small_core_step_decreases_loss() {
        for family in GlmFamily::ALL {
            let (p, data) = small_problem(family, 50);
            let g = block_gradients(family, &p, &data).unwrap();
            let before = loss(family, &p, &data).unwrap();
            let mut q = p.clone();
            q.core_mut().axpy(-1e-4, &g.core_grad).unwrap();
            assert!(loss(family, &q, &data).unwrap() < before, "{family}");
        }
    }
}
