//! Oracle suites: analytic block gradients against central differences, and
//! Newton–Schulz orthogonalization against the exact polar factor.

use lsrtr::glm::{block_gradients, GlmFamily};
use lsrtr::lsr::{LsrParams, LsrRank};
use lsrtr::optim::newton_schulz_orth;
use lsrtr::oracle::{condition_number, exact_polar, fd_block_gradients, max_block_relative_error};
use lsrtr::rng::{standard_normal_matrix, Substream};
use lsrtr::synth::{generate, SynthSpec};
use lsrtr::tensor::{Matrix, Shape};
use rand::Rng;

use crate::error::{CliError, CliResult};

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;
pub const NS_POLAR_ITERS: usize = 8;
pub const NS_POLAR_TOL: f64 = 1e-4;
pub const NS_RESIDUAL_ITERS: usize = 5;
pub const NS_RESIDUAL_TOL: f64 = 1e-2;
pub const NS_MAX_COND: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub family: GlmFamily,
    pub seed: u64,
    pub max_rel_error: f64,
}

/// Block gradients at a perturbed ground truth on shape (4,5,6), rank
/// (2,2,2), S = 2, n = 50, for every family and each seed.
pub fn gradient_suite(seeds: impl IntoIterator<Item = u64> + Clone) -> CliResult<Vec<GradientCheck>> {
    let mut out = Vec::new();
    for family in GlmFamily::ALL {
        for seed in seeds.clone() {
            let mut spec = SynthSpec::defaults(family);
            spec.shape = Shape::new([4, 5, 6])?;
            spec.rank = LsrRank::new([2, 2, 2], 2)?;
            spec.n_train = 50;
            spec.n_test = 1;
            spec.seed = seed;
            let data = generate(&spec)?;
            let p = LsrParams::perturbed_init(&data.truth, 0.3, &mut Substream::new(seed).rng(99))?;
            let analytic = block_gradients(family, &p, &data.train)?;
            let fd = fd_block_gradients(family, &p, &data.train, FD_STEP);
            out.push(GradientCheck {
                family,
                seed,
                max_rel_error: max_block_relative_error(&analytic, &fd),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NsCheck {
    pub rows: usize,
    pub cols: usize,
    pub condition: f64,
    /// ‖NS₈(M) − polar(M)‖_F.
    pub polar_error: f64,
    /// ‖XᵀX − I‖_F with X = NS₅(M).
    pub residual: f64,
}

/// Gaussian tall matrices with rows ≤ 20, cols ≤ 5 and condition number at
/// most [`NS_MAX_COND`], drawn by rejection.
pub fn random_tall_matrices(count: usize, seed: u64) -> Vec<Matrix> {
    let mut rng = Substream::new(seed).rng(0);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let cols = rng.gen_range(1..=5);
        let rows = rng.gen_range(cols..=20);
        let m = standard_normal_matrix(&mut rng, rows, cols);
        if condition_number(&m) <= NS_MAX_COND {
            out.push(m);
        }
    }
    out
}

pub fn ns_suite(count: usize, seed: u64) -> CliResult<Vec<NsCheck>> {
    random_tall_matrices(count, seed)
        .iter()
        .map(|m| {
            let x8 = newton_schulz_orth(m, NS_POLAR_ITERS)?;
            let x5 = newton_schulz_orth(m, NS_RESIDUAL_ITERS)?;
            Ok(NsCheck {
                rows: m.rows(),
                cols: m.cols(),
                condition: condition_number(m),
                polar_error: x8.sub(&exact_polar(m)?)?.frobenius_norm(),
                residual: x5.orthonormality_residual(),
            })
        })
        .collect()
}

/// Runs both suites, prints one line per check group and fails if any
/// check exceeds its tolerance.
pub fn run_selftest(quiet: bool) -> CliResult<()> {
    let mut failures = Vec::new();
    let grads = gradient_suite(0..10)?;
    for family in GlmFamily::ALL {
        let worst = grads
            .iter()
            .filter(|g| g.family == family)
            .map(|g| g.max_rel_error)
            .fold(0.0, f64::max);
        let ok = worst <= FD_TOL;
        if !quiet {
            println!(
                "{} gradient {family}: max relative error {worst:.3e} (tol {FD_TOL:e})",
                if ok { "PASS" } else { "FAIL" }
            );
        }
        if !ok {
            failures.push(format!("{family} gradients"));
        }
    }
    let ns = ns_suite(100, 0)?;
    let polar_bad = ns.iter().filter(|c| !(c.polar_error <= NS_POLAR_TOL)).count();
    let resid_bad = ns.iter().filter(|c| !(c.residual <= NS_RESIDUAL_TOL)).count();
    let worst_polar = ns.iter().map(|c| c.polar_error).fold(0.0, f64::max);
    let worst_resid = ns.iter().map(|c| c.residual).fold(0.0, f64::max);
    for (name, bad, worst, tol) in [
        ("newton-schulz polar (8 iters)", polar_bad, worst_polar, NS_POLAR_TOL),
        ("newton-schulz residual (5 iters)", resid_bad, worst_resid, NS_RESIDUAL_TOL),
    ] {
        if !quiet {
            println!(
                "{} {name}: {}/{} within {tol:e}, worst {worst:.3e}",
                if bad == 0 { "PASS" } else { "FAIL" },
                ns.len() - bad,
                ns.len()
            );
        }
        if bad > 0 {
            failures.push(name.to_string());
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::SelfTest(failures.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_agree_with_finite_differences() {
        for g in gradient_suite(0..2).unwrap() {
            assert!(g.max_rel_error <= FD_TOL, "{g:?}");
        }
    }

    #[test]
    fn tall_matrices_respect_bounds() {
        let ms = random_tall_matrices(30, 5);
        assert_eq!(ms.len(), 30);
        for m in &ms {
            assert!(m.rows() <= 20 && m.cols() <= 5 && m.rows() >= m.cols());
            assert!(condition_number(m) <= NS_MAX_COND);
        }
        assert_eq!(random_tall_matrices(30, 5), ms);
    }

    #[test]
    fn ns_suite_errors_are_finite_and_bounded() {
        for c in ns_suite(20, 1).unwrap() {
            assert!(c.polar_error.is_finite());
            assert!(c.residual < (c.cols as f64).sqrt());
        }
    }
}
