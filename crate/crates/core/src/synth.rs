//! Seeded synthetic TGLM problems.
//!
//! Covariates are i.i.d. standard normal tensors. Responses are drawn from the
//! family's distribution at `η = ⟨B, X⟩`: Gaussian with variance `noise_var`,
//! Bernoulli with success probability `σ(η)`, or Poisson with rate `e^η`.
//!
//! Stream layout under `SynthSpec::seed`: 0 ground truth, 1 train covariates,
//! 2 train responses, 3 test covariates, 4 test responses. The train set is
//! therefore unaffected by `n_test`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::glm::{Dataset, GlmFamily};
use crate::lsr::{LsrParams, LsrRank};
use crate::rng::{standard_normal, standard_normal_vec, StreamRng, Substream};
use crate::tensor::{dot, Shape};

const STREAM_TRUTH: u64 = 0;
const STREAM_TRAIN_X: u64 = 1;
const STREAM_TRAIN_Y: u64 = 2;
const STREAM_TEST_X: u64 = 3;
const STREAM_TEST_Y: u64 = 4;

/// Default bound on `max_i |η_i|` over the training draws for Poisson data.
pub const POISSON_ETA_BOUND: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub shape: Shape,
    pub rank: LsrRank,
    pub family: GlmFamily,
    pub n_train: usize,
    pub n_test: usize,
    /// Gaussian noise variance; linear family only.
    pub noise_var: f64,
    /// Largest admissible `max_i |η_i|` on the training set; the ground-truth
    /// core is shrunk to meet it. `None` disables rescaling.
    pub eta_bound: Option<f64>,
    pub seed: u64,
}

impl SynthSpec {
    /// Order-3 problem of shape (10,15,20), rank (2,2,2), S = 2 with the
    /// sample sizes of the family's reference protocol.
    pub fn defaults(family: GlmFamily) -> Self {
        let (n_train, n_test) = match family {
            GlmFamily::Linear => (500, 100),
            GlmFamily::Logistic => (20_000, 10_000),
            GlmFamily::Poisson => (5_000, 1_000),
        };
        Self {
            shape: Shape::new([10, 15, 20]).expect("static shape"),
            rank: LsrRank::new([2, 2, 2], 2).expect("static rank"),
            family,
            n_train,
            n_test,
            noise_var: 0.1,
            eta_bound: (family == GlmFamily::Poisson).then_some(POISSON_ETA_BOUND),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rank.check_against(&self.shape)?;
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig(
                "n_train and n_test must be positive".into(),
            ));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_var must be ≥ 0, got {}",
                self.noise_var
            )));
        }
        if let Some(b) = self.eta_bound {
            if !(b > 0.0) {
                return Err(Error::InvalidConfig(format!("eta_bound must be > 0, got {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub truth: LsrParams,
    pub train: Dataset,
    pub test: Dataset,
    /// Factor applied to the ground-truth core to honour `eta_bound` (1 when
    /// no rescaling happened).
    pub core_rescale: f64,
}

pub fn generate(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let root = Substream::new(spec.seed);
    let mut truth =
        LsrParams::random_ground_truth(&spec.shape, &spec.rank, &mut root.rng(STREAM_TRUTH))?;
    let d = spec.shape.numel();
    let train_x = standard_normal_vec(&mut root.rng(STREAM_TRAIN_X), spec.n_train * d);
    let test_x = standard_normal_vec(&mut root.rng(STREAM_TEST_X), spec.n_test * d);

    let mut b = truth.reconstruct();
    let mut core_rescale = 1.0;
    if let Some(bound) = spec.eta_bound {
        let max_eta = train_x
            .chunks_exact(d)
            .map(|x| dot(b.vec(), x).abs())
            .fold(0.0, f64::max);
        if max_eta > bound {
            core_rescale = bound / max_eta;
            truth.set_core(truth.core().scale(core_rescale))?;
            b = truth.reconstruct();
        }
    }

    let responses = |xs: &[f64], rng: &mut StreamRng| -> Result<Vec<f64>> {
        xs.chunks_exact(d)
            .map(|x| sample_response(spec.family, dot(b.vec(), x), spec.noise_var, rng))
            .collect()
    };
    let train_y = responses(&train_x, &mut root.rng(STREAM_TRAIN_Y))?;
    let test_y = responses(&test_x, &mut root.rng(STREAM_TEST_Y))?;

    Ok(SyntheticData {
        truth,
        train: Dataset::from_flat(spec.shape.clone(), train_x, train_y)?,
        test: Dataset::from_flat(spec.shape.clone(), test_x, test_y)?,
        core_rescale,
    })
}

fn sample_response<R: Rng + ?Sized>(
    family: GlmFamily,
    eta: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<f64> {
    Ok(match family {
        GlmFamily::Linear => eta + noise_var.sqrt() * standard_normal(rng),
        GlmFamily::Logistic => {
            if rng.gen::<f64>() < family.mean(eta) {
                1.0
            } else {
                0.0
            }
        }
        GlmFamily::Poisson => {
            let rate = family.mean(eta);
            Poisson::new(rate)
                .map_err(|e| Error::InvalidDataset(format!("Poisson rate {rate}: {e}")))?
                .sample(rng)
        }
    })
}
