//! Seed derivation and Gaussian sampling.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(seed, stream id)`. Trials derive child seeds with SplitMix64 so that
//! trial `t` of base seed `s` never shares a stream with another trial.
//! Normal variates use the `rand_distr` ziggurat sampler, which is fixed for a
//! given build and platform-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{DenseTensor, Matrix, Shape};

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substream {
    seed: u64,
}

impl Substream {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(index.wrapping_add(1))),
        }
    }

    pub fn rng(&self, stream: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Filled in column-major order.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_col_major(rows, cols, standard_normal_vec(rng, rows * cols))
        .expect("length matches by construction")
}

pub fn standard_normal_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &Shape) -> DenseTensor {
    DenseTensor::from_vec(shape.clone(), standard_normal_vec(rng, shape.numel()))
        .expect("length matches by construction")
}
