//! Low Separation Rank tensor GLMs and the LSRTR / LSRTR-M block-coordinate
//! solvers.

pub mod dataset;
pub mod error;
pub mod glm;
pub mod lsr;
pub mod metrics;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use glm::{Dataset, GlmFamily};
pub use lsr::{LsrParams, LsrRank};
pub use optim::{Algorithm, OptConfig, SweepMode};
pub use tensor::{DenseTensor, Matrix, Shape};
