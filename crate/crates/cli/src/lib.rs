//! Experiment runner for low-separation-rank tensor regression: configs,
//! seeded trial ensembles, CSV and plot-data output, and oracle self-tests.

pub mod app;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod selftest;
pub mod vessel;
