//! Experiment harness: run configurations, trace files, rate fits and
//! comparison tables for the solvers in `bilevel_core`.

pub mod cli;
pub mod compare;
pub mod config;
pub mod demos;
pub mod error;
pub mod instance;
pub mod rates;
pub mod runner;
pub mod trace_io;

pub use config::RunConfig;
pub use error::{BenchError, Result};
pub use rates::{fit_rate, RateFit};
pub use runner::{execute, run_config, RunReport};
