//! Forecasting author publication productivity.
//!
//! The hybrid forecaster feeds the last twelve cumulative publication counts
//! of an author to a small recurrent network to predict the next year, then
//! rolls the count forward with a compound power-law/Poisson increment whose
//! scale grows with the author's output. Shallow per-level regression
//! baselines and the trend, distribution and event-probability measurements
//! used to compare them live alongside.

#![allow(clippy::needless_range_loop)]
#![cfg_attr(test, allow(clippy::excessive_precision))]

pub mod baselines;
pub mod corpus;
pub mod evaluation;
pub mod forecast;
pub mod recurrent;
pub mod rng;
pub mod stochastic;

pub use rng::RngStream;
pub use stochastic::PowerLawParams;
