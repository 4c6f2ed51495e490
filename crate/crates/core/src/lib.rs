//! Generalized Bayesian learning with heavy-tailed losses.
//!
//! The crate builds loss-based ("generalized") posteriors over linear
//! hypotheses, samples them with a random-walk Metropolis kernel, and measures
//! how fast the generalized Bayes estimator and the least-squares baseline
//! approach the optimal risk when the regression noise is Student-t.
//!
//! Module map:
//!
//! * [`hypothesis`]: hypotheses, priors, losses and the unnormalized
//!   generalized posterior, with a Gram-matrix fast path for squared losses.
//! * [`data`]: reproducible synthesis of the heavy-tailed linear model.
//! * [`mcmc`]: the Metropolis sampler and posterior summaries.
//! * [`risk`]: analytic and Monte-Carlo risk, ERM, excess risk.
//! * [`analysis`]: the convergence-rate experiment, log-log fits, bound
//!   calculators and the Bernstein / envelope / concentration probes.
//!
//! Work that fans out over replicates goes through [`exec::Execution`]; with
//! the `parallel` feature (default) it runs on rayon, otherwise sequentially.
//! Results never depend on the schedule.

pub mod analysis;
pub mod data;
pub mod error;
pub mod exec;
pub mod hypothesis;
pub mod linalg;
pub mod mcmc;
pub mod report;
pub mod risk;
pub mod rng;

pub use error::{Error, Result};
