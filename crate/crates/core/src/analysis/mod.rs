//! The convergence-rate experiment and its diagnostics.

pub mod bounds;
pub mod concentration;
pub mod experiment;
pub mod fit;
pub mod probes;

pub use bounds::{linear_regression_rate_bound, multiscale_rate_bound, RateBound};
pub use concentration::{concentration_curve, ConcentrationPoint};
pub use experiment::{
    run_experiment, run_experiment_with, CellKey, CellObserver, Estimator, ExperimentConfig,
    ExperimentRow, ExperimentTable, NoObserver, RiskMode, RunOptions,
};
pub use fit::{
    fit_all, fit_line, fit_loglog, fit_power_law, Aggregation, RateFit, RateRow, Statistic,
};
pub use probes::{
    bernstein_constant, bernstein_exponent, bernstein_grid, bernstein_probe, envelope_probe,
    BernsteinPoint,
};
