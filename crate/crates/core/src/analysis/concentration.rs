//! Posterior mass outside shrinking risk level sets.
//!
//! For each (dof, n) the posterior is sampled on every replicate and the
//! fraction of kept states with `R(u) > γ* + eps_scale·n^{-β}` is averaged.
//! The constants that would make the threshold sharp are not computable, so
//! `eps_scale` is user supplied and only the decay in `n` is meaningful.

use serde::Serialize;

use super::experiment::{
    oracle_for, oracles, prepare_cell, run_cell_chain, CellKey, ExperimentConfig, RunOptions,
};
use crate::error::{ensure, Result};
use crate::mcmc::tail_mass;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationPoint {
    pub dof: u32,
    pub n: usize,
    pub beta: f64,
    pub eps_scale: f64,
    pub threshold: f64,
    pub mean_tail_mass: f64,
    /// Standard error of `mean_tail_mass` across replicates.
    pub stderr: f64,
    /// Replicates that contributed (missing cells excluded).
    pub replicates: usize,
}

pub fn concentration_threshold(gamma_star: f64, n: usize, beta: f64, eps_scale: f64) -> f64 {
    gamma_star + eps_scale * (n as f64).powf(-beta)
}

/// Replicate-averaged posterior tail mass at `γ* + eps_scale·n^{-beta}` for
/// every (dof, n) of `config`. The estimators and risk mode of `config` are
/// not used; the risk is the analytic squared-loss risk.
pub fn concentration_curve(
    config: &ExperimentConfig,
    beta: f64,
    eps_scale: f64,
    options: RunOptions,
) -> Result<Vec<ConcentrationPoint>> {
    config.validate()?;
    ensure(beta > 0.0 && beta.is_finite(), || {
        format!("beta must be positive, got {beta}")
    })?;
    ensure(eps_scale > 0.0, || {
        format!("eps_scale must be positive, got {eps_scale}")
    })?;
    let oracles = oracles(config)?;
    let cells = config.cells();
    let masses = options
        .execution
        .map(cells.clone(), |key: CellKey| -> Result<Option<f64>> {
            let oracle = oracle_for(&oracles, key.dof);
            let Some(cell) = prepare_cell(config, &oracle.model, &key)? else {
                return Ok(None);
            };
            let chain = run_cell_chain(config, &cell)?;
            let threshold = concentration_threshold(oracle.gamma_star, key.n, beta, eps_scale);
            Ok(Some(tail_mass(
                &chain,
                |u| oracle.risk(u).unwrap_or(f64::INFINITY),
                threshold,
            )))
        });

    let mut out = Vec::new();
    let mut iter = cells.iter().zip(masses);
    for &dof in &config.dofs {
        let gamma_star = oracle_for(&oracles, dof).gamma_star;
        for &n in &config.sample_sizes {
            let mut vals = Vec::with_capacity(config.replicates);
            for _ in 0..config.replicates {
                let (key, mass) = iter.next().expect("one outcome per cell");
                debug_assert_eq!((key.dof, key.n), (dof, n));
                if let Some(m) = mass? {
                    vals.push(m);
                }
            }
            let r = vals.len();
            let mean = if r > 0 {
                vals.iter().sum::<f64>() / r as f64
            } else {
                f64::NAN
            };
            let stderr = if r > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64 / r as f64)
                    .sqrt()
            } else {
                0.0
            };
            out.push(ConcentrationPoint {
                dof,
                n,
                beta,
                eps_scale,
                threshold: concentration_threshold(gamma_star, n, beta, eps_scale),
                mean_tail_mass: mean,
                stderr,
                replicates: r,
            });
        }
    }
    Ok(out)
}
