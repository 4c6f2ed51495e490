//! Log-log regression of a risk statistic against sample size.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::experiment::{Estimator, ExperimentRow};
use crate::error::{ensure, Error, Result};

/// Which per-replicate quantity is averaged at each `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Statistic {
    /// `R(û) - γ*`.
    #[default]
    #[serde(rename = "mean-excess")]
    MeanExcess,
    /// Raw `R(û)`; flattens at `log γ*` for large `n`.
    #[serde(rename = "mean-risk")]
    MeanRisk,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::MeanExcess => "mean-excess",
            Statistic::MeanRisk => "mean-risk",
        }
    }

    fn value(self, row: &ExperimentRow) -> f64 {
        match self {
            Statistic::MeanExcess => row.excess_risk,
            Statistic::MeanRisk => row.risk,
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excess" | "mean-excess" => Ok(Statistic::MeanExcess),
            "raw" | "risk" | "mean-risk" => Ok(Statistic::MeanRisk),
            other => Err(Error::contract(format!(
                "unknown statistic {other:?} (expected excess or raw)"
            ))),
        }
    }
}

/// How replicates are combined at each `n` before the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// `log(mean over replicates)`.
    #[default]
    Mean,
    /// `mean over replicates of log`, for sensitivity checks.
    MeanOfLogs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    /// `(ln n, ln statistic)` pairs the line was fitted to.
    pub points: Vec<(f64, f64)>,
}

impl RateFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least squares `y = intercept + slope·x`.
pub fn fit_line(points: &[(f64, f64)]) -> Result<RateFit> {
    ensure(points.len() >= 2, || {
        format!("a line fit needs at least 2 points, got {}", points.len())
    })?;
    ensure(
        points.iter().all(|(x, y)| x.is_finite() && y.is_finite()),
        || "fit points must be finite".into(),
    )?;
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    ensure(sxx > 0.0, || {
        "fit points need at least two distinct x values".into()
    })?;
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let slope_stderr = if points.len() > 2 {
        (ss_res / (m - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(RateFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        points: points.to_vec(),
    })
}

/// Fits `ln value = intercept + slope·ln n` to `(n, value)` pairs.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RateFit> {
    ensure(points.iter().all(|&(n, v)| n > 0.0 && v > 0.0), || {
        "power-law fit needs positive sizes and statistic values (cannot take logs)".into()
    })?;
    let logged: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n.ln(), v.ln())).collect();
    fit_line(&logged)
}

/// Aggregates the rows of one (dof, estimator) series into `(n, value)`
/// points, where `value` is already on the log scale for
/// [`Aggregation::MeanOfLogs`].
fn series(
    rows: &[ExperimentRow],
    dof: u32,
    estimator: Estimator,
    statistic: Statistic,
    aggregation: Aggregation,
) -> Result<Vec<(f64, f64)>> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.dof == dof && r.estimator == estimator)
    {
        by_n.entry(r.n).or_default().push(statistic.value(r));
    }
    ensure(by_n.len() >= 3, || {
        format!(
            "rate fit for dof={dof}, {estimator} needs at least 3 distinct sample sizes, found {}",
            by_n.len()
        )
    })?;
    by_n.into_iter()
        .map(|(n, vals)| {
            ensure(vals.iter().all(|v| *v > 0.0), || {
                format!(
                    "non-positive {statistic} at dof={dof}, n={n}, {estimator}: cannot take logs"
                )
            })?;
            let m = vals.len() as f64;
            let v = match aggregation {
                Aggregation::Mean => (vals.iter().sum::<f64>() / m).ln(),
                Aggregation::MeanOfLogs => vals.iter().map(|v| v.ln()).sum::<f64>() / m,
            };
            Ok(((n as f64).ln(), v))
        })
        .collect()
}

/// Slope of `ln statistic` against `ln n` for one (dof, estimator) series;
/// the slope estimates `-β` for a rate `n^{-β}`.
pub fn fit_loglog(
    rows: &[ExperimentRow],
    dof: u32,
    estimator: Estimator,
    statistic: Statistic,
    aggregation: Aggregation,
) -> Result<RateFit> {
    fit_line(&series(rows, dof, estimator, statistic, aggregation)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub dof: u32,
    pub estimator: Estimator,
    pub statistic: Statistic,
    pub fit: RateFit,
}

/// Fits every (dof, estimator) series present in `rows`, sorted by dof then
/// estimator.
pub fn fit_all(
    rows: &[ExperimentRow],
    statistic: Statistic,
    aggregation: Aggregation,
) -> Result<Vec<RateRow>> {
    let mut keys: Vec<(u32, Estimator)> = rows.iter().map(|r| (r.dof, r.estimator)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(dof, estimator)| {
            Ok(RateRow {
                dof,
                estimator,
                statistic,
                fit: fit_loglog(rows, dof, estimator, statistic, aggregation)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(n: usize, replicate: usize, excess: f64) -> ExperimentRow {
        ExperimentRow {
            dof: 10,
            n,
            replicate,
            estimator: Estimator::Erm,
            risk: 1.25 + excess,
            excess_risk: excess,
            acceptance_rate: None,
            seed: 0,
            wall_ms: None,
        }
    }

    #[test]
    fn exact_decade_power_law() {
        let f = fit_power_law(&[(10.0, 1.0), (100.0, 0.1), (1000.0, 0.01)]).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(f.slope_stderr.abs() < 1e-12);
    }

    #[test]
    fn loglog_over_table_rows() {
        let rows: Vec<ExperimentRow> = [10usize, 20, 40, 80]
            .iter()
            .flat_map(|&n| (0..3).map(move |r| row(n, r, 3.0 / n as f64 * (1.0 + 0.1 * r as f64))))
            .collect();
        for agg in [Aggregation::Mean, Aggregation::MeanOfLogs] {
            let f = fit_loglog(&rows, 10, Estimator::Erm, Statistic::MeanExcess, agg).unwrap();
            assert!((f.slope + 1.0).abs() < 1e-12, "{agg:?}: {}", f.slope);
        }
        let raw = fit_loglog(
            &rows,
            10,
            Estimator::Erm,
            Statistic::MeanRisk,
            Aggregation::Mean,
        )
        .unwrap();
        assert!(raw.slope > -0.5);
        let all = fit_all(&rows, Statistic::MeanExcess, Aggregation::Mean).unwrap();
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn too_few_sizes_or_zero_values() {
        let rows = vec![row(10, 0, 0.1), row(20, 0, 0.05)];
        assert!(fit_loglog(
            &rows,
            10,
            Estimator::Erm,
            Statistic::MeanExcess,
            Aggregation::Mean
        )
        .is_err());
        let rows = vec![row(10, 0, 0.1), row(20, 0, 0.0), row(40, 0, 0.02)];
        let err = fit_loglog(
            &rows,
            10,
            Estimator::Erm,
            Statistic::MeanExcess,
            Aggregation::Mean,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert!(fit_power_law(&[(10.0, -1.0), (20.0, 1.0), (30.0, 1.0)]).is_err());
    }

    #[test]
    fn noisy_fit_has_positive_stderr_and_bounded_r2() {
        let f = fit_line(&[(0.0, 0.1), (1.0, 0.9), (2.0, 2.2), (3.0, 2.9)]).unwrap();
        assert!(f.slope_stderr > 0.0);
        assert!(f.r_squared > 0.9 && f.r_squared < 1.0);
    }

    #[test]
    fn statistic_names() {
        assert_eq!(
            "excess".parse::<Statistic>().unwrap(),
            Statistic::MeanExcess
        );
        assert_eq!("raw".parse::<Statistic>().unwrap(), Statistic::MeanRisk);
        assert!("median".parse::<Statistic>().is_err());
    }

    proptest! {
        #[test]
        fn recovers_any_exact_power_law(
            c in 1e-3..1e3f64, beta in 0.1..3.0f64, n0 in 2.0..50.0f64, ratio in 1.5..4.0f64, m in 3usize..12,
        ) {
            let pts: Vec<(f64, f64)> = (0..m)
                .map(|i| {
                    let n = n0 * ratio.powi(i as i32);
                    (n, c * n.powf(-beta))
                })
                .collect();
            let f = fit_power_law(&pts).unwrap();
            prop_assert!((f.slope + beta).abs() < 1e-12);
            prop_assert!((f.r_squared - 1.0).abs() < 1e-12);
        }
    }
}
