//! CSV schemas for experiment outputs.
//!
//! All files have a fixed header, one record per line, `\n` terminators and
//! shortest round-trip float formatting (locale independent).

use std::io::{Read, Write};

use serde::Serialize;

use crate::analysis::concentration::ConcentrationPoint;
use crate::analysis::experiment::ExperimentRow;
use crate::analysis::fit::{RateFit, RateRow};
use crate::error::{Error, Result};

pub const RESULTS_HEADER: [&str; 9] = [
    "dof",
    "n",
    "replicate",
    "estimator",
    "risk",
    "excess_risk",
    "acceptance_rate",
    "seed",
    "wall_ms",
];
pub const RATES_HEADER: [&str; 8] = [
    "dof",
    "estimator",
    "statistic",
    "slope",
    "slope_stderr",
    "intercept",
    "r_squared",
    "n_points",
];
pub const CONCENTRATION_HEADER: [&str; 7] = [
    "dof",
    "n",
    "beta",
    "eps_scale",
    "threshold",
    "mean_tail_mass",
    "replicates",
];
pub const PLOT_HEADER: [&str; 3] = ["log10_n", "log10_statistic", "fitted_log10_statistic"];

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out)
}

fn write_rows<W: Write, T: Serialize>(
    out: W,
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w = writer(out);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results<W: Write>(out: W, rows: &[ExperimentRow]) -> Result<()> {
    write_rows(out, &RESULTS_HEADER, rows)
}

/// Reads a results CSV, rejecting any header other than [`RESULTS_HEADER`].
pub fn read_results<R: Read>(input: R) -> Result<Vec<ExperimentRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER.iter().copied()) {
        return Err(Error::Contract(format!(
            "unexpected results header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            RESULTS_HEADER.join(",")
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Serialize)]
struct RateRecord<'a> {
    dof: u32,
    estimator: &'a str,
    statistic: &'a str,
    slope: f64,
    slope_stderr: f64,
    intercept: f64,
    r_squared: f64,
    n_points: usize,
}

pub fn write_rates<W: Write>(out: W, rates: &[RateRow]) -> Result<()> {
    write_rows(
        out,
        &RATES_HEADER,
        rates.iter().map(|r| RateRecord {
            dof: r.dof,
            estimator: r.estimator.as_str(),
            statistic: r.statistic.as_str(),
            slope: r.fit.slope,
            slope_stderr: r.fit.slope_stderr,
            intercept: r.fit.intercept,
            r_squared: r.fit.r_squared,
            n_points: r.fit.points.len(),
        }),
    )
}

#[derive(Serialize)]
struct ConcentrationRecord {
    dof: u32,
    n: usize,
    beta: f64,
    eps_scale: f64,
    threshold: f64,
    mean_tail_mass: f64,
    replicates: usize,
}

pub fn write_concentration<W: Write>(out: W, points: &[ConcentrationPoint]) -> Result<()> {
    write_rows(
        out,
        &CONCENTRATION_HEADER,
        points.iter().map(|p| ConcentrationRecord {
            dof: p.dof,
            n: p.n,
            beta: p.beta,
            eps_scale: p.eps_scale,
            threshold: p.threshold,
            mean_tail_mass: p.mean_tail_mass,
            replicates: p.replicates,
        }),
    )
}

/// Plot series of one fit in base 10: the data points and the fitted line at
/// each point.
pub fn write_plot_data<W: Write>(out: W, fit: &RateFit) -> Result<()> {
    let ln10 = std::f64::consts::LN_10;
    write_rows(
        out,
        &PLOT_HEADER,
        fit.points
            .iter()
            .map(|&(x, y)| (x / ln10, y / ln10, fit.predict(x) / ln10)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::experiment::Estimator;
    use crate::analysis::fit::{fit_power_law, Statistic};
    use proptest::prelude::*;

    fn row(replicate: usize, acc: Option<f64>) -> ExperimentRow {
        ExperimentRow {
            dof: 5,
            n: 10,
            replicate,
            estimator: if acc.is_some() {
                Estimator::Bayes
            } else {
                Estimator::Erm
            },
            risk: 1.7,
            excess_risk: 0.0333,
            acceptance_rate: acc,
            seed: 18_446_744_073_709_551_615,
            wall_ms: None,
        }
    }

    #[test]
    fn results_layout() {
        let mut buf = Vec::new();
        write_results(&mut buf, &[row(0, None), row(0, Some(0.25))]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "dof,n,replicate,estimator,risk,excess_risk,acceptance_rate,seed,wall_ms\n\
             5,10,0,erm,1.7,0.0333,,18446744073709551615,\n\
             5,10,0,bayes,1.7,0.0333,0.25,18446744073709551615,\n"
        );
    }

    #[test]
    fn results_header_is_checked() {
        let bad = "dof,n,replicate,estimator,risk\n5,10,0,erm,1.0\n";
        assert!(read_results(bad.as_bytes()).is_err());
        let empty = RESULTS_HEADER.join(",") + "\n";
        assert!(read_results(empty.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let text = RESULTS_HEADER.join(",") + "\n5,10,0,erm,1.0\n";
        assert!(read_results(text.as_bytes()).is_err());
    }

    #[test]
    fn rates_and_plot_layout() {
        let fit = fit_power_law(&[(10.0, 1.0), (100.0, 0.1), (1000.0, 0.01)]).unwrap();
        let rate = RateRow {
            dof: 10,
            estimator: Estimator::Bayes,
            statistic: Statistic::MeanExcess,
            fit: fit.clone(),
        };
        let mut buf = Vec::new();
        write_rates(&mut buf, &[rate]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RATES_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("10,bayes,mean-excess,-1"));

        let mut buf = Vec::new();
        write_plot_data(&mut buf, &fit).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let second: Vec<f64> = text
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(
            (second[0] - 2.0).abs() < 1e-12
                && (second[1] + 1.0).abs() < 1e-12
                && (second[2] + 1.0).abs() < 1e-12
        );
    }

    proptest! {
        #[test]
        fn results_round_trip(
            risk in 1.0..1e3f64, excess in 0.0..1e3f64, acc in proptest::option::of(0.0..1.0f64),
            seed in any::<u64>(), wall in proptest::option::of(0.0..1e6f64),
        ) {
            let r = ExperimentRow { risk, excess_risk: excess, seed, wall_ms: wall, ..row(3, acc) };
            let mut buf = Vec::new();
            write_results(&mut buf, std::slice::from_ref(&r)).unwrap();
            let back = read_results(buf.as_slice()).unwrap();
            prop_assert_eq!(back, vec![r]);
        }
    }
}
