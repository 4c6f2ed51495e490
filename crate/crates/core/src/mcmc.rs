//! Random-walk Metropolis over the hypothesis ball, and posterior summaries.

use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::hypothesis::{GramStatistics, Hypothesis};
use crate::linalg::spd_inverse;
use crate::rng::stream;

/// Optimal-scaling constant for random-walk proposals (`2.38 / sqrt(d)`).
const OPTIMAL_SCALING: f64 = 2.38;

/// Proposal step size: either derived from the data or fixed by the user.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ProposalScale {
    /// `2.38/sqrt(d)` with the inverse Gram matrix as proposal shape.
    #[default]
    Auto,
    /// Isotropic Gaussian proposal with this standard deviation.
    Fixed(f64),
}

impl fmt::Display for ProposalScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProposalScale::Auto => f.write_str("auto"),
            ProposalScale::Fixed(s) => write!(f, "{s}"),
        }
    }
}

impl Serialize for ProposalScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ProposalScale::Auto => s.serialize_str("auto"),
            ProposalScale::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ProposalScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        let fixed = |v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(ProposalScale::Fixed(v))
            } else {
                Err(serde::de::Error::custom(format!(
                    "proposal_scale must be positive, got {v}"
                )))
            }
        };
        match Raw::deserialize(d)? {
            Raw::Num(v) => fixed(v),
            Raw::Int(v) => fixed(v as f64),
            Raw::Text(t) if t == "auto" => Ok(ProposalScale::Auto),
            Raw::Text(t) => t
                .parse::<f64>()
                .map_err(|_| {
                    serde::de::Error::custom(format!(
                        "proposal_scale must be \"auto\" or a number, got {t:?}"
                    ))
                })
                .and_then(fixed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Discarded warm-up iterations.
    pub burn_in: usize,
    /// Post-burn-in iterations; every `thin`-th is kept.
    pub iterations: usize,
    pub proposal_scale: ProposalScale,
    pub thin: usize,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 20_000,
            iterations: 100_000,
            proposal_scale: ProposalScale::Auto,
            thin: 1,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.iterations >= 1, || {
            "chain needs at least one kept iteration".into()
        })?;
        ensure(self.thin >= 1, || "thin must be at least 1".into())?;
        ensure(self.thin <= self.iterations, || {
            format!(
                "thin ({}) exceeds iterations ({}): no sample would be kept",
                self.thin, self.iterations
            )
        })?;
        if let ProposalScale::Fixed(s) = self.proposal_scale {
            ensure(s.is_finite() && s > 0.0, || {
                format!("proposal scale must be positive, got {s}")
            })?;
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.iterations / self.thin
    }
}

/// Gaussian random-walk proposal `u' = u + scale·L·z`, `L Lᵀ = covariance`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub scale: f64,
    pub covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Proposal {
    pub fn new(scale: f64, covariance: DMatrix<f64>) -> Result<Self> {
        ensure(scale.is_finite() && scale > 0.0, || {
            format!("proposal scale must be positive, got {scale}")
        })?;
        ensure(covariance.is_square(), || {
            "proposal covariance must be square".into()
        })?;
        let factor = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::contract("proposal covariance is not positive definite"))?
            .l();
        Ok(Proposal {
            scale,
            covariance,
            factor,
        })
    }

    pub fn isotropic(d: usize, scale: f64) -> Result<Self> {
        Proposal::new(scale, DMatrix::identity(d, d))
    }

    /// Resolves a configured scale against a dataset.
    pub fn resolve(setting: ProposalScale, data: &Dataset) -> Result<Self> {
        match setting {
            ProposalScale::Auto => auto_proposal_scale(data),
            ProposalScale::Fixed(s) => Proposal::isotropic(data.dim(), s),
        }
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    /// The same shape with the covariance multiplied by `factor`.
    pub fn rescaled_covariance(&self, factor: f64) -> Result<Self> {
        Proposal::new(self.scale, &self.covariance * factor)
    }

    #[inline]
    fn propose<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        from: &[f64],
        noise: &mut [f64],
        out: &mut [f64],
    ) {
        let d = from.len();
        for z in noise.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        for i in 0..d {
            let mut step = 0.0;
            for (j, z) in noise.iter().enumerate().take(i + 1) {
                step += self.factor[(i, j)] * z;
            }
            out[i] = from[i] + self.scale * step;
        }
    }
}

/// Proposal shaped like the inverse Gram matrix with scale `2.38/sqrt(d)`.
/// A singular Gram matrix falls back to an identity shape with scale
/// `0.1/sqrt(n)` and logs a warning.
pub fn auto_proposal_scale(data: &Dataset) -> Result<Proposal> {
    let stats = GramStatistics::from_dataset(data)?;
    let d = stats.dim();
    match spd_inverse(&stats.gram) {
        Some(inv) => Proposal::new(OPTIMAL_SCALING / (d as f64).sqrt(), inv),
        None => {
            log::warn!(
                "singular Gram matrix (n = {}, d = {d}); using identity proposal covariance",
                stats.n
            );
            Proposal::isotropic(d, 0.1 / (stats.n as f64).sqrt())
        }
    }
}

/// Kept states of one chain, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    samples: Vec<f64>,
    dim: usize,
    pub accepted: u64,
    pub proposals: u64,
    pub acceptance_rate: f64,
    pub init: Hypothesis,
    pub config: ChainConfig,
}

impl ChainResult {
    /// Builds a result from explicit states, with no acceptance statistics.
    pub fn from_samples(states: &[Hypothesis], config: ChainConfig) -> Result<Self> {
        let dim = states.first().map(Hypothesis::dim).unwrap_or(1);
        ensure(states.iter().all(|s| s.dim() == dim), || {
            "chain states differ in dimension".into()
        })?;
        let samples = states
            .iter()
            .flat_map(|s| s.coeffs().iter().copied())
            .collect();
        let init = states
            .first()
            .cloned()
            .unwrap_or_else(|| Hypothesis::zeros(dim));
        Ok(ChainResult {
            samples,
            dim,
            accepted: 0,
            proposals: 0,
            acceptance_rate: 0.0,
            init,
            config,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.samples.chunks_exact(self.dim)
    }

    pub fn sample(&self, i: usize) -> Hypothesis {
        Hypothesis::new(self.samples[i * self.dim..(i + 1) * self.dim].to_vec())
            .expect("chain states are finite")
    }

    /// CSV with header `iter,u0,...,u{d-1}`; `iter` counts post-burn-in
    /// iterations from 0.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["iter".to_string()];
        header.extend((0..self.dim).map(|j| format!("u{j}")));
        w.write_record(&header)?;
        let thin = self.config.thin.max(1);
        for (i, s) in self.iter().enumerate() {
            let mut row = vec![((i + 1) * thin - 1).to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Random-walk Metropolis targeting `exp(target)`.
///
/// Runs `burn_in + iterations` proposals, keeping every `thin`-th state after
/// burn-in. Proposals where `target` is `-inf` (or NaN) are rejected. The
/// random stream is seeded from `config.seed`.
pub fn metropolis_run<F>(
    target: F,
    init: &Hypothesis,
    config: &ChainConfig,
    proposal: &Proposal,
) -> Result<ChainResult>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    let d = init.dim();
    ensure(proposal.dim() == d, || {
        format!(
            "proposal dimension {} does not match the initial state ({d})",
            proposal.dim()
        )
    })?;
    let mut current = init.coeffs().to_vec();
    let mut current_lp = target(&current);
    ensure(current_lp > f64::NEG_INFINITY, || {
        format!("initial state {current:?} lies outside the target's support")
    })?;

    let mut rng = stream(config.seed);
    let mut candidate = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut samples = Vec::with_capacity(config.kept() * d);
    let mut accepted = 0u64;
    let total = config.burn_in + config.iterations;

    for t in 0..total {
        proposal.propose(&mut rng, &current, &mut noise, &mut candidate);
        let lp = target(&candidate);
        let log_ratio = lp - current_lp;
        let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
        if accept {
            std::mem::swap(&mut current, &mut candidate);
            current_lp = lp;
            accepted += 1;
        }
        if t >= config.burn_in && (t - config.burn_in + 1).is_multiple_of(config.thin) {
            if !current_lp.is_finite() {
                return Err(Error::Internal(format!(
                    "non-finite target {current_lp} at a kept state"
                )));
            }
            samples.extend_from_slice(&current);
        }
    }

    Ok(ChainResult {
        samples,
        dim: d,
        accepted,
        proposals: total as u64,
        acceptance_rate: accepted as f64 / total as f64,
        init: init.clone(),
        config: config.clone(),
    })
}

/// Coordinate-wise mean of the kept states: the generalized Bayes estimator.
pub fn posterior_mean(result: &ChainResult) -> Result<Hypothesis> {
    ensure(!result.is_empty(), || {
        "posterior mean of an empty chain".into()
    })?;
    let mut acc = vec![0.0; result.dim()];
    for s in result.iter() {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = result.len() as f64;
    Hypothesis::new(acc.into_iter().map(|a| a / n).collect())
}

/// Fraction of kept states whose risk exceeds `threshold`.
pub fn tail_mass<F>(result: &ChainResult, risk: F, threshold: f64) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    if result.is_empty() {
        return 0.0;
    }
    let above = result.iter().filter(|s| risk(s) > threshold).count();
    above as f64 / result.len() as f64
}

/// Monte-Carlo standard error of each coordinate's mean by non-overlapping
/// batch means.
pub fn batch_means_stderr(result: &ChainResult, batches: usize) -> Result<Vec<f64>> {
    ensure(batches >= 2, || {
        "batch means need at least two batches".into()
    })?;
    let len = result.len() / batches;
    ensure(len >= 1, || {
        format!("{} states cannot fill {batches} batches", result.len())
    })?;
    let d = result.dim();
    let mut means = vec![vec![0.0; d]; batches];
    for (b, m) in means.iter_mut().enumerate() {
        for s in result.iter().skip(b * len).take(len) {
            for (a, v) in m.iter_mut().zip(s) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= len as f64);
    }
    Ok((0..d)
        .map(|j| {
            let grand = means.iter().map(|m| m[j]).sum::<f64>() / batches as f64;
            let var =
                means.iter().map(|m| (m[j] - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
            (var / batches as f64).sqrt()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModelSpec;
    use crate::hypothesis::{PriorSpec, Sample};
    use proptest::prelude::*;

    fn h(v: &[f64]) -> Hypothesis {
        Hypothesis::new(v.to_vec()).unwrap()
    }

    fn config(burn_in: usize, iterations: usize, seed: u64) -> ChainConfig {
        ChainConfig {
            burn_in,
            iterations,
            seed,
            ..ChainConfig::default()
        }
    }

    #[test]
    fn proposal_scale_serde() {
        #[derive(Deserialize)]
        struct W {
            s: ProposalScale,
        }
        let w: W = serde_json::from_str(r#"{"s":"auto"}"#).unwrap();
        assert_eq!(w.s, ProposalScale::Auto);
        let w: W = serde_json::from_str(r#"{"s":0.5}"#).unwrap();
        assert_eq!(w.s, ProposalScale::Fixed(0.5));
        assert!(serde_json::from_str::<W>(r#"{"s":-1.0}"#).is_err());
        assert!(serde_json::from_str::<W>(r#"{"s":"fast"}"#).is_err());
    }

    #[test]
    fn flat_target_on_ball_accepts_nearly_always() {
        let prior = PriorSpec::default_ball(3);
        let target = |u: &[f64]| crate::hypothesis::log_prior_slice(&prior, u);
        let prop = Proposal::isotropic(3, 0.01).unwrap();
        let res = metropolis_run(
            target,
            &Hypothesis::zeros(3),
            &config(100, 10_000, 1),
            &prop,
        )
        .unwrap();
        assert!(res.acceptance_rate >= 0.99, "{}", res.acceptance_rate);
        assert!(res.iter().all(|s| prior.contains(s)));
    }

    #[test]
    fn standard_normal_target_moments() {
        let target = |u: &[f64]| -0.5 * u[0] * u[0];
        let prop = Proposal::isotropic(1, 2.4).unwrap();
        let res = metropolis_run(target, &h(&[0.0]), &config(2_000, 100_000, 5), &prop).unwrap();
        let xs: Vec<f64> = res.iter().map(|s| s[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn three_point_target_visit_frequencies() {
        // Piecewise-constant density on [0,1) ∪ [1,2) ∪ [2,3): the interval
        // index is a three-state chain with stationary law `probs`.
        let probs: [f64; 3] = [0.2, 0.5, 0.3];
        let target = move |u: &[f64]| {
            let x = u[0];
            if !(0.0..3.0).contains(&x) {
                f64::NEG_INFINITY
            } else {
                probs[x as usize].ln()
            }
        };
        let prop = Proposal::isotropic(1, 1.0).unwrap();
        let res = metropolis_run(target, &h(&[1.5]), &config(1_000, 1_000_000, 9), &prop).unwrap();
        let mut counts = [0usize; 3];
        for s in res.iter() {
            counts[s[0] as usize] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let f = *c as f64 / res.len() as f64;
            assert!((f - p).abs() < 0.01, "{f} vs {p}");
        }
    }

    #[test]
    fn init_outside_support_is_rejected() {
        let prior = PriorSpec::default_ball(2);
        let target = |u: &[f64]| crate::hypothesis::log_prior_slice(&prior, u);
        let prop = Proposal::isotropic(2, 0.1).unwrap();
        let err = metropolis_run(target, &h(&[20.0, 0.0]), &config(0, 10, 0), &prop).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn chain_config_validation() {
        let prop = Proposal::isotropic(1, 0.1).unwrap();
        let t = |_: &[f64]| 0.0;
        let bad = ChainConfig {
            iterations: 0,
            ..ChainConfig::default()
        };
        assert!(metropolis_run(t, &h(&[0.0]), &bad, &prop).is_err());
        let bad = ChainConfig {
            iterations: 5,
            thin: 6,
            ..ChainConfig::default()
        };
        assert!(metropolis_run(t, &h(&[0.0]), &bad, &prop).is_err());
        let dim_mismatch = Proposal::isotropic(2, 0.1).unwrap();
        assert!(metropolis_run(t, &h(&[0.0]), &config(0, 5, 0), &dim_mismatch).is_err());
    }

    #[test]
    fn thinning_and_burn_in_bookkeeping() {
        let t = |u: &[f64]| -0.5 * u[0] * u[0];
        let prop = Proposal::isotropic(1, 1.0).unwrap();
        let cfg = ChainConfig {
            burn_in: 7,
            iterations: 100,
            thin: 3,
            seed: 1,
            ..ChainConfig::default()
        };
        let res = metropolis_run(t, &h(&[0.0]), &cfg, &prop).unwrap();
        assert_eq!(res.len(), 33);
        assert_eq!(res.proposals, 107);
        assert!((res.acceptance_rate - res.accepted as f64 / 107.0).abs() < 1e-15);

        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,u0"));
        assert!(lines.next().unwrap().starts_with("2,"));
        assert_eq!(text.lines().count(), 34);
    }

    #[test]
    fn identical_inputs_identical_chains() {
        let t = |u: &[f64]| -(u[0] * u[0] + 2.0 * u[1] * u[1]);
        let prop = Proposal::isotropic(2, 0.7).unwrap();
        let a = metropolis_run(t, &h(&[0.1, 0.2]), &config(10, 5_000, 77), &prop).unwrap();
        let b = metropolis_run(t, &h(&[0.1, 0.2]), &config(10, 5_000, 77), &prop).unwrap();
        assert_eq!(a, b);
        let c = metropolis_run(t, &h(&[0.1, 0.2]), &config(10, 5_000, 78), &prop).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn posterior_mean_examples() {
        let cfg = ChainConfig::default();
        let r = ChainResult::from_samples(&[h(&[0.0, 0.0]), h(&[2.0, 2.0])], cfg.clone()).unwrap();
        assert_eq!(posterior_mean(&r).unwrap(), h(&[1.0, 1.0]));
        let r = ChainResult::from_samples(&[h(&[3.5, -1.0])], cfg.clone()).unwrap();
        assert_eq!(posterior_mean(&r).unwrap(), h(&[3.5, -1.0]));
        let r = ChainResult::from_samples(&[], cfg).unwrap();
        assert!(matches!(posterior_mean(&r), Err(Error::Contract(_))));
    }

    #[test]
    fn tail_mass_examples() {
        let cfg = ChainConfig::default();
        let r =
            ChainResult::from_samples(&[h(&[0.0]), h(&[1.0]), h(&[2.0]), h(&[3.0])], cfg).unwrap();
        let risk = |u: &[f64]| 1.0 + u[0] * u[0];
        assert_eq!(tail_mass(&r, risk, f64::INFINITY), 0.0);
        assert_eq!(tail_mass(&r, risk, 0.5), 1.0);
        assert_eq!(tail_mass(&r, risk, 2.0), 0.5);
    }

    #[test]
    fn auto_proposal_examples() {
        let one_d = ModelSpec::new(h(&[1.0]), 5, 1.0).unwrap();
        let data = Dataset::from_samples(
            one_d,
            0,
            vec![Sample {
                x: vec![2.0],
                y: 1.0,
            }],
        )
        .unwrap();
        let p = auto_proposal_scale(&data).unwrap();
        assert!((p.covariance[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((p.scale - 2.38).abs() < 1e-15);

        let two_d = ModelSpec::new(h(&[1.0, 1.0]), 5, 1.0).unwrap();
        let data = Dataset::from_samples(
            two_d.clone(),
            0,
            vec![
                Sample {
                    x: vec![1.0, 0.0],
                    y: 1.0,
                },
                Sample {
                    x: vec![0.0, 1.0],
                    y: 0.0,
                },
            ],
        )
        .unwrap();
        let p = auto_proposal_scale(&data).unwrap();
        assert!((p.covariance.clone() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

        let singular = Dataset::from_samples(
            two_d,
            0,
            (0..4)
                .map(|_| Sample {
                    x: vec![1.0, 1.0],
                    y: 0.0,
                })
                .collect(),
        )
        .unwrap();
        let p = auto_proposal_scale(&singular).unwrap();
        assert_eq!(p.covariance, DMatrix::<f64>::identity(2, 2));
        assert!((p.scale - 0.05).abs() < 1e-15);
    }

    #[test]
    fn batch_means_of_iid_draws_match_naive_stderr() {
        let prior = PriorSpec::uniform_ball(vec![0.0], 1.0).unwrap();
        let mut rng = stream(4);
        let states: Vec<Hypothesis> = (0..40_000).map(|_| h(&prior.sample(&mut rng))).collect();
        let r = ChainResult::from_samples(&states, ChainConfig::default()).unwrap();
        let se = batch_means_stderr(&r, 40).unwrap()[0];
        let naive = (1.0f64 / 3.0 / 40_000.0).sqrt();
        assert!((se / naive - 1.0).abs() < 0.35, "{se} vs {naive}");
        assert!(batch_means_stderr(&r, 1).is_err());
    }

    proptest! {
        #[test]
        fn posterior_mean_is_order_invariant(
            pts in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..50),
            rot in 0usize..50,
        ) {
            let states: Vec<Hypothesis> = pts.iter().map(|(a, b)| h(&[*a, *b])).collect();
            let mut rotated = states.clone();
            rotated.rotate_left(rot % states.len());
            rotated.reverse();
            let a = posterior_mean(&ChainResult::from_samples(&states, ChainConfig::default()).unwrap()).unwrap();
            let b = posterior_mean(&ChainResult::from_samples(&rotated, ChainConfig::default()).unwrap()).unwrap();
            for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            // Inside the bounding box of the samples.
            for j in 0..2 {
                let lo = states.iter().map(|s| s.coeffs()[j]).fold(f64::INFINITY, f64::min);
                let hi = states.iter().map(|s| s.coeffs()[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a.coeffs()[j] >= lo - 1e-12 && a.coeffs()[j] <= hi + 1e-12);
            }
        }
    }
}
