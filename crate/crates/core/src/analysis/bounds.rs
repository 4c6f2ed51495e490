//! Upper limits on the achievable rate exponent β (rate `n^{-β}`).
//!
//! Two calculators: the general multi-scale Bernstein version, which combines
//! its terms with `max`, and the heavy-tailed linear regression version, which
//! combines them with `min`. The two combinators are kept as given; they are
//! not reconciled here.

use serde::Serialize;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBound {
    /// The combined bound on β.
    pub value: f64,
    /// Term driven by the moment / entropy exponents.
    pub moment_term: f64,
    /// Term `1/(1+κ)` driven by the prior-mass exponent.
    pub prior_term: f64,
    /// How the two terms are combined.
    pub combinator: Combinator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Combinator {
    Min,
    Max,
}

impl RateBound {
    /// A non-positive bound admits no rate.
    pub fn is_vacuous(&self) -> bool {
        self.value.is_nan() || self.value <= 0.0
    }
}

/// `min{1 - 2·sqrt(d/k), 1/(1+κ)}` for least-squares-type Bayesian regression
/// with `t_k` noise in dimension `d`.
pub fn linear_regression_rate_bound(d: usize, k: u32, kappa: f64) -> Result<RateBound> {
    ensure(d >= 1, || "dimension d must be at least 1".into())?;
    ensure(k >= 1, || "degrees of freedom k must be at least 1".into())?;
    ensure(kappa > 0.0 && kappa.is_finite(), || {
        format!("kappa must be positive, got {kappa}")
    })?;
    let moment_term = 1.0 - 2.0 * (d as f64 / k as f64).sqrt();
    let prior_term = 1.0 / (1.0 + kappa);
    Ok(RateBound {
        value: moment_term.min(prior_term),
        moment_term,
        prior_term,
        combinator: Combinator::Min,
    })
}

/// `max{(1 - 2·sqrt(C/r)) / (2 - min α), 1/(1+κ)}` for entropy constant `C`,
/// envelope moment `r` (may be `+inf`) and Bernstein exponents `alphas`.
pub fn multiscale_rate_bound(c: f64, r: f64, alphas: &[f64], kappa: f64) -> Result<RateBound> {
    ensure(c >= 1.0 && c.is_finite(), || {
        format!("entropy constant must be >= 1, got {c}")
    })?;
    ensure(r >= 4.0 * c, || {
        format!("moment order r must be >= 4C = {}, got {r}", 4.0 * c)
    })?;
    ensure(!alphas.is_empty(), || {
        "at least one Bernstein exponent is required".into()
    })?;
    ensure(alphas.iter().all(|&a| a > 0.0 && a <= 1.0), || {
        format!("Bernstein exponents must lie in (0, 1], got {alphas:?}")
    })?;
    ensure(kappa > 0.0 && kappa.is_finite(), || {
        format!("kappa must be positive, got {kappa}")
    })?;
    let alpha_min = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    let moment_term = (1.0 - 2.0 * (c / r).sqrt()) / (2.0 - alpha_min);
    let prior_term = 1.0 / (1.0 + kappa);
    Ok(RateBound {
        value: moment_term.max(prior_term),
        moment_term,
        prior_term,
        combinator: Combinator::Max,
    })
}
