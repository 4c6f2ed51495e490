//! True risk, Monte-Carlo risk, the least-squares baseline and excess risk.
//!
//! Under the squared loss and the synthetic model the risk is a quadratic
//! form around the generating coefficients:
//!
//! ```text
//! R(u) = γ* + (u - u0)ᵀ M (u - u0),   γ* = k/(k-2),   M = E[x xᵀ]
//! ```
//!
//! so `u0` is the unique minimizer and `R(u) - γ* ≥ λ_min(M)·‖u - u0‖²`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelSpec};
use crate::error::{ensure, Error, Result};
use crate::hypothesis::{GramStatistics, Hypothesis};
use crate::linalg::{dot, min_eigenvalue, quad_form, spd_solve};

/// Minimum design draws for a Monte-Carlo second-moment matrix.
pub const MIN_ORACLE_SAMPLES: usize = 10_000;
/// Minimum draws for [`mc_risk`].
pub const MIN_RISK_SAMPLES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Closed-form `M = diag(1, v, ..., v)`.
    #[default]
    Analytic,
    /// `M` averaged over design draws.
    MonteCarlo { samples: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskOracle {
    pub gamma_star: f64,
    pub second_moment: DMatrix<f64>,
    /// `λ_min(M)`, the constant of the quadratic lower bound on excess risk.
    pub min_eigenvalue: f64,
    pub model: ModelSpec,
}

/// Variance of N(0,1) truncated to `[-a, a]`: `1 - 2aφ(a) / (2Φ(a) - 1)`.
pub fn truncated_normal_variance(a: f64) -> f64 {
    let mass = statrs::function::erf::erf(a / std::f64::consts::SQRT_2);
    let density = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - 2.0 * a * density / mass
}

/// `k / (k - 2)`, the variance of `t_k`.
pub fn optimal_risk(dof: u32) -> Result<f64> {
    ensure(dof > 2, || {
        format!("t noise with dof = {dof} has infinite variance; need dof > 2")
    })?;
    let k = dof as f64;
    Ok(k / (k - 2.0))
}

impl RiskOracle {
    pub fn analytic(model: &ModelSpec) -> Result<Self> {
        model.validate()?;
        let d = model.dim();
        let v = truncated_normal_variance(model.trunc);
        let mut m = DMatrix::from_diagonal_element(d, d, v);
        m[(0, 0)] = 1.0;
        Self::assemble(model, m)
    }

    pub fn monte_carlo<R: Rng + ?Sized>(
        model: &ModelSpec,
        samples: usize,
        rng: &mut R,
    ) -> Result<Self> {
        model.validate()?;
        ensure(samples >= MIN_ORACLE_SAMPLES, || {
            format!("Monte-Carlo oracle needs at least {MIN_ORACLE_SAMPLES} design draws, got {samples}")
        })?;
        let d = model.dim();
        let mut m = DMatrix::zeros(d, d);
        for _ in 0..samples {
            let x = model.draw_features(rng);
            for i in 0..d {
                for j in i..d {
                    m[(i, j)] += x[i] * x[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                m[(i, j)] /= samples as f64;
                m[(j, i)] = m[(i, j)];
            }
        }
        Self::assemble(model, m)
    }

    fn assemble(model: &ModelSpec, second_moment: DMatrix<f64>) -> Result<Self> {
        let gamma_star = optimal_risk(model.dof)?;
        let min_eigenvalue = min_eigenvalue(&second_moment);
        ensure(min_eigenvalue > 0.0, || {
            "design second-moment matrix is not positive definite".into()
        })?;
        Ok(RiskOracle {
            gamma_star,
            second_moment,
            min_eigenvalue,
            model: model.clone(),
        })
    }

    fn offset(&self, u: &[f64]) -> Result<Vec<f64>> {
        let d = self.model.dim();
        ensure(u.len() == d, || {
            format!("risk: dimension mismatch (expected {d}, got {})", u.len())
        })?;
        Ok(u.iter()
            .zip(self.model.u0.coeffs())
            .map(|(a, b)| a - b)
            .collect())
    }

    /// `(u - u0)ᵀ M (u - u0)`, the risk above `γ*`.
    pub fn excess(&self, u: &[f64]) -> Result<f64> {
        let delta = self.offset(u)?;
        Ok(quad_form(&self.second_moment, &delta).max(0.0))
    }

    pub fn risk(&self, u: &[f64]) -> Result<f64> {
        Ok(self.gamma_star + self.excess(u)?)
    }
}

pub fn build_oracle(model: &ModelSpec, mode: OracleMode, seed: u64) -> Result<RiskOracle> {
    match mode {
        OracleMode::Analytic => RiskOracle::analytic(model),
        OracleMode::MonteCarlo { samples } => {
            let mut rng = crate::rng::substream(seed, &[crate::rng::tag::ORACLE]);
            RiskOracle::monte_carlo(model, samples, &mut rng)
        }
    }
}

/// Squared-loss risk `γ* + (u - u0)ᵀ M (u - u0)`.
pub fn true_risk(oracle: &RiskOracle, u: &Hypothesis) -> Result<f64> {
    oracle.risk(u.coeffs())
}

/// `true_risk(u) - γ*`, computed directly from the quadratic form.
pub fn excess_risk(oracle: &RiskOracle, u: &Hypothesis) -> Result<f64> {
    oracle.excess(u.coeffs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub estimate: f64,
    pub stderr: f64,
}

/// Mean squared loss of `u` over `m` fresh draws from `model`.
///
/// At `dof = 5` the squared loss has only just enough moments for a finite
/// variance, so the reported standard error is itself noisy.
pub fn mc_risk<R: Rng + ?Sized>(
    model: &ModelSpec,
    u: &Hypothesis,
    m: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    model.validate()?;
    ensure(m >= MIN_RISK_SAMPLES, || {
        format!("mc_risk needs at least {MIN_RISK_SAMPLES} draws, got {m}")
    })?;
    ensure(model.dof >= 5, || {
        format!(
            "mc_risk needs dof >= 5 for a finite loss variance, got {}",
            model.dof
        )
    })?;
    ensure(u.dim() == model.dim(), || {
        "mc_risk: dimension mismatch".into()
    })?;
    let u0 = model.u0.coeffs();
    // Welford accumulation.
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..m {
        let x = model.draw_features(rng);
        let y = dot(&x, u0) + model.draw_noise(rng);
        let r = y - dot(&x, u.coeffs());
        let l = r * r;
        let delta = l - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (l - mean);
    }
    let var = m2 / (m - 1) as f64;
    Ok(MonteCarloEstimate {
        estimate: mean,
        stderr: (var / m as f64).sqrt(),
    })
}

/// Ordinary least squares `G⁻¹ b`.
pub fn erm_fit(data: &Dataset) -> Result<Hypothesis> {
    let stats = GramStatistics::from_dataset(data)?;
    erm_from_statistics(&stats)
}

pub fn erm_from_statistics(stats: &GramStatistics) -> Result<Hypothesis> {
    let singular = || Error::SingularDesign {
        n: stats.n,
        d: stats.dim(),
    };
    if stats.n < stats.dim() {
        return Err(singular());
    }
    let sol: DVector<f64> = spd_solve(&stats.gram, &stats.moment).ok_or_else(singular)?;
    Hypothesis::new(sol.iter().copied().collect()).map_err(|_| singular())
}
