//! Hypotheses, priors, losses and the unnormalized generalized posterior.
//!
//! A hypothesis is a finite coefficient vector `u` (intercept first). The
//! generalized posterior replaces the likelihood with `exp(-eta * Σ loss)`:
//!
//! ```text
//! log p(u | data) = log prior(u) - eta * Σ_i loss(z_i, u) + const
//! ```
//!
//! Support violations are `-inf` rather than errors so that samplers can use
//! them as automatic rejections.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{ensure, Error, Result};
use crate::linalg::{dot, norm};

/// A coefficient vector; the first entry multiplies the intercept feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Hypothesis(Vec<f64>);

impl Hypothesis {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        ensure(!coeffs.is_empty(), || {
            "hypothesis must have d >= 1 coefficients".into()
        })?;
        ensure(coeffs.iter().all(|c| c.is_finite()), || {
            format!("hypothesis coefficients must be finite, got {coeffs:?}")
        })?;
        Ok(Hypothesis(coeffs))
    }

    pub fn zeros(d: usize) -> Self {
        assert!(d >= 1, "hypothesis dimension must be positive");
        Hypothesis(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Hypothesis {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Hypothesis::new(v)
    }
}

impl From<Hypothesis> for Vec<f64> {
    fn from(h: Hypothesis) -> Self {
        h.0
    }
}

impl AsRef<[f64]> for Hypothesis {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// One observation `z = (x, y)`; `x[0]` is the intercept feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Sample {
    /// `x·u - y`. All built-in losses are functions of this residual.
    #[inline]
    pub fn residual(&self, u: &[f64]) -> f64 {
        dot(&self.x, u) - self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    UniformBall,
    TruncatedGaussian,
}

/// Prior supported on the closed ball `B(center, radius)`.
///
/// Both kinds put mass at least `c·ε^d` on every ε-ball around an interior
/// point, which dominates `C1·exp(-C2·ε^{-κ})` as ε → 0 for every κ > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub kind: PriorKind,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Standard deviation of the truncated Gaussian; ignored for the ball.
    pub scale: f64,
}

pub const DEFAULT_PRIOR_RADIUS: f64 = 10.0;

impl PriorSpec {
    pub fn uniform_ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let p = PriorSpec {
            kind: PriorKind::UniformBall,
            center,
            radius,
            scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn truncated_gaussian(center: Vec<f64>, radius: f64, scale: f64) -> Result<Self> {
        let p = PriorSpec {
            kind: PriorKind::TruncatedGaussian,
            center,
            radius,
            scale,
        };
        p.validate()?;
        Ok(p)
    }

    /// Uniform prior on the radius-10 ball centred at the origin of ℝ^d.
    pub fn default_ball(d: usize) -> Self {
        PriorSpec {
            kind: PriorKind::UniformBall,
            center: vec![0.0; d],
            radius: DEFAULT_PRIOR_RADIUS,
            scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.center.is_empty(), || {
            "prior center must be non-empty".into()
        })?;
        ensure(self.center.iter().all(|c| c.is_finite()), || {
            "prior center must be finite".into()
        })?;
        ensure(self.radius.is_finite() && self.radius > 0.0, || {
            format!(
                "prior radius must be finite and positive, got {}",
                self.radius
            )
        })?;
        ensure(self.scale.is_finite() && self.scale > 0.0, || {
            format!(
                "prior scale must be finite and positive, got {}",
                self.scale
            )
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn distance_from_center(&self, u: &[f64]) -> f64 {
        self.center
            .iter()
            .zip(u)
            .map(|(c, v)| (v - c) * (v - c))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        self.distance_from_center(u) <= self.radius
    }

    /// Pulls `u` towards the center onto the sphere of radius `0.99·radius`
    /// when it lies outside that sphere; points already inside are returned
    /// unchanged.
    pub fn shrink_into(&self, u: &[f64]) -> Vec<f64> {
        let dist = self.distance_from_center(u);
        let limit = 0.99 * self.radius;
        if dist <= limit {
            return u.to_vec();
        }
        let f = limit / dist;
        self.center
            .iter()
            .zip(u)
            .map(|(c, v)| c + f * (v - c))
            .collect()
    }

    /// Draws from the prior (rejection from the enclosing Gaussian for the
    /// truncated kind, exact polar construction for the ball).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        match self.kind {
            PriorKind::UniformBall => {
                let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let len = norm(&dir);
                let r = self.radius * rng.random::<f64>().powf(1.0 / d as f64);
                self.center
                    .iter()
                    .zip(&dir)
                    .map(|(c, z)| c + r * z / len)
                    .collect()
            }
            PriorKind::TruncatedGaussian => loop {
                let u: Vec<f64> = self
                    .center
                    .iter()
                    .map(|c| c + self.scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if self.contains(&u) {
                    break u;
                }
            },
        }
    }
}

/// Log prior density up to an additive constant; `-inf` outside the ball.
/// The uniform ball's constant is 0.
pub fn log_prior(prior: &PriorSpec, u: &Hypothesis) -> f64 {
    log_prior_slice(prior, u.coeffs())
}

#[inline]
pub(crate) fn log_prior_slice(prior: &PriorSpec, u: &[f64]) -> f64 {
    let dist = prior.distance_from_center(u);
    if dist.is_nan() || dist > prior.radius {
        return f64::NEG_INFINITY;
    }
    match prior.kind {
        PriorKind::UniformBall => 0.0,
        PriorKind::TruncatedGaussian => -0.5 * dist * dist / (prior.scale * prior.scale),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `(y - x·u)² / 2`, the Gaussian-likelihood loss.
    SquaredHalf,
    /// `(y - x·u)²`, the risk-evaluation loss.
    Squared,
    /// `c1·|x·u - y|^c2`.
    AbsPower,
}

/// Per-sample loss plus the tempering factor applied to the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "two")]
    pub c2: f64,
    #[serde(default = "one")]
    pub eta: f64,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

impl LossSpec {
    pub fn squared_half() -> Self {
        LossSpec {
            kind: LossKind::SquaredHalf,
            c1: 1.0,
            c2: 2.0,
            eta: 1.0,
        }
    }

    pub fn squared() -> Self {
        LossSpec {
            kind: LossKind::Squared,
            c1: 1.0,
            c2: 2.0,
            eta: 1.0,
        }
    }

    pub fn abs_power(c1: f64, c2: f64) -> Result<Self> {
        let s = LossSpec {
            kind: LossKind::AbsPower,
            c1,
            c2,
            eta: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.eta.is_finite() && self.eta > 0.0, || {
            format!(
                "tempering factor eta must be finite and positive, got {}",
                self.eta
            )
        })?;
        if self.kind == LossKind::AbsPower {
            ensure(self.c1.is_finite() && self.c1 > 0.0, || {
                format!("abs-power c1 must be positive, got {}", self.c1)
            })?;
            ensure(self.c2.is_finite() && self.c2 > 0.0, || {
                format!("abs-power c2 must be positive, got {}", self.c2)
            })?;
        }
        Ok(())
    }

    /// True for the two kinds whose total loss is a quadratic form in `u`.
    pub fn is_quadratic(&self) -> bool {
        matches!(self.kind, LossKind::Squared | LossKind::SquaredHalf)
    }

    /// Loss as a function of the residual `x·u - y`.
    #[inline]
    pub fn of_residual(&self, r: f64) -> f64 {
        match self.kind {
            LossKind::SquaredHalf => 0.5 * r * r,
            LossKind::Squared => r * r,
            LossKind::AbsPower => self.c1 * r.abs().powf(self.c2),
        }
    }
}

fn check_dims(what: &str, expected: usize, got: usize) -> Result<()> {
    ensure(expected == got, || {
        format!("{what}: dimension mismatch (expected {expected}, got {got})")
    })
}

pub fn loss(spec: &LossSpec, z: &Sample, u: &Hypothesis) -> Result<f64> {
    check_dims("loss", z.x.len(), u.dim())?;
    Ok(spec.of_residual(z.residual(u.coeffs())))
}

/// Mean per-sample loss; `eta` is not applied.
pub fn empirical_loss(spec: &LossSpec, data: &Dataset, u: &Hypothesis) -> Result<f64> {
    ensure(!data.is_empty(), || {
        "empirical loss of an empty dataset".into()
    })?;
    check_dims("empirical_loss", data.dim(), u.dim())?;
    Ok(total_loss(spec, data, u.coeffs()) / data.len() as f64)
}

fn total_loss(spec: &LossSpec, data: &Dataset, u: &[f64]) -> f64 {
    data.samples()
        .iter()
        .map(|z| spec.of_residual(z.residual(u)))
        .sum()
}

/// `log_prior(u) - eta·Σ loss(z_i, u)`, evaluated by direct summation.
pub fn log_posterior_unnorm(
    loss: &LossSpec,
    prior: &PriorSpec,
    data: &Dataset,
    u: &Hypothesis,
) -> Result<f64> {
    check_dims("log_posterior_unnorm", data.dim(), u.dim())?;
    check_dims("log_posterior_unnorm (prior)", prior.dim(), u.dim())?;
    let lp = log_prior(prior, u);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp - loss.eta * total_loss(loss, data, u.coeffs()))
}

/// Sufficient statistics of a dataset for squared losses:
/// `G = Σ x xᵀ`, `b = Σ y x`, `s = Σ y²`, so that
/// `Σ (y - x·u)² = uᵀGu - 2uᵀb + s`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramStatistics {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    pub sum_sq: f64,
    pub n: usize,
}

impl GramStatistics {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        ensure(!data.is_empty(), || {
            "gram statistics of an empty dataset".into()
        })?;
        let d = data.dim();
        let mut gram = DMatrix::zeros(d, d);
        let mut moment = DVector::zeros(d);
        let mut sum_sq = 0.0;
        for z in data.samples() {
            for i in 0..d {
                moment[i] += z.y * z.x[i];
                for j in i..d {
                    gram[(i, j)] += z.x[i] * z.x[j];
                }
            }
            sum_sq += z.y * z.y;
        }
        for i in 0..d {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        Ok(GramStatistics {
            gram,
            moment,
            sum_sq,
            n: data.len(),
        })
    }

    pub fn dim(&self) -> usize {
        self.moment.len()
    }

    /// `Σ (y_i - x_i·u)²` in O(d²).
    #[inline]
    pub fn sum_squared_residuals(&self, u: &[f64]) -> f64 {
        let d = u.len();
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..d {
            let row: f64 = u
                .iter()
                .enumerate()
                .map(|(j, &uj)| self.gram[(i, j)] * uj)
                .sum();
            quad += u[i] * row;
            lin += u[i] * self.moment[i];
        }
        // Rounding can push an exact fit slightly below zero.
        (quad - 2.0 * lin + self.sum_sq).max(0.0)
    }
}

pub fn gram_statistics(data: &Dataset) -> Result<GramStatistics> {
    GramStatistics::from_dataset(data)
}

/// The unnormalized generalized posterior of one dataset, ready for repeated
/// evaluation. Squared losses go through [`GramStatistics`]; other losses sum
/// over samples.
#[derive(Debug, Clone)]
pub struct GeneralizedPosterior<'a> {
    loss: LossSpec,
    prior: &'a PriorSpec,
    data: &'a Dataset,
    gram: Option<GramStatistics>,
}

impl<'a> GeneralizedPosterior<'a> {
    pub fn new(loss: LossSpec, prior: &'a PriorSpec, data: &'a Dataset) -> Result<Self> {
        loss.validate()?;
        prior.validate()?;
        ensure(!data.is_empty(), || "posterior of an empty dataset".into())?;
        check_dims("posterior prior", data.dim(), prior.dim())?;
        let gram = if loss.is_quadratic() {
            Some(GramStatistics::from_dataset(data)?)
        } else {
            None
        };
        Ok(GeneralizedPosterior {
            loss,
            prior,
            data,
            gram,
        })
    }

    /// Same as [`new`](Self::new) but always sums over samples.
    pub fn direct(loss: LossSpec, prior: &'a PriorSpec, data: &'a Dataset) -> Result<Self> {
        let mut p = Self::new(loss, prior, data)?;
        p.gram = None;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn prior(&self) -> &PriorSpec {
        self.prior
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn gram(&self) -> Option<&GramStatistics> {
        self.gram.as_ref()
    }

    /// `log prior(u) - eta·Σ loss(z_i, u)`. Panics if `u` has the wrong length.
    #[inline]
    pub fn log_density(&self, u: &[f64]) -> f64 {
        assert_eq!(
            u.len(),
            self.dim(),
            "posterior evaluated at a hypothesis of the wrong dimension"
        );
        let lp = log_prior_slice(self.prior, u);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let total = match (&self.gram, self.loss.kind) {
            (Some(g), LossKind::Squared) => g.sum_squared_residuals(u),
            (Some(g), LossKind::SquaredHalf) => 0.5 * g.sum_squared_residuals(u),
            _ => total_loss(&self.loss, self.data, u),
        };
        lp - self.loss.eta * total
    }
}
