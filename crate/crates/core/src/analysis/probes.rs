//! Monte-Carlo probes of the regularity conditions behind the rate results:
//! the Bernstein relation between loss variance and excess risk, and the
//! moments of the loss envelope over the prior ball.

use rand::Rng;
use serde::Serialize;

use super::fit::{fit_line, RateFit};
use crate::data::ModelSpec;
use crate::error::{ensure, Result};
use crate::hypothesis::{Hypothesis, PriorSpec};
use crate::linalg::{dot, norm};
use crate::risk::RiskOracle;

pub const MIN_BERNSTEIN_SAMPLES: usize = 100_000;

/// Ray lengths of the Bernstein grid.
pub const BERNSTEIN_RADII: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];
pub const BERNSTEIN_DIRECTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayPoint {
    pub direction: usize,
    pub radius: f64,
    pub u: Hypothesis,
}

/// `u0 + t·w` for 8 fixed unit directions `w` and the radii in
/// [`BERNSTEIN_RADII`]. Direction `j` has signs from the bits of `j`, so in
/// three dimensions the directions are the cube diagonals.
pub fn bernstein_grid(model: &ModelSpec) -> Vec<RayPoint> {
    let d = model.dim();
    let u0 = model.u0.coeffs();
    let mut out = Vec::with_capacity(BERNSTEIN_DIRECTIONS * BERNSTEIN_RADII.len());
    for j in 0..BERNSTEIN_DIRECTIONS {
        let w: Vec<f64> = (0..d)
            .map(|i| if (j >> (i % 3)) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        let len = norm(&w);
        for &t in &BERNSTEIN_RADII {
            let u = u0.iter().zip(&w).map(|(a, wi)| a + t * wi / len).collect();
            out.push(RayPoint {
                direction: j,
                radius: t,
                u: Hypothesis::new(u).expect("finite"),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BernsteinPoint {
    /// Analytic `R(u) - γ*`.
    pub excess: f64,
    /// Monte-Carlo `E[(ℓ(Z,u) - ℓ(Z,u0))²]` under the squared loss.
    pub second_moment: f64,
}

/// Pairs each hypothesis's excess risk with the second moment of its loss
/// difference to `u0`. All hypotheses share the same `m` draws.
pub fn bernstein_probe<R: Rng + ?Sized>(
    model: &ModelSpec,
    grid: &[Hypothesis],
    m: usize,
    rng: &mut R,
) -> Result<Vec<BernsteinPoint>> {
    model.validate()?;
    ensure(m >= MIN_BERNSTEIN_SAMPLES, || {
        format!("bernstein probe needs at least {MIN_BERNSTEIN_SAMPLES} draws, got {m}")
    })?;
    ensure(model.dof > 4, || {
        format!(
            "bernstein probe needs dof > 4 for finite fourth noise moments, got {}",
            model.dof
        )
    })?;
    let d = model.dim();
    ensure(grid.iter().all(|u| u.dim() == d), || {
        "grid hypotheses must match the model dimension".into()
    })?;
    let oracle = RiskOracle::analytic(model)?;
    let offsets: Vec<Vec<f64>> = grid
        .iter()
        .map(|u| {
            u.coeffs()
                .iter()
                .zip(model.u0.coeffs())
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    let mut sums = vec![0.0; grid.len()];
    for _ in 0..m {
        let x = model.draw_features(rng);
        let eps = model.draw_noise(rng);
        for (s, delta) in sums.iter_mut().zip(&offsets) {
            // (ε - x·δ)² - ε² = x·δ (x·δ - 2ε)
            let xd = dot(&x, delta);
            let diff = xd * (xd - 2.0 * eps);
            *s += diff * diff;
        }
    }
    grid.iter()
        .zip(sums)
        .map(|(u, s)| {
            Ok(BernsteinPoint {
                excess: oracle.excess(u.coeffs())?,
                second_moment: s / m as f64,
            })
        })
        .collect()
}

/// Log-log slope of second moment against excess risk: the Bernstein
/// exponent α. Points at the optimum (zero excess) are skipped.
pub fn bernstein_exponent(points: &[BernsteinPoint]) -> Result<RateFit> {
    let logged: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.excess > 0.0 && p.second_moment > 0.0)
        .map(|p| (p.excess.ln(), p.second_moment.ln()))
        .collect();
    fit_line(&logged)
}

/// Largest observed ratio `second_moment / excess`, an estimate of the
/// Bernstein constant at α = 1.
pub fn bernstein_constant(points: &[BernsteinPoint]) -> f64 {
    points
        .iter()
        .filter(|p| p.excess > 0.0)
        .map(|p| p.second_moment / p.excess)
        .fold(0.0, f64::max)
}

/// Supremum of the squared loss at `(x, y)` over the prior ball:
/// `(|y - x·center| + radius·‖x‖)²`.
pub fn squared_loss_envelope(prior: &PriorSpec, x: &[f64], y: f64) -> f64 {
    let a = (y - dot(x, &prior.center)).abs() + prior.radius * norm(x);
    a * a
}

/// `(E[sup_u ℓ(Z,u)^r])^{1/r}` for the squared loss over the prior ball.
/// Requires `r < k`; the `r`-th envelope moment diverges otherwise.
pub fn envelope_probe<R: Rng + ?Sized>(
    model: &ModelSpec,
    prior: &PriorSpec,
    r: f64,
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    model.validate()?;
    prior.validate()?;
    ensure(r > 0.0 && r.is_finite(), || {
        format!("moment order r must be positive, got {r}")
    })?;
    ensure(r < model.dof as f64, || {
        format!(
            "envelope moment of order r = {r} diverges for t noise with k = {} degrees of freedom (need r < k)",
            model.dof
        )
    })?;
    ensure(m >= 1, || "envelope probe needs at least one draw".into())?;
    ensure(prior.dim() == model.dim(), || {
        "prior and model dimensions differ".into()
    })?;
    let u0 = model.u0.coeffs();
    let mut acc = 0.0;
    for _ in 0..m {
        let x = model.draw_features(rng);
        let y = dot(&x, u0) + model.draw_noise(rng);
        acc += squared_loss_envelope(prior, &x, y).powf(r);
    }
    Ok((acc / m as f64).powf(1.0 / r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn grid_shape() {
        let g = bernstein_grid(&ModelSpec::standard(10));
        assert_eq!(g.len(), 80);
        let u0 = [1.0, 1.0, 1.0];
        for p in &g {
            let dist =
                p.u.coeffs()
                    .iter()
                    .zip(u0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
            assert!((dist - p.radius).abs() < 1e-12);
        }
    }

    #[test]
    fn optimum_has_zero_excess_and_second_moment() {
        let model = ModelSpec::standard(10);
        let pts = bernstein_probe(
            &model,
            std::slice::from_ref(&model.u0),
            100_000,
            &mut stream(1),
        )
        .unwrap();
        assert_eq!(pts[0].excess, 0.0);
        assert_eq!(pts[0].second_moment, 0.0);
    }

    #[test]
    fn bernstein_preconditions() {
        let g = [ModelSpec::standard(10).u0];
        assert!(bernstein_probe(&ModelSpec::standard(10), &g, 10, &mut stream(1)).is_err());
        assert!(bernstein_probe(&ModelSpec::standard(4), &g, 100_000, &mut stream(1)).is_err());
    }

    #[test]
    fn exponent_near_one_and_constant_bounded() {
        let model = ModelSpec::standard(10);
        let grid: Vec<Hypothesis> = bernstein_grid(&model).into_iter().map(|p| p.u).collect();
        let pts = bernstein_probe(&model, &grid, 100_000, &mut stream(2)).unwrap();
        let fit = bernstein_exponent(&pts).unwrap();
        assert!((0.9..=1.1).contains(&fit.slope), "alpha = {}", fit.slope);
        // Leading term 4σ²·excess with σ² = 1.25, plus O(excess²).
        let b = bernstein_constant(&pts);
        assert!(b > 4.0 && b < 8.0, "B = {b}");
    }

    #[test]
    fn envelope_of_noiseless_sample() {
        let prior = PriorSpec::default_ball(3);
        let x = [1.0, 0.5, -0.5];
        let y = dot(&x, &prior.center);
        let expected = (10.0 * norm(&x)).powi(2);
        assert!((squared_loss_envelope(&prior, &x, y) - expected).abs() < 1e-9);
        // The supremum is attained on the boundary along ±x.
        let nx = norm(&x);
        let u: Vec<f64> = x.iter().map(|v| -10.0 * v / nx).collect();
        assert!(((y - dot(&x, &u)).powi(2) - expected).abs() < 1e-9);
    }

    #[test]
    fn envelope_stable_under_doubling() {
        let model = ModelSpec::standard(10);
        let prior = PriorSpec::default_ball(3);
        let a = envelope_probe(&model, &prior, 4.0, 200_000, &mut stream(3)).unwrap();
        let b = envelope_probe(&model, &prior, 4.0, 400_000, &mut stream(4)).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert!(((a - b) / b).abs() < 0.05, "{a} vs {b}");
    }

    #[test]
    fn envelope_rejects_divergent_order() {
        let model = ModelSpec::standard(10);
        let prior = PriorSpec::default_ball(3);
        let err = envelope_probe(&model, &prior, 10.0, 1000, &mut stream(5)).unwrap_err();
        assert!(err.to_string().contains("diverges"));
    }
}
