//! Synthetic datasets from the heavy-tailed linear model
//!
//! ```text
//! y = x·u0 + ε,   x = [1, X1, ..., X_{d-1}],   X_j ~ N(0,1) truncated to [-a, a],   ε ~ t_k
//! ```
//!
//! Features and noise come from two independent streams derived from the
//! dataset seed, so reflecting the noise (`ε → -ε`) keeps the design fixed.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::hypothesis::{Hypothesis, Sample};
use crate::linalg::dot;
use crate::rng::{substream, tag};

/// Degrees of freedom up to which χ² draws are sums of squared normals.
const CHI_SQUARE_DIRECT_MAX: u32 = 64;

/// Rejection from the full normal is used for truncation values at or above
/// this; below it a uniform envelope accepts more often.
const NORMAL_ENVELOPE_MIN_TRUNC: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// True coefficients, intercept first. `d = u0.dim()`.
    pub u0: Hypothesis,
    /// Student-t degrees of freedom, at least 3.
    pub dof: u32,
    /// Symmetric feature truncation value `a`.
    pub trunc: f64,
}

impl ModelSpec {
    pub fn new(u0: Hypothesis, dof: u32, trunc: f64) -> Result<Self> {
        let m = ModelSpec { u0, dof, trunc };
        m.validate()?;
        Ok(m)
    }

    /// `u0 = [1, 1, 1]`, features truncated to `[-1, 1]`. Panics for `dof < 3`.
    pub fn standard(dof: u32) -> Self {
        ModelSpec::new(Hypothesis::new(vec![1.0, 1.0, 1.0]).unwrap(), dof, 1.0)
            .expect("the default model needs dof >= 3")
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.dof >= 3, || {
            format!(
                "t noise needs dof >= 3 for a finite variance, got {}",
                self.dof
            )
        })?;
        ensure(self.trunc.is_finite() && self.trunc > 0.0, || {
            format!(
                "feature truncation must be finite and positive, got {}",
                self.trunc
            )
        })
    }

    pub fn dim(&self) -> usize {
        self.u0.dim()
    }

    /// Upper bound on ‖x‖₂ over the design.
    pub fn feature_bound(&self) -> f64 {
        (1.0 + (self.dim() - 1) as f64 * self.trunc * self.trunc).sqrt()
    }

    pub fn with_dof(&self, dof: u32) -> Result<Self> {
        ModelSpec::new(self.u0.clone(), dof, self.trunc)
    }

    pub fn draw_features<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        x.push(1.0);
        for _ in 1..self.dim() {
            x.push(sample_truncated_normal(rng, self.trunc));
        }
        x
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_student_t(rng, self.dof)
    }

    pub fn noise_variance(&self) -> f64 {
        let k = self.dof as f64;
        k / (k - 2.0)
    }
}

/// One draw of N(0,1) conditioned on `[-a, a]`, by rejection. Panics unless
/// `a > 0`.
pub fn sample_truncated_normal<R: Rng + ?Sized>(rng: &mut R, a: f64) -> f64 {
    assert!(a > 0.0, "truncation value must be positive");
    if a >= NORMAL_ENVELOPE_MIN_TRUNC {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z.abs() <= a {
                return z;
            }
        }
    } else {
        loop {
            let z = a * (2.0 * rng.random::<f64>() - 1.0);
            if rng.random::<f64>() <= (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
}

/// χ²_k: sum of `k` squared normals for small `k`, Gamma(k/2, 2) above.
pub fn sample_chi_square<R: Rng + ?Sized>(rng: &mut R, k: u32) -> f64 {
    assert!(k >= 1, "chi-square needs at least one degree of freedom");
    if k <= CHI_SQUARE_DIRECT_MAX {
        (0..k)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * z
            })
            .sum()
    } else {
        Gamma::new(k as f64 / 2.0, 2.0)
            .expect("valid gamma parameters")
            .sample(rng)
    }
}

/// Student-t with `k` degrees of freedom as `N / sqrt(χ²_k / k)`.
pub fn sample_student_t<R: Rng + ?Sized>(rng: &mut R, k: u32) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    let v = sample_chi_square(rng, k);
    z / (v / k as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    seed: u64,
    model: ModelSpec,
}

impl Dataset {
    /// Wraps externally built samples. Only dimensions and finiteness are
    /// checked; the synthetic-design bounds are not enforced.
    pub fn from_samples(model: ModelSpec, seed: u64, samples: Vec<Sample>) -> Result<Self> {
        let d = model.dim();
        for (i, z) in samples.iter().enumerate() {
            ensure(z.x.len() == d, || {
                format!("sample {i} has {} features, expected {d}", z.x.len())
            })?;
            ensure(z.y.is_finite() && z.x.iter().all(|v| v.is_finite()), || {
                format!("sample {i} is not finite")
            })?;
        }
        Ok(Dataset {
            samples,
            seed,
            model,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Residuals `y - x·u0` against the generating coefficients.
    pub fn noise(&self) -> impl Iterator<Item = f64> + '_ {
        let u0 = self.model.u0.coeffs();
        self.samples.iter().map(move |z| z.y - dot(&z.x, u0))
    }

    /// The dataset obtained by negating every noise draw.
    pub fn reflect_noise(&self) -> Dataset {
        let u0 = self.model.u0.coeffs();
        let samples = self
            .samples
            .iter()
            .map(|z| Sample {
                x: z.x.clone(),
                y: 2.0 * dot(&z.x, u0) - z.y,
            })
            .collect();
        Dataset {
            samples,
            seed: self.seed,
            model: self.model.clone(),
        }
    }

    /// CSV with header `x1,...,x{d-1},y`; the intercept column is implicit.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..self.dim()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for z in &self.samples {
            let mut row: Vec<String> = z.x[1..].iter().map(|v| v.to_string()).collect();
            row.push(z.y.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` samples from `model`; a pure function of `(model, n, seed)`.
pub fn generate_dataset(model: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    model.validate()?;
    ensure(n >= 1, || "dataset size n must be at least 1".into())?;
    let mut features = substream(seed, &[tag::FEATURES]);
    let mut noise = substream(seed, &[tag::NOISE]);
    let u0 = model.u0.coeffs();
    let samples = (0..n)
        .map(|_| {
            let x = model.draw_features(&mut features);
            let y = dot(&x, u0) + model.draw_noise(&mut noise);
            Sample { x, y }
        })
        .collect();
    Ok(Dataset {
        samples,
        seed,
        model: model.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    /// ∫_{-a}^{a} x² φ(x) dx / ∫_{-a}^{a} φ(x) dx by composite Simpson.
    fn truncated_normal_variance_quadrature(a: f64) -> f64 {
        let phi = |x: f64| (-0.5 * x * x).exp();
        let n = 20_000;
        let h = 2.0 * a / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let x = -a + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            num += w * x * x * phi(x);
            den += w * phi(x);
        }
        num / den
    }

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (mean, m2, m4 / (m2 * m2) - 3.0)
    }

    #[test]
    fn truncated_normal_quadrature_oracle() {
        let v = truncated_normal_variance_quadrature(1.0);
        assert!((v - 0.2912).abs() < 1e-4, "{v}");
    }

    #[test]
    fn truncated_normal_support_and_moments() {
        let mut rng = stream(1);
        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_truncated_normal(&mut rng, 1.0))
            .collect();
        assert!(draws.iter().all(|x| x.abs() <= 1.0));
        let (mean, var, _) = moments(&draws);
        assert!(mean.abs() < 0.002, "{mean}");
        let oracle = truncated_normal_variance_quadrature(1.0);
        assert!((var - oracle).abs() < 0.003, "{var} vs {oracle}");
    }

    #[test]
    fn narrow_truncation_uses_uniform_envelope() {
        let mut rng = stream(2);
        let a = 0.3;
        let draws: Vec<f64> = (0..400_000)
            .map(|_| sample_truncated_normal(&mut rng, a))
            .collect();
        assert!(draws.iter().all(|x| x.abs() <= a));
        let (_, var, _) = moments(&draws);
        let oracle = truncated_normal_variance_quadrature(a);
        assert!((var - oracle).abs() < 0.01 * oracle, "{var} vs {oracle}");
    }

    #[test]
    fn student_t_moments() {
        let mut rng = stream(3);
        let mut draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_student_t(&mut rng, 5))
            .collect();
        let (_, var, _) = moments(&draws);
        assert!((var - 5.0 / 3.0).abs() < 0.05, "{var}");
        draws.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (draws[499_999] + draws[500_000]);
        assert!(median.abs() < 0.005, "{median}");

        let draws: Vec<f64> = (0..1_000_000)
            .map(|_| sample_student_t(&mut rng, 20))
            .collect();
        let (_, _, kurt) = moments(&draws);
        assert!((kurt - 6.0 / 16.0).abs() < 0.05, "{kurt}");
    }

    #[test]
    fn chi_square_gamma_branch_mean_and_variance() {
        let mut rng = stream(4);
        let k = 100;
        let draws: Vec<f64> = (0..200_000)
            .map(|_| sample_chi_square(&mut rng, k))
            .collect();
        let (mean, var, _) = moments(&draws);
        assert!((mean - 100.0).abs() < 0.2, "{mean}");
        assert!((var - 200.0).abs() < 4.0, "{var}");
    }

    #[test]
    fn zero_size_dataset_is_rejected() {
        assert!(generate_dataset(&ModelSpec::standard(10), 0, 1).is_err());
    }

    #[test]
    fn model_rejects_small_dof_and_bad_truncation() {
        let u0 = Hypothesis::new(vec![1.0, 1.0, 1.0]).unwrap();
        assert!(ModelSpec::new(u0.clone(), 2, 1.0).is_err());
        assert!(ModelSpec::new(u0, 5, 0.0).is_err());
    }

    #[test]
    fn same_seed_same_dataset() {
        let m = ModelSpec::standard(5);
        let a = generate_dataset(&m, 200, 42).unwrap();
        let b = generate_dataset(&m, 200, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&m, 200, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn features_bounded_and_intercept_fixed() {
        let m = ModelSpec::standard(5);
        let data = generate_dataset(&m, 5000, 7).unwrap();
        let bound = m.feature_bound();
        for z in data.samples() {
            assert_eq!(z.x[0], 1.0);
            assert!(z.x[1..].iter().all(|v| v.abs() <= 1.0));
            assert!(crate::linalg::norm(&z.x) <= bound);
        }
    }

    #[test]
    fn residuals_pass_ks_against_t_cdf() {
        for k in [5u32, 10, 20] {
            let data = generate_dataset(&ModelSpec::standard(k), 100_000, 1000 + k as u64).unwrap();
            let mut res: Vec<f64> = data.noise().collect();
            res.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let t = StudentsT::new(0.0, 1.0, k as f64).unwrap();
            let n = res.len() as f64;
            let stat = res
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let f = t.cdf(r);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            // Asymptotic KS critical value at level 0.01.
            let crit = 1.628 / n.sqrt();
            assert!(stat < crit, "k={k}: D={stat} >= {crit}");
        }
    }

    #[test]
    fn noise_reflection_negates_residuals() {
        let data = generate_dataset(&ModelSpec::standard(10), 100, 5).unwrap();
        let flipped = data.reflect_noise();
        for (a, b) in data.noise().zip(flipped.noise()) {
            assert!((a + b).abs() < 1e-12);
        }
        for (a, b) in data.samples().iter().zip(flipped.samples()) {
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn csv_dump_has_implicit_intercept() {
        let data = Dataset::from_samples(
            ModelSpec::standard(5),
            0,
            vec![Sample {
                x: vec![1.0, 0.25, -0.5],
                y: 1.5,
            }],
        )
        .unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,y\n0.25,-0.5,1.5\n");
    }
}
