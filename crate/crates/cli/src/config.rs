//! TOML run configuration.
//!
//! ```toml
//! [experiment]
//! master_seed = 20240601       # required
//! dofs = [5, 10, 20]
//! sample_sizes = [10, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120, 10240]
//! replicates = 100
//! estimators = ["erm", "bayes"]
//! risk_mode = "analytic"       # or "mc"
//! mc_risk_samples = 100000
//!
//! [model]
//! u0 = [1.0, 1.0, 1.0]
//! trunc = 1.0
//!
//! [prior]
//! kind = "uniform-ball"        # or "truncated-gaussian"
//! radius = 10.0
//!
//! [posterior]
//! loss = "squared-half"        # "squared" or "abs-power"
//! eta = 1.0
//!
//! [chain]
//! burn_in = 20000
//! iterations = 100000
//! proposal_scale = "auto"
//! thin = 1
//!
//! [diagnostics]
//! dofs = [10, 20]
//! ```
//!
//! Every key except `experiment.master_seed` has a default. Unknown keys are
//! rejected.

use std::path::Path;

use genbayes::analysis::experiment::{
    Estimator, ExperimentConfig, RiskMode, DEFAULT_DOFS, DEFAULT_REPLICATES, DEFAULT_SAMPLE_SIZES,
};
use genbayes::hypothesis::{
    Hypothesis, LossKind, LossSpec, PriorKind, PriorSpec, DEFAULT_PRIOR_RADIUS,
};
use genbayes::mcmc::{ChainConfig, ProposalScale};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub prior: PriorSection,
    pub posterior: PosteriorSection,
    pub chain: ChainSection,
    pub diagnostics: DiagnosticsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub dofs: Vec<u32>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    pub risk_mode: RiskMode,
    pub mc_risk_samples: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            master_seed: None,
            dofs: DEFAULT_DOFS.to_vec(),
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            replicates: DEFAULT_REPLICATES,
            estimators: vec![Estimator::Erm, Estimator::Bayes],
            risk_mode: RiskMode::Analytic,
            mc_risk_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub u0: Vec<f64>,
    pub trunc: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            u0: vec![1.0, 1.0, 1.0],
            trunc: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorKind,
    /// Defaults to the origin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
    /// Standard deviation of the truncated Gaussian; ignored for the ball.
    pub scale: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        PriorSection {
            kind: PriorKind::UniformBall,
            center: None,
            radius: DEFAULT_PRIOR_RADIUS,
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorSection {
    pub loss: LossKind,
    pub eta: f64,
    /// Coefficient and exponent of the `abs-power` loss.
    pub c1: f64,
    pub c2: f64,
}

impl Default for PosteriorSection {
    fn default() -> Self {
        PosteriorSection {
            loss: LossKind::SquaredHalf,
            eta: 1.0,
            c1: 1.0,
            c2: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub burn_in: usize,
    pub iterations: usize,
    pub proposal_scale: ProposalScale,
    pub thin: usize,
}

impl Default for ChainSection {
    fn default() -> Self {
        let c = ChainConfig::default();
        ChainSection {
            burn_in: c.burn_in,
            iterations: c.iterations,
            proposal_scale: c.proposal_scale,
            thin: c.thin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Degrees of freedom probed by `bernstein` and `envelope`.
    pub dofs: Vec<u32>,
    pub bernstein_samples: usize,
    /// Moment order r of the envelope probe.
    pub envelope_order: f64,
    pub envelope_samples: usize,
    /// Concentration threshold `γ* + eps_scale·n^{-beta}`.
    pub beta: f64,
    pub eps_scale: f64,
    /// Linear-regression bound inputs.
    pub bound_dim: usize,
    pub bound_dof: u32,
    pub kappa: f64,
    /// Multiscale bound inputs; default to `bound_dim` and `bound_dof`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_constant: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moment_order: Option<f64>,
    pub alphas: Vec<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            dofs: vec![10, 20],
            bernstein_samples: 1_000_000,
            envelope_order: 4.0,
            envelope_samples: 1_000_000,
            beta: 0.5,
            eps_scale: 5.0,
            bound_dim: 3,
            bound_dof: 20,
            kappa: 0.1,
            entropy_constant: None,
            moment_order: None,
            alphas: vec![1.0],
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Loads `path`, or the built-in defaults when no file is given. A file
    /// must set `master_seed`; without a file `--seed` is required.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        Self::resolve_with(path, overrides, true)
    }

    /// Like [`FileConfig::resolve`]; with `require_seed` false a missing seed
    /// becomes 0, for commands that draw no random numbers.
    pub fn resolve_with(
        path: Option<&Path>,
        overrides: &Overrides,
        require_seed: bool,
    ) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = overrides.seed {
            cfg.experiment.master_seed = Some(s);
        }
        if cfg.experiment.master_seed.is_none() {
            if require_seed {
                return Err(CliError::Config(match path {
                    Some(p) => format!("{}: missing required key `master_seed` in [experiment]", p.display()),
                    None => "missing required key `master_seed`: pass --config with [experiment] master_seed, or --seed"
                        .into(),
                }));
            }
            cfg.experiment.master_seed = Some(0);
        }
        if cfg.master_seed() > i64::MAX as u64 {
            return Err(CliError::Config(format!(
                "master_seed must be at most {}",
                i64::MAX
            )));
        }
        if let Some(r) = overrides.replicates {
            cfg.experiment.replicates = r;
        }
        cfg.fill_defaults();
        Ok(cfg)
    }

    /// Makes every defaulted optional explicit, so a serialized snapshot is
    /// self-contained.
    fn fill_defaults(&mut self) {
        let d = self.model.u0.len();
        self.prior.center.get_or_insert_with(|| vec![0.0; d]);
        let dims = self.diagnostics.bound_dim as f64;
        let dof = self.diagnostics.bound_dof as f64;
        self.diagnostics.entropy_constant.get_or_insert(dims);
        self.diagnostics.moment_order.get_or_insert(dof);
    }

    pub fn master_seed(&self) -> u64 {
        self.experiment
            .master_seed
            .expect("resolved configuration has a seed")
    }

    pub fn prior_spec(&self) -> Result<PriorSpec, CliError> {
        let center = self
            .prior
            .center
            .clone()
            .unwrap_or_else(|| vec![0.0; self.model.u0.len()]);
        let spec = match self.prior.kind {
            PriorKind::UniformBall => PriorSpec::uniform_ball(center, self.prior.radius),
            PriorKind::TruncatedGaussian => {
                PriorSpec::truncated_gaussian(center, self.prior.radius, self.prior.scale)
            }
        };
        spec.map_err(|e| CliError::Config(format!("[prior]: {e}")))
    }

    pub fn loss_spec(&self) -> Result<LossSpec, CliError> {
        let p = &self.posterior;
        let base = match p.loss {
            LossKind::SquaredHalf => Ok(LossSpec::squared_half()),
            LossKind::Squared => Ok(LossSpec::squared()),
            LossKind::AbsPower => LossSpec::abs_power(p.c1, p.c2),
        };
        base.and_then(|l| l.with_eta(p.eta))
            .map_err(|e| CliError::Config(format!("[posterior]: {e}")))
    }

    pub fn experiment_config(&self) -> Result<ExperimentConfig, CliError> {
        let e = &self.experiment;
        let u0 = Hypothesis::new(self.model.u0.clone())
            .map_err(|err| CliError::Config(format!("[model] u0: {err}")))?;
        let chain = ChainConfig {
            burn_in: self.chain.burn_in,
            iterations: self.chain.iterations,
            proposal_scale: self.chain.proposal_scale,
            thin: self.chain.thin,
            seed: 0,
        };
        let config = ExperimentConfig {
            dofs: e.dofs.clone(),
            sample_sizes: e.sample_sizes.clone(),
            replicates: e.replicates,
            chain,
            master_seed: self.master_seed(),
            estimators: e.estimators.clone(),
            risk_mode: e.risk_mode,
            mc_risk_samples: e.mc_risk_samples,
            u0,
            trunc: self.model.trunc,
            prior: self.prior_spec()?,
            posterior_loss: self.loss_spec()?,
        };
        config
            .validate()
            .map_err(|err| CliError::Config(format!("invalid configuration: {err}")))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }
}
