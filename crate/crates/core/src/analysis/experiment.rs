//! The convergence-rate experiment: for every (dof, n, replicate) cell,
//! simulate a dataset, fit least squares and the generalized Bayes
//! estimator, and record their risks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, Dataset, ModelSpec};
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::hypothesis::{GeneralizedPosterior, Hypothesis, LossKind, LossSpec, PriorSpec};
use crate::mcmc::{
    metropolis_run, posterior_mean, ChainConfig, ChainResult, Proposal, ProposalScale,
};
use crate::risk::{erm_fit, mc_risk, RiskOracle, MIN_RISK_SAMPLES};
use crate::rng::{derive_seed, substream, tag};

/// Regeneration attempts after the first singular design.
pub const SINGULAR_RETRIES: u64 = 3;

pub const DEFAULT_DOFS: [u32; 3] = [5, 10, 20];
pub const DEFAULT_SAMPLE_SIZES: [usize; 11] =
    [10, 20, 40, 80, 160, 320, 640, 1280, 2560, 5120, 10240];
pub const DEFAULT_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Erm,
    Bayes,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Erm => "erm",
            Estimator::Bayes => "bayes",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            Estimator::Erm => 1,
            Estimator::Bayes => 2,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erm" => Ok(Estimator::Erm),
            "bayes" => Ok(Estimator::Bayes),
            other => Err(Error::contract(format!(
                "unknown estimator {other:?} (expected erm or bayes)"
            ))),
        }
    }
}

/// How the `risk` column is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMode {
    /// Closed-form quadratic risk.
    #[default]
    Analytic,
    /// Monte-Carlo average of the squared loss over fresh draws.
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dofs: Vec<u32>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    /// Chain settings; the seed is replaced per cell.
    pub chain: ChainConfig,
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    pub risk_mode: RiskMode,
    /// Draws per risk estimate when `risk_mode` is `mc`.
    pub mc_risk_samples: usize,
    /// Generating coefficients, intercept first.
    pub u0: Hypothesis,
    /// Feature truncation value.
    pub trunc: f64,
    pub prior: PriorSpec,
    /// Loss of the generalized posterior. Risk is always the squared loss.
    pub posterior_loss: LossSpec,
}

impl ExperimentConfig {
    /// Full-scale protocol: dof 5/10/20, n = 10..10240 doubling, 100
    /// replicates, 20000 burn-in and 100000 kept iterations, uniform prior on
    /// the radius-10 ball, Gaussian-likelihood posterior.
    pub fn full_scale(master_seed: u64) -> Self {
        ExperimentConfig {
            dofs: DEFAULT_DOFS.to_vec(),
            sample_sizes: DEFAULT_SAMPLE_SIZES.to_vec(),
            replicates: DEFAULT_REPLICATES,
            chain: ChainConfig::default(),
            master_seed,
            estimators: vec![Estimator::Erm, Estimator::Bayes],
            risk_mode: RiskMode::Analytic,
            mc_risk_samples: 100_000,
            u0: Hypothesis::new(vec![1.0, 1.0, 1.0]).expect("finite"),
            trunc: 1.0,
            prior: PriorSpec::default_ball(3),
            posterior_loss: LossSpec::squared_half(),
        }
    }

    /// Reduced protocol: 25 replicates, n up to 2560, 30000 kept iterations.
    pub fn desk_scale(master_seed: u64) -> Self {
        let mut c = Self::full_scale(master_seed);
        c.replicates = 25;
        c.sample_sizes.retain(|&n| n <= 2560);
        c.chain.iterations = 30_000;
        c
    }

    pub fn model(&self, dof: u32) -> Result<ModelSpec> {
        ModelSpec::new(self.u0.clone(), dof, self.trunc)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.dofs.is_empty(), || "dofs must not be empty".into())?;
        for &k in &self.dofs {
            self.model(k)?;
        }
        ensure(!self.sample_sizes.is_empty(), || {
            "sample_sizes must not be empty".into()
        })?;
        ensure(self.sample_sizes[0] >= 1, || {
            "sample sizes must be positive".into()
        })?;
        ensure(self.sample_sizes.windows(2).all(|w| w[0] < w[1]), || {
            "sample_sizes must be strictly increasing".into()
        })?;
        ensure(self.replicates >= 1, || {
            "replicates must be at least 1".into()
        })?;
        ensure(!self.estimators.is_empty(), || {
            "at least one estimator is required".into()
        })?;
        let mut est = self.estimators.clone();
        est.sort();
        est.dedup();
        ensure(est.len() == self.estimators.len(), || {
            "estimators must not repeat".into()
        })?;
        self.chain.validate()?;
        self.prior.validate()?;
        self.posterior_loss.validate()?;
        ensure(self.prior.dim() == self.u0.dim(), || {
            format!(
                "prior dimension {} does not match u0 dimension {}",
                self.prior.dim(),
                self.u0.dim()
            )
        })?;
        if self.risk_mode == RiskMode::Mc {
            ensure(self.mc_risk_samples >= MIN_RISK_SAMPLES, || {
                format!("mc_risk_samples must be at least {MIN_RISK_SAMPLES}")
            })?;
            ensure(self.dofs.iter().all(|&k| k >= 5), || {
                "Monte-Carlo risk needs every dof >= 5".into()
            })?;
        }
        Ok(())
    }

    /// Every cell in grid order: dof, then n, then replicate.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out =
            Vec::with_capacity(self.dofs.len() * self.sample_sizes.len() * self.replicates);
        for &dof in &self.dofs {
            for &n in &self.sample_sizes {
                for replicate in 0..self.replicates {
                    out.push(CellKey { dof, n, replicate });
                }
            }
        }
        out
    }

    pub fn expected_rows(&self) -> usize {
        self.dofs.len() * self.sample_sizes.len() * self.replicates * self.estimators.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub dof: u32,
    pub n: usize,
    pub replicate: usize,
}

impl CellKey {
    /// Seed of the cell's first dataset attempt.
    pub fn seed(&self, master_seed: u64) -> u64 {
        derive_seed(
            master_seed,
            &[self.dof as u64, self.n as u64, self.replicate as u64],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub dof: u32,
    pub n: usize,
    pub replicate: usize,
    pub estimator: Estimator,
    pub risk: f64,
    pub excess_risk: f64,
    pub acceptance_rate: Option<f64>,
    /// Seed of the dataset the row was computed on.
    pub seed: u64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    /// Cells whose design stayed singular after every retry.
    pub missing: Vec<CellKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub execution: Execution,
    /// Record per-estimator wall-clock milliseconds. Off by default because
    /// timings make the output non-reproducible.
    pub timing: bool,
}

/// Hooks for side outputs (dataset and chain dumps). Called from worker
/// threads.
pub trait CellObserver: Sync {
    fn dataset(&self, _key: &CellKey, _data: &Dataset) {}
    fn chain(&self, _key: &CellKey, _chain: &ChainResult) {}
}

pub struct NoObserver;

impl CellObserver for NoObserver {}

/// A simulated dataset with its least-squares fit.
pub(crate) struct PreparedCell {
    pub data: Dataset,
    pub erm: Hypothesis,
    pub erm_ms: f64,
}

/// Generates the cell's dataset, regenerating with a perturbed seed while the
/// design is singular. `None` once the retries are exhausted.
pub(crate) fn prepare_cell(
    config: &ExperimentConfig,
    model: &ModelSpec,
    key: &CellKey,
) -> Result<Option<PreparedCell>> {
    let base = key.seed(config.master_seed);
    for attempt in 0..=SINGULAR_RETRIES {
        let seed = if attempt == 0 {
            base
        } else {
            derive_seed(base, &[tag::RETRY, attempt])
        };
        let data = generate_dataset(model, key.n, seed)?;
        let start = Instant::now();
        match erm_fit(&data) {
            Ok(erm) => {
                let erm_ms = start.elapsed().as_secs_f64() * 1e3;
                return Ok(Some(PreparedCell { data, erm, erm_ms }));
            }
            Err(Error::SingularDesign { .. }) => {
                log::warn!("singular design at {key:?} (attempt {attempt}, seed {seed})");
            }
            Err(e) => return Err(e),
        }
    }
    log::warn!("cell {key:?} recorded as missing after {SINGULAR_RETRIES} retries");
    Ok(None)
}

/// Curvature of the total loss relative to `eta·(x·u - y)²/2`; shapes the
/// automatic proposal to the posterior's scale.
fn curvature(loss: &LossSpec) -> f64 {
    let base = match loss.kind {
        LossKind::SquaredHalf | LossKind::AbsPower => 1.0,
        LossKind::Squared => 2.0,
    };
    base * loss.eta
}

/// Runs the Metropolis chain of the generalized posterior for one dataset,
/// starting from the least-squares fit pulled into the prior ball.
pub(crate) fn run_cell_chain(
    config: &ExperimentConfig,
    cell: &PreparedCell,
) -> Result<ChainResult> {
    let posterior = GeneralizedPosterior::new(config.posterior_loss, &config.prior, &cell.data)?;
    let mut proposal = Proposal::resolve(config.chain.proposal_scale, &cell.data)?;
    if config.chain.proposal_scale == ProposalScale::Auto {
        let c = curvature(&config.posterior_loss);
        if c != 1.0 {
            proposal = proposal.rescaled_covariance(1.0 / c)?;
        }
    }
    let init = Hypothesis::new(config.prior.shrink_into(cell.erm.coeffs()))?;
    let chain_config = ChainConfig {
        seed: derive_seed(cell.data.seed(), &[tag::CHAIN]),
        ..config.chain.clone()
    };
    metropolis_run(
        |u| posterior.log_density(u),
        &init,
        &chain_config,
        &proposal,
    )
}

fn risk_of(
    config: &ExperimentConfig,
    oracle: &RiskOracle,
    u: &Hypothesis,
    dataset_seed: u64,
    estimator: Estimator,
) -> Result<(f64, f64)> {
    let excess = oracle.excess(u.coeffs())?;
    let risk = match config.risk_mode {
        RiskMode::Analytic => oracle.gamma_star + excess,
        RiskMode::Mc => {
            let mut rng = substream(dataset_seed, &[tag::RISK, estimator.stream_tag()]);
            mc_risk(&oracle.model, u, config.mc_risk_samples, &mut rng)?.estimate
        }
    };
    Ok((risk, excess))
}

fn run_cell(
    config: &ExperimentConfig,
    oracle: &RiskOracle,
    key: CellKey,
    options: RunOptions,
    observer: &dyn CellObserver,
) -> Result<Option<Vec<ExperimentRow>>> {
    let Some(cell) = prepare_cell(config, &oracle.model, &key)? else {
        return Ok(None);
    };
    observer.dataset(&key, &cell.data);
    let seed = cell.data.seed();
    let mut rows = Vec::with_capacity(config.estimators.len());
    for &estimator in &config.estimators {
        let (estimate, acceptance_rate, ms) = match estimator {
            Estimator::Erm => (cell.erm.clone(), None, cell.erm_ms),
            Estimator::Bayes => {
                let start = Instant::now();
                let chain = run_cell_chain(config, &cell)?;
                let mean = posterior_mean(&chain)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                observer.chain(&key, &chain);
                (mean, Some(chain.acceptance_rate), ms)
            }
        };
        let (risk, excess_risk) = risk_of(config, oracle, &estimate, seed, estimator)?;
        rows.push(ExperimentRow {
            dof: key.dof,
            n: key.n,
            replicate: key.replicate,
            estimator,
            risk,
            excess_risk,
            acceptance_rate,
            seed,
            wall_ms: options.timing.then_some(ms),
        });
    }
    Ok(Some(rows))
}

pub(crate) fn oracles(config: &ExperimentConfig) -> Result<Vec<(u32, RiskOracle)>> {
    config
        .dofs
        .iter()
        .map(|&k| Ok((k, RiskOracle::analytic(&config.model(k)?)?)))
        .collect()
}

pub(crate) fn oracle_for(oracles: &[(u32, RiskOracle)], dof: u32) -> &RiskOracle {
    &oracles
        .iter()
        .find(|(k, _)| *k == dof)
        .expect("oracle for every configured dof")
        .1
}

/// Runs the full grid. The table is assembled in grid order, so it depends on
/// `config` only, not on the execution strategy or worker count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentTable> {
    run_experiment_with(config, RunOptions::default(), &NoObserver)
}

pub fn run_experiment_with(
    config: &ExperimentConfig,
    options: RunOptions,
    observer: &dyn CellObserver,
) -> Result<ExperimentTable> {
    config.validate()?;
    let oracles = oracles(config)?;
    let cells = config.cells();
    let outcomes = options.execution.map(cells.clone(), |key| {
        run_cell(
            config,
            oracle_for(&oracles, key.dof),
            key,
            options,
            observer,
        )
    });
    let mut table = ExperimentTable::default();
    for (key, outcome) in cells.into_iter().zip(outcomes) {
        match outcome? {
            Some(rows) => table.rows.extend(rows),
            None => table.missing.push(key),
        }
    }
    Ok(table)
}
