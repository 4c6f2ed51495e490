use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc::SyncSender;

use genbayes::analysis::bounds::{linear_regression_rate_bound, multiscale_rate_bound, RateBound};
use genbayes::analysis::concentration::concentration_curve;
use genbayes::analysis::experiment::{run_experiment_with, CellKey, CellObserver, RunOptions};
use genbayes::analysis::fit::{fit_all, Aggregation, Statistic};
use genbayes::analysis::probes::{
    bernstein_constant, bernstein_exponent, bernstein_grid, bernstein_probe, envelope_probe,
};
use genbayes::data::{Dataset, ModelSpec};
use genbayes::exec::{with_workers, Execution};
use genbayes::hypothesis::Hypothesis;
use genbayes::mcmc::ChainResult;
use genbayes::report;
use genbayes::rng::{derive_seed, stream, tag};
use serde::Serialize;

use crate::config::{FileConfig, Overrides};
use crate::error::CliError;
use crate::output::{now_rfc3339, sha256_hex, OutputSet, RunManifest};

pub const RESULTS_FILE: &str = "results.csv";
pub const RATES_FILE: &str = "rates.csv";

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Context {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Overrides,
    pub workers: Option<usize>,
    pub timing: bool,
    pub dump_chains: bool,
    pub dump_datasets: bool,
}

impl Context {
    fn resolve(&self) -> Result<FileConfig, CliError> {
        FileConfig::resolve(self.config.as_deref(), &self.overrides)
    }

    fn parallel<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        with_workers(self.workers, f)
    }

    fn manifest(&self, command: &str, config: &FileConfig) -> RunManifest {
        let mut m = RunManifest::new(command, config);
        if self.timing {
            m.started_at = Some(now_rfc3339());
        }
        m
    }

    fn finish(
        &self,
        mut manifest: RunManifest,
        out: OutputSet,
        name: &str,
    ) -> Result<RunManifest, CliError> {
        let root = out.root().to_path_buf();
        manifest.outputs = out.finish()?;
        if self.timing {
            manifest.finished_at = Some(now_rfc3339());
        }
        manifest.write(&root, name)?;
        Ok(manifest)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            execution: Execution::Parallel,
            timing: self.timing,
        }
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> genbayes::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(buf)
}

fn rows_csv<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn cell_name(prefix: &str, key: &CellKey) -> String {
    format!(
        "{prefix}s/{prefix}_k{}_n{}_r{}.csv",
        key.dof, key.n, key.replicate
    )
}

/// Streams per-cell dumps to the output writer.
struct DumpObserver {
    tx: SyncSender<(String, Vec<u8>)>,
    chains: bool,
    datasets: bool,
}

impl DumpObserver {
    fn send(&self, rel: String, bytes: genbayes::Result<Vec<u8>>) {
        match bytes {
            Ok(b) => {
                if self.tx.send((rel, b)).is_err() {
                    log::warn!("output writer stopped; dump dropped");
                }
            }
            Err(e) => log::warn!("could not serialize {rel}: {e}"),
        }
    }
}

impl CellObserver for DumpObserver {
    fn dataset(&self, key: &CellKey, data: &Dataset) {
        if self.datasets {
            let mut buf = Vec::new();
            self.send(
                cell_name("dataset", key),
                data.write_csv(&mut buf).map(|_| buf),
            );
        }
    }

    fn chain(&self, key: &CellKey, chain: &ChainResult) {
        if self.chains {
            let mut buf = Vec::new();
            self.send(
                cell_name("chain", key),
                chain.write_csv(&mut buf).map(|_| buf),
            );
        }
    }
}

/// `genbayes run`: the full replicate grid.
pub fn run(ctx: &Context, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let file = ctx.resolve()?;
    let config = file.experiment_config()?;
    let out = OutputSet::create(&ctx.out)?;
    let mut manifest = ctx.manifest("run", &file);
    out.put("config.toml", file.to_toml().into_bytes())?;

    let observer = DumpObserver {
        tx: out.sender(),
        chains: ctx.dump_chains,
        datasets: ctx.dump_datasets,
    };
    let options = ctx.options();
    let table = ctx
        .parallel(|| run_experiment_with(&config, options, &observer))
        .map_err(CliError::run)?;
    drop(observer);

    for key in &table.missing {
        log::warn!(
            "cell dof={} n={} replicate={} skipped: design matrix stayed singular after retries",
            key.dof,
            key.n,
            key.replicate
        );
    }
    out.put(
        RESULTS_FILE,
        csv_bytes(|b| report::write_results(b, &table.rows))?,
    )?;
    manifest.missing_cells = table.missing.clone();
    let manifest = ctx.finish(manifest, out, "manifest.json")?;
    let _ = writeln!(
        stdout,
        "wrote {} rows ({} cells missing) to {}",
        table.rows.len(),
        table.missing.len(),
        ctx.out.join(RESULTS_FILE).display()
    );
    Ok(manifest)
}

/// `genbayes rates`: log-log slopes of a results table.
pub fn rates(
    ctx: &Context,
    results: &Path,
    statistic: Statistic,
    aggregation: Aggregation,
    stdout: &mut dyn Write,
) -> Result<RunManifest, CliError> {
    let file = FileConfig::resolve_with(ctx.config.as_deref(), &ctx.overrides, false)?;
    let bytes = std::fs::read(results)
        .map_err(|e| CliError::io(format!("cannot read {}", results.display()), e))?;
    let rows = report::read_results(bytes.as_slice()).map_err(CliError::analysis)?;
    let fits = fit_all(&rows, statistic, aggregation).map_err(CliError::analysis)?;

    let out = OutputSet::create(&ctx.out)?;
    let mut manifest = ctx.manifest("rates", &file);
    manifest
        .inputs
        .insert(results.display().to_string(), sha256_hex(&bytes));
    out.put(RATES_FILE, csv_bytes(|b| report::write_rates(b, &fits))?)?;
    for r in &fits {
        let name = format!("plots/plot_k{}_{}.csv", r.dof, r.estimator.as_str());
        out.put(name, csv_bytes(|b| report::write_plot_data(b, &r.fit))?)?;
    }
    let manifest = ctx.finish(manifest, out, "rates-manifest.json")?;
    let _ = writeln!(
        stdout,
        "{:>4}  {:<6} {:>8} {:>8} {:>7}",
        "dof", "est", "slope", "stderr", "r2"
    );
    for r in &fits {
        let _ = writeln!(
            stdout,
            "{:>4}  {:<6} {:>8.3} {:>8.3} {:>7.4}",
            r.dof,
            r.estimator.as_str(),
            r.fit.slope,
            r.fit.slope_stderr,
            r.fit.r_squared
        );
    }
    Ok(manifest)
}

fn probe_model(file: &FileConfig, dof: u32) -> Result<ModelSpec, CliError> {
    let u0 = Hypothesis::new(file.model.u0.clone())
        .map_err(|e| CliError::Config(format!("[model] u0: {e}")))?;
    ModelSpec::new(u0, dof, file.model.trunc)
        .map_err(|e| CliError::Config(format!("[diagnostics] dofs: {e}")))
}

#[derive(Serialize)]
struct BernsteinRecord {
    dof: u32,
    direction: usize,
    radius: f64,
    excess: f64,
    second_moment: f64,
}

#[derive(Serialize)]
struct BernsteinFitRecord {
    dof: u32,
    alpha: f64,
    alpha_stderr: f64,
    r_squared: f64,
    bernstein_constant: f64,
}

/// `genbayes diagnose bernstein`.
pub fn bernstein(ctx: &Context, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let file = ctx.resolve()?;
    let d = &file.diagnostics;
    let mut points = Vec::new();
    let mut fits = Vec::new();
    for &dof in &d.dofs {
        let model = probe_model(&file, dof)?;
        let grid = bernstein_grid(&model);
        let hyps: Vec<Hypothesis> = grid.iter().map(|p| p.u.clone()).collect();
        let mut rng = stream(derive_seed(
            file.master_seed(),
            &[tag::PROBE, 1, dof as u64],
        ));
        let probe = bernstein_probe(&model, &hyps, d.bernstein_samples, &mut rng)
            .map_err(CliError::analysis)?;
        let fit = bernstein_exponent(&probe).map_err(CliError::analysis)?;
        fits.push(BernsteinFitRecord {
            dof,
            alpha: fit.slope,
            alpha_stderr: fit.slope_stderr,
            r_squared: fit.r_squared,
            bernstein_constant: bernstein_constant(&probe),
        });
        points.extend(grid.iter().zip(&probe).map(|(g, p)| BernsteinRecord {
            dof,
            direction: g.direction,
            radius: g.radius,
            excess: p.excess,
            second_moment: p.second_moment,
        }));
    }
    let out = OutputSet::create(&ctx.out)?;
    let manifest = ctx.manifest("diagnose bernstein", &file);
    out.put(
        "bernstein.csv",
        rows_csv(
            &["dof", "direction", "radius", "excess", "second_moment"],
            &points,
        )?,
    )?;
    out.put(
        "bernstein-fit.csv",
        rows_csv(
            &[
                "dof",
                "alpha",
                "alpha_stderr",
                "r_squared",
                "bernstein_constant",
            ],
            &fits,
        )?,
    )?;
    let manifest = ctx.finish(manifest, out, "diagnose-bernstein-manifest.json")?;
    for f in &fits {
        let _ = writeln!(
            stdout,
            "dof={:<3} alpha={:.3} (se {:.3}, r2 {:.4})  B={:.3}",
            f.dof, f.alpha, f.alpha_stderr, f.r_squared, f.bernstein_constant
        );
    }
    Ok(manifest)
}

#[derive(Serialize)]
struct EnvelopeRecord {
    dof: u32,
    r: f64,
    samples: usize,
    envelope: f64,
}

/// `genbayes diagnose envelope`.
pub fn envelope(ctx: &Context, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let file = ctx.resolve()?;
    let d = &file.diagnostics;
    let prior = file.prior_spec()?;
    let mut rows = Vec::new();
    for &dof in &d.dofs {
        let model = probe_model(&file, dof)?;
        let mut rng = stream(derive_seed(
            file.master_seed(),
            &[tag::PROBE, 2, dof as u64],
        ));
        let env = envelope_probe(
            &model,
            &prior,
            d.envelope_order,
            d.envelope_samples,
            &mut rng,
        )
        .map_err(CliError::analysis)?;
        rows.push(EnvelopeRecord {
            dof,
            r: d.envelope_order,
            samples: d.envelope_samples,
            envelope: env,
        });
    }
    let out = OutputSet::create(&ctx.out)?;
    let manifest = ctx.manifest("diagnose envelope", &file);
    out.put(
        "envelope.csv",
        rows_csv(&["dof", "r", "samples", "envelope"], &rows)?,
    )?;
    let manifest = ctx.finish(manifest, out, "diagnose-envelope-manifest.json")?;
    for r in &rows {
        let _ = writeln!(
            stdout,
            "dof={:<3} r={} envelope={:.4}",
            r.dof, r.r, r.envelope
        );
    }
    Ok(manifest)
}

/// `genbayes diagnose concentration`.
pub fn concentration(ctx: &Context, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let file = ctx.resolve()?;
    let config = file.experiment_config()?;
    let d = &file.diagnostics;
    let options = ctx.options();
    let points = ctx
        .parallel(|| concentration_curve(&config, d.beta, d.eps_scale, options))
        .map_err(CliError::analysis)?;
    let out = OutputSet::create(&ctx.out)?;
    let manifest = ctx.manifest("diagnose concentration", &file);
    out.put(
        "concentration.csv",
        csv_bytes(|b| report::write_concentration(b, &points))?,
    )?;
    let manifest = ctx.finish(manifest, out, "diagnose-concentration-manifest.json")?;
    for p in &points {
        let _ = writeln!(
            stdout,
            "dof={:<3} n={:<6} mass={:.4} (se {:.4}, {} replicates)",
            p.dof, p.n, p.mean_tail_mass, p.stderr, p.replicates
        );
    }
    Ok(manifest)
}

#[derive(Serialize)]
struct BoundRecord {
    bound: &'static str,
    value: f64,
    moment_term: f64,
    prior_term: f64,
    vacuous: bool,
}

impl BoundRecord {
    fn new(bound: &'static str, b: &RateBound) -> Self {
        BoundRecord {
            bound,
            value: b.value,
            moment_term: b.moment_term,
            prior_term: b.prior_term,
            vacuous: b.is_vacuous(),
        }
    }
}

/// `genbayes diagnose bounds`: the linear-regression and multiscale rate
/// bounds side by side.
pub fn bounds(ctx: &Context, stdout: &mut dyn Write) -> Result<RunManifest, CliError> {
    let file = FileConfig::resolve_with(ctx.config.as_deref(), &ctx.overrides, false)?;
    let d = &file.diagnostics;
    let linear = linear_regression_rate_bound(d.bound_dim, d.bound_dof, d.kappa)
        .map_err(CliError::analysis)?;
    let c = d.entropy_constant.unwrap_or(d.bound_dim as f64);
    let r = d.moment_order.unwrap_or(d.bound_dof as f64);
    let multi = multiscale_rate_bound(c, r, &d.alphas, d.kappa).map_err(CliError::analysis)?;
    let rows = [
        BoundRecord::new("linear-regression", &linear),
        BoundRecord::new("multiscale", &multi),
    ];
    let out = OutputSet::create(&ctx.out)?;
    let manifest = ctx.manifest("diagnose bounds", &file);
    out.put(
        "bounds.csv",
        rows_csv(
            &["bound", "value", "moment_term", "prior_term", "vacuous"],
            &rows,
        )?,
    )?;
    let manifest = ctx.finish(manifest, out, "diagnose-bounds-manifest.json")?;
    for b in &rows {
        let _ = writeln!(
            stdout,
            "{:<18} {:.4}  (moment term {:.4}, prior term {:.4}){}",
            b.bound,
            b.value,
            b.moment_term,
            b.prior_term,
            if b.vacuous { "  vacuous" } else { "" }
        );
    }
    Ok(manifest)
}
