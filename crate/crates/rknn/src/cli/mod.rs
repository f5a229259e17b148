//! The `rknn` batch front-end: generate configurations, calibrate
//! asymptotic constants, run verification suites, and sweep N.
//!
//! Every command is deterministic under its seed: re-running writes byte
//! identical files at any `--threads` level. Exit codes: 0 success, 1
//! usage or schema error, 2 runtime or solver error. Outputs are written
//! only after a run has fully succeeded.

pub mod io;
pub mod registry;
pub mod spec;
pub mod suites;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{asymptotics_fit, covering_radius, separation};
use crate::density::calibrate_csdk;
use crate::energy::energy;
use crate::neighbors::{build_graph, Configuration};
use crate::optimize::{minimize, OptimizerConfig, RunTrace};
use crate::{Error, Result};

use io::Summary;
use spec::RunSpec;

#[derive(Debug, Parser)]
#[command(
    name = "rknn",
    about = "Point configurations with prescribed densities via truncated Riesz energies",
    version
)]
pub struct Cli {
    /// Cap the worker-thread count (outputs are identical at any level).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimize the energy described by a run spec and export the artifacts.
    Generate(GenerateArgs),
    /// Estimate the asymptotic energy constant for (s, d, k) and record it.
    Calibrate(CalibrateArgs),
    /// Run a named property suite and print its JSON verdict.
    Verify(VerifyArgs),
    /// Run one spec across several N and fit the energy growth law.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Run spec JSON path.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory (created on success).
    #[arg(long)]
    pub out: PathBuf,
    /// Override the run spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub s: f64,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub k: usize,
    /// Comma-separated increasing point counts, e.g. 40,80,160.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Iteration cap per minimization.
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    /// Registry JSON path (default: $RKNN_REGISTRY, then ./rknn_registry.json).
    #[arg(long)]
    pub registry: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite name; see `rknn verify --suite help` for the catalog.
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the verdict JSON into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Run spec JSON path; its `n` is replaced by each sweep value.
    #[arg(long)]
    pub spec: PathBuf,
    /// Comma-separated increasing point counts.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Override the run spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parse argv and run. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(threads) = cli.threads {
        // Ignore the error when a pool already exists (repeat calls in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let outcome = match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rknn: {e}");
            e.exit_code()
        }
    }
}

fn read_spec(path: &Path, seed_override: Option<u64>) -> Result<RunSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
    let mut spec = RunSpec::parse(&text)?;
    if let Some(seed) = seed_override {
        spec.seed = seed;
    }
    Ok(spec)
}

struct RunOutcome {
    best: Configuration,
    trace: RunTrace,
    summary: Summary,
}

/// Execute one run spec end to end: init, minimize, measure.
fn execute(spec: &RunSpec) -> Result<RunOutcome> {
    let built = spec.build()?;
    let domain = &built.domain;
    let model = &built.model;
    let init = spec.init.sample(domain, &built, spec.n, spec.seed)?;
    let mut opts = spec.optimizer.clone();
    opts.seed = spec.seed.wrapping_add(opts.seed);
    let (best, trace) = minimize(&init, model, domain, &opts)?;
    let graph = build_graph(&best, domain, model.graph_k(best.n()))?;
    let final_energy = energy(&best, model, &graph)?.total;
    let cover = covering_radius(&best, domain, &built.quad)?;
    let summary = Summary {
        n: best.n(),
        final_energy,
        rescaled_energy: final_energy
            / (best.n() as f64).powf(1.0 + model.s / model.d as f64),
        separation: if best.n() >= 2 { separation(&best, domain)? } else { f64::NAN },
        covering_radius: cover.radius,
        covering_mesh: cover.mesh,
        iterations: trace.iters,
        stop_reason: trace.stop_reason.to_string(),
        seed: spec.seed,
    };
    Ok(RunOutcome { best, trace, summary })
}

fn cmd_generate(args: &GenerateArgs) -> Result<i32> {
    let spec = read_spec(&args.spec, args.seed)?;
    let outcome = execute(&spec)?;
    // All computation succeeded; only now touch the filesystem.
    std::fs::create_dir_all(&args.out)?;
    if let Some(name) = &spec.outputs.points {
        io::write_file(&args.out.join(name), &io::points_csv(&outcome.best))?;
    }
    if let Some(name) = &spec.outputs.trace {
        io::write_file(&args.out.join(name), &io::trace_csv(&outcome.trace))?;
    }
    if let Some(name) = &spec.outputs.ply {
        io::write_file(&args.out.join(name), &io::points_ply(&outcome.best)?)?;
    }
    let summary_name = spec.outputs.summary.as_deref().unwrap_or("summary.json");
    io::write_file(&args.out.join(summary_name), &io::to_json_pretty(&outcome.summary)?)?;
    println!(
        "generate: n={} energy={:.12e} rescaled={:.12e} separation={:.6e} stop={}",
        outcome.summary.n,
        outcome.summary.final_energy,
        outcome.summary.rescaled_energy,
        outcome.summary.separation,
        outcome.summary.stop_reason,
    );
    Ok(0)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<i32> {
    let opts = OptimizerConfig {
        max_iters: args.max_iters,
        tol_rel_energy: 1e-12,
        window: 200,
        ..OptimizerConfig::default()
    };
    let est = calibrate_csdk(args.s, args.d, args.k, &args.n_list, &opts, args.seed)?;
    let entry = registry::entry_from_estimate(&est, args.seed);
    let path = registry::resolve_path(args.registry.as_deref());
    let mut reg = registry::load(&path)?;
    let key = registry::upsert(&mut reg, args.s, args.d, args.k, entry.clone());
    registry::save(&path, &reg)?;
    if est.exact.is_none() {
        eprintln!("calibrate: no exact oracle for d={}, storing the fit estimate", args.d);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "key": key,
            "entry": entry,
            "estimate": est,
            "registry": path.display().to_string(),
        }))?
    );
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let report = suites::run_suite(&args.suite, args.seed)?;
    let json = io::to_json_pretty(&report)?;
    print!("{json}");
    if let Some(dir) = &args.out {
        io::write_file(&dir.join(format!("{}.json", args.suite)), &json)?;
    }
    if report.passed {
        Ok(0)
    } else {
        for f in &report.failures {
            eprintln!("verify {}: {f}", args.suite);
        }
        Ok(2)
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    if args.n_list.is_empty() {
        return Err(Error::Spec("sweep needs a nonempty N list".into()));
    }
    if args.n_list.len() >= 2 && args.n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Spec("sweep N list must be strictly increasing".into()));
    }
    let base = read_spec(&args.spec, args.seed)?;
    let built = base.build()?;
    let (s, d) = (built.model.s, built.model.d);
    let exponent = 1.0 + s / d as f64;
    let mut rows = Vec::new();
    let mut raw_pairs = Vec::new();
    for (i, &n) in args.n_list.iter().enumerate() {
        let mut spec = read_spec(&args.spec, args.seed)?;
        spec.n = n;
        spec.seed = base.seed.wrapping_add(i as u64);
        let outcome = execute(&spec)?;
        rows.push((n, outcome.summary.final_energy, outcome.summary.rescaled_energy));
        raw_pairs.push((n, outcome.summary.final_energy));
    }
    std::fs::create_dir_all(&args.out)?;
    io::write_file(&args.out.join("sweep.csv"), &io::sweep_csv(&rows))?;
    let fit = (raw_pairs.len() >= 3)
        .then(|| asymptotics_fit(&raw_pairs, s, d))
        .transpose()?;
    match &fit {
        Some(fit) => {
            io::write_file(&args.out.join("fit.json"), &io::to_json_pretty(fit)?)?;
            println!(
                "sweep: {} runs, fit intercept {:.9e} (slope {:.3e}, residual {:.2e})",
                rows.len(),
                fit.c_hat,
                fit.b_hat,
                fit.residual
            );
        }
        None => {
            println!(
                "sweep: {} runs (need >= 3 for a growth-law fit); exponent N^{exponent}",
                rows.len()
            );
        }
    }
    Ok(0)
}
