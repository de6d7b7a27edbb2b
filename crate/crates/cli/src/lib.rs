//! Command-line driver. Every subcommand reads a JSON experiment
//! configuration, writes its tables and reports into `--out`, and finishes
//! with `manifest.json`. Failures exit nonzero with a single-line JSON error
//! record on stderr.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use slabgas_core::harness::{
    bad_set_decay_study, convergence_sweep, fitted_time_horizon, run_ensemble, series_solver_check, write_json,
    ExperimentConfig, HarnessError, Manifest,
};
use slabgas_core::kernels::{carleman_pushforward_check, singular_integral, strip_integral, StripTarget};
use slabgas_core::solver::{picard_solve, GridSpec};
use slabgas_core::Vec3;

#[derive(Parser, Debug)]
#[command(name = "slabgas", version, about = "Hard-sphere gas in a slab: simulations, series and Boltzmann solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "results")]
    pub out: PathBuf,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Particle ensembles only: binned observables per N and t.
    Simulate,
    /// Particle ensembles against the Boltzmann solver.
    Sweep,
    /// Discrepancy classes of hard-sphere vs point pseudotrajectories.
    Badsets,
    /// Point-particle Duhamel series against the solver.
    Series,
    /// Boltzmann solver snapshots.
    Solver,
    /// Carleman, strip and singular-integral checks.
    VerifyKernels,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::Badsets => "badsets",
            Command::Series => "series",
            Command::Solver => "solver",
            Command::VerifyKernels => "verify-kernels",
        }
    }
}

#[derive(Serialize)]
struct ErrorRecord {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<usize>,
}

fn quoted_field(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let end = start + msg[start..].find('`')?;
    Some(msg[start..end].to_string())
}

fn error_record(err: &anyhow::Error) -> ErrorRecord {
    let message = format!("{err:#}");
    for cause in err.chain() {
        let json = cause.downcast_ref::<serde_json::Error>().or(match cause.downcast_ref::<HarnessError>() {
            Some(HarnessError::Json(e)) => Some(e),
            _ => None,
        });
        if let Some(e) = json {
            return ErrorRecord {
                error: "config",
                field: quoted_field(&e.to_string()),
                line: Some(e.line()),
                column: Some(e.column()),
                message,
            };
        }
        if let Some(HarnessError::Config(m)) = cause.downcast_ref::<HarnessError>() {
            return ErrorRecord {
                error: "config",
                field: m.split(':').next().map(str::to_string),
                line: None,
                column: None,
                message,
            };
        }
        if cause.downcast_ref::<clap::Error>().is_some() {
            return ErrorRecord {
                error: "usage",
                field: None,
                line: None,
                column: None,
                message,
            };
        }
    }
    ErrorRecord {
        error: "runtime",
        field: None,
        line: None,
        column: None,
        message,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let err = anyhow::Error::new(e);
            eprintln!("{}", serde_json::to_string(&error_record(&err)).expect("error record serializes"));
            return 2;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", serde_json::to_string(&error_record(&err)).expect("error record serializes"));
            1
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let out = cli.out.as_path();
    let (c_beta_mu, fitted_t) = fitted_time_horizon(cfg.beta(), cfg.mu)?;
    info!("fitted horizon T = {fitted_t:.4}");
    let mut written = Vec::new();
    match cli.command {
        Command::Simulate => {
            let f0 = cfg.initial.density();
            let mut w = create(out, "marginals.csv")?;
            use std::io::Write;
            writeln!(w, "n,t,x1_bin,observable,mean,stderr")?;
            let mut ns = cfg.n_list.clone();
            ns.sort_unstable();
            for &n in &ns {
                info!("simulating N = {n}");
                let st = run_ensemble(f0.as_ref(), n, &cfg.times, cfg.replicas, cfg.bins, &cfg.observables, cfg.seed)?;
                for (ti, t) in st.times.iter().enumerate() {
                    for (k, o) in cfg.observables.iter().enumerate() {
                        for b in 0..cfg.bins {
                            let e = st.values[ti][k][b].estimate();
                            writeln!(w, "{n},{t:.6},{b},{},{:.12e},{:.12e}", o.name(), e.mean, e.stderr)?;
                        }
                    }
                }
            }
            w.flush()?;
            written.push("marginals.csv".to_string());
        }
        Command::Sweep => {
            let rep = convergence_sweep(&cfg)?;
            let mut w = create(out, "marginals.csv")?;
            rep.write_marginals_csv(&mut w)?;
            write_json(&rep, create(out, "sweep.json")?)?;
            written.extend(["marginals.csv".to_string(), "sweep.json".to_string()]);
        }
        Command::Badsets => {
            let bc = cfg.badsets.as_ref().context("config field `badsets` is required for this command")?;
            let rep = bad_set_decay_study(bc, cfg.seed, cfg.offdiag_margin)?;
            rep.write_csv(create(out, "badsets.csv")?)?;
            write_json(&rep, create(out, "badsets.json")?)?;
            written.extend(["badsets.csv".to_string(), "badsets.json".to_string()]);
        }
        Command::Series => {
            let rep = series_solver_check(&cfg)?;
            write_json(&rep, create(out, "series.json")?)?;
            written.push("series.json".to_string());
        }
        Command::Solver => {
            let f0 = cfg.initial.density();
            let t_end = cfg.times.iter().copied().fold(0.0, f64::max);
            let grid = GridSpec {
                n_steps: (t_end / cfg.solver.dt).round().max(1.0) as usize,
                ..cfg.solver.grid
            };
            let sol = picard_solve(f0.as_ref(), t_end, cfg.solver.tol, &grid)?;
            info!("Picard converged in {} iterations", sol.iterations);
            sol.write_csv(create(out, "solution.csv")?)?;
            written.push("solution.csv".to_string());
        }
        Command::VerifyKernels => {
            let rep = verify_kernels(cfg.seed);
            write_json(&rep, create(out, "kernels.json")?)?;
            written.push("kernels.json".to_string());
        }
    }
    let manifest = Manifest::new(cli.command.name(), &cfg, c_beta_mu, fitted_t, written);
    write_json(&manifest, create(out, "manifest.json")?)?;
    Ok(())
}

#[derive(Serialize)]
struct KernelReport {
    pushforward_max_z: f64,
    orthogonality_defect: f64,
    strip_ratio: Vec<f64>,
    singular_eps_log: Vec<(f64, f64)>,
    singular_sqrt: Vec<(f64, f64)>,
}

fn verify_kernels(seed: u64) -> KernelReport {
    let v = Vec3::new(0.4, 0.3, -0.2);
    let energy = 16.0;
    let push = carleman_pushforward_check(&v, energy, 100_000, seed);
    let strip_ratio = [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime]
        .iter()
        .map(|&t| strip_integral(&v, 0.3, 0.302, energy, t) / strip_integral(&v, 0.3, 0.301, energy, t))
        .collect();
    let eps = [1e-2, 1e-3, 1e-4];
    KernelReport {
        pushforward_max_z: push.max_z,
        orthogonality_defect: push.max_orthogonality_defect,
        strip_ratio,
        singular_eps_log: eps
            .iter()
            .map(|&e| (e, singular_integral(&v, e, energy, 1, StripTarget::VStar) / (energy * energy * e * e.ln().abs())))
            .collect(),
        singular_sqrt: eps
            .iter()
            .map(|&e| (e, singular_integral(&v, e, energy, 2, StripTarget::VStar) / (energy * energy * e.sqrt())))
            .collect(),
    }
}
