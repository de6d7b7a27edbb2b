//! Experiment orchestration: empirical observables of the particle system,
//! the `N eps^2 = 1` convergence sweep against the Boltzmann solver,
//! discrepancy-set statistics of pseudotrajectories, and the series/solver
//! cross-check, together with their file formats.
//!
//! Output tables:
//! - `marginals.csv`: `n,t,x1_bin,observable,mean,stderr`
//! - `badsets.csv`: `epsilon,class,frequency,stderr`
//! - `sweep.json`, `badsets.json`, `series.json`: serialized reports
//! - `manifest.json`: [`Manifest`]

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{DensityFunction, Equilibrium, MaxwellianMixture, SlabProfile};
use crate::duhamel::{
    fitted_horizon, sum_observable_series, ContinuityConfig, DuhamelError, McConfig, SeriesTruncation, VelocityProposal,
};
use crate::geometry::{distance, Position};
use crate::kernels::{uniform_sphere, Tensorized};
use crate::pseudo::{
    build_backward, classify_discrepancy, in_grazing_set, creation_weight, final_distance, CollisionTree, CreationParams,
    DiscrepancyClass, Inadmissible, Mode, PseudoError,
};
use crate::randomness::{sample_initial_configuration, sample_maxwellian, PlacementOptions, RandomnessError, ReflectionRecord, RngSeed};
use crate::sim::{simulate, Particle, SimConfig, SimError, SystemState};
use crate::solver::{picard_solve, GridDensity, GridSpec, SolverError};
use crate::stats::{Accumulator, Estimate};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Duhamel(#[from] DuhamelError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Test functions of the velocity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    One,
    V1,
    V2,
    Energy,
}

impl Observable {
    pub fn name(self) -> &'static str {
        match self {
            Observable::One => "one",
            Observable::V1 => "v1",
            Observable::V2 => "v2",
            Observable::Energy => "energy",
        }
    }

    pub fn phi(self, v: &Vec3) -> f64 {
        match self {
            Observable::One => 1.0,
            Observable::V1 => v.x,
            Observable::V2 => v.y,
            Observable::Energy => v.norm_squared(),
        }
    }

    /// Polynomial growth degree.
    pub fn degree(self) -> i32 {
        match self {
            Observable::One => 0,
            Observable::V1 | Observable::V2 => 1,
            Observable::Energy => 2,
        }
    }

    /// Largest `|phi(v)| / (1 + |v|)^degree` on a test grid.
    pub fn growth_constant(self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..=40 {
            let s = 0.25 * i as f64;
            for d in [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(1.0, 1.0, 1.0).normalize()] {
                let v = d * s;
                worst = worst.max(self.phi(&v).abs() / (1.0 + s).powi(self.degree()));
            }
        }
        worst
    }

    /// Azimuthal average of `phi` at speed `s` and cosine `c`.
    pub fn reduced(self, s: f64, c: f64) -> f64 {
        let st = (1.0 - c * c).max(0.0).sqrt();
        let m = 16;
        (0..m)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / m as f64;
                self.phi(&(Vec3::new(c, st * a.cos(), st * a.sin()) * s))
            })
            .sum::<f64>()
            / m as f64
    }
}

/// Initial one-particle densities available from configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Equilibrium { beta: f64 },
    SlabProfile { beta: f64, amplitude: f64 },
    MaxwellianMixture { beta_a: f64, beta_b: f64, weight_a: f64 },
}

impl InitialSpec {
    pub fn density(&self) -> Box<dyn DensityFunction> {
        match *self {
            InitialSpec::Equilibrium { beta } => Box::new(Equilibrium { beta }),
            InitialSpec::SlabProfile { beta, amplitude } => Box::new(SlabProfile { beta, amplitude }),
            InitialSpec::MaxwellianMixture {
                beta_a,
                beta_b,
                weight_a,
            } => Box::new(MaxwellianMixture {
                beta_a,
                beta_b,
                weight_a,
            }),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let ok = match *self {
            InitialSpec::Equilibrium { beta } => beta > 0.0,
            InitialSpec::SlabProfile { beta, amplitude } => beta > 0.0 && amplitude.abs() < 1.0,
            InitialSpec::MaxwellianMixture {
                beta_a,
                beta_b,
                weight_a,
            } => beta_a > 0.0 && beta_b > 0.0 && (0.0..=1.0).contains(&weight_a),
        };
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("initial: bad parameters {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub grid: GridSpec,
    /// Time step of the reference solution; sample times must be multiples.
    pub dt: f64,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            dt: 0.025,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BadSetConfig {
    pub s: usize,
    pub a: Vec<usize>,
    pub sigma: Vec<i8>,
    pub t: f64,
    pub epsilons: Vec<f64>,
    pub n_samples: usize,
    /// Inverse temperature of the sampled root and created velocities.
    #[serde(default = "one")]
    pub beta: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesConfig {
    pub x1: f64,
    pub r_max: usize,
    pub energy: f64,
    pub n_samples: usize,
    /// Evaluation time as a fraction of the fitted horizon.
    pub t_fraction: f64,
}

/// JSON experiment description; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Particle numbers; `eps = N^{-1/2}`.
    pub n_list: Vec<usize>,
    pub times: Vec<f64>,
    pub initial: InitialSpec,
    pub seed: u64,
    pub replicas: usize,
    /// Uniform bins in `x1`.
    pub bins: usize,
    pub observables: Vec<Observable>,
    /// Weight exponent of the norm used to fit the time horizon.
    pub mu: f64,
    /// Minimal pairwise distance of evaluation points when `s >= 2`.
    #[serde(default)]
    pub offdiag_margin: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub badsets: Option<BadSetConfig>,
    #[serde(default)]
    pub series: Option<SeriesConfig>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return bad("n_list: need positive particle numbers");
        }
        if self.times.is_empty() || self.times.iter().any(|t| !(*t >= 0.0)) {
            return bad("times: need nonnegative sample times");
        }
        if self.replicas == 0 {
            return bad("replicas: must be positive");
        }
        if self.bins == 0 {
            return bad("bins: must be positive");
        }
        if self.observables.is_empty() {
            return bad("observables: empty list");
        }
        if !(self.solver.dt > 0.0) || !(self.solver.tol > 0.0) {
            return bad("solver: dt and tol must be positive");
        }
        if self.offdiag_margin < 0.0 {
            return bad("offdiag_margin: must be nonnegative");
        }
        self.initial.validate()
    }

    pub fn epsilon(n: usize) -> f64 {
        (n as f64).powf(-0.5)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn beta(&self) -> f64 {
        self.initial.density().envelope().beta
    }
}

/// `(C beta^-2 e^-mu, T)` for the configuration's `beta` and `mu`.
pub fn fitted_time_horizon(beta: f64, mu: f64) -> Result<(f64, f64), HarnessError> {
    let cfg = ContinuityConfig {
        beta,
        mu,
        ..Default::default()
    };
    Ok(fitted_horizon(&cfg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub fitted_t: f64,
    pub c_beta_mu: f64,
    pub version: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, c_beta_mu: f64, fitted_t: f64, outputs: Vec<String>) -> Self {
        Self {
            command: command.into(),
            seed: cfg.seed,
            config_hash: cfg.hash(),
            fitted_t,
            c_beta_mu,
            version: env!("CARGO_PKG_VERSION").into(),
            outputs,
        }
    }
}

/// Observable estimate on one spatial bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub estimate: Estimate,
    /// No replica had a particle in the bin.
    pub empty: bool,
}

fn bin_of(x1: f64, bins: usize) -> usize {
    ((x1 * bins as f64) as usize).min(bins - 1)
}

/// Per-bin values `(bins / N) sum_i phi(v_i) 1{x_i in bin}` for one state.
fn replica_values(state: &SystemState, bins: usize, obs: &[Observable]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = state.len().max(1) as f64;
    let mut out = vec![vec![0.0; bins]; obs.len()];
    let mut hit = vec![false; bins];
    for p in &state.particles {
        let b = bin_of(p.x.x1, bins);
        hit[b] = true;
        for (k, o) in obs.iter().enumerate() {
            out[k][b] += o.phi(&p.v);
        }
    }
    for row in &mut out {
        for v in row.iter_mut() {
            *v *= bins as f64 / n;
        }
    }
    (out, hit)
}

/// Estimate of `int f_N^{(1)}(t, x, v) phi(v) dv` averaged over the `x1` bin
/// `[bin / bins, (bin + 1) / bins)`, one value per state of the ensemble.
pub fn empirical_observable(
    ensemble: &[SystemState],
    bins: usize,
    bin: usize,
    obs: Observable,
) -> Result<BinEstimate, HarnessError> {
    if ensemble.is_empty() || bins == 0 || bin >= bins {
        return Err(HarnessError::Config("empty ensemble or bin out of range".into()));
    }
    let mut acc = Accumulator::new();
    let mut any = false;
    for st in ensemble {
        let (vals, hit) = replica_values(st, bins, &[obs]);
        acc.push(vals[0][bin]);
        any |= hit[bin];
    }
    Ok(BinEstimate {
        estimate: acc.estimate(),
        empty: !any,
    })
}

/// Piecewise-linear interpolation of `(nodes, vals)` at `x`.
pub fn interpolate(nodes: &[f64], vals: &[f64], x: f64) -> f64 {
    let i = nodes.partition_point(|&n| n <= x).clamp(1, nodes.len() - 1);
    let (x0, x1) = (nodes[i - 1], nodes[i]);
    let u = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
    (1.0 - u) * vals[i - 1] + u * vals[i]
}

/// Average over `[a, b]` of the piecewise-linear interpolant of `(nodes, vals)`.
pub fn interval_average(nodes: &[f64], vals: &[f64], a: f64, b: f64) -> f64 {
    let interp = |x: f64| interpolate(nodes, vals, x);
    let mut pts = vec![a];
    pts.extend(nodes.iter().copied().filter(|&n| n > a && n < b));
    pts.push(b);
    let integral: f64 = pts.windows(2).map(|w| 0.5 * (w[1] - w[0]) * (interp(w[0]) + interp(w[1]))).sum();
    integral / (b - a)
}

/// Bin averages of `int phi f dv` from a solver snapshot.
pub fn solver_bin_moments(g: &GridDensity, bins: usize, obs: Observable) -> Vec<f64> {
    let m = g.velocity_moment(|s, c| obs.reduced(s, c));
    (0..bins)
        .map(|b| interval_average(&g.x1, &m, b as f64 / bins as f64, (b + 1) as f64 / bins as f64))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: usize,
    pub estimate: Estimate,
    pub reference: f64,
    pub empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub n: usize,
    pub epsilon: f64,
    pub t: f64,
    pub observable: Observable,
    pub bins: Vec<BinRow>,
    /// Root mean square over bins of `estimate - reference`.
    pub gap: f64,
    /// Root mean square over bins of the standard errors.
    pub uncertainty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub t: f64,
    pub observable: Observable,
    pub gaps: Vec<f64>,
    pub uncertainties: Vec<f64>,
    /// `gap[k+1] <= gap[k] + sqrt(u[k]^2 + u[k+1]^2)` for all `k`.
    pub non_increasing: bool,
    /// Gap at the largest `N` below twice its uncertainty.
    pub final_within_noise: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config_hash: String,
    pub fitted_t: f64,
    pub c_beta_mu: f64,
    pub picard_iterations: usize,
    pub entries: Vec<GapEntry>,
    pub verdicts: Vec<Verdict>,
}

impl ConvergenceReport {
    pub fn write_marginals_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "n,t,x1_bin,observable,mean,stderr")?;
        for e in &self.entries {
            for b in &e.bins {
                writeln!(
                    w,
                    "{},{:.6},{},{},{:.12e},{:.12e}",
                    e.n,
                    e.t,
                    b.bin,
                    e.observable.name(),
                    b.estimate.mean,
                    b.estimate.stderr
                )?;
            }
        }
        Ok(())
    }
}

/// Replica ensemble of the particle system at the sample times: per time,
/// per observable, per bin accumulators, plus bin occupancy.
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub values: Vec<Vec<Vec<Accumulator>>>,
    pub occupied: Vec<Vec<bool>>,
}

/// Simulates `replicas` independent systems of `n` particles from `f0` and
/// accumulates the binned observables at each sample time.
pub fn run_ensemble(
    f0: &dyn DensityFunction,
    n: usize,
    times: &[f64],
    replicas: usize,
    bins: usize,
    obs: &[Observable],
    seed: u64,
) -> Result<EnsembleStats, HarnessError> {
    let eps = ExperimentConfig::epsilon(n);
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t_end = *sorted.last().unwrap_or(&0.0);
    type Sample = (Vec<Vec<f64>>, Vec<bool>);
    let per_replica: Vec<Vec<Sample>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<Sample>, HarnessError> {
            let st = sample_initial_configuration(
                RngSeed::new(seed, ((n as u64) << 24) | r as u64),
                n,
                eps,
                f0,
                PlacementOptions::default(),
            )?;
            let mut out = Vec::with_capacity(sorted.len());
            simulate(st, t_end, SimConfig::default(), &sorted, |s| {
                out.push(replica_values(s, bins, obs))
            })?;
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut values = vec![vec![vec![Accumulator::new(); bins]; obs.len()]; sorted.len()];
    let mut occupied = vec![vec![false; bins]; sorted.len()];
    for rep in &per_replica {
        for (ti, (vals, hit)) in rep.iter().enumerate() {
            for (k, row) in vals.iter().enumerate() {
                for (b, &x) in row.iter().enumerate() {
                    values[ti][k][b].push(x);
                }
            }
            for (b, &h) in hit.iter().enumerate() {
                occupied[ti][b] |= h;
            }
        }
    }
    Ok(EnsembleStats {
        times: sorted,
        values,
        occupied,
    })
}

fn rms(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x * x;
        n += 1;
    }
    (s / n.max(1) as f64).sqrt()
}

/// Gaps between the particle system and the Boltzmann solution for every
/// `(N, t, observable)`, and the monotonicity verdict across increasing `N`.
pub fn convergence_sweep(cfg: &ExperimentConfig) -> Result<ConvergenceReport, HarnessError> {
    cfg.validate()?;
    let (c_beta_mu, fitted_t) = fitted_time_horizon(cfg.beta(), cfg.mu)?;
    let t_end = cfg.times.iter().copied().fold(0.0, f64::max);
    if t_end > fitted_t {
        return Err(HarnessError::Config(format!(
            "times: {t_end} exceeds the fitted horizon {fitted_t:.4}"
        )));
    }
    let f0 = cfg.initial.density();
    let steps = (t_end / cfg.solver.dt).round().max(1.0) as usize;
    let dt = t_end / steps as f64;
    for &t in &cfg.times {
        if t_end > 0.0 && ((t / dt).round() * dt - t).abs() > 1e-9 {
            return Err(HarnessError::Config(format!(
                "times: {t} is not a multiple of the solver step {dt}"
            )));
        }
    }
    let grid = GridSpec {
        n_steps: steps,
        ..cfg.solver.grid
    };
    let sol = picard_solve(f0.as_ref(), t_end, cfg.solver.tol, &grid)?;
    let mut ns = cfg.n_list.clone();
    ns.sort_unstable();
    let mut entries = Vec::new();
    for &n in &ns {
        let stats = run_ensemble(f0.as_ref(), n, &cfg.times, cfg.replicas, cfg.bins, &cfg.observables, cfg.seed)?;
        for (ti, &t) in stats.times.iter().enumerate() {
            let snap = if t_end > 0.0 {
                &sol.snapshots[(t / dt).round() as usize]
            } else {
                &sol.snapshots[0]
            };
            for (k, &o) in cfg.observables.iter().enumerate() {
                let reference = solver_bin_moments(snap, cfg.bins, o);
                let bins: Vec<BinRow> = (0..cfg.bins)
                    .map(|b| BinRow {
                        bin: b,
                        estimate: stats.values[ti][k][b].estimate(),
                        reference: reference[b],
                        empty: !stats.occupied[ti][b],
                    })
                    .collect();
                entries.push(GapEntry {
                    n,
                    epsilon: ExperimentConfig::epsilon(n),
                    t,
                    observable: o,
                    gap: rms(bins.iter().map(|b| b.estimate.mean - b.reference)),
                    uncertainty: rms(bins.iter().map(|b| b.estimate.stderr)),
                    bins,
                });
            }
        }
    }
    let mut verdicts = Vec::new();
    let mut times = cfg.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for &t in &times {
        for &o in &cfg.observables {
            let row: Vec<&GapEntry> = ns
                .iter()
                .filter_map(|&n| entries.iter().find(|e| e.n == n && e.t == t && e.observable == o))
                .collect();
            let gaps: Vec<f64> = row.iter().map(|e| e.gap).collect();
            let uncertainties: Vec<f64> = row.iter().map(|e| e.uncertainty).collect();
            let non_increasing = (1..gaps.len())
                .all(|k| gaps[k] <= gaps[k - 1] + uncertainties[k].hypot(uncertainties[k - 1]));
            let last = gaps.len() - 1;
            verdicts.push(Verdict {
                t,
                observable: o,
                non_increasing,
                final_within_noise: gaps[last] < 2.0 * uncertainties[last],
                gaps,
                uncertainties,
            });
        }
    }
    Ok(ConvergenceReport {
        config_hash: cfg.hash(),
        fitted_t,
        c_beta_mu,
        picard_iterations: sol.iterations,
        entries,
        verdicts,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSetRow {
    pub epsilon: f64,
    pub class: DiscrepancyClass,
    pub count: u64,
    pub frequency: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRow {
    pub epsilon: f64,
    /// Creation-weighted mean final distance over Clean samples.
    pub mean: f64,
    pub stderr: f64,
    pub clean_samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSetReport {
    pub tree: CollisionTree,
    pub t: f64,
    pub n_samples: usize,
    /// Draws discarded because the point pseudotrajectory violated a sign
    /// constraint.
    pub rejected: u64,
    pub rows: Vec<BadSetRow>,
    pub distances: Vec<DistanceRow>,
    /// Membership of the grazing set per epsilon, counted whether or not an
    /// earlier discrepancy decided the class.
    pub grazing_set: Vec<GrazingSetRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrazingSetRow {
    pub epsilon: f64,
    pub frequency: f64,
    pub stderr: f64,
}

impl BadSetReport {
    pub fn row(&self, epsilon: f64, class: DiscrepancyClass) -> Option<&BadSetRow> {
        self.rows.iter().find(|r| r.epsilon == epsilon && r.class == class)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epsilon,class,frequency,stderr")?;
        for r in &self.rows {
            writeln!(w, "{:e},{},{:.12e},{:.12e}", r.epsilon, r.class.as_str(), r.frequency, r.stderr)?;
        }
        Ok(())
    }
}

struct BadSample {
    classes: Vec<DiscrepancyClass>,
    grazing: Vec<bool>,
    /// `(weight, distance)` per epsilon when Clean.
    distances: Vec<Option<(f64, f64)>>,
    rejected: u64,
}

fn bad_sample(cfg: &BadSetConfig, tree: &CollisionTree, lane: u64, seed: u64, margin: f64) -> Result<BadSample, HarnessError> {
    let s = tree.s;
    let r = tree.r();
    let mut rng = RngSeed::new(seed, 0).rng(lane);
    let rec_seed = RngSeed::new(seed, 1);
    let records: Vec<ReflectionRecord> = (0..s + r)
        .map(|j| ReflectionRecord::new(rec_seed.record_key(lane * 64 + j as u64)))
        .collect();
    let margin = cfg.epsilons.iter().map(|e| 2.0 * e).fold(margin, f64::max);
    let mut rejected = 0;
    loop {
        let mut zs: Vec<Particle> = Vec::with_capacity(s);
        while zs.len() < s {
            let x = Position {
                x1: rng.random(),
                x2: rng.random(),
                x3: rng.random(),
            };
            if zs.iter().all(|p| distance(&p.x, &x) > margin) {
                zs.push(Particle {
                    x,
                    v: sample_maxwellian(&mut rng, cfg.beta),
                });
            }
        }
        let mut times: Vec<f64> = (0..r).map(|_| cfg.t * (rng.random::<f64>() + f64::EPSILON / 4.0)).collect();
        times.sort_by(|a, b| b.total_cmp(a));
        let params = CreationParams {
            times,
            nu: (0..r).map(|_| uniform_sphere(&mut rng)).collect(),
            vbar: (0..r).map(|_| sample_maxwellian(&mut rng, cfg.beta)).collect(),
        };
        let zero = match build_backward(Mode::Zero, 0.0, cfg.t, &zs, tree, &params, &records) {
            Ok(p) => p,
            Err(PseudoError::InadmissibleCreation {
                reason: Inadmissible::SignConstraint,
                ..
            }) => {
                rejected += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let weight = creation_weight(tree, &params, &zero.parent_velocities());
        let mut classes = Vec::with_capacity(cfg.epsilons.len());
        let mut grazing = Vec::with_capacity(cfg.epsilons.len());
        let mut distances = Vec::with_capacity(cfg.epsilons.len());
        for &eps in &cfg.epsilons {
            match build_backward(Mode::Epsilon, eps, cfg.t, &zs, tree, &params, &records) {
                Ok(p) => {
                    grazing.push(in_grazing_set(&p.log, eps));
                    let c = classify_discrepancy(&p.log, &zero.log, eps);
                    distances.push(if c == DiscrepancyClass::Clean {
                        Some((weight, final_distance(&p.final_config, &zero.final_config)?))
                    } else {
                        None
                    });
                    classes.push(c);
                }
                Err(PseudoError::InadmissibleCreation { log, .. }) => {
                    grazing.push(in_grazing_set(&log, eps));
                    classes.push(classify_discrepancy(&log, &zero.log, eps));
                    distances.push(None);
                }
                Err(e) => return Err(e.into()),
            }
        }
        return Ok(BadSample {
            classes,
            grazing,
            distances,
            rejected,
        });
    }
}

/// Classifies hard-sphere against point pseudotrajectories built on common
/// samples for every `epsilon`. Roots are uniform in the slab with Maxwellian
/// velocities, creation times uniform on the ordered simplex, `nu` uniform on
/// the sphere and created velocities Maxwellian; draws whose point
/// pseudotrajectory violates a sign constraint are redrawn. Frequencies are
/// unweighted; the Clean final distances are weighted by the creation
/// weight. Roots are kept `max(offdiag_margin, 2 eps)` apart.
pub fn bad_set_decay_study(cfg: &BadSetConfig, seed: u64, offdiag_margin: f64) -> Result<BadSetReport, HarnessError> {
    let tree = CollisionTree::new(cfg.s, cfg.a.clone(), cfg.sigma.clone())?;
    if tree.r() > 2 {
        return Err(HarnessError::Config("badsets: r must be at most 2".into()));
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(*e > 0.0)) || !(cfg.t > 0.0) || cfg.n_samples == 0 {
        return Err(HarnessError::Config("badsets: need positive epsilons, t and n_samples".into()));
    }
    let samples: Vec<BadSample> = (0..cfg.n_samples as u64)
        .into_par_iter()
        .map(|i| bad_sample(cfg, &tree, i, seed, offdiag_margin))
        .collect::<Result<_, _>>()?;
    let n = samples.len() as f64;
    let mut rows = Vec::new();
    let mut distances = Vec::new();
    let mut grazing_set = Vec::new();
    for (k, &eps) in cfg.epsilons.iter().enumerate() {
        let p = samples.iter().filter(|s| s.grazing[k]).count() as f64 / n;
        grazing_set.push(GrazingSetRow {
            epsilon: eps,
            frequency: p,
            stderr: (p * (1.0 - p) / n).sqrt(),
        });
        for class in DiscrepancyClass::ALL {
            let count = samples.iter().filter(|s| s.classes[k] == class).count() as u64;
            let p = count as f64 / n;
            rows.push(BadSetRow {
                epsilon: eps,
                class,
                count,
                frequency: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
            });
        }
        let pairs: Vec<(f64, f64)> = samples.iter().filter_map(|s| s.distances[k]).collect();
        let sw: f64 = pairs.iter().map(|p| p.0).sum();
        let mean = if sw > 0.0 {
            pairs.iter().map(|p| p.0 * p.1).sum::<f64>() / sw
        } else {
            0.0
        };
        // ratio-estimator standard error
        let m = pairs.len() as f64;
        let stderr = if m > 1.0 && sw > 0.0 {
            let wbar = sw / m;
            let var = pairs.iter().map(|p| (p.0 * (p.1 - mean)).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt() / wbar
        } else {
            0.0
        };
        distances.push(DistanceRow {
            epsilon: eps,
            mean,
            stderr,
            clean_samples: pairs.len() as u64,
        });
    }
    Ok(BadSetReport {
        tree,
        t: cfg.t,
        n_samples: cfg.n_samples,
        rejected: samples.iter().map(|s| s.rejected).sum(),
        rows,
        distances,
        grazing_set,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub observable: Observable,
    pub series: Estimate,
    pub terms: Vec<Estimate>,
    pub solver: f64,
    pub z_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesCheckReport {
    pub t: f64,
    pub x1: f64,
    pub fitted_t: f64,
    pub rows: Vec<SeriesRow>,
}

/// Point-particle series `sum_{r <= R}` with tensorized initial data against
/// the Boltzmann solver, observable by observable, at `x1` and
/// `t = t_fraction * T`. Velocities are drawn from a Gaussian slightly wider
/// than the initial data.
pub fn series_solver_check(cfg: &ExperimentConfig) -> Result<SeriesCheckReport, HarnessError> {
    let sc = cfg
        .series
        .ok_or_else(|| HarnessError::Config("series: section missing".into()))?;
    if !(0.0..=1.0).contains(&sc.x1) {
        return Err(HarnessError::Config("series: x1 outside [0, 1]".into()));
    }
    let (_, fitted_t) = fitted_time_horizon(cfg.beta(), cfg.mu)?;
    let t = sc.t_fraction * fitted_t;
    let f0 = cfg.initial.density();
    let steps = (t / cfg.solver.dt).ceil().max(2.0) as usize;
    let grid = GridSpec {
        n_steps: steps,
        ..cfg.solver.grid
    };
    let sol = picard_solve(f0.as_ref(), t, cfg.solver.tol, &grid)?;
    let last = sol.snapshots.last().expect("nonempty solution");
    let fam = Tensorized {
        f: f0.as_ref(),
        s_max: 1 + sc.r_max,
        factor: 1.0,
    };
    let trunc = SeriesTruncation::new(sc.r_max, sc.energy, t)?;
    let x = Position {
        x1: sc.x1,
        x2: 0.5,
        x3: 0.5,
    };
    let mut rows = Vec::new();
    for (k, &o) in cfg.observables.iter().enumerate() {
        let mc = McConfig {
            mode: Mode::Zero,
            epsilon: 0.0,
            n_samples: sc.n_samples,
            seed: RngSeed::new(cfg.seed, 0x5e00 + k as u64 * 0x10_0000),
            proposal: VelocityProposal::Gaussian {
                beta: 0.8 * cfg.beta(),
            },
        };
        let phi = move |v: &Vec3| o.phi(v);
        let (series, terms) = sum_observable_series(&mc, t, x, &phi, &fam, &trunc)?;
        let m = last.velocity_moment(|s, c| o.reduced(s, c));
        let solver = interpolate(&last.x1, &m, sc.x1);
        rows.push(SeriesRow {
            observable: o,
            z_score: (series.mean - solver) / series.stderr.max(f64::MIN_POSITIVE),
            series,
            terms: terms.iter().map(|t| t.total).collect(),
            solver,
        });
    }
    Ok(SeriesCheckReport {
        t,
        x1: sc.x1,
        fitted_t,
        rows,
    })
}

/// Writes `value` as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(value: &T, mut w: impl Write) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}
