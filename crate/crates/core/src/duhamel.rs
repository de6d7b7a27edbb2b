//! Monte Carlo evaluation of the Duhamel series terms `Q_{s,s+r}(t) f_0`
//! for the BBGKY (`Mode::Epsilon`) and Boltzmann (`Mode::Zero`) hierarchies.
//!
//! A term is a sum over signed collision trees of integrals over creation
//! times, impact directions, incoming velocities and reflection records. The
//! reference measure is uniform on the ordered time simplex, uniform on
//! `S^2` for each direction and uniform on the energy ball for the incoming
//! velocities; the factor `[sigma nu.(vbar - v_a)]_+` is carried as a weight.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{distance, Position};
use crate::kernels::{uniform_sphere, HierarchyFamily};
use crate::pseudo::{build_backward, creation_weight, CollisionTree, CreationParams, Inadmissible, Mode, PseudoError};
use crate::randomness::{ReflectionRecord, RngSeed};
use crate::sim::Particle;
use crate::stats::{Accumulator, Estimate};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum DuhamelError {
    #[error("{inadmissible} of {samples} samples inadmissible for tree {tree}")]
    DegenerateSampleExcess {
        tree: String,
        inadmissible: u64,
        samples: u64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
}

/// `R` creations at most, energy cutoff `E`, time horizon `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesTruncation {
    pub r_max: usize,
    pub energy: f64,
    pub t_max: f64,
}

impl SeriesTruncation {
    pub fn new(r_max: usize, energy: f64, t_max: f64) -> Result<Self, DuhamelError> {
        if !(energy > 0.0) || !(t_max > 0.0) {
            return Err(DuhamelError::InvalidArgument(format!(
                "energy = {energy} and t_max = {t_max} must be positive"
            )));
        }
        Ok(Self { r_max, energy, t_max })
    }
}

/// Law of the velocity variables integrated over the energy ball.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum VelocityProposal {
    #[default]
    UniformBall,
    /// Centered Gaussian with variance `1/beta` per component; draws outside
    /// the ball contribute zero.
    Gaussian { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub mode: Mode,
    /// Particle diameter for `Mode::Epsilon`; ignored otherwise.
    pub epsilon: f64,
    /// Samples per signed tree.
    pub n_samples: usize,
    pub seed: RngSeed,
    #[serde(default)]
    pub proposal: VelocityProposal,
}

/// All progenitor sequences `a(k) in 1..k` for `k = s+1..=s+r`.
pub fn enumerate_skeletons(s: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for j in 0..r {
        let k = s + j + 1;
        out = out
            .into_iter()
            .flat_map(|a| {
                (1..k).map(move |p| {
                    let mut b = a.clone();
                    b.push(p);
                    b
                })
            })
            .collect();
    }
    out
}

/// Every skeleton paired with every sign vector.
pub fn enumerate_trees(s: usize, r: usize) -> Vec<CollisionTree> {
    let mut out = Vec::new();
    for a in enumerate_skeletons(s, r) {
        for mask in 0..(1u32 << r) {
            let sigma = (0..r).map(|k| if mask >> k & 1 == 0 { 1 } else { -1 }).collect();
            out.push(CollisionTree { s, a: a.clone(), sigma });
        }
    }
    out
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    // pi^{n/2} / Gamma(n/2 + 1), by the recursion V_n = 2 pi / n V_{n-2}
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * PI / n as f64 * unit_ball_volume(n - 2),
    }
}

/// `n (n-1) .. (n-r+1)`.
pub fn falling_factorial(n: usize, r: usize) -> f64 {
    if r > n {
        return 0.0;
    }
    (0..r).map(|i| (n - i) as f64).product()
}

/// Series prefactor of the `r`-th term: `alpha(N-s, r) eps^{2r}` for the
/// BBGKY hierarchy with `N` particles, 1 for the Boltzmann hierarchy.
pub fn prefactor(mode: Mode, n_particles: usize, s: usize, r: usize, epsilon: f64) -> f64 {
    match mode {
        Mode::Zero => 1.0,
        Mode::Epsilon => {
            if s > n_particles {
                return 0.0;
            }
            falling_factorial(n_particles - s, r) * epsilon.powi(2 * r as i32)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeEstimate {
    pub tree: CollisionTree,
    /// `int dLambda f_0(zeta(0))` without the sign product.
    pub estimate: Estimate,
    /// `int dLambda |f_0(zeta(0))|`.
    pub majorant: Estimate,
    pub inadmissible: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermEstimate {
    pub r: usize,
    pub trees: Vec<TreeEstimate>,
    /// Signed sum over trees.
    pub total: Estimate,
    /// Sum over trees of the majorants.
    pub majorant: Estimate,
}

struct SampleOut {
    value: f64,
    inadmissible: bool,
}

fn tree_label(t: &CollisionTree) -> String {
    let sg: Vec<String> = t.sigma.iter().map(|s| format!("{s:+}")).collect();
    format!("s={} a={:?} sigma=[{}]", t.s, t.a, sg.join(","))
}

fn in_exclusion(z: &[Particle], eps: f64) -> bool {
    for i in 0..z.len() {
        for j in 0..i {
            if distance(&z[i].x, &z[j].x) <= eps {
                return false;
            }
        }
    }
    true
}

#[allow(clippy::too_many_arguments)]
/// Root configuration of a term: fixed, or a single particle at `x` whose
/// velocity is integrated against `phi` jointly with the created ones.
#[derive(Clone, Copy)]
pub enum Roots<'a> {
    Fixed(&'a [Particle]),
    Observable {
        x: Position,
        phi: &'a (dyn Fn(&Vec3) -> f64 + Sync),
    },
}

impl Roots<'_> {
    fn len(&self) -> usize {
        match self {
            Roots::Fixed(zs) => zs.len(),
            Roots::Observable { .. } => 1,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_once(
    cfg: &McConfig,
    tree: &CollisionTree,
    lane: u64,
    t: f64,
    roots: Roots<'_>,
    f0: &dyn HierarchyFamily,
    energy: f64,
) -> Result<SampleOut, DuhamelError> {
    let s = roots.len();
    let r = tree.r();
    let (e_s, free) = match roots {
        Roots::Fixed(zs) => (zs.iter().map(|p| p.v.norm_squared()).sum::<f64>(), 0),
        Roots::Observable { .. } => (0.0, 3),
    };
    let zero = SampleOut {
        value: 0.0,
        inadmissible: false,
    };
    if e_s > energy {
        return Ok(zero);
    }
    let mut rng = cfg.seed.rng(lane);
    let mut times: Vec<f64> = (0..r)
        .map(|_| t * (rng.random::<f64>() + f64::EPSILON / 4.0))
        .collect();
    times.sort_by(|a, b| b.total_cmp(a));
    let nu: Vec<Vec3> = (0..r).map(|_| uniform_sphere(&mut rng)).collect();
    let rho = (energy - e_s).sqrt();
    let dim = 3 * r + free;
    let mut g: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // inverse density of the velocity variables on the ball
    let velocity_volume = match cfg.proposal {
        VelocityProposal::UniformBall => {
            let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            let radius = if dim > 0 {
                rho * rng.random::<f64>().powf(1.0 / dim as f64)
            } else {
                0.0
            };
            for x in &mut g {
                *x *= radius / gn;
            }
            unit_ball_volume(dim) * rho.powi(dim as i32)
        }
        VelocityProposal::Gaussian { beta } => {
            let sd = beta.powf(-0.5);
            for x in &mut g {
                *x *= sd;
            }
            let n2: f64 = g.iter().map(|x| x * x).sum();
            if n2 > rho * rho {
                return Ok(zero);
            }
            (2.0 * PI / beta).powf(dim as f64 / 2.0) * (0.5 * beta * n2).exp()
        }
    };
    let vbar: Vec<Vec3> = (0..r)
        .map(|k| Vec3::new(g[free + 3 * k], g[free + 3 * k + 1], g[free + 3 * k + 2]))
        .collect();
    let owned;
    let (zs, test) = match roots {
        Roots::Fixed(zs) => (zs, 1.0),
        Roots::Observable { x, phi } => {
            let v = Vec3::new(g[0], g[1], g[2]);
            owned = [Particle { x, v }];
            (&owned[..], phi(&v))
        }
    };
    let volume = t.powi(r as i32) / (1..=r).map(|i| i as f64).product::<f64>()
        * (4.0 * PI).powi(r as i32)
        * velocity_volume;
    let params = CreationParams { times, nu, vbar };
    let rec_seed = RngSeed::new(cfg.seed.seed, cfg.seed.stream);
    let records: Vec<ReflectionRecord> = (0..s + r)
        .map(|j| ReflectionRecord::new(rec_seed.record_key(lane.wrapping_mul(64).wrapping_add(j as u64))))
        .collect();
    let built = build_backward(cfg.mode, cfg.epsilon, t, zs, tree, &params, &records);
    let out = match built {
        Ok(p) => p,
        Err(PseudoError::InadmissibleCreation { reason, .. }) => {
            return Ok(SampleOut {
                value: 0.0,
                inadmissible: reason != Inadmissible::SignConstraint,
            })
        }
        Err(e) => return Err(e.into()),
    };
    let w = creation_weight(tree, &params, &out.parent_velocities());
    if w == 0.0 {
        return Ok(zero);
    }
    if cfg.mode == Mode::Epsilon && !in_exclusion(&out.final_config, cfg.epsilon) {
        return Ok(zero);
    }
    let z: Vec<(Position, Vec3)> = out.final_config.iter().map(|p| (p.x, p.v)).collect();
    Ok(SampleOut {
        value: volume * w * test * f0.eval(&z),
        inadmissible: false,
    })
}

const CHUNK: usize = 256;

fn estimate_tree(
    cfg: &McConfig,
    tree_index: usize,
    tree: &CollisionTree,
    t: f64,
    roots: Roots<'_>,
    f0: &dyn HierarchyFamily,
    energy: f64,
) -> Result<TreeEstimate, DuhamelError> {
    let n = cfg.n_samples.max(1);
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<(Accumulator, Accumulator, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = Accumulator::new();
            let mut abs = Accumulator::new();
            let mut bad = 0u64;
            for i in (c * CHUNK)..((c + 1) * CHUNK).min(n) {
                let lane = ((tree_index as u64) << 36) | i as u64;
                let o = sample_once(cfg, tree, lane, t, roots, f0, energy)?;
                acc.push(o.value);
                abs.push(o.value.abs());
                bad += o.inadmissible as u64;
            }
            Ok((acc, abs, bad))
        })
        .collect::<Result<_, DuhamelError>>()?;
    let mut acc = Accumulator::new();
    let mut abs = Accumulator::new();
    let mut bad = 0;
    for (a, b, k) in &parts {
        acc.merge(a);
        abs.merge(b);
        bad += k;
    }
    if 2 * bad > n as u64 {
        return Err(DuhamelError::DegenerateSampleExcess {
            tree: tree_label(tree),
            inadmissible: bad,
            samples: n as u64,
        });
    }
    Ok(TreeEstimate {
        tree: tree.clone(),
        estimate: acc.estimate(),
        majorant: abs.estimate(),
        inadmissible: bad,
    })
}

/// Estimate of `Q_{s,s+r}(t) f_0 (z_s)` (without the series prefactor),
/// tree by tree. In `Mode::Epsilon` the initial data is `f_0` restricted to
/// the exclusion set.
pub fn estimate_term(
    cfg: &McConfig,
    r: usize,
    t: f64,
    zs: &[Particle],
    f0: &dyn HierarchyFamily,
    trunc: &SeriesTruncation,
) -> Result<TermEstimate, DuhamelError> {
    estimate_term_with(cfg, r, t, Roots::Fixed(zs), f0, trunc)
}

/// `int phi(v) Q_{1,1+r}(t) f_0 (x, v) dv` over `|v|^2 + |vbar|^2 <= E`.
pub fn estimate_observable_term(
    cfg: &McConfig,
    r: usize,
    t: f64,
    x: Position,
    phi: &(dyn Fn(&Vec3) -> f64 + Sync),
    f0: &dyn HierarchyFamily,
    trunc: &SeriesTruncation,
) -> Result<TermEstimate, DuhamelError> {
    estimate_term_with(cfg, r, t, Roots::Observable { x, phi }, f0, trunc)
}

fn estimate_term_with(
    cfg: &McConfig,
    r: usize,
    t: f64,
    roots: Roots<'_>,
    f0: &dyn HierarchyFamily,
    trunc: &SeriesTruncation,
) -> Result<TermEstimate, DuhamelError> {
    let s = roots.len();
    if s == 0 {
        return Err(DuhamelError::InvalidArgument("no root particle".into()));
    }
    if !(0.0..=trunc.t_max).contains(&t) {
        return Err(DuhamelError::InvalidArgument(format!("t = {t} outside [0, {}]", trunc.t_max)));
    }
    if s + r > f0.max_s() {
        return Err(DuhamelError::InvalidArgument(format!(
            "initial family defined up to s = {}, need {}",
            f0.max_s(),
            s + r
        )));
    }
    if r > 0 && t == 0.0 {
        let trees = enumerate_trees(s, r)
            .into_iter()
            .map(|tree| TreeEstimate {
                tree,
                estimate: Estimate::exact(0.0),
                majorant: Estimate::exact(0.0),
                inadmissible: 0,
            })
            .collect();
        return Ok(TermEstimate {
            r,
            trees,
            total: Estimate::exact(0.0),
            majorant: Estimate::exact(0.0),
        });
    }
    let trees = enumerate_trees(s, r);
    let mut out = Vec::with_capacity(trees.len());
    for (i, tree) in trees.iter().enumerate() {
        out.push(estimate_tree(cfg, i, tree, t, roots, f0, trunc.energy)?);
    }
    let mut total = Estimate::exact(0.0);
    let mut majorant = Estimate::exact(0.0);
    for te in &out {
        total = total.add(te.estimate.scale(te.tree.sign()));
        majorant = majorant.add(te.majorant);
    }
    Ok(TermEstimate {
        r,
        trees: out,
        total,
        majorant,
    })
}

/// Constants for the analytic remainder bounds
/// `R2 <= c 2^{-R} w` and `R3 <= c exp(-beta E / 16) w`, with
/// `w = exp(-3 beta/8 |V_s|^2 - (mu - 1) s) ||f_0||_{beta,mu}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderModel {
    pub c: f64,
    pub beta: f64,
    pub mu: f64,
    pub f0_norm: f64,
}

impl RemainderModel {
    fn weight(&self, zs: &[Particle]) -> f64 {
        let e: f64 = zs.iter().map(|p| p.v.norm_squared()).sum();
        (-0.375 * self.beta * e - (self.mu - 1.0) * zs.len() as f64).exp() * self.f0_norm
    }

    pub fn creation_remainder(&self, r_max: usize, zs: &[Particle]) -> f64 {
        self.c * 0.5f64.powi(r_max as i32) * self.weight(zs)
    }

    pub fn energy_remainder(&self, energy: f64, zs: &[Particle]) -> f64 {
        self.c * (-self.beta * energy / 16.0).exp() * self.weight(zs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEstimate {
    pub total: Estimate,
    pub terms: Vec<TermEstimate>,
    pub prefactors: Vec<f64>,
    pub creation_remainder: f64,
    pub energy_remainder: f64,
}

/// `sum_{r <= R} prefactor_r Q_{s,s+r}(t) f_0 (z_s)`. In `Mode::Epsilon` the
/// particle number is `N = round(eps^{-2})`.
pub fn sum_series(
    cfg: &McConfig,
    t: f64,
    zs: &[Particle],
    f0: &dyn HierarchyFamily,
    trunc: &SeriesTruncation,
    remainder: &RemainderModel,
) -> Result<SeriesEstimate, DuhamelError> {
    let s = zs.len();
    let n_particles = if cfg.mode == Mode::Epsilon {
        if !(cfg.epsilon > 0.0) {
            return Err(DuhamelError::InvalidArgument("epsilon must be positive".into()));
        }
        (cfg.epsilon.powi(-2)).round() as usize
    } else {
        0
    };
    let mut total = Estimate::exact(0.0);
    let mut terms = Vec::new();
    let mut prefactors = Vec::new();
    for r in 0..=trunc.r_max {
        let pf = prefactor(cfg.mode, n_particles, s, r, cfg.epsilon);
        let cfg_r = McConfig {
            seed: RngSeed::new(cfg.seed.seed, cfg.seed.stream.wrapping_add(r as u64 * 0x1000)),
            ..*cfg
        };
        let term = estimate_term(&cfg_r, r, t, zs, f0, trunc)?;
        total = total.add(term.total.scale(pf));
        terms.push(term);
        prefactors.push(pf);
    }
    Ok(SeriesEstimate {
        total,
        terms,
        prefactors,
        creation_remainder: remainder.creation_remainder(trunc.r_max, zs),
        energy_remainder: remainder.energy_remainder(trunc.energy, zs),
    })
}

/// `sum_{r <= R} int phi(v) Q_{1,1+r}(t) f_0 (x, v) dv` in `Mode::Zero`,
/// with the per-term estimates.
pub fn sum_observable_series(
    cfg: &McConfig,
    t: f64,
    x: Position,
    phi: &(dyn Fn(&Vec3) -> f64 + Sync),
    f0: &dyn HierarchyFamily,
    trunc: &SeriesTruncation,
) -> Result<(Estimate, Vec<TermEstimate>), DuhamelError> {
    if cfg.mode != Mode::Zero {
        return Err(DuhamelError::InvalidArgument("observable series is defined in zero mode".into()));
    }
    let mut total = Estimate::exact(0.0);
    let mut terms = Vec::new();
    for r in 0..=trunc.r_max {
        let cfg_r = McConfig {
            seed: RngSeed::new(cfg.seed.seed, cfg.seed.stream.wrapping_add(r as u64 * 0x1000)),
            ..*cfg
        };
        let term = estimate_observable_term(&cfg_r, r, t, x, phi, f0, trunc)?;
        total = total.add(term.total);
        terms.push(term);
    }
    Ok((total, terms))
}

/// `f^s = prod_i exp(-mu) exp(-beta |v_i|^2 / 2)`: uniform in space with
/// `||f||_{beta,mu} = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitGaussianFamily {
    pub beta: f64,
    pub mu: f64,
    pub s_max: usize,
}

impl HierarchyFamily for UnitGaussianFamily {
    fn max_s(&self) -> usize {
        self.s_max
    }
    fn eval(&self, z: &[(Position, Vec3)]) -> f64 {
        let e: f64 = z.iter().map(|(_, v)| v.norm_squared()).sum();
        (-self.mu * z.len() as f64 - 0.5 * self.beta * e).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityConfig {
    pub beta: f64,
    pub mu: f64,
    pub r_values: Vec<usize>,
    /// Evaluation times as fractions of the fitted horizon `T`.
    pub t_fractions: Vec<f64>,
    /// Time used for the first fit of the `r = 1` constant.
    pub pilot_t: f64,
    /// Root speeds at which the weighted sup is taken.
    pub speeds: Vec<f64>,
    pub energy: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mu: 5.0,
            r_values: vec![0, 1, 2],
            t_fractions: vec![0.25, 0.5],
            pilot_t: 0.05,
            speeds: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
            energy: 36.0,
            n_samples: 4000,
            seed: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeEntry {
    pub r: usize,
    pub t: f64,
    /// `sup_z |majorant| exp((mu - 1) + 3 beta/8 |v|^2)` over the speed grid.
    pub ratio: f64,
    pub ratio_stderr: f64,
    /// `(ratio_r / ratio_0)^{1/r} beta^2 e^mu / t`, for `r >= 1`.
    pub constant: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    /// `C` in `C_{beta,mu} = C beta^{-2} e^{-mu}`, fitted at `r = 1`.
    pub c_fit: f64,
    pub c_beta_mu: f64,
    /// `1 / (2 C_{beta,mu})`.
    pub t_max: f64,
    pub entries: Vec<EnvelopeEntry>,
    /// Largest `|C(r,t) / C(1, first t) - 1|`.
    pub max_rel_dev: f64,
    pub stable: bool,
}

fn weighted_sup(
    cfg: &ContinuityConfig,
    r: usize,
    t: f64,
    lane: u64,
) -> Result<(f64, f64), DuhamelError> {
    let f0 = UnitGaussianFamily {
        beta: cfg.beta,
        mu: cfg.mu,
        s_max: 1 + r,
    };
    let trunc = SeriesTruncation::new(r, cfg.energy, t.max(1e-12))?;
    let mut best = (0.0f64, 0.0f64);
    for (k, &speed) in cfg.speeds.iter().enumerate() {
        let dir = Vec3::new(0.48, 0.6, 0.64).normalize();
        let zs = [Particle {
            x: Position {
                x1: 0.5,
                x2: 0.5,
                x3: 0.5,
            },
            v: dir * speed,
        }];
        let mc = McConfig {
            mode: Mode::Zero,
            epsilon: 0.0,
            n_samples: cfg.n_samples,
            seed: RngSeed::new(cfg.seed, lane * 1000 + k as u64),
            proposal: VelocityProposal::UniformBall,
        };
        let term = estimate_term(&mc, r, t, &zs, &f0, &trunc)?;
        let w = ((cfg.mu - 1.0) + 0.375 * cfg.beta * speed * speed).exp();
        let val = term.majorant.mean * w;
        if val > best.0 {
            best = (val, term.majorant.stderr * w);
        }
    }
    Ok(best)
}

fn pilot_fit(cfg: &ContinuityConfig) -> Result<(f64, f64), DuhamelError> {
    let scale = cfg.beta.powi(-2) * (-cfg.mu).exp();
    let (r0, _) = weighted_sup(cfg, 0, 0.0, 0)?;
    let (pilot, _) = weighted_sup(cfg, 1, cfg.pilot_t, 1)?;
    Ok((r0, pilot / r0 / (scale * cfg.pilot_t)))
}

/// `T = 1 / (2 C beta^-2 e^-mu)` from the pilot fit alone; returns
/// `(C beta^-2 e^-mu, T)`.
pub fn fitted_horizon(cfg: &ContinuityConfig) -> Result<(f64, f64), DuhamelError> {
    let (_, c_fit) = pilot_fit(cfg)?;
    let c_beta_mu = c_fit * cfg.beta.powi(-2) * (-cfg.mu).exp();
    Ok((c_beta_mu, 0.5 / c_beta_mu))
}

/// Fits the geometric envelope `ratio_r(t) = ratio_0 (C_{beta,mu} t)^r` of
/// the sign-free majorant `sum_{a,sigma} int dLambda |f_0(zeta(0))|` for
/// `s = 1` and the family [`UnitGaussianFamily`].
pub fn continuity_bound_check(cfg: &ContinuityConfig) -> Result<ContinuityReport, DuhamelError> {
    if cfg.r_values.iter().any(|&r| r > 3) {
        return Err(DuhamelError::InvalidArgument("r must be at most 3".into()));
    }
    let scale = cfg.beta.powi(-2) * (-cfg.mu).exp();
    let (r0, c_fit) = pilot_fit(cfg)?;
    let c_beta_mu = c_fit * scale;
    let t_max = 0.5 / c_beta_mu;
    let mut entries = Vec::new();
    let mut lane = 2;
    for &frac in &cfg.t_fractions {
        let t = frac * t_max;
        for &r in &cfg.r_values {
            let (ratio, se) = weighted_sup(cfg, r, t, lane)?;
            lane += 1;
            let constant = (r >= 1).then(|| (ratio / r0).powf(1.0 / r as f64) / (scale * t));
            entries.push(EnvelopeEntry {
                r,
                t,
                ratio,
                ratio_stderr: se,
                constant,
            });
        }
    }
    let reference = entries.iter().find_map(|e| e.constant).unwrap_or(c_fit);
    let max_rel_dev = entries
        .iter()
        .filter_map(|e| e.constant)
        .map(|c| (c / reference - 1.0).abs())
        .fold(0.0, f64::max);
    let contraction = entries.iter().filter(|e| e.r == 0).all(|e| e.ratio <= 1.0);
    Ok(ContinuityReport {
        c_fit,
        c_beta_mu,
        t_max,
        entries,
        max_rel_dev,
        stable: max_rel_dev <= 0.5 && contraction,
    })
}
