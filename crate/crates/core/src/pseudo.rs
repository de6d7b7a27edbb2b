//! Backward pseudotrajectories along a collision tree, for hard spheres
//! (`Mode::Epsilon`) and for point particles (`Mode::Zero`), and the
//! classification of where the two first differ.
//!
//! Particles carry the labels `1..=s+r` of the tree; vectors are indexed by
//! `label - 1`. Times are forward times in `[0, t]` and decrease along a log.
//!
//! # Log text format
//!
//! One header line, then one line per entry:
//!
//! ```text
//! # mode=<epsilon|zero> epsilon=<f> t=<f> roots=<s>
//! <time> START heads=<h1,h2,..>
//! <time> CREATE <k> parent=<a> sigma=<+1|-1> heads=..
//! <time> REFLECT <i> wall=<0|1> [grazing] heads=..
//! <time> COLLIDE <i> <j> [grazing] heads=..
//! <time> END heads=..
//! <time> ABORT <k>
//! ```
//!
//! Times are printed with 17 significant digits; `heads` lists the net number
//! of forward reflections of each particle since `t` (or since its creation).

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::{distance, minimum_image_displacement, Position, Wall};
use crate::kernels::scatter;
use crate::randomness::ReflectionRecord;
use crate::sim::{predict_pair_collision, EventKind, Particle, SimConfig, SimError, Simulator, SystemState};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Epsilon,
    Zero,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Epsilon => "epsilon",
            Mode::Zero => "zero",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Inadmissible {
    /// `sigma nu.(vbar - v_a) <= 0`.
    SignConstraint,
    OutsideSlab,
    Overlap { other: usize },
}

impl fmt::Display for Inadmissible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inadmissible::SignConstraint => write!(f, "sign constraint violated"),
            Inadmissible::OutsideSlab => write!(f, "new particle outside the slab"),
            Inadmissible::Overlap { other } => write!(f, "new particle overlaps particle {other}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PseudoError {
    #[error("invalid collision tree: {0}")]
    InvalidTree(String),
    #[error("invalid creation parameters: {0}")]
    InvalidParams(String),
    #[error("root particles {i} and {j} are closer than epsilon")]
    InitialOverlap { i: usize, j: usize },
    #[error("creation of particle {particle} at time {time} is inadmissible: {reason}")]
    InadmissibleCreation {
        particle: usize,
        time: f64,
        reason: Inadmissible,
        log: Box<EventLog>,
    },
    #[error("configurations have {left} and {right} particles")]
    ParticleCountMismatch { left: usize, right: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Progenitors `a(k)` and signs `sigma_k` for `k = s+1..=s+r`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CollisionTree {
    pub s: usize,
    pub a: Vec<usize>,
    pub sigma: Vec<i8>,
}

impl CollisionTree {
    pub fn new(s: usize, a: Vec<usize>, sigma: Vec<i8>) -> Result<Self, PseudoError> {
        let t = Self { s, a, sigma };
        t.validate()?;
        Ok(t)
    }

    pub fn r(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<(), PseudoError> {
        if self.s == 0 {
            return Err(PseudoError::InvalidTree("s must be at least 1".into()));
        }
        if self.sigma.len() != self.a.len() {
            return Err(PseudoError::InvalidTree(format!(
                "{} progenitors but {} signs",
                self.a.len(),
                self.sigma.len()
            )));
        }
        for (j, (&a, &sg)) in self.a.iter().zip(&self.sigma).enumerate() {
            let k = self.s + j + 1;
            if a == 0 || a >= k {
                return Err(PseudoError::InvalidTree(format!("a({k}) = {a} not in 1..{k}")));
            }
            if sg != 1 && sg != -1 {
                return Err(PseudoError::InvalidTree(format!("sigma_{k} = {sg}")));
            }
        }
        Ok(())
    }

    pub fn sign(&self) -> f64 {
        self.sigma.iter().map(|&s| s as f64).product()
    }
}

/// Creation times (decreasing), impact directions and incoming velocities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreationParams {
    pub times: Vec<f64>,
    pub nu: Vec<Vec3>,
    pub vbar: Vec<Vec3>,
}

impl CreationParams {
    pub fn validate(&self, t: f64, r: usize) -> Result<(), PseudoError> {
        if self.times.len() != r || self.nu.len() != r || self.vbar.len() != r {
            return Err(PseudoError::InvalidParams(format!("expected {r} creations")));
        }
        let mut prev = t;
        for &tk in &self.times {
            if !(tk < prev && tk > 0.0) {
                return Err(PseudoError::InvalidParams(format!(
                    "creation times must satisfy t > t_1 > .. > 0, got {:?}",
                    self.times
                )));
            }
            prev = tk;
        }
        for n in &self.nu {
            if (n.norm() - 1.0).abs() > 1e-9 {
                return Err(PseudoError::InvalidParams("impact directions must be unit".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogKind {
    Start,
    /// `v_parent` is the progenitor's velocity just after the creation time
    /// (forward), `vbar` the incoming velocity of the new particle.
    Creation {
        particle: usize,
        parent: usize,
        sigma: i8,
        v_parent: Vec3,
        vbar: Vec3,
    },
    Reflection {
        particle: usize,
        wall: Wall,
        grazing: bool,
    },
    Collision {
        i: usize,
        j: usize,
        grazing: bool,
    },
    End,
}

/// One backward event with the configuration right after it has been
/// processed, i.e. just before `time` in forward time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub time: f64,
    pub kind: LogKind,
    pub particles: Vec<Particle>,
    pub heads: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub mode: Mode,
    pub epsilon: f64,
    pub t: f64,
    pub roots: usize,
    pub entries: Vec<LogEntry>,
    /// `(particle, time)` of an inadmissible creation that ended the build.
    pub aborted: Option<(usize, f64)>,
}

impl EventLog {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# mode={} epsilon={:e} t={:e} roots={}",
            self.mode.as_str(),
            self.epsilon,
            self.t,
            self.roots
        );
        for e in &self.entries {
            let _ = write!(out, "{:.16e} ", e.time);
            let _ = match e.kind {
                LogKind::Start => write!(out, "START"),
                LogKind::End => write!(out, "END"),
                LogKind::Creation {
                    particle, parent, sigma, ..
                } => write!(out, "CREATE {particle} parent={parent} sigma={sigma:+}"),
                LogKind::Reflection {
                    particle, wall, grazing,
                } => write!(
                    out,
                    "REFLECT {particle} wall={}{}",
                    wall.x1() as u8,
                    if grazing { " grazing" } else { "" }
                ),
                LogKind::Collision { i, j, grazing } => {
                    write!(out, "COLLIDE {i} {j}{}", if grazing { " grazing" } else { "" })
                }
            };
            let heads: Vec<String> = e.heads.iter().map(|h| h.to_string()).collect();
            let _ = writeln!(out, " heads={}", heads.join(","));
        }
        if let Some((k, time)) = self.aborted {
            let _ = writeln!(out, "{time:.16e} ABORT {k}");
        }
        out
    }

    fn final_entry(&self) -> Option<&LogEntry> {
        self.entries.last().filter(|e| e.kind == LogKind::End)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pseudotrajectory {
    /// All `s + r` particles at time 0.
    pub final_config: Vec<Particle>,
    pub log: EventLog,
}

impl Pseudotrajectory {
    /// `v_{a(k)}(t_k^+)` for each creation, in creation order.
    pub fn parent_velocities(&self) -> Vec<Vec3> {
        self.log
            .entries
            .iter()
            .filter_map(|e| match e.kind {
                LogKind::Creation { v_parent, .. } => Some(v_parent),
                _ => None,
            })
            .collect()
    }
}

fn snapshot(sim: &Simulator, t: f64, kind: LogKind) -> LogEntry {
    let st = sim.state();
    LogEntry {
        time: t - st.time,
        kind,
        particles: st
            .particles
            .iter()
            .map(|p| Particle { x: p.x, v: -p.v })
            .collect(),
        heads: st.records.iter().map(|r| r.head()).collect(),
    }
}

/// Runs the backward flow from `t` to 0 along `tree`.
///
/// The backward dynamics is the forward event engine applied to the system
/// with negated velocities and time-reversed records. `records` holds one
/// record per label; the first `s` are the root particles' records at time
/// `t`, the others are attached at creation.
pub fn build_backward(
    mode: Mode,
    epsilon: f64,
    t: f64,
    zs: &[Particle],
    tree: &CollisionTree,
    params: &CreationParams,
    records: &[ReflectionRecord],
) -> Result<Pseudotrajectory, PseudoError> {
    tree.validate()?;
    let (s, r) = (tree.s, tree.r());
    if zs.len() != s {
        return Err(PseudoError::InvalidParams(format!("{} root particles for s = {s}", zs.len())));
    }
    if records.len() < s + r {
        return Err(PseudoError::InvalidParams(format!("need {} records", s + r)));
    }
    if !(t >= 0.0) {
        return Err(PseudoError::InvalidParams(format!("t = {t}")));
    }
    params.validate(t, r)?;
    let eps = match mode {
        Mode::Epsilon => epsilon,
        Mode::Zero => 0.0,
    };
    if eps > 0.0 {
        for i in 0..s {
            for j in 0..i {
                if distance(&zs[i].x, &zs[j].x) <= eps {
                    return Err(PseudoError::InitialOverlap { i: j + 1, j: i + 1 });
                }
            }
        }
    }
    let state = SystemState {
        particles: zs.iter().map(|p| Particle { x: p.x, v: -p.v }).collect(),
        records: records[..s].iter().map(|r| r.clone().time_reversed()).collect(),
        epsilon: eps,
        time: 0.0,
    };
    let mut sim = Simulator::new(state, SimConfig::default())?;
    let mut log = EventLog {
        mode,
        epsilon,
        t,
        roots: s,
        entries: vec![snapshot(&sim, t, LogKind::Start)],
        aborted: None,
    };
    for k in 0..=r {
        let target = if k < r { t - params.times[k] } else { t };
        while let Some(rep) = sim.step_until(target)? {
            let kind = match rep.kind {
                EventKind::WallReflection(i) => LogKind::Reflection {
                    particle: i + 1,
                    wall: rep.wall.unwrap_or(Wall::X1Zero),
                    grazing: rep.grazing,
                },
                EventKind::PairCollision(i, j) => LogKind::Collision {
                    i: i + 1,
                    j: j + 1,
                    grazing: rep.grazing,
                },
            };
            log.entries.push(snapshot(&sim, t, kind));
        }
        sim.run_until(target, &[], |_| {})?;
        if k == r {
            break;
        }
        let label = s + k + 1;
        let parent = tree.a[k];
        let sigma = tree.sigma[k];
        let (nu, vbar) = (params.nu[k], params.vbar[k]);
        let pa = sim.state().particles[parent - 1];
        let v_a = -pa.v;
        let abort = |log: &mut EventLog, reason| {
            log.aborted = Some((label, params.times[k]));
            PseudoError::InadmissibleCreation {
                particle: label,
                time: params.times[k],
                reason,
                log: Box::new(log.clone()),
            }
        };
        if sigma as f64 * nu.dot(&(vbar - v_a)) <= 0.0 {
            return Err(abort(&mut log, Inadmissible::SignConstraint));
        }
        let (va_minus, vk_minus) = if sigma > 0 {
            scatter(&v_a, &vbar, &nu)
        } else {
            (v_a, vbar)
        };
        let raw = pa.x.to_vec() + nu * eps;
        if !(0.0..=1.0).contains(&raw.x) {
            return Err(abort(&mut log, Inadmissible::OutsideSlab));
        }
        let xk = Position::from_vec(&raw).map_err(|_| abort(&mut log, Inadmissible::OutsideSlab))?;
        if eps > 0.0 {
            if let Some(j) = sim
                .state()
                .particles
                .iter()
                .enumerate()
                .position(|(j, q)| j != parent - 1 && distance(&q.x, &xk) <= eps)
            {
                return Err(abort(&mut log, Inadmissible::Overlap { other: j + 1 }));
            }
        }
        let rec = records[label - 1].clone().time_reversed();
        sim.modify(|st| {
            st.particles[parent - 1].v = -va_minus;
            st.particles.push(Particle { x: xk, v: -vk_minus });
            st.records.push(rec);
        });
        if sigma > 0 {
            sim.note_scattering(parent - 1);
        }
        log.entries.push(snapshot(
            &sim,
            t,
            LogKind::Creation {
                particle: label,
                parent,
                sigma,
                v_parent: v_a,
                vbar,
            },
        ));
    }
    let mut end = snapshot(&sim, t, LogKind::End);
    end.time = 0.0;
    let final_config = end.particles.clone();
    log.entries.push(end);
    Ok(Pseudotrajectory { final_config, log })
}

/// `prod_k [sigma_k nu_k.(vbar_k - v_{a(k)}(t_k^+))]_+`.
pub fn creation_weight(tree: &CollisionTree, params: &CreationParams, v_parents: &[Vec3]) -> f64 {
    tree.sigma
        .iter()
        .zip(&params.nu)
        .zip(&params.vbar)
        .zip(v_parents)
        .map(|(((&sg, nu), vbar), va)| (sg as f64 * nu.dot(&(vbar - va))).max(0.0))
        .product()
}

/// Largest torus distance between homologous particles.
pub fn final_distance(eps_config: &[Particle], zero_config: &[Particle]) -> Result<f64, PseudoError> {
    if eps_config.len() != zero_config.len() {
        return Err(PseudoError::ParticleCountMismatch {
            left: eps_config.len(),
            right: zero_config.len(),
        });
    }
    Ok(eps_config
        .iter()
        .zip(zero_config)
        .map(|(a, b)| distance(&a.x, &b.x))
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscrepancyClass {
    Clean,
    Shift,
    Recollision,
    Overlap,
    NearBoundaryCreation,
    Grazing,
}

impl DiscrepancyClass {
    pub const ALL: [DiscrepancyClass; 6] = [
        DiscrepancyClass::Clean,
        DiscrepancyClass::Shift,
        DiscrepancyClass::Recollision,
        DiscrepancyClass::Overlap,
        DiscrepancyClass::NearBoundaryCreation,
        DiscrepancyClass::Grazing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DiscrepancyClass::Clean => "clean",
            DiscrepancyClass::Shift => "shift",
            DiscrepancyClass::Recollision => "recollision",
            DiscrepancyClass::Overlap => "overlap",
            DiscrepancyClass::NearBoundaryCreation => "near_boundary_creation",
            DiscrepancyClass::Grazing => "grazing",
        }
    }
}

impl fmt::Display for DiscrepancyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checkpoints (creations and the end) as `(time, heads)`.
fn checkpoints(log: &EventLog) -> Vec<(f64, &[i64])> {
    log.entries
        .iter()
        .filter(|e| matches!(e.kind, LogKind::Creation { .. } | LogKind::End))
        .map(|e| (e.time, e.heads.as_slice()))
        .collect()
}

/// Time of the first creation (or the end) at which the record heads differ.
fn first_shift(eps_log: &EventLog, zero_log: &EventLog) -> Option<f64> {
    let a = checkpoints(eps_log);
    let b = checkpoints(zero_log);
    a.iter().zip(&b).find(|(x, y)| x.1 != y.1).map(|(x, _)| x.0)
}

fn first_recollision(eps_log: &EventLog) -> Option<f64> {
    eps_log
        .entries
        .iter()
        .find(|e| matches!(e.kind, LogKind::Collision { .. }))
        .map(|e| e.time)
}

/// First time (backward) at which two point particles come closer than
/// `epsilon`. A new particle and its progenitor are exempt until either of
/// them changes velocity again.
fn first_overlap(zero_log: &EventLog, epsilon: f64) -> Option<f64> {
    let mut exempt: Vec<(usize, usize)> = Vec::new();
    let entries = &zero_log.entries;
    for m in 0..entries.len().saturating_sub(1) {
        let e = &entries[m];
        match e.kind {
            LogKind::Creation {
                particle, parent, sigma, ..
            } => {
                if sigma > 0 {
                    exempt.retain(|&(a, b)| a != parent && b != parent);
                }
                exempt.push((particle, parent));
            }
            LogKind::Reflection { particle, .. } => {
                exempt.retain(|&(a, b)| a != particle && b != particle);
            }
            _ => {}
        }
        let h = e.time - entries[m + 1].time;
        let ps = &e.particles;
        for i in 0..ps.len() {
            for j in 0..i {
                let (li, lj) = (i + 1, j + 1);
                if exempt.contains(&(li, lj)) || exempt.contains(&(lj, li)) {
                    continue;
                }
                let d = minimum_image_displacement(&ps[j].x, &ps[i].x);
                if d.norm() < epsilon {
                    return Some(e.time);
                }
                if h <= 0.0 {
                    continue;
                }
                let w = ps[j].v - ps[i].v;
                if let Some(s) = predict_pair_collision(&d, &w, epsilon, h) {
                    return Some(e.time - s);
                }
            }
        }
    }
    None
}

fn near_boundary(eps_log: &EventLog, margin: f64) -> Option<f64> {
    eps_log
        .entries
        .iter()
        .find(|e| match e.kind {
            LogKind::Creation { particle, parent, .. } => {
                let xa = &e.particles[parent - 1].x;
                xa.wall_distance() < margin
                    || e.particles
                        .iter()
                        .enumerate()
                        .any(|(j, q)| j + 1 != parent && j + 1 != particle && distance(&q.x, xa) < margin)
            }
            _ => false,
        })
        .map(|e| e.time)
}

/// Time of the first event violating the grazing cutoffs.
fn grazing_time(eps_log: &EventLog, epsilon: f64) -> Option<f64> {
    let g = epsilon.powf(0.25);
    let cut = epsilon.powf(1.0 / 3.0);
    let e1 = |v: &Vec3| v.x.abs();
    for e in &eps_log.entries {
        let ps = &e.particles;
        match e.kind {
            LogKind::Start => {
                if ps.iter().any(|p| e1(&p.v) <= g) {
                    return Some(e.time);
                }
            }
            LogKind::Creation {
                particle,
                parent,
                sigma,
                v_parent,
                vbar,
            } => {
                let xa = &ps[parent - 1].x;
                if xa.wall_distance() < cut
                    || ps
                        .iter()
                        .enumerate()
                        .any(|(j, q)| j + 1 != parent && j + 1 != particle && distance(&q.x, xa) < cut)
                {
                    return Some(e.time);
                }
                let after = |m: usize| -> Vec3 {
                    if m == particle {
                        vbar
                    } else if m == parent {
                        v_parent
                    } else {
                        ps[m - 1].v
                    }
                };
                let mut deviated = vec![particle];
                if sigma > 0 {
                    deviated.push(parent);
                }
                for &j in &deviated {
                    if e1(&ps[j - 1].v) <= g {
                        return Some(e.time);
                    }
                    let vj = after(j);
                    if (1..=particle).any(|m| m != j && e1(&(vj - after(m))) <= g) {
                        return Some(e.time);
                    }
                }
            }
            LogKind::Reflection { particle, grazing, .. } => {
                if grazing {
                    return Some(e.time);
                }
                let v = ps[particle - 1].v;
                if e1(&v) <= g {
                    return Some(e.time);
                }
                if ps
                    .iter()
                    .enumerate()
                    .any(|(k, q)| k + 1 != particle && (v - q.v).norm() <= g)
                {
                    return Some(e.time);
                }
            }
            LogKind::Collision { grazing, .. } => {
                if grazing {
                    return Some(e.time);
                }
            }
            LogKind::End => {}
        }
    }
    None
}

/// Class of the first backward discrepancy between the hard-sphere and the
/// point-particle pseudotrajectories built from the same tree, parameters and
/// records. `eps_log` may be the partial log of an aborted build.
pub fn classify_discrepancy(eps_log: &EventLog, zero_log: &EventLog, epsilon: f64) -> DiscrepancyClass {
    let floor = eps_log.aborted.map_or(f64::NEG_INFINITY, |(_, t)| t);
    let candidates = [
        (first_recollision(eps_log), DiscrepancyClass::Recollision),
        (first_overlap(zero_log, epsilon).filter(|&t| t >= floor), DiscrepancyClass::Overlap),
        (first_shift(eps_log, zero_log), DiscrepancyClass::Shift),
    ];
    let mut best: Option<(f64, DiscrepancyClass)> = None;
    for (time, class) in candidates {
        if let Some(time) = time {
            if best.is_none_or(|(b, _)| time > b) {
                best = Some((time, class));
            }
        }
    }
    if let Some((_, class)) = best {
        return class;
    }
    if eps_log.aborted.is_some() || near_boundary(eps_log, 2.0 * epsilon).is_some() {
        return DiscrepancyClass::NearBoundaryCreation;
    }
    if grazing_time(eps_log, epsilon).is_some() {
        return DiscrepancyClass::Grazing;
    }
    if eps_log.final_entry().is_none() || zero_log.final_entry().is_none() {
        return DiscrepancyClass::NearBoundaryCreation;
    }
    DiscrepancyClass::Clean
}

/// Whether the hard-sphere log violates one of the grazing cutoffs,
/// regardless of any earlier discrepancy.
pub fn in_grazing_set(eps_log: &EventLog, epsilon: f64) -> bool {
    grazing_time(eps_log, epsilon).is_some()
}
