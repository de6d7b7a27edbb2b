//! Event-driven hard-sphere dynamics in the slab with diffuse wall reflection.
//!
//! Events live in a binary heap and are invalidated lazily: each particle
//! carries a counter that is bumped whenever its velocity changes or its
//! predictions are refreshed, and a queued event is discarded when the
//! counters it was predicted with no longer match.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::Equilibrium;
use crate::geometry::{advect, minimum_image_displacement, wall_hit_time, GeometryError, Position, Wall};
use crate::kernels::scatter;
use crate::randomness::{
    sample_initial_configuration, PlacementOptions, RandomnessError, ReflectionRecord, RngSeed,
};
use crate::stats::{Accumulator, Estimate};
use crate::Vec3;

/// Normal relative speeds (pairs) or normal speeds (walls) below this are
/// treated as grazing.
pub const GRAZING_THRESHOLD: f64 = 1e-10;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("more than {limit} events within a window of length {window} ending at t = {time}")]
    StuckDetected { time: f64, window: f64, limit: u64 },
    #[error("particle {particle} reflected {reflections} times, bound is {bound}")]
    ReflectionBoundViolated {
        particle: usize,
        reflections: u64,
        bound: u64,
    },
    #[error("particles {i} and {j} overlap: distance {distance} < {epsilon}")]
    Overlap {
        i: usize,
        j: usize,
        distance: f64,
        epsilon: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub x: Position,
    pub v: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub particles: Vec<Particle>,
    pub records: Vec<ReflectionRecord>,
    pub epsilon: f64,
    pub time: f64,
}

impl SystemState {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.particles.iter().map(|p| p.v.norm_squared()).sum::<f64>()
    }

    pub fn momentum(&self) -> Vec3 {
        self.particles.iter().map(|p| p.v).sum()
    }

    /// Smallest pairwise slab-torus distance and the pair realizing it.
    pub fn min_pair_distance(&self) -> Option<(f64, usize, usize)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..self.len() {
            for j in 0..i {
                let d = minimum_image_displacement(&self.particles[j].x, &self.particles[i].x).norm();
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, j, i));
                }
            }
        }
        best
    }

    pub fn check_exclusion(&self, tol: f64) -> Result<(), SimError> {
        if let Some((d, i, j)) = self.min_pair_distance() {
            if d < self.epsilon - tol {
                return Err(SimError::Overlap {
                    i,
                    j,
                    distance: d,
                    epsilon: self.epsilon,
                });
            }
        }
        Ok(())
    }

    /// Free flight of every particle; the caller guarantees no wall crossing.
    pub fn advance(&mut self, dt: f64) -> Result<(), SimError> {
        for p in &mut self.particles {
            p.x = advect(&p.x, &p.v, dt)?;
        }
        self.time += dt;
        Ok(())
    }
}

/// Elastic collision with contact direction `nu` (from `j` to `i`).
pub fn apply_collision(vi: &Vec3, vj: &Vec3, nu: &Vec3) -> (Vec3, Vec3) {
    scatter(vi, vj, nu)
}

/// First contact time of two spheres of diameter `epsilon` within `(0, horizon]`.
///
/// `d = x_i - x_j` (minimum image) and `w = v_i - v_j`. Torus images are
/// enumerated from the bounding box of the relative motion over the horizon.
/// Tangential contacts are reported as absent.
pub fn predict_pair_collision(d: &Vec3, w: &Vec3, epsilon: f64, horizon: f64) -> Option<f64> {
    if !(horizon > 0.0) {
        return None;
    }
    let a = w.norm_squared();
    if a == 0.0 {
        return None;
    }
    let h = if horizon.is_finite() {
        horizon
    } else {
        // without a horizon only the nearest image can be reached before the
        // relative motion has to pass it
        return solve_image(d, w, a, epsilon);
    };
    let end = d + w * h;
    if d.x.min(end.x) > epsilon || d.x.max(end.x) < -epsilon {
        return None;
    }
    let range = |lo: f64, hi: f64| -> (i64, i64) {
        ((-epsilon - hi).ceil() as i64, (epsilon - lo).floor() as i64)
    };
    let (k2a, k2b) = range(d.y.min(end.y), d.y.max(end.y));
    let (k3a, k3b) = range(d.z.min(end.z), d.z.max(end.z));
    let mut best: Option<f64> = None;
    for k2 in k2a..=k2b {
        for k3 in k3a..=k3b {
            let dd = Vec3::new(d.x, d.y + k2 as f64, d.z + k3 as f64);
            if let Some(t) = solve_image(&dd, w, a, epsilon) {
                if t <= h && best.is_none_or(|b| t < b) {
                    best = Some(t);
                }
            }
        }
    }
    best
}

fn solve_image(dd: &Vec3, w: &Vec3, a: f64, epsilon: f64) -> Option<f64> {
    let b = dd.dot(w);
    if b >= 0.0 {
        return None;
    }
    let c = dd.norm_squared() - epsilon * epsilon;
    if c <= 0.0 {
        // touching or overlapping by round-off while approaching
        return (-b / epsilon >= GRAZING_THRESHOLD).then_some(0.0);
    }
    let disc = b * b - a * c;
    if disc <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    if sq / epsilon < GRAZING_THRESHOLD {
        return None;
    }
    Some(c / (-b + sq))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Longest time pair predictions are trusted before a refresh.
    pub horizon_cap: f64,
    pub stuck_window: f64,
    /// `None` means `1e3 * N + 1e4`.
    pub max_events_per_unit_time: Option<f64>,
    pub check_reflection_bound: bool,
    /// Keep an [`EventReport`] log.
    pub log_events: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon_cap: 0.5,
            stuck_window: 0.01,
            max_events_per_unit_time: None,
            check_reflection_bound: true,
            log_events: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    PairCollision(usize, usize),
    WallReflection(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub time: f64,
    pub kind: EventKind,
    /// Skipped as grazing; velocities were left unchanged (pairs) or the
    /// normal component was flipped without consuming the record (walls).
    pub grazing: bool,
    pub wall: Option<Wall>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParticleCounters {
    pub reflections: u64,
    pub collisions: u64,
    pub path_length: f64,
}

impl ParticleCounters {
    /// Between two reflections without an intermediate collision a particle
    /// crosses the whole slab, so reflections are at most
    /// `1 + collisions + floor(path length)`.
    pub fn reflection_bound(&self) -> u64 {
        1 + self.collisions + (self.path_length + 1e-9).floor() as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub events: u64,
    pub collisions: u64,
    pub reflections: u64,
    pub grazing_pairs: u64,
    pub grazing_walls: u64,
    pub rechecks: u64,
    pub per_particle: Vec<ParticleCounters>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum QKind {
    Pair,
    Wall0,
    Wall1,
    Recheck,
}

#[derive(Clone, Copy, Debug)]
struct QEntry {
    time: f64,
    a: usize,
    b: usize,
    kind: QKind,
    stamp_a: u64,
    stamp_b: u64,
}

impl QEntry {
    fn key(&self) -> (usize, usize, u8) {
        let k = match self.kind {
            QKind::Pair => 0,
            QKind::Wall0 | QKind::Wall1 => 1,
            QKind::Recheck => 2,
        };
        (self.a, self.b, k)
    }
}

impl PartialEq for QEntry {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for QEntry {}
impl PartialOrd for QEntry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for QEntry {
    fn cmp(&self, o: &Self) -> Ordering {
        self.time
            .total_cmp(&o.time)
            .then_with(|| self.key().cmp(&o.key()))
            .then_with(|| (self.stamp_a, self.stamp_b).cmp(&(o.stamp_a, o.stamp_b)))
    }
}

/// Event loop over one [`SystemState`].
pub struct Simulator {
    state: SystemState,
    cfg: SimConfig,
    queue: BinaryHeap<Reverse<QEntry>>,
    stamps: Vec<u64>,
    horizon: Vec<f64>,
    diag: Diagnostics,
    window_start: f64,
    window_events: u64,
    log: Vec<EventReport>,
}

impl Simulator {
    pub fn new(state: SystemState, cfg: SimConfig) -> Result<Self, SimError> {
        if state.epsilon >= 0.5 {
            return Err(SimError::InvalidArgument(format!(
                "epsilon = {} must be below half the torus period",
                state.epsilon
            )));
        }
        if state.records.len() != state.particles.len() {
            return Err(SimError::InvalidArgument("one reflection record per particle".into()));
        }
        let n = state.len();
        let mut s = Self {
            window_start: state.time,
            state,
            cfg,
            queue: BinaryHeap::new(),
            stamps: vec![0; n],
            horizon: vec![0.0; n],
            diag: Diagnostics {
                per_particle: vec![ParticleCounters::default(); n],
                ..Default::default()
            },
            window_events: 0,
            log: Vec::new(),
        };
        s.rebuild();
        Ok(s)
    }

    pub fn state(&self) -> &SystemState {
        &self.state
    }

    pub fn into_state(self) -> SystemState {
        self.state
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diag
    }

    pub fn log(&self) -> &[EventReport] {
        &self.log
    }

    pub fn take_log(&mut self) -> Vec<EventReport> {
        std::mem::take(&mut self.log)
    }

    pub fn time(&self) -> f64 {
        self.state.time
    }

    /// Applies `f` to the state (e.g. to add particles or change velocities)
    /// and re-predicts every event.
    pub fn modify<T>(&mut self, f: impl FnOnce(&mut SystemState) -> T) -> T {
        let out = f(&mut self.state);
        let n = self.state.len();
        self.stamps.resize(n, 0);
        self.horizon.resize(n, 0.0);
        self.diag.per_particle.resize(n, ParticleCounters::default());
        for s in &mut self.stamps {
            *s += 1;
        }
        self.rebuild();
        out
    }

    /// Counts an external velocity change of particle `i` (e.g. a scattering
    /// applied through [`modify`](Self::modify)) toward its reflection bound.
    pub fn note_scattering(&mut self, i: usize) {
        if let Some(c) = self.diag.per_particle.get_mut(i) {
            c.collisions += 1;
        }
    }

    fn event_limit(&self) -> u64 {
        let rate = self
            .cfg
            .max_events_per_unit_time
            .unwrap_or(1e3 * self.state.len() as f64 + 1e4);
        (rate * self.cfg.stuck_window).ceil().max(16.0) as u64
    }

    fn rebuild(&mut self) {
        self.queue.clear();
        let n = self.state.len();
        for i in 0..n {
            self.predict_wall(i);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                self.predict_pair(i, j);
            }
        }
    }

    fn predict_wall(&mut self, i: usize) {
        let now = self.state.time;
        let p = self.state.particles[i];
        let mut hz = now + self.cfg.horizon_cap;
        if let Some(h) = wall_hit_time(&p.x, &p.v) {
            let t = now + h.time;
            if t.is_finite() {
                self.queue.push(Reverse(QEntry {
                    time: t,
                    a: i,
                    b: i,
                    kind: if h.wall == Wall::X1Zero {
                        QKind::Wall0
                    } else {
                        QKind::Wall1
                    },
                    stamp_a: self.stamps[i],
                    stamp_b: self.stamps[i],
                }));
                hz = hz.min(t);
            }
        }
        if hz == now + self.cfg.horizon_cap {
            self.queue.push(Reverse(QEntry {
                time: hz,
                a: i,
                b: i,
                kind: QKind::Recheck,
                stamp_a: self.stamps[i],
                stamp_b: self.stamps[i],
            }));
        }
        self.horizon[i] = hz;
    }

    fn predict_pair(&mut self, i: usize, j: usize) {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        if self.state.epsilon <= 0.0 {
            return;
        }
        let now = self.state.time;
        let h = self.horizon[i].min(self.horizon[j]) - now;
        if h <= 0.0 {
            return;
        }
        let (pi, pj) = (&self.state.particles[i], &self.state.particles[j]);
        let d = minimum_image_displacement(&pj.x, &pi.x);
        let w = pi.v - pj.v;
        if let Some(t) = predict_pair_collision(&d, &w, self.state.epsilon, h) {
            self.queue.push(Reverse(QEntry {
                time: now + t,
                a: i,
                b: j,
                kind: QKind::Pair,
                stamp_a: self.stamps[i],
                stamp_b: self.stamps[j],
            }));
        }
    }

    /// Refresh all predictions involving the particles in `set`.
    fn repredict(&mut self, set: &[usize]) {
        for &i in set {
            self.stamps[i] += 1;
        }
        for &i in set {
            self.predict_wall(i);
        }
        let n = self.state.len();
        for (k, &i) in set.iter().enumerate() {
            for j in 0..n {
                if j == i || set[..k].contains(&j) {
                    continue;
                }
                self.predict_pair(i, j);
            }
        }
    }

    fn valid(&self, e: &QEntry) -> bool {
        e.a < self.stamps.len()
            && e.b < self.stamps.len()
            && self.stamps[e.a] == e.stamp_a
            && self.stamps[e.b] == e.stamp_b
    }

    fn advance_to(&mut self, t: f64) -> Result<(), SimError> {
        let dt = t - self.state.time;
        if dt <= 0.0 {
            return Ok(());
        }
        for (p, c) in self.state.particles.iter_mut().zip(self.diag.per_particle.iter_mut()) {
            p.x = advect(&p.x, &p.v, dt)?;
            c.path_length += p.v.norm() * dt;
        }
        self.state.time = t;
        Ok(())
    }

    /// Time of the next valid event, if any.
    pub fn peek_time(&mut self) -> Option<f64> {
        loop {
            let e = self.queue.peek()?.0;
            if self.valid(&e) {
                return Some(e.time);
            }
            self.queue.pop();
        }
    }

    /// Processes the next event if it happens no later than `t_limit`.
    pub fn step_until(&mut self, t_limit: f64) -> Result<Option<EventReport>, SimError> {
        loop {
            let Some(Reverse(e)) = self.queue.peek().copied() else {
                return Ok(None);
            };
            if !self.valid(&e) {
                self.queue.pop();
                continue;
            }
            if e.time > t_limit {
                return Ok(None);
            }
            self.queue.pop();
            self.advance_to(e.time)?;
            if e.kind == QKind::Recheck {
                self.diag.rechecks += 1;
                self.repredict(&[e.a]);
                continue;
            }
            self.count_event()?;
            let report = match e.kind {
                QKind::Wall0 | QKind::Wall1 => self.reflect(e.a, e.kind)?,
                QKind::Pair => self.collide(e.a, e.b),
                QKind::Recheck => unreachable!(),
            };
            if self.cfg.log_events {
                self.log.push(report);
            }
            return Ok(Some(report));
        }
    }

    /// Processes the next event regardless of its time.
    pub fn step_to_next_event(&mut self) -> Result<Option<EventReport>, SimError> {
        self.step_until(f64::INFINITY)
    }

    fn count_event(&mut self) -> Result<(), SimError> {
        self.diag.events += 1;
        if self.state.time - self.window_start > self.cfg.stuck_window {
            self.window_start = self.state.time;
            self.window_events = 0;
        }
        self.window_events += 1;
        let limit = self.event_limit();
        if self.window_events > limit {
            return Err(SimError::StuckDetected {
                time: self.state.time,
                window: self.cfg.stuck_window,
                limit,
            });
        }
        Ok(())
    }

    fn reflect(&mut self, i: usize, kind: QKind) -> Result<EventReport, SimError> {
        let wall = if kind == QKind::Wall0 {
            Wall::X1Zero
        } else {
            Wall::X1One
        };
        let p = &mut self.state.particles[i];
        p.x.x1 = wall.x1();
        let grazing = p.v.x.abs() < GRAZING_THRESHOLD;
        if grazing {
            p.v.x = -p.v.x;
            self.diag.grazing_walls += 1;
        } else {
            p.v = self.state.records[i].consume_reflection(&p.v, wall.gamma())?;
            self.diag.reflections += 1;
            let c = &mut self.diag.per_particle[i];
            c.reflections += 1;
            if self.cfg.check_reflection_bound && c.reflections > c.reflection_bound() {
                return Err(SimError::ReflectionBoundViolated {
                    particle: i,
                    reflections: c.reflections,
                    bound: c.reflection_bound(),
                });
            }
        }
        self.repredict(&[i]);
        Ok(EventReport {
            time: self.state.time,
            kind: EventKind::WallReflection(i),
            grazing,
            wall: Some(wall),
        })
    }

    fn collide(&mut self, i: usize, j: usize) -> EventReport {
        let (pi, pj) = (self.state.particles[i], self.state.particles[j]);
        let d = minimum_image_displacement(&pj.x, &pi.x);
        let nu = d / d.norm();
        let un = nu.dot(&(pi.v - pj.v));
        let grazing = un.abs() < GRAZING_THRESHOLD;
        if grazing {
            self.diag.grazing_pairs += 1;
        } else if un < 0.0 {
            let (a, b) = apply_collision(&pi.v, &pj.v, &nu);
            self.state.particles[i].v = a;
            self.state.particles[j].v = b;
            self.diag.collisions += 1;
            self.diag.per_particle[i].collisions += 1;
            self.diag.per_particle[j].collisions += 1;
        }
        self.repredict(&[i, j]);
        EventReport {
            time: self.state.time,
            kind: EventKind::PairCollision(i, j),
            grazing,
            wall: None,
        }
    }

    /// Runs to `t_end`, calling `observer` at each sample time in
    /// `sample_times` that falls in `[now, t_end]` (sorted ascending).
    pub fn run_until(
        &mut self,
        t_end: f64,
        sample_times: &[f64],
        mut observer: impl FnMut(&SystemState),
    ) -> Result<(), SimError> {
        if t_end < self.state.time {
            return Err(SimError::InvalidArgument(format!(
                "t_end = {t_end} before current time {}",
                self.state.time
            )));
        }
        let now = self.state.time;
        let mut samples = sample_times
            .iter()
            .copied()
            .filter(|&t| t >= now && t <= t_end)
            .peekable();
        loop {
            let next_sample = samples.peek().copied().unwrap_or(f64::INFINITY);
            let limit = next_sample.min(t_end);
            while self.step_until(limit)?.is_some() {}
            self.advance_to(limit)?;
            if next_sample <= t_end {
                observer(&self.state);
                samples.next();
            } else {
                break;
            }
        }
        Ok(())
    }
}

/// Runs `state` to `t_end` and returns the final state with diagnostics.
pub fn simulate(
    state: SystemState,
    t_end: f64,
    cfg: SimConfig,
    sample_times: &[f64],
    observer: impl FnMut(&SystemState),
) -> Result<(SystemState, Diagnostics), SimError> {
    let mut sim = Simulator::new(state, cfg)?;
    sim.run_until(t_end, sample_times, observer)?;
    let diag = sim.diag.clone();
    Ok((sim.into_state(), diag))
}

/// Times of all shocks (collisions and reflections) in `[0, t_end]`.
pub fn shock_times(state: SystemState, t_end: f64) -> Result<Vec<f64>, SimError> {
    let mut sim = Simulator::new(state, SimConfig::default())?;
    let mut out = Vec::new();
    while let Some(r) = sim.step_until(t_end)? {
        out.push(r.time);
    }
    Ok(out)
}

/// Per replica and per `delta`, whether at least two shocks happen in
/// `[0, delta]`, starting from the equilibrium sampler.
pub fn double_shock_flags(
    n: usize,
    epsilon: f64,
    beta: f64,
    deltas: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Vec<bool>>, SimError> {
    let dmax = deltas.iter().copied().fold(0.0, f64::max);
    if dmax >= epsilon / 2.0 {
        return Err(SimError::InvalidArgument(format!(
            "delta = {dmax} must be below epsilon / 2 = {}",
            epsilon / 2.0
        )));
    }
    let f0 = Equilibrium { beta };
    let flags: Vec<Vec<bool>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>, SimError> {
            let st = sample_initial_configuration(
                RngSeed::new(seed, r as u64),
                n,
                epsilon,
                &f0,
                PlacementOptions::default(),
            )?;
            let times = shock_times(st, dmax)?;
            Ok(deltas
                .iter()
                .map(|&d| times.iter().filter(|&&t| t <= d).count() >= 2)
                .collect())
        })
        .collect::<Result<_, _>>()?;
    Ok(flags)
}

/// Probability of at least two shocks in `[0, delta]` for each `delta`; all
/// deltas share the same replicas.
pub fn double_shock_fractions(
    n: usize,
    epsilon: f64,
    beta: f64,
    deltas: &[f64],
    replicas: usize,
    seed: u64,
) -> Result<Vec<Estimate>, SimError> {
    let flags = double_shock_flags(n, epsilon, beta, deltas, replicas, seed)?;
    Ok((0..deltas.len())
        .map(|k| {
            flags
                .iter()
                .map(|f| if f[k] { 1.0 } else { 0.0 })
                .collect::<Accumulator>()
                .estimate()
        })
        .collect())
}

/// Single-delta form of [`double_shock_fractions`].
pub fn double_shock_fraction(
    n: usize,
    epsilon: f64,
    beta: f64,
    delta: f64,
    replicas: usize,
    seed: u64,
) -> Result<Estimate, SimError> {
    Ok(double_shock_fractions(n, epsilon, beta, &[delta], replicas, seed)?[0])
}
