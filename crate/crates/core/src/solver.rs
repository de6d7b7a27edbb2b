//! One-particle Boltzmann equation in the slab with diffuse wall reflection,
//! solved in mild form
//! `f(t) = T(t) f0 + int_0^t T(t - tau) C(f(tau), f(tau)) dtau`
//! by Picard iteration on a reduced grid.
//!
//! Densities invariant in `(x2, x3)` and axisymmetric about `e` depend only on
//! `(x1, |v|, v1/|v|)`; the grid stores them on a tensor grid in these three
//! coordinates. Between nodes the values are interpolated trilinearly after
//! multiplication by `exp(beta_w |v|^2 / 2)`, which makes Maxwellians with
//! inverse temperature `beta_w` exact.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{DensityFunction, GaussianEnvelope, Symmetry};
use crate::geometry::{advect, wall_hit_time, Position};
use crate::quadrature::GaussLegendre;
use crate::randomness::{sample_diffuse_direction, RngSeed, C3};
use crate::stats::{erfc, Accumulator, Estimate};
use crate::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("Picard iteration stalled: gap {gap:e} above tolerance {tol:e} after {iterations} iterations")]
    NoConvergence { iterations: usize, gap: f64, tol: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Values on the tensor grid `x1 x speed x cosine`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub x1: Vec<f64>,
    pub speed: Vec<f64>,
    pub cosine: Vec<f64>,
    /// Row-major in `(x1, speed, cosine)`.
    pub values: Vec<f64>,
    /// Interpolation weight `exp(beta_w s^2 / 2)`.
    pub beta_w: f64,
    #[serde(skip)]
    weighted: Vec<f64>,
}

fn uniform_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Cell index and fraction for `x` on a uniform grid, clamped.
#[inline]
fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    let (a, b) = (nodes[0], nodes[n - 1]);
    let u = ((x - a) / (b - a) * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    (i, u - i as f64)
}

impl GridDensity {
    pub fn new(x1: Vec<f64>, speed: Vec<f64>, cosine: Vec<f64>, values: Vec<f64>, beta_w: f64) -> Self {
        assert!(x1.len() >= 2 && speed.len() >= 2 && cosine.len() >= 2);
        assert_eq!(values.len(), x1.len() * speed.len() * cosine.len());
        let mut g = Self {
            x1,
            speed,
            cosine,
            values,
            beta_w,
            weighted: Vec::new(),
        };
        g.reweight();
        g
    }

    fn reweight(&mut self) {
        let (ns, nc) = (self.speed.len(), self.cosine.len());
        self.weighted = self
            .values
            .iter()
            .enumerate()
            .map(|(idx, &v)| {
                let s = self.speed[(idx / nc) % ns];
                v * (0.5 * self.beta_w * s * s).exp()
            })
            .collect();
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.x1.len(), self.speed.len(), self.cosine.len())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.speed.len() + j) * self.cosine.len() + k
    }

    pub fn v_max(&self) -> f64 {
        *self.speed.last().unwrap()
    }

    /// Interpolated value at reduced coordinates; zero beyond `v_max`.
    pub fn value(&self, x1: f64, s: f64, c: f64) -> f64 {
        if s > self.v_max() {
            return 0.0;
        }
        let (i, fx) = locate(&self.x1, x1);
        let (j, fs) = locate(&self.speed, s);
        let (k, fc) = locate(&self.cosine, c);
        let w = &self.weighted;
        let mut acc = 0.0;
        for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            for (dj, ws) in [(0, 1.0 - fs), (1, fs)] {
                if ws == 0.0 {
                    continue;
                }
                let base = self.index(i + di, j + dj, k);
                acc += wx * ws * ((1.0 - fc) * w[base] + fc * w[base + 1]);
            }
        }
        (acc * (-0.5 * self.beta_w * s * s).exp()).max(0.0)
    }

    /// Same as [`value`](Self::value) with `x1` on node `i`.
    #[inline]
    fn value_on_slice(&self, i: usize, s: f64, c: f64) -> f64 {
        if s > self.v_max() {
            return 0.0;
        }
        let (j, fs) = locate(&self.speed, s);
        let (k, fc) = locate(&self.cosine, c);
        let w = &self.weighted;
        let b0 = self.index(i, j, k);
        let b1 = self.index(i, j + 1, k);
        let acc = (1.0 - fs) * ((1.0 - fc) * w[b0] + fc * w[b0 + 1]) + fs * ((1.0 - fc) * w[b1] + fc * w[b1 + 1]);
        (acc * (-0.5 * self.beta_w * s * s).exp()).max(0.0)
    }

    /// Same with the speed on node `j`.
    #[inline]
    fn value_on_speed(&self, j: usize, x1: f64, c: f64) -> f64 {
        let (i, fx) = locate(&self.x1, x1);
        let (k, fc) = locate(&self.cosine, c);
        let v = &self.values;
        let b0 = self.index(i, j, k);
        let b1 = self.index(i + 1, j, k);
        ((1.0 - fx) * ((1.0 - fc) * v[b0] + fc * v[b0 + 1]) + fx * ((1.0 - fc) * v[b1] + fc * v[b1 + 1])).max(0.0)
    }

    /// Samples a density on the grid nodes.
    pub fn from_density(f: &dyn DensityFunction, spec: &GridSpec, v_max: f64, beta_w: f64) -> Self {
        let x1 = uniform_nodes(0.0, 1.0, spec.n_x);
        let speed = uniform_nodes(0.0, v_max, spec.n_speed);
        let cosine = uniform_nodes(-1.0, 1.0, spec.n_cos);
        let mut values = Vec::with_capacity(x1.len() * speed.len() * cosine.len());
        for &x in &x1 {
            for &s in &speed {
                for &c in &cosine {
                    values.push(f.eval_reduced(x, s, c));
                }
            }
        }
        Self::new(x1, speed, cosine, values, beta_w)
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self::new(self.x1.clone(), self.speed.clone(), self.cosine.clone(), values, self.beta_w)
    }

    /// `int phi(v) f(x1, v) dv` at every `x1` node by trapezoidal quadrature
    /// in speed and cosine; `phi` is given in reduced form `(s, c)`.
    pub fn velocity_moment(&self, phi: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (nx, ns, nc) = self.dims();
        let ws = trapezoid_weights(&self.speed);
        let wc = trapezoid_weights(&self.cosine);
        (0..nx)
            .map(|i| {
                let mut acc = 0.0;
                for j in 0..ns {
                    let s = self.speed[j];
                    for k in 0..nc {
                        acc += ws[j] * wc[k] * s * s * phi(s, self.cosine[k]) * self.values[self.index(i, j, k)];
                    }
                }
                2.0 * PI * acc
            })
            .collect()
    }

    /// `int_Lambda int phi f dv dx`.
    pub fn total_moment(&self, phi: impl Fn(f64, f64) -> f64) -> f64 {
        let m = self.velocity_moment(phi);
        trapezoid_weights(&self.x1).iter().zip(&m).map(|(w, v)| w * v).sum()
    }
}

fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { nodes[i] - nodes[i - 1] } else { 0.0 };
            let right = if i + 1 < n { nodes[i + 1] - nodes[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

impl DensityFunction for GridDensity {
    fn eval(&self, x: &Position, v: &Vec3) -> f64 {
        let s = v.norm();
        let c = if s > 0.0 { v.x / s } else { 0.0 };
        self.value(x.x1, s, c)
    }
    fn envelope(&self) -> GaussianEnvelope {
        let c = self.weighted.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
        GaussianEnvelope { c, beta: self.beta_w }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
    fn eval_reduced(&self, x1: f64, speed: f64, cosine: f64) -> f64 {
        self.value(x1, speed, cosine)
    }
}

/// Speed beyond which a Maxwellian with inverse temperature `beta` keeps
/// less than `tail` of its mass.
pub fn speed_cutoff(beta: f64, tail: f64) -> f64 {
    let mut v: f64 = 0.0;
    loop {
        let a = v * (0.5 * beta).sqrt();
        let p = erfc(a) + (2.0 * beta / PI).sqrt() * v * (-0.5 * beta * v * v).exp();
        if p < tail {
            return v;
        }
        v += 0.01;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TransportMode {
    /// Average over `n_paths` backward stochastic characteristics.
    MonteCarlo { n_paths: usize, seed: u64 },
    /// Boundary-trace expansion with Gauss-Legendre nodes in the wall cosine
    /// and `n_azimuth` equally spaced azimuths (1 suffices for axisymmetric
    /// densities).
    Series { n_gauss: usize, n_azimuth: usize },
}

/// `(T(t) g)(x, v)`: expectation of `g` along the backward characteristic
/// with diffuse reflection at the walls.
pub fn transport_apply(g: &dyn DensityFunction, t: f64, x: &Position, v: &Vec3, mode: TransportMode) -> Estimate {
    match mode {
        TransportMode::MonteCarlo { n_paths, seed } => {
            let mut rng = RngSeed::new(seed, 0).rng(11);
            let mut acc = Accumulator::new();
            for _ in 0..n_paths.max(1) {
                acc.push(transport_path(g, t, x, v, &mut rng));
            }
            acc.estimate()
        }
        TransportMode::Series { n_gauss, n_azimuth } => {
            let gl = GaussLegendre::new(n_gauss.max(1));
            let naz = if g.symmetry() == Symmetry::SlabAxisymmetric {
                1
            } else {
                n_azimuth.max(1)
            };
            let depth = (t * v.norm()).ceil() as usize + 1;
            Estimate::exact(transport_series(g, t, x, v, &gl, naz, depth))
        }
    }
}

fn transport_path<R: Rng + ?Sized>(g: &dyn DensityFunction, t: f64, x: &Position, v: &Vec3, rng: &mut R) -> f64 {
    let mut x = *x;
    let mut v = *v;
    let mut rem = t;
    let s = v.norm();
    loop {
        let back = -v;
        match wall_hit_time(&x, &back) {
            Some(h) if h.time < rem => {
                x = advect(&x, &back, h.time).expect("wall hit stays in the slab");
                x.x1 = h.wall.x1();
                rem -= h.time;
                // incoming forward velocity points into the wall
                v = sample_diffuse_direction(rng, -h.gamma) * s;
            }
            _ => {
                let y = advect(&x, &back, rem).expect("free flight stays in the slab");
                return g.eval(&y, &v);
            }
        }
    }
}

fn split_points(s: f64, rem: f64) -> Vec<(f64, f64)> {
    let mu_star = if s * rem > 1.0 { 1.0 / (s * rem) } else { 1.0 };
    if mu_star < 1.0 {
        vec![(0.0, mu_star), (mu_star, 1.0)]
    } else {
        vec![(0.0, 1.0)]
    }
}

fn transport_series(
    g: &dyn DensityFunction,
    t: f64,
    x: &Position,
    v: &Vec3,
    gl: &GaussLegendre,
    naz: usize,
    depth: usize,
) -> f64 {
    let back = -v;
    let s = v.norm();
    match wall_hit_time(x, &back) {
        Some(h) if h.time < t && depth > 0 => {
            let mut xw = advect(x, &back, h.time).expect("wall hit stays in the slab");
            xw.x1 = h.wall.x1();
            let rem = t - h.time;
            // incoming forward velocities at wall gamma have sign(v1) = -gamma;
            // their law is c3 |w.e| dw = 2 mu dmu dphi / (2 pi)
            let sign = -(h.gamma as f64);
            let mut acc = 0.0;
            for (a, b) in split_points(s, rem) {
                for (mu, w) in gl.on(a, b) {
                    let st = (1.0 - mu * mu).max(0.0).sqrt();
                    for m in 0..naz {
                        let phi = 2.0 * PI * (m as f64 + 0.5) / naz as f64;
                        let vin = Vec3::new(sign * mu, st * phi.cos(), st * phi.sin()) * s;
                        acc += w * 2.0 * mu / naz as f64 * transport_series(g, rem, &xw, &vin, gl, naz, depth - 1);
                    }
                }
            }
            acc
        }
        Some(h) if h.time < t => 0.0,
        _ => {
            let y = advect(x, &back, t).expect("free flight stays in the slab");
            g.eval(&y, v)
        }
    }
}

/// Transport of a reduced function `eval(x1, c)` at fixed speed `s`.
fn transport_reduced(eval: &dyn Fn(f64, f64) -> f64, s: f64, x1: f64, c: f64, tau: f64, gl: &GaussLegendre) -> f64 {
    let v1 = s * c;
    let hit = if v1 > 0.0 {
        Some((x1 / v1, 0.0, -1.0))
    } else if v1 < 0.0 {
        Some(((1.0 - x1) / -v1, 1.0, 1.0))
    } else {
        None
    };
    match hit {
        Some((tw, xw, sign)) if tw < tau => {
            let rem = tau - tw;
            let mut acc = 0.0;
            for (a, b) in split_points(s, rem) {
                for (mu, w) in gl.on(a, b) {
                    acc += w * 2.0 * mu * transport_reduced(eval, s, xw, sign * mu, rem, gl);
                }
            }
            acc
        }
        _ => eval((x1 - tau * v1).clamp(0.0, 1.0), c),
    }
}

/// `{(tau, x, v) : x - (tau - t) v on the boundary, tau >= t}`.
pub fn future_set_membership(t_anchor: f64, tau: f64, x: &Position, v: &Vec3) -> bool {
    if tau < t_anchor {
        return false;
    }
    let y1 = x.x1 - (tau - t_anchor) * v.x;
    y1.abs() <= 1e-12 || (y1 - 1.0).abs() <= 1e-12
}

/// `sup |f0(x,v) - int f0(x, |v| w) c3 (Gamma w.e)_- dw|` over outgoing
/// velocities on both walls.
pub fn compatibility_residual(f0: &dyn DensityFunction) -> f64 {
    let gl = GaussLegendre::new(24);
    let naz = 32;
    let speeds: [f64; 7] = [0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0];
    let cosines: [f64; 8] = [0.05, 0.2, 0.4, 0.5, 0.6, 0.8, 0.95, 1.0];
    let azimuths: [f64; 4] = [0.0, 1.3, 2.9, 4.4];
    let transverse = [(0.0, 0.0), (0.37, 0.61)];
    let mut worst: f64 = 0.0;
    for wall in [0.0, 1.0] {
        let gamma: f64 = if wall == 0.0 { 1.0 } else { -1.0 };
        for &(x2, x3) in &transverse {
            let x = Position { x1: wall, x2, x3 };
            for &s in &speeds {
                // incoming average, independent of the outgoing direction
                let mut avg = 0.0;
                for (mu, w) in gl.on(0.0, 1.0) {
                    let st = (1.0 - mu * mu).sqrt();
                    for m in 0..naz {
                        let phi = 2.0 * PI * (m as f64 + 0.5) / naz as f64;
                        let win = Vec3::new(-gamma * mu, st * phi.cos(), st * phi.sin());
                        // c3 mu dmu dphi
                        avg += C3 * w * mu * (2.0 * PI / naz as f64) * f0.eval(&x, &(win * s));
                    }
                }
                for &c in &cosines {
                    let st = (1.0 - c * c).max(0.0).sqrt();
                    for &phi in &azimuths {
                        let v = Vec3::new(gamma * c, st * f64::cos(phi), st * f64::sin(phi)) * s;
                        worst = worst.max((f0.eval(&x, &v) - avg).abs());
                    }
                }
            }
        }
    }
    worst
}

/// Grid resolution and iteration controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_speed: usize,
    pub n_cos: usize,
    /// Time steps on `[0, t_end]`.
    pub n_steps: usize,
    /// Quasi-random nodes of the shared collision stencil.
    pub stencil: usize,
    pub n_gauss: usize,
    pub max_iter: usize,
    /// Mass fraction allowed beyond the speed cutoff.
    pub tail: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_x: 33,
            n_speed: 33,
            n_cos: 17,
            n_steps: 8,
            stencil: 2048,
            n_gauss: 8,
            max_iter: 30,
            tail: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridDensity>,
    pub iterations: usize,
    /// Weighted sup gap between successive iterates.
    pub gaps: Vec<f64>,
}

impl Solution {
    /// Snapshot nearest to `t`.
    pub fn at(&self, t: f64) -> &GridDensity {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        &self.snapshots[i]
    }

    /// CSV with header `t,x1,speed,cosine,value`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,x1,speed,cosine,value")?;
        for (t, g) in self.times.iter().zip(&self.snapshots) {
            let (nx, ns, nc) = g.dims();
            for i in 0..nx {
                for j in 0..ns {
                    for k in 0..nc {
                        writeln!(
                            w,
                            "{t:.6},{:.6},{:.6},{:.6},{:.12e}",
                            g.x1[i],
                            g.speed[j],
                            g.cosine[k],
                            g.values[g.index(i, j, k)]
                        )?;
                    }
                }
            }
        }
        Ok(())
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

fn sphere_point(u: f64, w: f64) -> Vec3 {
    let z = 2.0 * u - 1.0;
    let phi = 2.0 * PI * w;
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

/// Halton nodes `(v*, nu)` on `B(r) x S^2` and the common weight.
struct Stencil {
    nodes: Vec<(Vec3, Vec3)>,
    weight: f64,
}

impl Stencil {
    fn new(n: usize, radius: f64) -> Self {
        let nodes = (1..=n as u64)
            .map(|i| {
                let u: Vec<f64> = [2, 3, 5, 7, 11].iter().map(|&b| radical_inverse(i, b)).collect();
                let vs = sphere_point(u[1], u[2]) * (radius * u[0].cbrt());
                (vs, sphere_point(u[3], u[4]))
            })
            .collect();
        let weight = 4.0 / 3.0 * PI * radius.powi(3) * 4.0 * PI / n as f64;
        Self { nodes, weight }
    }
}

struct Solver {
    spec: GridSpec,
    template: GridDensity,
    stencil: Stencil,
    gl: GaussLegendre,
}

impl Solver {
    fn collision(&self, g: &GridDensity) -> Vec<f64> {
        let (nx, ns, nc) = g.dims();
        let fstar: Vec<Vec<f64>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                self.stencil
                    .nodes
                    .iter()
                    .map(|(vs, _)| {
                        let s = vs.norm();
                        g.value_on_slice(i, s, if s > 0.0 { vs.x / s } else { 0.0 })
                    })
                    .collect()
            })
            .collect();
        (0..nx * ns * nc)
            .into_par_iter()
            .map(|idx| {
                let k = idx % nc;
                let j = (idx / nc) % ns;
                let i = idx / (nc * ns);
                let (s, c) = (g.speed[j], g.cosine[k]);
                let v = Vec3::new(s * c, s * (1.0 - c * c).max(0.0).sqrt(), 0.0);
                let fv = g.values[idx];
                let red = |w: &Vec3| {
                    let n = w.norm();
                    g.value_on_slice(i, n, if n > 0.0 { w.x / n } else { 0.0 })
                };
                let mut acc = 0.0;
                for (m, (vs, nu)) in self.stencil.nodes.iter().enumerate() {
                    let u = (v - vs).dot(nu);
                    if u > 0.0 {
                        let vp = v - nu * u;
                        let vsp = vs + nu * u;
                        acc += u * (red(&vp) * red(&vsp) - fv * fstar[i][m]);
                    }
                }
                acc * self.stencil.weight
            })
            .collect()
    }

    fn transport(&self, g: &GridDensity, dt: f64) -> Vec<f64> {
        let (nx, ns, nc) = g.dims();
        (0..nx * ns * nc)
            .into_par_iter()
            .map(|idx| {
                let k = idx % nc;
                let j = (idx / nc) % ns;
                let i = idx / (nc * ns);
                let eval = |x1: f64, c: f64| g.value_on_speed(j, x1, c);
                transport_reduced(&eval, g.speed[j], g.x1[i], g.cosine[k], dt, &self.gl)
            })
            .collect()
    }

    fn gap(&self, a: &[GridDensity], b: &[GridDensity], beta_p: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (ga, gb) in a.iter().zip(b) {
            let (_, ns, nc) = ga.dims();
            for (idx, (x, y)) in ga.values.iter().zip(&gb.values).enumerate() {
                let s = ga.speed[(idx / nc) % ns];
                worst = worst.max((x - y).abs() * (0.5 * beta_p * s * s).exp());
            }
        }
        worst
    }
}

/// Picard iteration for the mild form on `[0, t_end]`, with one snapshot per
/// time step. Each step uses
/// `f(t+dt) = T(dt) f(t) + dt T(dt/2) C(f(t+dt/2))`, which is the midpoint
/// rule for the Duhamel integral by the semigroup property. Iterates are
/// compared in the sup norm weighted by `exp(3 beta/4 |v|^2 / 2)`.
pub fn picard_solve(f0: &dyn DensityFunction, t_end: f64, tol: f64, spec: &GridSpec) -> Result<Solution, SolverError> {
    if f0.symmetry() != Symmetry::SlabAxisymmetric {
        return Err(SolverError::InvalidArgument(
            "grid solver needs data invariant in (x2, x3) and axisymmetric in v".into(),
        ));
    }
    if !(t_end >= 0.0) || spec.n_steps == 0 || spec.n_x < 2 || spec.n_speed < 2 || spec.n_cos < 2 {
        return Err(SolverError::InvalidArgument("bad time horizon or grid".into()));
    }
    let env = f0.envelope();
    if !(env.beta > 0.0) {
        return Err(SolverError::InvalidArgument("envelope needs beta > 0".into()));
    }
    let v_max = speed_cutoff(env.beta, spec.tail);
    let g0 = GridDensity::from_density(f0, spec, v_max, env.beta);
    let solver = Solver {
        spec: *spec,
        stencil: Stencil::new(spec.stencil, v_max),
        gl: GaussLegendre::new(spec.n_gauss),
        template: g0.clone(),
    };
    let m = solver.spec.n_steps;
    let dt = t_end / m as f64;
    let times: Vec<f64> = (0..=m).map(|n| n as f64 * dt).collect();
    // transport-only start
    let mut path = vec![g0.clone()];
    for n in 0..m {
        let next = solver.transport(&path[n], dt);
        path.push(solver.template.with_values(next));
    }
    let beta_p = 0.75 * env.beta;
    let mut gaps = Vec::new();
    for it in 1..=spec.max_iter {
        let sources: Vec<Vec<f64>> = (0..m)
            .map(|n| {
                let mid: Vec<f64> = path[n]
                    .values
                    .iter()
                    .zip(&path[n + 1].values)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let c = solver.collision(&solver.template.with_values(mid));
                let half = solver.transport(&solver.template.with_values(c), 0.5 * dt);
                half.into_iter().map(|x| x * dt).collect()
            })
            .collect();
        let mut next = vec![g0.clone()];
        for n in 0..m {
            let tr = solver.transport(&next[n], dt);
            let vals: Vec<f64> = tr.iter().zip(&sources[n]).map(|(a, b)| (a + b).max(0.0)).collect();
            next.push(solver.template.with_values(vals));
        }
        let gap = solver.gap(&path, &next, beta_p);
        gaps.push(gap);
        path = next;
        if gap < tol {
            return Ok(Solution {
                times,
                snapshots: path,
                iterations: it,
                gaps,
            });
        }
    }
    Err(SolverError::NoConvergence {
        iterations: spec.max_iter,
        gap: *gaps.last().unwrap_or(&f64::INFINITY),
        tol,
    })
}
