//! Collision kernels: scattering, the Carleman change of variables, the
//! Boltzmann collision operator on densities, weighted sup norms and the
//! strip / singular integral estimates for the measure `|(v - v*).nu| dv* dnu`.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::DensityFunction;
use crate::geometry::Position;
use crate::quadrature::GaussLegendre;
use crate::randomness::RngSeed;
use crate::stats::{Accumulator, Estimate};
use crate::Vec3;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("quadrature budget of {budget} samples exhausted with stderr {stderr} above target {target}")]
    QuadratureBudgetExceeded { budget: u64, stderr: f64, target: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Weights of the `X_{beta,mu}` norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub beta: f64,
    pub mu: f64,
}

/// Point of the Carleman manifold `(v' - v).(v*' - v) = 0` over the base `v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanPair {
    pub v: Vec3,
    pub v_prime: Vec3,
    pub v_star_prime: Vec3,
}

impl CarlemanPair {
    pub fn from_collision(v: &Vec3, v_star: &Vec3, nu: &Vec3) -> Self {
        let (a, b) = scatter(v, v_star, nu);
        Self {
            v: *v,
            v_prime: a,
            v_star_prime: b,
        }
    }

    /// `(v' - v).(v*' - v)`, zero on the manifold.
    pub fn orthogonality_defect(&self) -> f64 {
        (self.v_prime - self.v).dot(&(self.v_star_prime - self.v))
    }

    /// The pre-collisional partner `v* = v' + v*' - v`.
    pub fn v_star(&self) -> Vec3 {
        self.v_prime + self.v_star_prime - self.v
    }
}

/// `v' = v - [nu.(v - v*)] nu`, `v*' = v* + [nu.(v - v*)] nu`.
#[inline]
pub fn scatter(v: &Vec3, v_star: &Vec3, nu: &Vec3) -> (Vec3, Vec3) {
    let k = nu.dot(&(v - v_star));
    (v - nu * k, v_star + nu * k)
}

pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

pub fn uniform_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    let r = radius * rng.random::<f64>().cbrt();
    uniform_sphere(rng) * r
}

pub fn ball_volume(radius: f64) -> f64 {
    4.0 / 3.0 * PI * radius.powi(3)
}

/// Orthonormal basis `(e1, e2)` of the plane normal to the unit vector `n`.
pub fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

/// One Carleman-coordinate draw: `v'` uniform in the ball of radius `rho`
/// and `v*'` uniform in the square of half-side `2 rho` centred at `v` in the
/// plane through `v` normal to `v' - v`. Returns the pair and the
/// importance weight `2 |ball| |square| / |v' - v|` of the measure
/// `2 dv' dS(v*') / |v' - v|`.
fn carleman_draw<R: Rng + ?Sized>(rng: &mut R, v: &Vec3, rho: f64) -> Option<(CarlemanPair, f64)> {
    let vp = uniform_ball(rng, rho);
    let d = vp - v;
    let dn = d.norm();
    if dn == 0.0 {
        return None;
    }
    let (e1, e2) = plane_basis(&(d / dn));
    let h = 2.0 * rho;
    let a = h * (2.0 * rng.random::<f64>() - 1.0);
    let b = h * (2.0 * rng.random::<f64>() - 1.0);
    let vsp = v + e1 * a + e2 * b;
    let w = 2.0 * ball_volume(rho) * (2.0 * h) * (2.0 * h) / dn;
    Some((
        CarlemanPair {
            v: *v,
            v_prime: vp,
            v_star_prime: vsp,
        },
        w,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentComparison {
    pub name: String,
    pub direct: Estimate,
    pub carleman: Estimate,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub v: Vec3,
    pub energy: f64,
    pub moments: Vec<MomentComparison>,
    /// `int_{B(sqrt E)} int_{S^2} |(v - v*).nu| dnu dv*` by radial quadrature.
    pub mass_quadrature: f64,
    pub max_z: f64,
    pub max_orthogonality_defect: f64,
}

const MOMENT_NAMES: [&str; 13] = [
    "mass", "v'_1", "v'_2", "v'_3", "v*'_1", "v*'_2", "v*'_3", "|v'|^2", "|v*'|^2", "v'.v*'", "(v'_1)^2",
    "(v'_2)^2", "(v'_3)^2",
];

fn moment_values(p: &CarlemanPair) -> [f64; 13] {
    let (a, b) = (p.v_prime, p.v_star_prime);
    [
        1.0,
        a.x,
        a.y,
        a.z,
        b.x,
        b.y,
        b.z,
        a.norm_squared(),
        b.norm_squared(),
        a.dot(&b),
        a.x * a.x,
        a.y * a.y,
        a.z * a.z,
    ]
}

/// `int_{|v*| <= R} 2 pi |v - v*| dv*`, by Gauss quadrature in `|v*|` of the
/// spherical average of `|v - v*|`.
pub fn collision_mass(v: &Vec3, radius: f64) -> f64 {
    let s = v.norm();
    let avg = |r: f64| {
        if r < s {
            s + r * r / (3.0 * s)
        } else if r > 0.0 {
            r + s * s / (3.0 * r)
        } else {
            s
        }
    };
    let g = GaussLegendre::new(32);
    let f = |r: f64| 2.0 * PI * 4.0 * PI * r * r * avg(r);
    if s > 0.0 && s < radius {
        g.integrate(0.0, s, f) + g.integrate(s, radius, f)
    } else {
        g.integrate(0.0, radius, f)
    }
}

/// Compares the pushforward of `|(v - v*).nu| dv* dnu` on `B(sqrt E) x S^2`
/// under scattering with the Carleman measure `2 dv' dS(v*') / |v' - v|`
/// restricted to the same support, through weighted moments estimated by
/// two independent Monte Carlo constructions.
pub fn carleman_pushforward_check(v: &Vec3, energy: f64, n_samples: usize, seed: u64) -> CarlemanReport {
    assert!(energy > 0.0);
    let r = energy.sqrt();
    let rho = (v.norm_squared() + energy).sqrt();
    let mut acc_a = [Accumulator::new(); 13];
    let mut acc_b = [Accumulator::new(); 13];
    let mut rng_a = RngSeed::new(seed, 0).rng(1);
    let mut rng_b = RngSeed::new(seed, 0).rng(2);
    let vol = ball_volume(r);
    let mut max_def: f64 = 0.0;
    for _ in 0..n_samples {
        let vs = uniform_ball(&mut rng_a, r);
        let nu = uniform_sphere(&mut rng_a);
        let w = (v - vs).dot(&nu).abs() * vol * 4.0 * PI;
        let p = CarlemanPair::from_collision(v, &vs, &nu);
        max_def = max_def.max(p.orthogonality_defect().abs());
        for (acc, m) in acc_a.iter_mut().zip(moment_values(&p)) {
            acc.push(w * m);
        }

        let (q, wb) = match carleman_draw(&mut rng_b, v, rho) {
            Some((q, wb)) if q.v_star().norm() <= r => (q, wb),
            _ => {
                for acc in acc_b.iter_mut() {
                    acc.push(0.0);
                }
                continue;
            }
        };
        for (acc, m) in acc_b.iter_mut().zip(moment_values(&q)) {
            acc.push(wb * m);
        }
    }
    let moments: Vec<MomentComparison> = MOMENT_NAMES
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let (a, b) = (acc_a[k].estimate(), acc_b[k].estimate());
            MomentComparison {
                name: name.to_string(),
                direct: a,
                carleman: b,
                z: a.z_score(&b),
            }
        })
        .collect();
    let max_z = moments.iter().map(|m| m.z).fold(0.0, f64::max);
    CarlemanReport {
        v: *v,
        energy,
        mass_quadrature: collision_mass(v, r),
        moments,
        max_z,
        max_orthogonality_defect: max_def,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainRoute {
    /// Integrate in Carleman coordinates `(v', v*')`.
    Carleman,
    /// Integrate in the collision parameters `(v*, nu)`.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionQuadrature {
    /// Velocity cutoff `|v*|^2 <= e_cut`.
    pub e_cut: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub route: GainRoute,
    /// Keep doubling the sample count until the standard error is below
    /// this, up to `max_samples`.
    pub target_stderr: Option<f64>,
    pub max_samples: u64,
}

impl Default for CollisionQuadrature {
    fn default() -> Self {
        Self {
            e_cut: 25.0,
            n_samples: 100_000,
            seed: 0,
            route: GainRoute::Carleman,
            target_stderr: None,
            max_samples: 10_000_000,
        }
    }
}

fn collision_samples(
    f: &dyn DensityFunction,
    g: &dyn DensityFunction,
    x: &Position,
    v: &Vec3,
    q: &CollisionQuadrature,
    rng: &mut ChaCha8Rng,
    n: u64,
    acc: &mut Accumulator,
    gain_only: bool,
    loss_only: bool,
) {
    let r = q.e_cut.sqrt();
    let vol = ball_volume(r);
    let rho = (v.norm_squared() + q.e_cut).sqrt();
    let fv = f.eval(x, v);
    for _ in 0..n {
        let gain = if loss_only {
            0.0
        } else {
            match q.route {
                GainRoute::Direct => {
                    let vs = uniform_ball(rng, r);
                    let nu = uniform_sphere(rng);
                    let un = (v - vs).dot(&nu);
                    if un > 0.0 {
                        let (a, b) = scatter(v, &vs, &nu);
                        vol * 4.0 * PI * un * f.eval(x, &a) * g.eval(x, &b)
                    } else {
                        0.0
                    }
                }
                GainRoute::Carleman => match carleman_draw(rng, v, rho) {
                    // (u.nu)_+ picks one of the two preimages: half the
                    // Carleman weight
                    Some((p, w)) if p.v_star().norm() <= r => {
                        0.5 * w * f.eval(x, &p.v_prime) * g.eval(x, &p.v_star_prime)
                    }
                    _ => 0.0,
                },
            }
        };
        let loss = if gain_only || fv == 0.0 {
            0.0
        } else {
            let vs = uniform_ball(rng, r);
            vol * PI * (v - vs).norm() * g.eval(x, &vs) * fv
        };
        acc.push(gain - loss);
    }
}

fn run_collision(
    f: &dyn DensityFunction,
    g: &dyn DensityFunction,
    x: &Position,
    v: &Vec3,
    q: &CollisionQuadrature,
    gain_only: bool,
    loss_only: bool,
) -> Result<Estimate, KernelError> {
    if q.e_cut <= 0.0 {
        return Err(KernelError::InvalidArgument("energy cutoff must be positive".into()));
    }
    let mut rng = RngSeed::new(q.seed, 0).rng(3);
    let mut acc = Accumulator::new();
    let mut n = q.n_samples.max(2);
    collision_samples(f, g, x, v, q, &mut rng, n, &mut acc, gain_only, loss_only);
    if let Some(target) = q.target_stderr {
        while acc.estimate().stderr > target {
            if acc.count() + n > q.max_samples {
                return Err(KernelError::QuadratureBudgetExceeded {
                    budget: q.max_samples,
                    stderr: acc.estimate().stderr,
                    target,
                });
            }
            collision_samples(f, g, x, v, q, &mut rng, n, &mut acc, gain_only, loss_only);
            n *= 2;
        }
    }
    Ok(acc.estimate())
}

/// `C(f (x) g)(x, v) = int [f(v') g(v*') - f(v) g(v*)] ((v - v*).nu)_+ dv* dnu`
/// over `|v*|^2 <= e_cut`.
pub fn collision_operator(
    f: &dyn DensityFunction,
    g: &dyn DensityFunction,
    x: &Position,
    v: &Vec3,
    q: &CollisionQuadrature,
) -> Result<Estimate, KernelError> {
    run_collision(f, g, x, v, q, false, false)
}

/// Gain part of [`collision_operator`].
pub fn gain_term(
    f: &dyn DensityFunction,
    g: &dyn DensityFunction,
    x: &Position,
    v: &Vec3,
    q: &CollisionQuadrature,
) -> Result<Estimate, KernelError> {
    run_collision(f, g, x, v, q, true, false)
}

/// Loss part `f(v) int g(v*) pi |v - v*| dv*` (returned with positive sign).
pub fn loss_term(
    f: &dyn DensityFunction,
    g: &dyn DensityFunction,
    x: &Position,
    v: &Vec3,
    q: &CollisionQuadrature,
) -> Result<Estimate, KernelError> {
    Ok(run_collision(f, g, x, v, q, false, true)?.scale(-1.0))
}

/// A family `(f^s)_{1 <= s <= s_max}` of functions of `s` particle coordinates.
pub trait HierarchyFamily: Sync {
    fn max_s(&self) -> usize;
    fn eval(&self, z: &[(Position, Vec3)]) -> f64;
}

/// `f^s = f^{(x) s}`, optionally scaled by `lambda^s`.
pub struct Tensorized<'a> {
    pub f: &'a dyn DensityFunction,
    pub s_max: usize,
    pub factor: f64,
}

impl HierarchyFamily for Tensorized<'_> {
    fn max_s(&self) -> usize {
        self.s_max
    }
    fn eval(&self, z: &[(Position, Vec3)]) -> f64 {
        z.iter().map(|(x, v)| self.factor * self.f.eval(x, v)).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct XnormReport {
    pub value: f64,
    pub argmax_s: usize,
    /// Radial spacing of the velocity strata.
    pub resolution: f64,
    pub samples: u64,
}

/// Lower estimate of `sup_s ess sup |f^s| exp(mu s + beta/2 |V_s|^2)` from a
/// stratified sample: speeds stratified on `[0, vmax]` (per particle, with
/// independent random permutations), directions and positions uniform, plus
/// the all-at-rest configurations.
pub fn xnorm(f: &dyn HierarchyFamily, p: NormParams, budget: usize, vmax: f64, seed: u64) -> XnormReport {
    let mut rng = RngSeed::new(seed, 0).rng(4);
    let mut best = 0.0f64;
    let mut arg = 1;
    let mut samples = 0;
    let budget = budget.max(1);
    for s in 1..=f.max_s() {
        let perms: Vec<Vec<usize>> = (0..s)
            .map(|_| {
                let mut idx: Vec<usize> = (0..budget).collect();
                for i in (1..budget).rev() {
                    let j = rng.random_range(0..=i);
                    idx.swap(i, j);
                }
                idx
            })
            .collect();
        let mut z = vec![(Position { x1: 0.0, x2: 0.0, x3: 0.0 }, Vec3::zeros()); s];
        for k in 0..=budget {
            for (i, zi) in z.iter_mut().enumerate() {
                let x = Position {
                    x1: rng.random(),
                    x2: rng.random(),
                    x3: rng.random(),
                };
                let v = if k == budget {
                    Vec3::zeros()
                } else {
                    let stratum = perms[i][k] as f64;
                    let speed = vmax * (stratum + rng.random::<f64>()) / budget as f64;
                    uniform_sphere(&mut rng) * speed
                };
                *zi = (x, v);
            }
            let e: f64 = z.iter().map(|(_, v)| v.norm_squared()).sum();
            let val = f.eval(&z).abs() * (p.mu * s as f64 + 0.5 * p.beta * e).exp();
            samples += 1;
            if val > best {
                best = val;
                arg = s;
            }
        }
    }
    XnormReport {
        value: best,
        argmax_s: arg,
        resolution: vmax / budget as f64,
        samples,
    }
}

/// Which velocity the strip constraint is imposed on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripTarget {
    VStar,
    VPrime,
    VStarPrime,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripQuadrature {
    /// Gauss nodes in the polar cosine (per hemisphere).
    pub n_polar: usize,
    /// Midpoint nodes in the azimuth.
    pub n_azimuth: usize,
    /// Gauss nodes in the radius (only used for `VStarPrime`).
    pub n_radial: usize,
}

impl Default for StripQuadrature {
    fn default() -> Self {
        Self {
            n_polar: 64,
            n_azimuth: 64,
            n_radial: 24,
        }
    }
}

fn interval_intersect(a: (f64, f64), b: (f64, f64)) -> Option<(f64, f64)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (hi > lo).then_some((lo, hi))
}

/// Area of `{|p| <= radius}` in the plane with first coordinate in `[qa, qb]`.
fn disk_strip_area(radius: f64, qa: f64, qb: f64) -> f64 {
    if radius <= 0.0 || qb <= qa {
        return 0.0;
    }
    let cum = |q: f64| {
        let t = (q / radius).clamp(-1.0, 1.0);
        radius * radius * (0.5 * PI + t.asin() + t * (1.0 - t * t).max(0.0).sqrt())
    };
    (cum(qb) - cum(qa)).max(0.0)
}

/// `int 1{v_i.e in [a,b]} 1{|v|^2 + |v*|^2 <= E} |(v - v*).nu| dv* dnu`.
///
/// Integrated in spherical coordinates `v_i = v + r s` about `v` (for
/// `VStarPrime`, `v' = v + r s` and the plane integral is done in closed
/// form); the radial integral is analytic for `VStar` and `VPrime`.
pub fn strip_integral(v: &Vec3, a: f64, b: f64, energy: f64, target: StripTarget) -> f64 {
    strip_integral_with(v, a, b, energy, target, &StripQuadrature::default())
}

pub fn strip_integral_with(
    v: &Vec3,
    a: f64,
    b: f64,
    energy: f64,
    target: StripTarget,
    q: &StripQuadrature,
) -> f64 {
    if b <= a {
        return 0.0;
    }
    let rho2 = energy - v.norm_squared();
    if rho2 <= 0.0 {
        return 0.0;
    }
    let rho = rho2.sqrt();
    let gp = GaussLegendre::new(q.n_polar);
    let gr = GaussLegendre::new(q.n_radial);
    let v2 = v.norm_squared();
    let mut total = 0.0;
    for hemi in [(-1.0, 0.0), (0.0, 1.0)] {
        for (mu, wmu) in gp.on(hemi.0, hemi.1) {
            let s = (1.0 - mu * mu).max(0.0).sqrt();
            for k in 0..q.n_azimuth {
                let phi = 2.0 * PI * (k as f64 + 0.5) / q.n_azimuth as f64;
                let w = wmu * 2.0 * PI / q.n_azimuth as f64;
                let dir = Vec3::new(mu, s * phi.cos(), s * phi.sin());
                let c = v.dot(&dir);
                let val = match target {
                    StripTarget::VStar => {
                        // |v + r s|^2 <= E - |v|^2
                        let dd = c * c - v2 + rho2;
                        if dd <= 0.0 {
                            0.0
                        } else {
                            let ball = (-c - dd.sqrt(), -c + dd.sqrt());
                            radial_slab(v.x, mu, a, b)
                                .and_then(|sl| interval_intersect(sl, ball))
                                .and_then(|iv| interval_intersect(iv, (0.0, f64::INFINITY)))
                                .map(|(lo, hi)| 0.5 * PI * (hi.powi(4) - lo.powi(4)))
                                .unwrap_or(0.0)
                        }
                    }
                    StripTarget::VPrime => {
                        let ball = (-c - rho, -c + rho);
                        let prim = |r: f64| {
                            2.0 * PI
                                * ((rho2 - c * c) * r * r / 2.0 - 2.0 * c * r.powi(3) / 3.0 - r.powi(4) / 4.0)
                        };
                        radial_slab(v.x, mu, a, b)
                            .and_then(|sl| interval_intersect(sl, ball))
                            .and_then(|iv| interval_intersect(iv, (0.0, f64::INFINITY)))
                            .map(|(lo, hi)| prim(hi) - prim(lo))
                            .unwrap_or(0.0)
                    }
                    StripTarget::VStarPrime => {
                        match interval_intersect((-c - rho, -c + rho), (0.0, f64::INFINITY)) {
                            None => 0.0,
                            Some((lo, hi)) => gr
                                .on(lo, hi)
                                .map(|(r, wr)| {
                                    let rad2 = rho2 - (c + r) * (c + r);
                                    if rad2 <= 0.0 {
                                        return 0.0;
                                    }
                                    let area = if s < 1e-14 {
                                        let y1 = c * mu;
                                        if y1 >= a && y1 <= b {
                                            PI * rad2
                                        } else {
                                            0.0
                                        }
                                    } else {
                                        disk_strip_area(
                                            rad2.sqrt(),
                                            (a - c * mu) / s,
                                            (b - c * mu) / s,
                                        )
                                    };
                                    wr * 2.0 * r * area
                                })
                                .sum(),
                        }
                    }
                };
                total += w * val;
            }
        }
    }
    total
}

/// Radii `r >= 0` with `v1 + r mu` in `[a, b]`.
fn radial_slab(v1: f64, mu: f64, a: f64, b: f64) -> Option<(f64, f64)> {
    if mu == 0.0 {
        return (v1 >= a && v1 <= b).then_some((0.0, f64::INFINITY));
    }
    let (r1, r2) = ((a - v1) / mu, (b - v1) / mu);
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    interval_intersect((lo, hi), (0.0, f64::INFINITY))
}

/// Largest `|v_i.e|` reachable under the energy constraint.
fn max_component(energy: f64) -> f64 {
    energy.sqrt()
}

/// `int (eps / |v_i.e|^p  min  1) 1{|v|^2 + |v*|^2 <= E} |(v - v*).nu| dv* dnu`.
///
/// The range of `|v_i.e|` is cut into the band where the integrand is
/// capped at one (`[0, eps]` for `p = 1`, `[0, eps^{1/2}]` for `p = 2`) and
/// geometric bands above it; each band contributes its strip measure times
/// the band average of `eps / c^p`.
pub fn singular_integral(v: &Vec3, epsilon: f64, energy: f64, power: u32, target: StripTarget) -> f64 {
    assert!(epsilon > 0.0 && energy > 0.0);
    assert!(power == 1 || power == 2);
    let cap = if power == 1 { epsilon } else { epsilon.sqrt() };
    let cmax = max_component(energy);
    let strip = |c0: f64, c1: f64| {
        strip_integral(v, c0, c1, energy, target) + strip_integral(v, -c1, -c0, energy, target)
    };
    if cap >= cmax {
        return strip_integral(v, -cmax, cmax, energy, target);
    }
    let mut total = strip_integral(v, -cap, cap, energy, target);
    let ratio = 2f64.powf(1.0 / 8.0);
    let mut c0 = cap;
    while c0 < cmax {
        let c1 = (c0 * ratio).min(cmax);
        let mean = if power == 1 {
            epsilon * (c1 / c0).ln() / (c1 - c0)
        } else {
            epsilon * (1.0 / c0 - 1.0 / c1) / (c1 - c0)
        };
        total += mean * strip(c0, c1);
        c0 = c1;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{maxwellian, Equilibrium, ZeroDensity};
    use crate::stats::erfc;
    use proptest::prelude::*;

    fn v3(a: [f64; 3]) -> Vec3 {
        Vec3::new(a[0], a[1], a[2])
    }

    #[test]
    fn scatter_examples() {
        let (a, b) = scatter(&Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(a, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(b, Vec3::zeros());
    }

    proptest! {
        #[test]
        fn scatter_involution_and_orthogonality(v in prop::array::uniform3(-4.0f64..4.0),
                                               w in prop::array::uniform3(-4.0f64..4.0),
                                               n in prop::array::uniform3(-1.0f64..1.0)) {
            let n = v3(n);
            prop_assume!(n.norm() > 1e-3);
            let nu = n.normalize();
            let (v, w) = (v3(v), v3(w));
            let (a, b) = scatter(&v, &w, &nu);
            let (c, d) = scatter(&a, &b, &nu);
            prop_assert!((c - v).norm() < 1e-12 && (d - w).norm() < 1e-12);
            let p = CarlemanPair { v, v_prime: a, v_star_prime: b };
            prop_assert!(p.orthogonality_defect().abs() < 1e-10);
        }
    }

    #[test]
    fn collision_mass_closed_form_at_rest() {
        let r: f64 = 1.7;
        let m = collision_mass(&Vec3::zeros(), r);
        assert!((m - 2.0 * PI * PI * r.powi(4)).abs() < 1e-9 * m);
    }

    #[test]
    fn strip_empty_and_totals_agree() {
        let v = Vec3::new(0.3, -0.2, 0.5);
        let e = 4.0;
        for t in [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime] {
            assert_eq!(strip_integral(&v, 0.1, 0.1, e, t), 0.0);
        }
        // whole range: all three equal int_{|v*|^2 <= E - |v|^2} 2 pi |v - v*|
        let exact = collision_mass(&v, (e - v.norm_squared()).sqrt());
        for t in [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime] {
            let s = strip_integral(&v, -10.0, 10.0, e, t);
            assert!((s - exact).abs() < 2e-3 * exact, "{t:?}: {s} vs {exact}");
        }
    }

    #[test]
    fn strip_vstar_matches_brute_force_monte_carlo() {
        let v = Vec3::new(0.4, 0.1, -0.3);
        let e = 3.0;
        let (a, b) = (-0.2, 0.5);
        let q = strip_integral(&v, a, b, e, StripTarget::VStar);
        let mut rng = RngSeed::new(77, 0).rng(0);
        let r = (e - v.norm_squared()).sqrt();
        let vol = ball_volume(r);
        let acc: Accumulator = (0..400_000)
            .map(|_| {
                let vs = uniform_ball(&mut rng, r);
                let nu = uniform_sphere(&mut rng);
                if vs.x >= a && vs.x <= b {
                    vol * 4.0 * PI * (v - vs).dot(&nu).abs()
                } else {
                    0.0
                }
            })
            .collect();
        let est = acc.estimate();
        assert!((est.mean - q).abs() < 4.0 * est.stderr, "{} vs {q}", est.mean);
    }

    #[test]
    fn strip_linear_in_width() {
        let v = Vec3::new(0.2, 0.5, 0.1);
        for t in [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime] {
            let s1 = strip_integral(&v, 0.3, 0.3 + 0.02, 4.0, t);
            let s2 = strip_integral(&v, 0.3, 0.3 + 0.01, 4.0, t);
            let ratio = s1 / s2;
            assert!((ratio - 2.0).abs() < 0.2, "{t:?}: {ratio}");
        }
    }

    #[test]
    fn singular_saturates_at_eps_one() {
        let v = Vec3::new(0.1, 0.2, 0.0);
        let e = 0.9;
        for p in [1, 2] {
            let s = singular_integral(&v, 1.0, e, p, StripTarget::VStar);
            let full = strip_integral(&v, -e.sqrt(), e.sqrt(), e, StripTarget::VStar);
            assert!((s - full).abs() < 1e-12 * full);
        }
    }

    #[test]
    fn singular_monotone() {
        let v = Vec3::new(0.1, 0.2, 0.0);
        let a = singular_integral(&v, 1e-3, 2.0, 1, StripTarget::VStar);
        let b = singular_integral(&v, 2e-3, 2.0, 1, StripTarget::VStar);
        let c = singular_integral(&v, 2e-3, 3.0, 1, StripTarget::VStar);
        assert!(a < b && b < c);
    }

    #[test]
    fn maxwellian_collision_vanishes() {
        let m = Equilibrium { beta: 1.0 };
        let x = Position { x1: 0.5, x2: 0.0, x3: 0.0 };
        for route in [GainRoute::Direct, GainRoute::Carleman] {
            let q = CollisionQuadrature {
                e_cut: 16.0,
                n_samples: 200_000,
                seed: 5,
                route,
                ..Default::default()
            };
            let v = Vec3::new(0.7, -0.3, 0.2);
            let c = collision_operator(&m, &m, &x, &v, &q).unwrap();
            assert!(c.mean.abs() < 4.0 * c.stderr, "{route:?}: {c:?}");
            let z = collision_operator(&m, &ZeroDensity, &x, &v, &q).unwrap();
            assert_eq!(z.mean, 0.0);
        }
    }

    #[test]
    fn loss_matches_gaussian_mean_relative_speed() {
        let beta: f64 = 2.0;
        let g = Equilibrium { beta };
        let x = Position { x1: 0.5, x2: 0.0, x3: 0.0 };
        let v = Vec3::new(0.5, 0.2, -0.4);
        let q = CollisionQuadrature {
            e_cut: 36.0,
            n_samples: 400_000,
            seed: 8,
            ..Default::default()
        };
        let l = loss_term(&g, &g, &x, &v, &q).unwrap();
        // E|v - V|, V ~ N(0, 1/beta): sigma [sqrt(2/pi) e^{-a^2/2} + (a + 1/a) erf(a/sqrt2)]
        let sigma = beta.sqrt().recip();
        let aa = v.norm() / sigma;
        let erf = 1.0 - erfc(aa / 2f64.sqrt());
        let mean_speed = sigma * ((2.0 / PI).sqrt() * (-aa * aa / 2.0).exp() + (aa + 1.0 / aa) * erf);
        let exact = maxwellian(beta, &v) * PI * mean_speed;
        assert!((l.mean - exact).abs() < 4.0 * l.stderr + 1e-6 * exact, "{l:?} vs {exact}");
    }

    #[test]
    fn budget_error() {
        let m = Equilibrium { beta: 1.0 };
        let x = Position { x1: 0.5, x2: 0.0, x3: 0.0 };
        let q = CollisionQuadrature {
            n_samples: 100,
            target_stderr: Some(1e-9),
            max_samples: 10_000,
            ..Default::default()
        };
        assert!(matches!(
            collision_operator(&m, &m, &x, &Vec3::new(0.1, 0.0, 0.0), &q),
            Err(KernelError::QuadratureBudgetExceeded { .. })
        ));
    }

    #[test]
    fn xnorm_defining_case_and_homogeneity() {
        struct Fam(f64);
        impl HierarchyFamily for Fam {
            fn max_s(&self) -> usize {
                3
            }
            fn eval(&self, z: &[(Position, Vec3)]) -> f64 {
                let e: f64 = z.iter().map(|(_, v)| v.norm_squared()).sum();
                self.0 * (-0.7 * z.len() as f64 - 0.5 * 1.5 * e).exp()
            }
        }
        let p = NormParams { beta: 1.5, mu: 0.7 };
        let r = xnorm(&Fam(1.0), p, 50, 4.0, 1);
        assert!((r.value - 1.0).abs() < 1e-12);
        let r3 = xnorm(&Fam(-3.0), p, 50, 4.0, 1);
        assert!((r3.value - 3.0).abs() < 1e-12);
    }
}
