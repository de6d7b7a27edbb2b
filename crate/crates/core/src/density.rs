//! One-particle densities on `Lambda x R^3` behind an evaluation contract.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::geometry::Position;
use crate::randomness::sample_maxwellian;
use crate::Vec3;

/// `|f(x,v)| <= c exp(-beta |v|^2 / 2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianEnvelope {
    pub c: f64,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    /// Invariant in `(x2, x3)` and depending on `v` only through `|v|` and `v1/|v|`.
    SlabAxisymmetric,
    General,
}

/// Normalized Maxwellian `(beta/2pi)^{3/2} exp(-beta|v|^2/2)`.
pub fn maxwellian(beta: f64, v: &Vec3) -> f64 {
    (beta / (2.0 * PI)).powf(1.5) * (-0.5 * beta * v.norm_squared()).exp()
}

pub trait DensityFunction: Send + Sync {
    fn eval(&self, x: &Position, v: &Vec3) -> f64;

    fn envelope(&self) -> GaussianEnvelope;

    fn symmetry(&self) -> Symmetry {
        Symmetry::General
    }

    /// One draw from the density normalized to a probability; `None` when the
    /// density offers no sampler.
    fn sample(&self, _rng: &mut dyn RngCore) -> Option<(Position, Vec3)> {
        None
    }

    /// Evaluation in the reduced coordinates `(x1, |v|, v1/|v|)`.
    fn eval_reduced(&self, x1: f64, speed: f64, cosine: f64) -> f64 {
        let c = cosine.clamp(-1.0, 1.0);
        let s = (1.0 - c * c).max(0.0).sqrt();
        let x = Position {
            x1: x1.clamp(0.0, 1.0),
            x2: 0.0,
            x3: 0.0,
        };
        self.eval(&x, &Vec3::new(speed * c, speed * s, 0.0))
    }
}

impl<T: DensityFunction + ?Sized> DensityFunction for Arc<T> {
    fn eval(&self, x: &Position, v: &Vec3) -> f64 {
        (**self).eval(x, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        (**self).envelope()
    }
    fn symmetry(&self) -> Symmetry {
        (**self).symmetry()
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Option<(Position, Vec3)> {
        (**self).sample(rng)
    }
    fn eval_reduced(&self, x1: f64, speed: f64, cosine: f64) -> f64 {
        (**self).eval_reduced(x1, speed, cosine)
    }
}

fn uniform_position(rng: &mut dyn RngCore) -> Position {
    Position {
        x1: rng.random::<f64>(),
        x2: rng.random::<f64>(),
        x3: rng.random::<f64>(),
    }
}

/// Global equilibrium: uniform in space, Maxwellian in velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equilibrium {
    pub beta: f64,
}

impl DensityFunction for Equilibrium {
    fn eval(&self, _x: &Position, v: &Vec3) -> f64 {
        maxwellian(self.beta, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        GaussianEnvelope {
            c: (self.beta / (2.0 * PI)).powf(1.5),
            beta: self.beta,
        }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Option<(Position, Vec3)> {
        let x = uniform_position(rng);
        Some((x, sample_maxwellian(rng, self.beta)))
    }
}

/// `(1 + a cos(pi x1)) M_beta(v)`: isotropic in direction, unit mass, and
/// compatible with the diffuse wall law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlabProfile {
    pub beta: f64,
    pub amplitude: f64,
}

impl SlabProfile {
    pub fn spatial(&self, x1: f64) -> f64 {
        1.0 + self.amplitude * (PI * x1).cos()
    }
}

impl DensityFunction for SlabProfile {
    fn eval(&self, x: &Position, v: &Vec3) -> f64 {
        self.spatial(x.x1) * maxwellian(self.beta, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        GaussianEnvelope {
            c: (1.0 + self.amplitude.abs()) * (self.beta / (2.0 * PI)).powf(1.5),
            beta: self.beta,
        }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Option<(Position, Vec3)> {
        let cap = 1.0 + self.amplitude.abs();
        let x1 = loop {
            let x1: f64 = rng.random();
            if rng.random::<f64>() * cap <= self.spatial(x1) {
                break x1;
            }
        };
        let x = Position {
            x1,
            x2: rng.random(),
            x3: rng.random(),
        };
        Some((x, sample_maxwellian(rng, self.beta)))
    }
}

/// Spatially uniform mixture `w M_{beta_a} + (1-w) M_{beta_b}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaxwellianMixture {
    pub beta_a: f64,
    pub beta_b: f64,
    pub weight_a: f64,
}

impl DensityFunction for MaxwellianMixture {
    fn eval(&self, _x: &Position, v: &Vec3) -> f64 {
        self.weight_a * maxwellian(self.beta_a, v)
            + (1.0 - self.weight_a) * maxwellian(self.beta_b, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        let c = self.weight_a * (self.beta_a / (2.0 * PI)).powf(1.5)
            + (1.0 - self.weight_a) * (self.beta_b / (2.0 * PI)).powf(1.5);
        GaussianEnvelope {
            c,
            beta: self.beta_a.min(self.beta_b),
        }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
    fn sample(&self, rng: &mut dyn RngCore) -> Option<(Position, Vec3)> {
        let x = uniform_position(rng);
        let beta = if rng.random::<f64>() < self.weight_a {
            self.beta_a
        } else {
            self.beta_b
        };
        Some((x, sample_maxwellian(rng, beta)))
    }
}

/// Maxwellian modulated by a bump in the direction cosine; not compatible
/// with the diffuse wall law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DirectionalBump {
    pub beta: f64,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
}

impl DensityFunction for DirectionalBump {
    fn eval(&self, _x: &Position, v: &Vec3) -> f64 {
        let s = v.norm();
        let c = if s > 0.0 { v.x / s } else { 0.0 };
        let b = (-((c - self.center) / self.width).powi(2)).exp();
        maxwellian(self.beta, v) * (1.0 + self.amplitude * b)
    }
    fn envelope(&self) -> GaussianEnvelope {
        GaussianEnvelope {
            c: (1.0 + self.amplitude.abs()) * (self.beta / (2.0 * PI)).powf(1.5),
            beta: self.beta,
        }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ZeroDensity;

impl DensityFunction for ZeroDensity {
    fn eval(&self, _x: &Position, _v: &Vec3) -> f64 {
        0.0
    }
    fn envelope(&self) -> GaussianEnvelope {
        GaussianEnvelope { c: 0.0, beta: 1.0 }
    }
    fn symmetry(&self) -> Symmetry {
        Symmetry::SlabAxisymmetric
    }
}

/// `c * f`.
#[derive(Clone)]
pub struct Scaled<D> {
    pub factor: f64,
    pub inner: D,
}

impl<D: DensityFunction> DensityFunction for Scaled<D> {
    fn eval(&self, x: &Position, v: &Vec3) -> f64 {
        self.factor * self.inner.eval(x, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        let e = self.inner.envelope();
        GaussianEnvelope {
            c: e.c * self.factor.abs(),
            beta: e.beta,
        }
    }
    fn symmetry(&self) -> Symmetry {
        self.inner.symmetry()
    }
}

/// Density given by a closure.
pub struct FnDensity<F> {
    pub f: F,
    pub envelope: GaussianEnvelope,
    pub symmetry: Symmetry,
}

impl<F: Fn(&Position, &Vec3) -> f64 + Send + Sync> DensityFunction for FnDensity<F> {
    fn eval(&self, x: &Position, v: &Vec3) -> f64 {
        (self.f)(x, v)
    }
    fn envelope(&self) -> GaussianEnvelope {
        self.envelope
    }
    fn symmetry(&self) -> Symmetry {
        self.symmetry
    }
}

/// Checks nonnegativity and the declared Gaussian domination on a test grid
/// in `(x1, |v|, cosine)`. Returns the worst ratio `f / envelope`.
pub fn envelope_ratio(f: &dyn DensityFunction, n: usize, vmax: f64) -> f64 {
    let env = f.envelope();
    let mut worst: f64 = 0.0;
    for i in 0..=n {
        let x1 = i as f64 / n as f64;
        for j in 0..=n {
            let s = vmax * j as f64 / n as f64;
            for k in 0..=n {
                let c = -1.0 + 2.0 * k as f64 / n as f64;
                let val = f.eval_reduced(x1, s, c);
                if val < 0.0 {
                    return f64::INFINITY;
                }
                let bound = env.c * (-0.5 * env.beta * s * s).exp();
                if bound > 0.0 {
                    worst = worst.max(val / bound);
                } else if val > 0.0 {
                    return f64::INFINITY;
                }
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn envelopes_hold() {
        let fs: Vec<Box<dyn DensityFunction>> = vec![
            Box::new(Equilibrium { beta: 1.0 }),
            Box::new(SlabProfile {
                beta: 2.0,
                amplitude: 0.5,
            }),
            Box::new(MaxwellianMixture {
                beta_a: 1.0,
                beta_b: 2.0,
                weight_a: 0.5,
            }),
            Box::new(DirectionalBump {
                beta: 1.0,
                amplitude: 0.8,
                center: 0.5,
                width: 0.3,
            }),
            Box::new(ZeroDensity),
        ];
        for f in &fs {
            assert!(envelope_ratio(f.as_ref(), 12, 6.0) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn slab_profile_sampler_matches_density() {
        let f = SlabProfile {
            beta: 1.0,
            amplitude: 0.6,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut mean_cos = 0.0;
        for _ in 0..n {
            let (x, _) = f.sample(&mut rng).unwrap();
            mean_cos += (PI * x.x1).cos();
        }
        mean_cos /= n as f64;
        // E[cos(pi x)] = a * int cos^2 = a / 2
        assert!((mean_cos - 0.3).abs() < 4.0 * (0.5f64 / n as f64).sqrt());
    }
}
