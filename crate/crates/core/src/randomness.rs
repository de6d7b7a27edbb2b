//! Seeded streams, the diffuse wall law, Maxwellian draws, reflection records
//! and initial configurations.
//!
//! Every random draw is addressed by a counter-based key, so results do not
//! depend on scheduling or on the order in which records are extended.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::density::DensityFunction;
use crate::geometry::{distance, Position};
use crate::sim::{Particle, SystemState};
use crate::Vec3;

/// Normalization of the cosine law `c3 (w.e)_+ dw` on the sphere.
pub const C3: f64 = 1.0 / std::f64::consts::PI;

const TAG_GENERAL: u64 = 0x5345_4544_0000_0001;
const TAG_RECORD: u64 = 0x5345_4544_0000_0002;
const TAG_INIT: u64 = 0x5345_4544_0000_0003;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RandomnessError {
    #[error("reflection of a particle at rest")]
    ZeroSpeed,
    #[error("rejection budget exceeded after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },
    #[error("initial density has no sampler")]
    NotSamplable,
}

/// `(seed, stream)` pair; one stream per replica.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    pub stream: u64,
}

fn key_bytes(seed: u64, stream: u64, lane: u64, tag: u64) -> [u8; 32] {
    let mut k = [0u8; 32];
    k[..8].copy_from_slice(&seed.to_le_bytes());
    k[8..16].copy_from_slice(&stream.to_le_bytes());
    k[16..24].copy_from_slice(&lane.to_le_bytes());
    k[24..].copy_from_slice(&tag.to_le_bytes());
    k
}

impl RngSeed {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Independent generator for sub-stream `lane`.
    pub fn rng(&self, lane: u64) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(key_bytes(self.seed, self.stream, lane, TAG_GENERAL))
    }

    /// Key of the reflection record of particle `lane`.
    pub fn record_key(&self, lane: u64) -> RecordKey {
        RecordKey {
            seed: self.seed,
            stream: self.stream,
            lane,
        }
    }
}

/// Cosine-weighted hemisphere about `sign * e`: law `c3 (sign w.e)_+ dw`.
pub fn sample_diffuse_direction<R: Rng + ?Sized>(rng: &mut R, sign: i32) -> Vec3 {
    debug_assert!(sign == 1 || sign == -1);
    // u = cos(theta) has density 2u; u = sqrt(1 - U) keeps u > 0 strictly
    let a: f64 = rng.random();
    let u = (1.0 - a).sqrt();
    let s = a.sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(sign as f64 * u, s * cp, s * sp)
}

/// Centered Gaussian with variance `1/beta` per component.
pub fn sample_maxwellian<R: Rng + ?Sized>(rng: &mut R, beta: f64) -> Vec3 {
    assert!(beta > 0.0, "inverse temperature must be positive");
    let sd = beta.sqrt().recip();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    let c: f64 = rng.sample(StandardNormal);
    Vec3::new(a * sd, b * sd, c * sd)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub seed: u64,
    pub stream: u64,
    pub lane: u64,
}

const FUTURE: usize = 0;
const PAST: usize = 1;

/// Two-sided sequence of wall directions driving one particle's reflections.
///
/// Future entries point into the half-space `w.e > 0`, past entries into
/// `w.e < 0`. Entries never touched so far are drawn on demand from a key
/// derived from `(seed, stream, lane, side, index)`, so the sequence is a
/// fixed function of the key however far it gets extended.
///
/// A record can be viewed time-reversed: the roles of the two sides swap and
/// entries change sign, which is exactly what a flow run with negated
/// velocities needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectionRecord {
    key: RecordKey,
    pushed: [Vec<Vec3>; 2],
    fresh: [u64; 2],
    reversed: bool,
    head: i64,
}

impl ReflectionRecord {
    pub fn new(key: RecordKey) -> Self {
        Self {
            key,
            pushed: [Vec::new(), Vec::new()],
            fresh: [0, 0],
            reversed: false,
            head: 0,
        }
    }

    pub fn key(&self) -> RecordKey {
        self.key
    }

    /// Net number of forward reflections consumed since creation.
    pub fn head(&self) -> i64 {
        self.head
    }

    pub fn is_reversed(&self) -> bool {
        self.reversed
    }

    /// The same record seen under time reversal.
    pub fn time_reversed(mut self) -> Self {
        self.reversed = !self.reversed;
        self
    }

    pub fn reverse_in_place(&mut self) {
        self.reversed = !self.reversed;
    }

    fn fresh_entry(&self, side: usize, index: u64) -> Vec3 {
        let mut rng = ChaCha8Rng::from_seed(key_bytes(
            self.key.seed,
            self.key.stream,
            self.key.lane,
            TAG_RECORD,
        ));
        rng.set_stream(side as u64);
        rng.set_word_pos(index as u128 * 16);
        let sign = if side == FUTURE { 1 } else { -1 };
        sample_diffuse_direction(&mut rng, sign)
    }

    fn physical(&self, logical: usize) -> (usize, f64) {
        if self.reversed {
            (1 - logical, -1.0)
        } else {
            (logical, 1.0)
        }
    }

    fn take(&mut self, logical: usize) -> Vec3 {
        let (side, sign) = self.physical(logical);
        let w = match self.pushed[side].pop() {
            Some(w) => w,
            None => {
                let w = self.fresh_entry(side, self.fresh[side]);
                self.fresh[side] += 1;
                w
            }
        };
        w * sign
    }

    fn put(&mut self, logical: usize, w: Vec3) {
        let (side, sign) = self.physical(logical);
        self.pushed[side].push(w * sign);
    }

    fn entry(&self, logical: usize, j: usize) -> Vec3 {
        assert!(j >= 1);
        let (side, sign) = self.physical(logical);
        let st = &self.pushed[side];
        let w = if j <= st.len() {
            st[st.len() - j]
        } else {
            self.fresh_entry(side, self.fresh[side] + (j - st.len() - 1) as u64)
        };
        w * sign
    }

    /// Entry `w^j`, `j >= 1`, of the future sequence, without consuming it.
    pub fn future_entry(&self, j: usize) -> Vec3 {
        self.entry(FUTURE, j)
    }

    /// Entry `w^{-j}`, `j >= 1`, of the past sequence.
    pub fn past_entry(&self, j: usize) -> Vec3 {
        self.entry(PAST, j)
    }

    fn step_head(&mut self, forward: bool) {
        self.head += if forward != self.reversed { 1 } else { -1 };
    }

    /// Forward reflection at a wall with sign `gamma`:
    /// `v_out = |v_in| gamma w^1`, and `gamma v_in/|v_in|` becomes `w^{-1}`.
    pub fn consume_reflection(&mut self, v_in: &Vec3, gamma: i32) -> Result<Vec3, RandomnessError> {
        let speed = v_in.norm();
        if speed == 0.0 {
            return Err(RandomnessError::ZeroSpeed);
        }
        let g = gamma as f64;
        let w = self.take(FUTURE);
        let out = w * (g * speed / w.norm());
        self.put(PAST, v_in * (g / speed));
        self.step_head(true);
        Ok(out)
    }

    /// Inverse of [`consume_reflection`](Self::consume_reflection): given the
    /// post-reflection velocity, restores the incoming one from the past.
    pub fn unconsume_reflection(&mut self, v_out: &Vec3, gamma: i32) -> Result<Vec3, RandomnessError> {
        let speed = v_out.norm();
        if speed == 0.0 {
            return Err(RandomnessError::ZeroSpeed);
        }
        let g = gamma as f64;
        let w = self.take(PAST);
        let v_in = w * (g * speed / w.norm());
        self.put(FUTURE, v_out * (g / speed));
        self.step_head(false);
        Ok(v_in)
    }
}

/// Functional form of [`ReflectionRecord::consume_reflection`].
pub fn consume_reflection(
    mut record: ReflectionRecord,
    v_in: &Vec3,
    gamma: i32,
) -> Result<(Vec3, ReflectionRecord), RandomnessError> {
    let v = record.consume_reflection(v_in, gamma)?;
    Ok((v, record))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementStrategy {
    /// Redraw the whole configuration until no pair overlaps (exact
    /// conditioned law).
    Exact,
    /// Redraw only the particle that overlaps an earlier one.
    Sequential,
    /// `Exact` when its expected acceptance is at least 1e-3.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementOptions {
    pub strategy: PlacementStrategy,
    pub max_attempts: u64,
}

impl Default for PlacementOptions {
    fn default() -> Self {
        Self {
            strategy: PlacementStrategy::Auto,
            max_attempts: 1_000_000,
        }
    }
}

/// Probability that `n` independent uniform points have no pair closer than
/// `epsilon`, in the dilute approximation.
pub fn expected_acceptance(n: usize, epsilon: f64) -> f64 {
    let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
    let ball = 4.0 / 3.0 * std::f64::consts::PI * epsilon.powi(3);
    (-pairs * ball).exp()
}

/// `n` particles drawn i.i.d. from `f0` conditioned on pairwise distance
/// `> epsilon`, each with a fresh reflection record.
pub fn sample_initial_configuration(
    seed: RngSeed,
    n: usize,
    epsilon: f64,
    f0: &dyn DensityFunction,
    opts: PlacementOptions,
) -> Result<SystemState, RandomnessError> {
    let mut rng = ChaCha8Rng::from_seed(key_bytes(seed.seed, seed.stream, 0, TAG_INIT));
    let exact = match opts.strategy {
        PlacementStrategy::Exact => true,
        PlacementStrategy::Sequential => false,
        PlacementStrategy::Auto => expected_acceptance(n, epsilon) >= 1e-3,
    };
    let draw = |rng: &mut ChaCha8Rng| -> Result<Particle, RandomnessError> {
        let (x, v) = f0
            .sample(rng as &mut dyn RngCore)
            .ok_or(RandomnessError::NotSamplable)?;
        Ok(Particle { x, v })
    };
    let clear = |ps: &[Particle], x: &Position| ps.iter().all(|q| distance(&q.x, x) > epsilon);
    let mut attempts = 0u64;
    let particles = if exact {
        'outer: loop {
            attempts += 1;
            if attempts > opts.max_attempts {
                return Err(RandomnessError::RejectionBudgetExceeded { attempts: attempts - 1 });
            }
            let mut ps: Vec<Particle> = Vec::with_capacity(n);
            for _ in 0..n {
                ps.push(draw(&mut rng)?);
            }
            if epsilon > 0.0 {
                for i in 0..n {
                    if !clear(&ps[..i], &ps[i].x) {
                        continue 'outer;
                    }
                }
            }
            break ps;
        }
    } else {
        let mut ps: Vec<Particle> = Vec::with_capacity(n);
        while ps.len() < n {
            attempts += 1;
            if attempts > opts.max_attempts {
                return Err(RandomnessError::RejectionBudgetExceeded { attempts: attempts - 1 });
            }
            let p = draw(&mut rng)?;
            if epsilon <= 0.0 || clear(&ps, &p.x) {
                ps.push(p);
            }
        }
        ps
    };
    let records = (0..n)
        .map(|i| ReflectionRecord::new(seed.record_key(i as u64)))
        .collect();
    Ok(SystemState {
        particles,
        records,
        epsilon,
        time: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Equilibrium;
    use crate::stats::{ks_one_sample, Accumulator};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn c3_normalizes_cosine_law() {
        // int (w.e)_+ dw = 2 pi int_0^1 u du = pi, by midpoint quadrature
        let m = 100_000;
        let s: f64 = (0..m).map(|i| (i as f64 + 0.5) / m as f64).sum::<f64>() / m as f64;
        assert!((C3 * std::f64::consts::TAU * s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn diffuse_law_moments_and_cdf() {
        let mut rng = RngSeed::new(11, 0).rng(0);
        let n = 100_000;
        let mut us: Vec<f64> = Vec::with_capacity(n);
        let mut acc = Accumulator::new();
        for i in 0..n {
            let sign = if i % 2 == 0 { 1 } else { -1 };
            let w = sample_diffuse_direction(&mut rng, sign);
            assert!((w.norm() - 1.0).abs() < 1e-12);
            let u = w.x * sign as f64;
            assert!(u > 0.0);
            us.push(u);
            acc.push(u);
        }
        let e = acc.estimate();
        assert!((e.mean - 2.0 / 3.0).abs() < 3.0 * e.stderr);
        let ks = ks_one_sample(&mut us, |u| u * u);
        assert!(ks.statistic < 1.63 / (n as f64).sqrt());
    }

    #[test]
    fn maxwellian_moments() {
        let mut rng = RngSeed::new(5, 1).rng(0);
        let n = 200_000;
        let (mut e2, mut m4, mut sd) = (Accumulator::new(), Accumulator::new(), Accumulator::new());
        for _ in 0..n {
            let v = sample_maxwellian(&mut rng, 1.0);
            e2.push(v.norm_squared());
            let w = sample_maxwellian(&mut rng, 4.0);
            m4.push(w.x.powi(4));
            sd.push(w.y * w.y);
        }
        let e = e2.estimate();
        assert!((e.mean - 3.0).abs() < 4.0 * e.stderr);
        let e = m4.estimate();
        assert!((e.mean - 3.0 / 16.0).abs() < 4.0 * e.stderr);
        assert!((sd.mean().sqrt() - 0.5).abs() < 0.005);
    }

    fn key() -> RecordKey {
        RngSeed::new(42, 3).record_key(7)
    }

    #[test]
    fn record_is_deterministic_and_signed() {
        let r1 = ReflectionRecord::new(key());
        let r2 = ReflectionRecord::new(key());
        for j in 1..20 {
            assert_eq!(r1.future_entry(j), r2.future_entry(j));
            assert!(r1.future_entry(j).x > 0.0);
            assert!(r1.past_entry(j).x < 0.0);
        }
        assert_ne!(r1.future_entry(1), r1.future_entry(2));
    }

    #[test]
    fn consume_examples() {
        let mut r = ReflectionRecord::new(key());
        let w1 = r.future_entry(1);
        let w2 = r.future_entry(2);
        let v_in = Vec3::new(-0.7, 0.2, 0.1);
        let v_out = r.consume_reflection(&v_in, 1).unwrap();
        assert!((v_out.norm() - v_in.norm()).abs() <= 1e-15 * v_in.norm());
        assert!(v_out.x > 0.0);
        assert!((v_out / v_in.norm() - w1).norm() < 1e-15);
        assert!(r.past_entry(1).x < 0.0);
        assert!((r.past_entry(1) - v_in / v_in.norm()).norm() < 1e-15);
        assert_eq!(r.future_entry(1), w2);
        assert_eq!(r.head(), 1);
        // wall at x1 = 1
        let v_in = Vec3::new(0.3, -0.2, 0.9);
        let v_out = r.consume_reflection(&v_in, -1).unwrap();
        assert!(v_out.x < 0.0);
        assert!(r.past_entry(1).x < 0.0);
        assert_eq!(
            r.consume_reflection(&Vec3::zeros(), 1),
            Err(RandomnessError::ZeroSpeed)
        );
    }

    #[test]
    fn lazily_extended_sequence_independent_of_access_order() {
        let a = ReflectionRecord::new(key());
        let _ = a.future_entry(50);
        let mut b = ReflectionRecord::new(key());
        let mut c = ReflectionRecord::new(key());
        for _ in 0..10 {
            b.consume_reflection(&Vec3::new(-1.0, 0.0, 0.0), 1).unwrap();
        }
        for _ in 0..10 {
            c.consume_reflection(&Vec3::new(-1.0, 0.0, 0.0), 1).unwrap();
        }
        assert_eq!(b, c);
        assert_eq!(b.future_entry(1), a.future_entry(11));
    }

    proptest! {
        #[test]
        fn past_replay_reconstructs_incoming(seq in prop::collection::vec(
            (prop::array::uniform3(-2.0f64..2.0), prop::bool::ANY), 1..12)) {
            let mut r = ReflectionRecord::new(key());
            let start = r.clone();
            let mut history = Vec::new();
            for (v, at_zero) in &seq {
                let mut v = Vec3::new(v[0], v[1], v[2]);
                if v.x.abs() < 1e-3 { v.x = 1e-3; }
                let gamma = if *at_zero { 1 } else { -1 };
                // incoming velocity points out of the slab
                if (v.x > 0.0) == *at_zero { v.x = -v.x; }
                let out = r.consume_reflection(&v, gamma).unwrap();
                prop_assert!((out.norm() - v.norm()).abs() <= 1e-12 * v.norm());
                prop_assert!(out.x * gamma as f64 > 0.0);
                history.push((v, out, gamma));
            }
            // backward replay restores every incoming velocity and the record
            for (v, out, gamma) in history.iter().rev() {
                let back = r.unconsume_reflection(out, *gamma).unwrap();
                prop_assert!((back - v).norm() <= 1e-12 * v.norm());
            }
            prop_assert_eq!(r.head(), 0);
            for j in 1..6 {
                prop_assert!((r.future_entry(j) - start.future_entry(j)).norm() < 1e-12);
            }
        }

        #[test]
        fn reversed_view_runs_backward(vx in 0.1f64..2.0, vy in -1.0f64..1.0) {
            // forward reflection at x1 = 0, then the reversed flow with -v_out
            let mut r = ReflectionRecord::new(key());
            let v_in = Vec3::new(-vx, vy, 0.3);
            let v_out = r.consume_reflection(&v_in, 1).unwrap();
            let mut rev = r.time_reversed();
            let u = rev.consume_reflection(&(-v_out), 1).unwrap();
            prop_assert!((u + v_in).norm() < 1e-12);
            prop_assert_eq!(rev.head(), 0);
        }
    }

    #[test]
    fn initial_configuration_basics() {
        let f0 = Equilibrium { beta: 1.0 };
        let s = sample_initial_configuration(RngSeed::new(1, 0), 1, 0.3, &f0, PlacementOptions::default()).unwrap();
        assert_eq!(s.particles.len(), 1);
        let s = sample_initial_configuration(RngSeed::new(1, 0), 50, 0.0, &f0, PlacementOptions::default()).unwrap();
        assert_eq!(s.particles.len(), 50);
        let s = sample_initial_configuration(RngSeed::new(2, 0), 64, 0.125, &f0, PlacementOptions::default()).unwrap();
        for i in 0..64 {
            for j in 0..i {
                assert!(distance(&s.particles[i].x, &s.particles[j].x) > 0.125);
            }
        }
        let err = sample_initial_configuration(
            RngSeed::new(2, 0),
            300,
            0.3,
            &f0,
            PlacementOptions {
                strategy: PlacementStrategy::Exact,
                max_attempts: 5,
            },
        );
        assert_eq!(err.unwrap_err(), RandomnessError::RejectionBudgetExceeded { attempts: 5 });
    }

    #[test]
    fn two_particle_acceptance_matches_ball_volume() {
        // acceptance of the pair constraint under uniform placement: 1 - |B_eps|
        // for eps well below the wall and torus scales, up to the wall cut.
        let eps = 0.2;
        let mut rng = RngSeed::new(9, 0).rng(0);
        let n = 200_000;
        let mut ok = 0u64;
        for _ in 0..n {
            let a = Position::new(rng.random(), rng.random(), rng.random()).unwrap();
            let b = Position::new(rng.random(), rng.random(), rng.random()).unwrap();
            if distance(&a, &b) > eps {
                ok += 1;
            }
        }
        let p = ok as f64 / n as f64;
        // balls centred within eps of a wall lose a cap; averaging the cap
        // volume over x1 gives pi eps^4 / 4 per wall
        let ball = 4.0 / 3.0 * std::f64::consts::PI * eps.powi(3);
        let cut = std::f64::consts::PI * eps.powi(4) / 2.0;
        let expected = 1.0 - (ball - cut);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((p - expected).abs() < 4.0 * se, "p={p} expected={expected}");
    }
}
