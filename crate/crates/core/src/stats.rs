//! Monte Carlo bookkeeping: running moments, estimates and Kolmogorov-Smirnov tests.

use serde::{Deserialize, Serialize};

/// Mean with standard error and sample count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n: 1,
        }
    }

    pub fn scale(self, c: f64) -> Self {
        Self {
            mean: self.mean * c,
            stderr: self.stderr * c.abs(),
            n: self.n,
        }
    }

    /// Sum of two independent estimates.
    pub fn add(self, other: Estimate) -> Self {
        Self {
            mean: self.mean + other.mean,
            stderr: self.stderr.hypot(other.stderr),
            n: self.n.min(other.n),
        }
    }

    /// Difference of two independent estimates.
    pub fn sub(self, other: Estimate) -> Self {
        self.add(other.scale(-1.0))
    }

    pub fn combined_stderr(&self, other: &Estimate) -> f64 {
        self.stderr.hypot(other.stderr)
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let s = self.combined_stderr(other);
        let d = (self.mean - other.mean).abs();
        if s == 0.0 {
            if d == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            d / s
        }
    }
}

/// Welford accumulator; mergeable, so batches can be reduced in any grouping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Accumulator) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        let mean = self.mean + d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.mean = mean;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// With a single sample the spread is undefined and reported as zero.
    pub fn estimate(&self) -> Estimate {
        let n = self.n.max(1);
        Estimate {
            mean: self.mean,
            stderr: (self.variance() / n as f64).sqrt(),
            n,
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut a = Accumulator::new();
        for x in iter {
            a.push(x);
        }
        a
    }
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 0.3 {
        // the alternating series converges slowly here; use the dual form
        let y = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 0..50 {
            let j = (2 * k + 1) as f64;
            s += (-j * j * y).exp();
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub effective_n: f64,
}

impl KsResult {
    /// Asymptotic critical value `c(alpha)/sqrt(n)`.
    pub fn critical(&self, alpha: f64) -> f64 {
        (-(alpha / 2.0).ln() / 2.0).sqrt() / self.effective_n.sqrt()
    }
}

fn ks_p(d: f64, ne: f64) -> f64 {
    let sn = ne.sqrt();
    kolmogorov_q((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample test against a continuous CDF. Sorts `samples` in place.
pub fn ks_one_sample(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> KsResult {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    KsResult {
        statistic: d,
        p_value: ks_p(d, n),
        effective_n: n,
    }
}

/// Two-sample test. Sorts both slices in place.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> KsResult {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    KsResult {
        statistic: d,
        p_value: ks_p(d, ne),
        effective_n: ne,
    }
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `erfc` with relative error below 1.2e-7 (Numerical Recipes Chebyshev fit).
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t
        * (-z * z - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
            .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25, 0.5];
        let acc: Accumulator = xs.iter().copied().collect();
        let m = xs.iter().sum::<f64>() / 6.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0;
        assert!((acc.mean() - m).abs() < 1e-14);
        assert!((acc.variance() - v).abs() < 1e-12);
        assert!((acc.estimate().stderr - (v / 6.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merge_is_associative(xs in prop::collection::vec(-1e3f64..1e3, 1..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let full: Accumulator = xs.iter().copied().collect();
            let mut a: Accumulator = xs[..cut].iter().copied().collect();
            let b: Accumulator = xs[cut..].iter().copied().collect();
            a.merge(&b);
            prop_assert_eq!(a.count(), full.count());
            prop_assert!((a.mean() - full.mean()).abs() < 1e-9);
            prop_assert!((a.variance() - full.variance()).abs() < 1e-6 * (1.0 + full.variance()));
        }
    }

    #[test]
    fn kolmogorov_known_values() {
        // Q(1.36) ~ 0.049, Q(1.63) ~ 0.0098 (standard tables)
        assert!((kolmogorov_q(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.0100).abs() < 5e-4);
        // both branches agree near the switch
        let a = kolmogorov_q(0.3 - 1e-9);
        let b = kolmogorov_q(0.3 + 1e-9);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ks_uniform_sample() {
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_one_sample(&mut xs, |x| x);
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn erfc_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207).abs() < 1e-7);
        assert!((normal_cdf(1.959_964) - 0.975).abs() < 1e-6);
    }
}
