//! Expected hypervolume improvement by quasi-Monte Carlo.
//!
//! The two objectives get independent Gaussian posteriors. Throughput is
//! modelled as `ln(1 + t)`, power directly. Normal draws come from a
//! randomly shifted 2-D Halton sequence, so a fixed seed gives a fixed
//! estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use super::pareto::{hypervolume, Objective, Reference};

/// How a posterior over the throughput coordinate maps back to tokens/s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThroughputScale {
    Identity,
    Log1p,
}

impl ThroughputScale {
    pub fn forward(self, t: f64) -> f64 {
        match self {
            ThroughputScale::Identity => t,
            ThroughputScale::Log1p => t.max(0.0).ln_1p(),
        }
    }

    pub fn inverse(self, v: f64) -> f64 {
        match self {
            ThroughputScale::Identity => v,
            ThroughputScale::Log1p => v.exp_m1(),
        }
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

/// Pairs of standard normal draws.
#[derive(Debug, Clone)]
pub struct QmcNormals {
    pub z: Vec<[f64; 2]>,
}

impl QmcNormals {
    pub fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: [f64; 2] = [rng.gen(), rng.gen()];
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let z = (1..=n as u64)
            .map(|i| {
                let mut out = [0.0; 2];
                for (k, base) in [2u64, 3].into_iter().enumerate() {
                    let u = (radical_inverse(i, base) + shift[k]).fract().clamp(1e-12, 1.0 - 1e-12);
                    out[k] = std.inverse_cdf(u);
                }
                out
            })
            .collect();
        QmcNormals { z }
    }
}

/// Hypervolume gained by adding `y` to `front`, given `base = hv(front)`.
pub fn improvement(front: &[Objective], base: f64, r: Reference, y: Objective) -> f64 {
    if y.throughput <= r.throughput || y.power >= r.power {
        return 0.0;
    }
    if front.iter().any(|f| f.throughput >= y.throughput && f.power <= y.power) {
        return 0.0;
    }
    let mut all = front.to_vec();
    all.push(y);
    (hypervolume(&all, r) - base).max(0.0)
}

/// EHVI for one candidate with posterior means and standard deviations over
/// `(scaled throughput, power)`.
pub fn ehvi(
    front: &[Objective],
    r: Reference,
    mean: [f64; 2],
    sd: [f64; 2],
    scale: ThroughputScale,
    qmc: &QmcNormals,
) -> f64 {
    let base = hypervolume(front, r);
    if sd[0] <= 0.0 && sd[1] <= 0.0 {
        return improvement(front, base, r, Objective::new(scale.inverse(mean[0]), mean[1]));
    }
    let total: f64 = qmc
        .z
        .iter()
        .map(|z| {
            let y = Objective::new(scale.inverse(mean[0] + sd[0] * z[0]), mean[1] + sd[1] * z[1]);
            improvement(front, base, r, y)
        })
        .sum();
    total / qmc.z.len() as f64
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: Reference = Reference { throughput: 0.0, power: 15.0 };

    #[test]
    fn zero_variance_is_exact() {
        let q = QmcNormals::new(64, 1);
        let front = [Objective::new(2.0, 5.0)];
        let e = ehvi(&front, R, [3.0, 9.0], [0.0, 0.0], ThroughputScale::Identity, &q);
        assert_eq!(e, 6.0);
        let d = ehvi(&front, R, [1.0, 6.0], [0.0, 0.0], ThroughputScale::Identity, &q);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn unit_variance_matches_dense_integration() {
        let front = [Objective::new(2.0, 5.0)];
        let (m, s) = ([2.5, 7.0], [1.0, 1.0]);
        let q = QmcNormals::new(4096, 3);
        let e = ehvi(&front, R, m, s, ThroughputScale::Identity, &q);
        // midpoint rule over +-8 sd
        let n = 800;
        let h = 16.0 / n as f64;
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let base = hypervolume(&front, R);
        let mut oracle = 0.0;
        for i in 0..n {
            let z0 = -8.0 + (i as f64 + 0.5) * h;
            for j in 0..n {
                let z1 = -8.0 + (j as f64 + 0.5) * h;
                let y = Objective::new(m[0] + s[0] * z0, m[1] + s[1] * z1);
                oracle += improvement(&front, base, R, y) * pdf(z0) * pdf(z1) * h * h;
            }
        }
        assert!((e - oracle).abs() <= 0.02 * oracle, "{e} vs {oracle}");
    }

    #[test]
    fn seeded_draws_repeat() {
        assert_eq!(QmcNormals::new(16, 5).z, QmcNormals::new(16, 5).z);
        assert_ne!(QmcNormals::new(16, 5).z, QmcNormals::new(16, 6).z);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[]), None);
        assert_eq!(argmax(&[f64::NAN, 0.0]), Some(1));
    }

    #[test]
    fn log_scale_round_trips() {
        let s = ThroughputScale::Log1p;
        assert!((s.inverse(s.forward(1234.5)) - 1234.5).abs() < 1e-9);
        assert_eq!(s.forward(0.0), 0.0);
    }
}
