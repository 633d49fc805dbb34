//! Gaussian-process regression with a squared-exponential ARD kernel.
//!
//! Outputs are standardized before fitting. Hyperparameters (length scales,
//! signal variance, noise variance) live in log space inside fixed boxes and
//! are fitted by L-BFGS on the log marginal likelihood from several seeded
//! starts.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

const LENGTHSCALE: (f64, f64) = (0.01, 20.0);
const SIGNAL_VAR: (f64, f64) = (0.01, 100.0);
const NOISE_VAR: (f64, f64) = (1e-6, 1.0);
/// Diagonal jitter tried in turn, relative to the signal variance.
const JITTER: [f64; 8] = [0.0, 1e-12, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Fixed noise variance on the standardized scale; fitted when absent.
    #[serde(default)]
    pub fixed_noise: Option<f64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { restarts: 5, max_iters: 50, fixed_noise: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpParams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone)]
pub struct Gp {
    x: Vec<Vec<f64>>,
    y_mean: f64,
    y_std: f64,
    pub params: GpParams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub log_likelihood: f64,
}

fn sq_dist_scaled(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter().zip(b).zip(ls).map(|((x, y), l)| ((x - y) / l).powi(2)).sum()
}

fn kernel_matrix(x: &[Vec<f64>], p: &GpParams) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = p.signal_var;
        for j in 0..i {
            let v = p.signal_var * (-0.5 * sq_dist_scaled(&x[i], &x[j], &p.lengthscales)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `k + noise I`, adding jitter until it succeeds.
fn factor(mut k: DMatrix<f64>, noise: f64, signal: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    for i in 0..n {
        k[(i, i)] += noise;
    }
    let mut added = 0.0;
    for j in JITTER {
        let want = j * signal;
        for i in 0..n {
            k[(i, i)] += want - added;
        }
        added = want;
        if let Some(c) = Cholesky::new(k.clone()) {
            return Ok(c);
        }
    }
    Err(DseError::SingularKernel)
}

/// Maps an unbounded coordinate into `[lo, hi]` on a log scale.
fn squash(z: f64, (lo, hi): (f64, f64)) -> (f64, f64) {
    let s = 1.0 / (1.0 + (-z).exp());
    let span = (hi / lo).ln();
    ((lo.ln() + span * s).exp(), span * s * (1.0 - s))
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: DVector<f64>,
    fixed_noise: Option<f64>,
    /// Squared coordinate differences per dimension.
    diffs: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn params(&self, z: &[f64]) -> (GpParams, Vec<f64>) {
        let d = self.x[0].len();
        let mut dlog = Vec::with_capacity(d + 2);
        let mut ls = Vec::with_capacity(d);
        for &zi in &z[..d] {
            let (v, g) = squash(zi, LENGTHSCALE);
            ls.push(v);
            dlog.push(g);
        }
        let (sf, gs) = squash(z[d], SIGNAL_VAR);
        dlog.push(gs);
        let noise = match self.fixed_noise {
            Some(v) => {
                dlog.push(0.0);
                v
            }
            None => {
                let (v, g) = squash(z[d + 1], NOISE_VAR);
                dlog.push(g);
                v
            }
        };
        (GpParams { lengthscales: ls, signal_var: sf, noise_var: noise }, dlog)
    }

    /// Negative log marginal likelihood and its gradient in `z`.
    fn eval(&self, z: &[f64]) -> Option<(f64, Vec<f64>)> {
        let n = self.x.len();
        let d = self.x[0].len();
        let (p, dlog) = self.params(z);
        let k_se = kernel_matrix(self.x, &p);
        let chol = factor(k_se.clone(), p.noise_var, p.signal_var).ok()?;
        let alpha = chol.solve(&self.y);
        let logdet: f64 = chol.l_dirty().diagonal().iter().take(n).map(|v| v.ln()).sum();
        let nll = 0.5 * self.y.dot(&alpha) + logdet + 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        let w = &alpha * alpha.transpose() - chol.inverse();
        let mut grad = Vec::with_capacity(d + 2);
        for (j, dj) in self.diffs.iter().enumerate() {
            // dK/dlog(l_j) = K_se * D_j / l_j^2
            let l2 = p.lengthscales[j].powi(2);
            let tr = w.component_mul(&k_se).component_mul(dj).sum() / l2;
            grad.push(-0.5 * tr * dlog[j]);
        }
        grad.push(-0.5 * w.component_mul(&k_se).sum() * dlog[d]);
        grad.push(-0.5 * w.trace() * p.noise_var * dlog[d + 1]);
        if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some((nll, grad))
    }
}

/// Minimizes `f` by L-BFGS with a backtracking Armijo line search.
fn lbfgs(f: &dyn Fn(&[f64]) -> Option<(f64, Vec<f64>)>, x0: Vec<f64>, iters: usize) -> Option<(f64, Vec<f64>)> {
    const M: usize = 7;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let mut hist: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for _ in 0..iters {
        if dot(&g, &g).sqrt() < 1e-6 {
            break;
        }
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = hist.last() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
            hist.clear();
        }
        let mut step = if hist.is_empty() { 1.0 / dot(&g, &g).sqrt().max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..30 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            if let Some((fn_, gn)) = f(&xn) {
                if fn_ <= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            hist.push((s, y, 1.0 / sy));
            if hist.len() > M {
                hist.remove(0);
            }
        }
        let done = (fx - fn_).abs() < 1e-10 * fx.abs().max(1.0);
        x = xn;
        fx = fn_;
        g = gn;
        if done {
            break;
        }
    }
    Some((fx, x))
}

impl Gp {
    /// Fits hyperparameters and conditions on `(x, y)`.
    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &GpConfig, seed: u64) -> Result<Gp> {
        if x.len() < 2 || x.len() != y.len() {
            return Err(DseError::InvalidParam(format!("GP needs at least two observations, got {}", x.len())));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DseError::InvalidParam("GP inputs must be finite".into()));
        }
        let d = x[0].len();
        let n = x.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));
        let diffs = (0..d).map(|j| DMatrix::from_fn(n, n, |a, b| (x[a][j] - x[b][j]).powi(2))).collect();
        let prob = Problem { x, y: ys.clone(), fixed_noise: cfg.fixed_noise, diffs };
        let f = |z: &[f64]| prob.eval(z);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<(f64, Vec<f64>)> = None;
        for r in 0..cfg.restarts.max(1) {
            let z0: Vec<f64> =
                if r == 0 { vec![0.0; d + 2] } else { (0..d + 2).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect() };
            if let Some((v, z)) = lbfgs(&f, z0, cfg.max_iters) {
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, z));
                }
            }
        }
        let (nll, z) = best.ok_or(DseError::SingularKernel)?;
        let (params, _) = prob.params(&z);
        Self::condition(x, y_mean, y_std, ys, params, -nll)
    }

    /// Conditions on data with given hyperparameters.
    pub fn with_params(x: &[Vec<f64>], y: &[f64], params: GpParams) -> Result<Gp> {
        let n = x.len();
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_std = if var > 1e-24 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(n, y.iter().map(|v| (v - y_mean) / y_std));
        Self::condition(x, y_mean, y_std, ys, params, f64::NAN)
    }

    fn condition(x: &[Vec<f64>], y_mean: f64, y_std: f64, ys: DVector<f64>, params: GpParams, ll: f64) -> Result<Gp> {
        let chol = factor(kernel_matrix(x, &params), params.noise_var, params.signal_var)?;
        let alpha = chol.solve(&ys);
        Ok(Gp { x: x.to_vec(), y_mean, y_std, params, chol, alpha, log_likelihood: ll })
    }

    /// Posterior mean and variance of the latent function, original units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let p = &self.params;
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| p.signal_var * (-0.5 * sq_dist_scaled(xi, x, &p.lengthscales)).exp()),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.l_dirty().solve_lower_triangular(&k).unwrap_or_else(|| DVector::zeros(k.len()));
        let var = (p.signal_var - v.dot(&v)).max(0.0);
        (self.y_mean + self.y_std * mean, var * self.y_std * self.y_std)
    }

    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn prior_var(&self) -> f64 {
        self.params.signal_var * self.y_std * self.y_std
    }

    pub fn n_train(&self) -> usize {
        self.x.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn noise_free_interpolation() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 9.0, ((i * 7) % 10) as f64 / 9.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() + v[1] * v[1]).collect();
        let cfg = GpConfig { fixed_noise: Some(0.0), ..GpConfig::default() };
        let gp = Gp::fit(&x, &y, &cfg, 1).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((gp.predict(xi).0 - yi).abs() <= 1e-6, "{} vs {yi}", gp.predict(xi).0);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let x = grid1(6);
        let y: Vec<f64> = x.iter().map(|v| v[0] * 2.0 + 1.0).collect();
        let gp = Gp::fit(&x, &y, &GpConfig::default(), 3).unwrap();
        let (m, v) = gp.predict(&[1e4]);
        assert!((m - gp.prior_mean()).abs() < 1e-9);
        assert!((v - gp.prior_var()).abs() < 1e-9 * gp.prior_var());
    }

    #[test]
    fn sine_beats_linear_interpolation() {
        let x = grid1(12);
        let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
        let y: Vec<f64> = x.iter().map(|v| f(v[0])).collect();
        let gp = Gp::fit(&x, &y, &GpConfig::default(), 7).unwrap();
        let (mut e_gp, mut e_lin) = (0.0, 0.0);
        for i in 0..200 {
            let t = (i as f64 + 0.5) / 200.0;
            e_gp += (gp.predict(&[t]).0 - f(t)).powi(2);
            let seg = ((t * 11.0).floor() as usize).min(10);
            let (t0, t1) = (seg as f64 / 11.0, (seg + 1) as f64 / 11.0);
            let lin = y[seg] + (y[seg + 1] - y[seg]) * (t - t0) / (t1 - t0);
            e_lin += (lin - f(t)).powi(2);
        }
        assert!(e_gp < e_lin, "gp {e_gp} linear {e_lin}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 / 6.0, ((i * 3) % 7) as f64 / 6.0]).collect();
        let y = DVector::from_iterator(7, x.iter().map(|v| v[0] - v[1] * 0.5));
        let diffs = (0..2).map(|j| DMatrix::from_fn(7, 7, |a, b| (x[a][j] - x[b][j]).powi(2))).collect();
        let prob = Problem { x: &x, y, fixed_noise: None, diffs };
        let z = vec![0.3, -0.2, 0.1, -1.0];
        let (_, g) = prob.eval(&z).unwrap();
        for i in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[i] += 1e-6;
            zm[i] -= 1e-6;
            let fd = (prob.eval(&zp).unwrap().0 - prob.eval(&zm).unwrap().0) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-4 * fd.abs().max(1.0), "dim {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let x = grid1(8);
        let y: Vec<f64> = x.iter().map(|v| v[0].powi(3)).collect();
        let a = Gp::fit(&x, &y, &GpConfig::default(), 11).unwrap();
        let b = Gp::fit(&x, &y, &GpConfig::default(), 11).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn needs_two_points() {
        assert!(Gp::fit(&[vec![0.0]], &[1.0], &GpConfig::default(), 0).is_err());
    }

    #[test]
    fn posterior_variance_non_negative() {
        let x = grid1(5);
        let y = vec![1.0, 1.0, 1.0, 1.0, 1.0];
        let gp = Gp::fit(&x, &y, &GpConfig::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(-1.0..2.0);
            assert!(gp.predict(&[t]).1 >= 0.0);
        }
    }
}
