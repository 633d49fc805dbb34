//! Multi-fidelity multi-objective Bayesian optimization and its baselines.
//!
//! Schedule of [`run_mfmobo`] with `s = n1 - d1`:
//!
//! | iteration `i`        | evaluator | surrogate used for EHVI |
//! |----------------------|-----------|-------------------------|
//! | `i < s`              | low       | low                     |
//! | `s <= i < s + k`     | high      | low                     |
//! | `i >= s + k`         | high      | high                    |
//!
//! The front χ the acquisition improves on is always that of the evaluator
//! in use; at the switch it is rebuilt from every high-fidelity observation.
//! A surrogate is refitted only when its dataset has grown.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{Acquisition, Level, ParetoArchive, Record};
use super::ehvi::{argmax, ehvi, QmcNormals, ThroughputScale};
use super::gp::{Gp, GpConfig};
use super::pareto::Objective;
use super::space::Space;
use crate::error::{DseError, Result};

/// Initial sample size of the MOBO baseline.
pub const MOBO_INIT: usize = 6;
pub const DEFAULT_POOL: usize = 512;
pub const DEFAULT_QMC: usize = 128;
const SCALE: ThroughputScale = ThroughputScale::Log1p;

fn default_pool() -> usize {
    DEFAULT_POOL
}

fn default_qmc() -> usize {
    DEFAULT_QMC
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfmoboConfig {
    pub d0: usize,
    pub d1: usize,
    #[serde(alias = "N0")]
    pub n0: usize,
    #[serde(alias = "N1")]
    pub n1: usize,
    pub warmup_k: usize,
    #[serde(default = "default_pool")]
    pub candidate_pool: usize,
    #[serde(default = "default_qmc")]
    pub qmc_samples: usize,
    pub seed: u64,
    #[serde(default)]
    pub gp: GpConfig,
}

impl MfmoboConfig {
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(DseError::InvalidParam(m));
        if self.n0 == 0 || self.n1 == 0 {
            return bad("budgets n0 and n1 must be positive".into());
        }
        if self.d0 > self.n0 || self.d1 > self.n1 {
            return bad(format!("initial samples exceed budget: d0 {} n0 {} d1 {} n1 {}", self.d0, self.n0, self.d1, self.n1));
        }
        if self.warmup_k > self.n0 - self.d0 {
            return bad(format!("warmup_k {} exceeds n0 - d0 = {}", self.warmup_k, self.n0 - self.d0));
        }
        let low_steps = self.n1 - self.d1 + self.warmup_k;
        if low_steps > 0 && self.d1 < 2 {
            return bad("the low-fidelity surrogate needs d1 >= 2".into());
        }
        if self.n0 - self.d0 > self.warmup_k && self.d0 + self.warmup_k < 2 {
            return bad("the high-fidelity surrogate needs d0 + warmup_k >= 2".into());
        }
        if self.candidate_pool == 0 || self.qmc_samples == 0 {
            return bad("candidate_pool and qmc_samples must be positive".into());
        }
        Ok(())
    }

    /// Loop iterations after the initial samples.
    pub fn iterations(&self) -> usize {
        self.n0 + self.n1 - self.d0 - self.d1
    }

    pub fn switch_iteration(&self) -> usize {
        self.n1 - self.d1
    }

    pub fn acquisition_switch(&self) -> usize {
        self.n1 - self.d1 + self.warmup_k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Mfmobo,
    Mobo,
    Random,
}

impl std::str::FromStr for Algorithm {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mfmobo" => Ok(Algorithm::Mfmobo),
            "mobo" => Ok(Algorithm::Mobo),
            "random" => Ok(Algorithm::Random),
            _ => Err(DseError::InvalidParam(format!("unknown algorithm {s:?}"))),
        }
    }
}

pub type Evaluator<'a> = dyn FnMut(&[f64]) -> Result<Objective> + 'a;

/// Hooks for persisting and resuming a run.
#[derive(Default)]
pub struct RunIo<'a> {
    /// Records of an earlier run of the same configuration; matching
    /// evaluations are taken from here instead of calling the evaluator.
    pub replay: Vec<Record>,
    /// Called with every record not taken from `replay`.
    pub sink: Option<Box<dyn FnMut(&Record) -> Result<()> + 'a>>,
}

struct Models {
    n: usize,
    throughput: Gp,
    power: Gp,
}

struct Runner<'s, 'io, S: Space + ?Sized> {
    space: &'s S,
    archive: ParetoArchive,
    io: RunIo<'io>,
    seed: u64,
    pool: usize,
    qmc: QmcNormals,
    gp: GpConfig,
    models: [Option<Models>; 2],
}

fn slot(level: Level) -> usize {
    match level {
        Level::Low => 0,
        Level::High => 1,
    }
}

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

impl<'s, 'io, S: Space + ?Sized> Runner<'s, 'io, S> {
    fn new(space: &'s S, seed: u64, pool: usize, qmc: usize, gp: GpConfig, io: RunIo<'io>) -> Self {
        Runner {
            space,
            archive: ParetoArchive::new(space.reference()),
            io,
            seed,
            pool,
            qmc: QmcNormals::new(qmc, seed ^ 0x5eed_0e41),
            gp,
            models: [None, None],
        }
    }

    fn evaluate(
        &mut self,
        level: Level,
        iteration: Option<usize>,
        acquisition: Acquisition,
        x: Vec<f64>,
        f: &mut Evaluator<'_>,
    ) -> Result<()> {
        let index = self.archive.records.len();
        let cap = self.archive.reference.power;
        let (obj, error, fresh) = match self.io.replay.get(index) {
            Some(r) => {
                if r.fidelity != level || r.x != x {
                    return Err(DseError::Parse(format!("archive record {index} does not match this run")));
                }
                (r.objective(), r.error.clone(), false)
            }
            None => match f(&x) {
                Ok(o) if o.throughput.is_finite() && o.power.is_finite() => (o, None, true),
                Ok(o) => (o, Some(format!("non-finite objective ({}, {})", o.throughput, o.power)), true),
                Err(e) => (Objective::new(0.0, cap), Some(e.to_string()), true),
            },
        };
        let feasible = error.is_none();
        let (throughput, power) = if feasible { (obj.throughput, obj.power) } else { (0.0, cap) };
        let mut rec = Record {
            index,
            iteration,
            fidelity: level,
            acquisition,
            point: self.space.describe(&x),
            x,
            throughput,
            power,
            feasible,
            hypervolume: 0.0,
            error,
        };
        self.archive.records.push(rec.clone());
        rec.hypervolume = self.archive.hypervolume(level);
        self.archive.records[index].hypervolume = rec.hypervolume;
        debug!("eval {index} {level:?} t={throughput:.4e} p={power:.4e} hv={:.4e}", rec.hypervolume);
        if fresh {
            if let Some(sink) = self.io.sink.as_mut() {
                sink(&rec)?;
            }
        }
        Ok(())
    }

    fn seen(&self, level: Level) -> Vec<&[f64]> {
        self.archive.records.iter().filter(|r| r.fidelity == level).map(|r| r.x.as_slice()).collect()
    }

    /// Distinct random grid points; `n` of them unless the space is smaller.
    fn random_points(&self, n: usize, rng: &mut ChaCha8Rng, avoid: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
        for _ in 0..n * 20 {
            if out.len() == n {
                break;
            }
            let x = self.space.sample(rng);
            if !out.contains(&x) && !avoid.iter().any(|a| *a == x.as_slice()) {
                out.push(x);
            }
        }
        while out.len() < n {
            out.push(self.space.sample(rng));
        }
        out
    }

    fn models(&mut self, level: Level) -> Result<&Models> {
        let rs: Vec<&Record> = self.archive.records.iter().filter(|r| r.fidelity == level).collect();
        let n = rs.len();
        let s = slot(level);
        if self.models[s].as_ref().map_or(true, |m| m.n != n) {
            let x: Vec<Vec<f64>> = rs.iter().map(|r| self.space.encode(&r.x)).collect();
            let yt: Vec<f64> = rs.iter().map(|r| SCALE.forward(r.throughput)).collect();
            let yp: Vec<f64> = rs.iter().map(|r| r.power).collect();
            let seed = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((n as u64) << 1 | s as u64);
            let throughput = Gp::fit(&x, &yt, &self.gp, seed)?;
            let power = Gp::fit(&x, &yp, &self.gp, seed ^ 1)?;
            self.models[s] = Some(Models { n, throughput, power });
        }
        Ok(self.models[s].as_ref().expect("fitted above"))
    }

    /// EHVI argmax over a fresh pool against the front of `active`.
    fn select(&mut self, iteration: usize, surrogate: Level, active: Level) -> Result<Vec<f64>> {
        let mut rng = stream(self.seed, 1000 + iteration as u64);
        let seen: Vec<Vec<f64>> = self.seen(active).into_iter().map(|x| x.to_vec()).collect();
        let seen_refs: Vec<&[f64]> = seen.iter().map(|x| x.as_slice()).collect();
        let pool: Vec<Vec<f64>> = self
            .random_points(self.pool, &mut rng, &seen_refs)
            .into_iter()
            .map(|x| self.space.snap(&x))
            .collect();
        let front = self.archive.front_objectives(active);
        let reference = self.archive.reference;
        let enc: Vec<Vec<f64>> = pool.iter().map(|x| self.space.encode(x)).collect();
        let qmc = self.qmc.clone();
        let m = self.models(surrogate)?;
        let scores: Vec<f64> = enc
            .iter()
            .map(|e| {
                let (mt, vt) = m.throughput.predict(e);
                let (mp, vp) = m.power.predict(e);
                ehvi(&front, reference, [mt, mp], [vt.sqrt(), vp.sqrt()], SCALE, &qmc)
            })
            .collect();
        let best = argmax(&scores).unwrap_or(0);
        Ok(pool[best].clone())
    }
}

/// Runs the two-fidelity search on the schedule above. The returned archive
/// holds every evaluation; its high-fidelity front is the result.
pub fn run_mfmobo<S: Space + ?Sized>(
    space: &S,
    f_low: &mut Evaluator<'_>,
    f_high: &mut Evaluator<'_>,
    cfg: &MfmoboConfig,
    io: RunIo<'_>,
) -> Result<ParetoArchive> {
    cfg.check()?;
    let mut r = Runner::new(space, cfg.seed, cfg.candidate_pool, cfg.qmc_samples, cfg.gp.clone(), io);
    let mut rng = stream(cfg.seed, 1);
    for x in r.random_points(cfg.d1, &mut rng, &[]) {
        r.evaluate(Level::Low, None, Acquisition::Init, x, f_low)?;
    }
    let mut rng = stream(cfg.seed, 2);
    for x in r.random_points(cfg.d0, &mut rng, &[]) {
        r.evaluate(Level::High, None, Acquisition::Init, x, f_high)?;
    }
    for i in 0..cfg.iterations() {
        let active = if i < cfg.switch_iteration() { Level::Low } else { Level::High };
        let surrogate = if i < cfg.acquisition_switch() { Level::Low } else { Level::High };
        let x = r.select(i, surrogate, active)?;
        let acq = if surrogate == Level::Low { Acquisition::EhviLow } else { Acquisition::EhviHigh };
        let f: &mut Evaluator<'_> = if active == Level::Low { &mut *f_low } else { &mut *f_high };
        r.evaluate(active, Some(i), acq, x, f)?;
    }
    Ok(r.archive)
}

/// Random search or single-fidelity MOBO with `budget` evaluations of `f`,
/// recorded as high fidelity.
pub fn run_baseline<S: Space + ?Sized>(
    space: &S,
    f: &mut Evaluator<'_>,
    budget: usize,
    algo: Algorithm,
    seed: u64,
    opts: &BaselineOptions,
    io: RunIo<'_>,
) -> Result<ParetoArchive> {
    let mut r = Runner::new(space, seed, opts.candidate_pool, opts.qmc_samples, opts.gp.clone(), io);
    match algo {
        Algorithm::Random => {
            let mut rng = stream(seed, 2);
            for (i, x) in r.random_points(budget, &mut rng, &[]).into_iter().enumerate() {
                r.evaluate(Level::High, Some(i), Acquisition::Random, x, f)?;
            }
        }
        Algorithm::Mobo => {
            if budget < 2 {
                return Err(DseError::InvalidParam(format!("MOBO needs a budget of at least 2, got {budget}")));
            }
            let init = opts.init.min(budget).max(2);
            let mut rng = stream(seed, 2);
            for x in r.random_points(init, &mut rng, &[]) {
                r.evaluate(Level::High, None, Acquisition::Init, x, f)?;
            }
            for i in 0..budget - init {
                let x = r.select(i, Level::High, Level::High)?;
                r.evaluate(Level::High, Some(i), Acquisition::EhviHigh, x, f)?;
            }
        }
        Algorithm::Mfmobo => {
            return Err(DseError::InvalidParam("multi-fidelity search needs two evaluators".into()));
        }
    }
    Ok(r.archive)
}

#[derive(Debug, Clone)]
pub struct BaselineOptions {
    pub init: usize,
    pub candidate_pool: usize,
    pub qmc_samples: usize,
    pub gp: GpConfig,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        BaselineOptions { init: MOBO_INIT, candidate_pool: DEFAULT_POOL, qmc_samples: DEFAULT_QMC, gp: GpConfig::default() }
    }
}

impl From<&MfmoboConfig> for BaselineOptions {
    fn from(c: &MfmoboConfig) -> Self {
        BaselineOptions { init: MOBO_INIT, candidate_pool: c.candidate_pool, qmc_samples: c.qmc_samples, gp: c.gp.clone() }
    }
}
