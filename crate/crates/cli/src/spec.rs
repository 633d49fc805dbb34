//! Experiment specification files.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wafer_dse::analytic::Fidelity;
use wafer_dse::design_space::GridSpec;
use wafer_dse::error::{DseError, Result};
use wafer_dse::explorer::gp::GpConfig;
use wafer_dse::explorer::mfmobo::{DEFAULT_POOL, DEFAULT_QMC};
use wafer_dse::explorer::{Algorithm, MfmoboConfig};
use wafer_dse::workload::{load_benchmarks, LlmSpec};
use wafer_dse::yield_model::YieldParams;

fn analytical() -> String {
    "analytical".into()
}

fn cycle() -> String {
    "cycle".into()
}

fn mfmobo() -> String {
    "mfmobo".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorerSection {
    #[serde(default = "mfmobo")]
    pub algorithm: String,
    pub d0: usize,
    pub d1: usize,
    #[serde(alias = "N0")]
    pub n0: usize,
    #[serde(alias = "N1")]
    pub n1: usize,
    pub warmup_k: usize,
    #[serde(default)]
    pub candidate_pool: Option<usize>,
    #[serde(default)]
    pub qmc_samples: Option<usize>,
    /// Evaluations for the baselines; defaults to `n0`.
    #[serde(default)]
    pub budget: Option<usize>,
    #[serde(default)]
    pub gp: Option<GpConfig>,
}

/// Paths are relative to the file they appear in.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub benchmarks: Vec<String>,
    pub benchmark_file: PathBuf,
    pub grid: PathBuf,
    #[serde(default)]
    pub component_db: Option<PathBuf>,
    #[serde(default, rename = "yield")]
    pub yield_params: Option<YieldParams>,
    #[serde(default = "analytical")]
    pub low_fidelity: String,
    #[serde(default = "cycle")]
    pub high_fidelity: String,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub explorer: ExplorerSection,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let mut s: ExperimentSpec = toml::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        s.benchmark_file = base.join(&s.benchmark_file);
        s.grid = base.join(&s.grid);
        s.component_db = s.component_db.map(|p| base.join(p));
        s.out = s.out.map(|p| base.join(p));
        for p in [&s.benchmark_file, &s.grid] {
            if !p.exists() {
                return Err(DseError::Parse(format!("{} does not exist", p.display())));
            }
        }
        if s.benchmarks.is_empty() {
            return Err(DseError::Parse("no benchmarks listed".into()));
        }
        s.fidelities()?;
        s.algorithm()?;
        Ok(s)
    }

    pub fn fidelities(&self) -> Result<(Fidelity, Fidelity)> {
        Ok((self.low_fidelity.parse()?, self.high_fidelity.parse()?))
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        self.explorer.algorithm.parse()
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::load(&self.grid)
    }

    pub fn models(&self) -> Result<Vec<LlmSpec>> {
        let all = load_benchmarks(&self.benchmark_file)?;
        self.benchmarks
            .iter()
            .map(|name| {
                all.iter()
                    .find(|m| &m.name == name)
                    .cloned()
                    .ok_or_else(|| DseError::Parse(format!("benchmark {name:?} not in {}", self.benchmark_file.display())))
            })
            .collect()
    }

    pub fn mfmobo(&self, seed: u64) -> MfmoboConfig {
        let e = &self.explorer;
        MfmoboConfig {
            d0: e.d0,
            d1: e.d1,
            n0: e.n0,
            n1: e.n1,
            warmup_k: e.warmup_k,
            candidate_pool: e.candidate_pool.unwrap_or(DEFAULT_POOL),
            qmc_samples: e.qmc_samples.unwrap_or(DEFAULT_QMC),
            seed,
            gp: e.gp.clone().unwrap_or_default(),
        }
    }
}
