//! Training archives for the learned congestion model.
//!
//! An archive is a directory:
//!
//! ```text
//! manifest.json          schema, seed, sample count
//! graphs/g00000.json     one TopologyGraph per sample
//! targets.csv            sample,edge,link,wait
//! ```
//!
//! `wait` is the simulated mean channel waiting time of the link, in
//! cycles, listed in the order of the graph's `edges`.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::DesignPoint;
use crate::error::{DseError, Result};
use crate::gnn::{topology_graph, TopologyGraph};
use crate::noc::simulate;
use crate::suite::{SuiteCase, MAX_MESH_SIDE};
use crate::workload::LlmSpec;

pub const DATASET_SCHEMA: &str = "wafer-dse-dataset/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub seed: u64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: TopologyGraph,
    /// One per entry of `graph.edges`.
    pub waits: Vec<f64>,
}

/// Simulates one compiled case and pairs its graph with the link waits.
pub fn sample_of(case: &SuiteCase, seed: u64) -> Result<Sample> {
    let chunk = case.compile()?;
    let sim = simulate(&chunk.trace(), seed)?;
    let graph = topology_graph(&chunk, sim.total_cycles as f64);
    let waits = graph.edges.iter().map(|e| sim.link_wait[e.link as usize]).collect();
    Ok(Sample { graph, waits })
}

/// `n` samples drawn from `configs` x `models`. Each sample is one chunk
/// of one or two layers on a reticle block whose mesh fits in 12 x 12.
pub fn gen_dataset(configs: &[DesignPoint], models: &[LlmSpec], seed: u64, n: usize) -> Result<Vec<Sample>> {
    if configs.is_empty() || models.is_empty() {
        return Err(DseError::InvalidParam("gen_dataset needs at least one config and one model".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions: [(u32, u32); 3] = [(1, 1), (1, 2), (2, 2)];
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 50 * n.max(1) {
            return Err(DseError::Unmappable(format!("only {} of {n} samples compiled", out.len())));
        }
        let point = configs.choose(&mut rng).expect("non-empty").clone();
        let model = models.choose(&mut rng).expect("non-empty").clone();
        let region = *regions.choose(&mut rng).expect("regions");
        let tps: Vec<u32> = [1u32, 2, 4].into_iter().filter(|t| model.n_heads % t == 0).collect();
        let tp = *tps.choose(&mut rng).expect("tp 1 always divides");
        let micro_batch = rng.gen_range(1..=4u32.min(model.batch_size));
        let layers = rng.gen_range(1..=2u32.min(model.n_layers));
        let case = SuiteCase {
            name: format!("sample{:05}", out.len()),
            model,
            point,
            tp,
            micro_batch,
            layers,
            region,
        };
        let (r, c) = case.mesh_dims();
        if r > MAX_MESH_SIDE || c > MAX_MESH_SIDE {
            continue;
        }
        let sim_seed = seed ^ (out.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        match sample_of(&case, sim_seed) {
            Ok(s) => out.push(s),
            Err(DseError::Unmappable(_) | DseError::TileTooLarge(_) | DseError::RegionTooSmall(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn graph_path(dir: &Path, i: usize) -> std::path::PathBuf {
    dir.join("graphs").join(format!("g{i:05}.json"))
}

pub fn write_archive(dir: &Path, samples: &[Sample], seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir.join("graphs"))?;
    let manifest = Manifest { schema: DATASET_SCHEMA.into(), seed, n_samples: samples.len() };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let mut targets = String::from("sample,edge,link,wait\n");
    for (i, s) in samples.iter().enumerate() {
        std::fs::write(graph_path(dir, i), serde_json::to_string(&s.graph)? + "\n")?;
        for (j, (e, w)) in s.graph.edges.iter().zip(&s.waits).enumerate() {
            let _ = writeln!(targets, "{i},{j},{},{w}", e.link);
        }
    }
    std::fs::write(dir.join("targets.csv"), targets)?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct TargetRow {
    sample: usize,
    edge: usize,
    #[allow(dead_code)]
    link: u32,
    wait: f64,
}

pub fn read_archive(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    if manifest.schema != DATASET_SCHEMA {
        return Err(DseError::Parse(format!("unsupported dataset schema {:?}", manifest.schema)));
    }
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for i in 0..manifest.n_samples {
        let graph: TopologyGraph = serde_json::from_str(&std::fs::read_to_string(graph_path(dir, i))?)?;
        let n = graph.edges.len();
        samples.push(Sample { graph, waits: vec![f64::NAN; n] });
    }
    let mut rdr = csv::Reader::from_path(dir.join("targets.csv"))?;
    for row in rdr.deserialize::<TargetRow>() {
        let row = row?;
        let w = samples
            .get_mut(row.sample)
            .and_then(|s| s.waits.get_mut(row.edge))
            .ok_or_else(|| DseError::Parse(format!("target row for missing edge {}/{}", row.sample, row.edge)))?;
        *w = row.wait;
    }
    if samples.iter().any(|s| s.waits.iter().any(|w| w.is_nan())) {
        return Err(DseError::Parse("targets.csv does not cover every edge".into()));
    }
    Ok((manifest, samples))
}
