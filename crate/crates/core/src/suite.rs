//! Desk-scale compiled workloads used to compare evaluators.
//!
//! Each case is one pipeline-stage chunk of a small transformer on a small
//! reticle block; the physical mesh never exceeds 12 x 12 routers. Cases are
//! drawn from a fixed seed so the suite is the same on every machine.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{CoreConfig, Dataflow, DesignPoint};
use crate::error::Result;
use crate::mapping::{schedule_and_map, ChunkRegion, CompiledChunk};
use crate::mesh::Coord;
use crate::noc::{SimTrace, TraceFlow};
use crate::workload::{partition_and_allocate, stage_graph, LlmSpec, Mode, Phase};

pub const SUITE_SEED: u64 = 42;
pub const SUITE_SIZE: usize = 36;
pub const MAX_MESH_SIDE: u32 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCase {
    pub name: String,
    pub model: LlmSpec,
    pub point: DesignPoint,
    pub tp: u32,
    pub micro_batch: u32,
    pub layers: u32,
    /// Reticle block of the chunk, rows x cols.
    pub region: (u32, u32),
}

impl SuiteCase {
    pub fn compile(&self) -> Result<CompiledChunk> {
        let g = stage_graph(&self.model, self.tp, self.micro_batch, 0, self.layers, Phase::Forward);
        let region = ChunkRegion::new(self.region.0, self.region.1);
        let a = partition_and_allocate(&g, region.working_cores(&self.point), &self.point.core)?;
        schedule_and_map(&g, &a, &self.point, &region)
    }

    pub fn mesh_dims(&self) -> (u32, u32) {
        ChunkRegion::new(self.region.0, self.region.1).physical_dims(&self.point)
    }
}

fn model(name: String, hidden: u32, heads: u32, seq: u32) -> LlmSpec {
    LlmSpec {
        name,
        n_layers: 2,
        hidden_size: hidden,
        n_heads: heads,
        n_params_b: 0.0,
        batch_size: 8,
        seq_len: seq,
        mode: Mode::Prefill,
        precision_bytes: 2,
        mqa: false,
        gen_len: None,
        gpus: None,
    }
}

/// The seeded suite of `n` cases.
pub fn desk_suite_with(seed: u64, n: usize) -> Vec<SuiteCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: [(u32, u32); 5] = [(4, 4), (4, 6), (6, 6), (3, 4), (5, 5)];
    let regions: [(u32, u32); 3] = [(1, 1), (1, 2), (2, 2)];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (rows, cols) = *shapes.choose(&mut rng).expect("shapes");
        let region = *regions.choose(&mut rng).expect("regions");
        if region.0 * rows > MAX_MESH_SIDE || region.1 * cols > MAX_MESH_SIDE {
            continue;
        }
        let mut p = DesignPoint::reference();
        p.core = CoreConfig {
            dataflow: *Dataflow::ALL.choose(&mut rng).expect("dataflows"),
            mac_num: *[64u32, 128, 256, 512].choose(&mut rng).expect("macs"),
            buffer_size_kb: 256,
            buffer_bw: *[256u32, 512, 1024].choose(&mut rng).expect("bw"),
            noc_bw: *[64u32, 128, 256, 512].choose(&mut rng).expect("noc"),
        };
        p.reticle.core_rows = rows;
        p.reticle.core_cols = cols;
        p.reticle.redundancy_cols = Some(0);
        p.reticle.inter_reticle_bw_ratio = *[0.25f64, 0.5, 1.0].choose(&mut rng).expect("ratio");
        let hidden = *[128u32, 256, 384, 512].choose(&mut rng).expect("hidden");
        let seq = *[32u32, 64, 128].choose(&mut rng).expect("seq");
        let tp = *[1u32, 2, 4].choose(&mut rng).expect("tp");
        let micro_batch = rng.gen_range(1..=4);
        let layers = rng.gen_range(1..=2);
        let i = out.len();
        let name = format!("case{i:02}");
        out.push(SuiteCase {
            name: name.clone(),
            model: model(name, hidden, 8, seq),
            point: p,
            tp,
            micro_batch,
            layers,
            region,
        });
    }
    out
}

pub fn desk_suite() -> Vec<SuiteCase> {
    desk_suite_with(SUITE_SEED, SUITE_SIZE)
}

/// Every router sends one packet stream to a single hotspot router at once.
pub fn hotspot_trace(side: u32, bits: u32, bytes: u64) -> SimTrace {
    let mesh = crate::mesh::MeshSpec::uniform(side, side, bits);
    let hot = Coord::new(side / 2, side / 2);
    let mut flows = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let c = Coord::new(x, y);
            if c == hot {
                continue;
            }
            flows.push(TraceFlow {
                id: flows.len() as u32,
                src: c,
                dst: hot,
                bytes,
                packet_bytes: 256,
                start: 0,
                interval: 0,
                src_node: None,
                dst_node: None,
            });
        }
    }
    SimTrace { mesh, nodes: Vec::new(), flows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_is_seeded_and_small() {
        let a = desk_suite();
        assert_eq!(a, desk_suite());
        assert!(a.len() >= 30);
        for c in &a {
            let (r, k) = c.mesh_dims();
            assert!(r <= MAX_MESH_SIDE && k <= MAX_MESH_SIDE, "{} {r}x{k}", c.name);
        }
    }
}
