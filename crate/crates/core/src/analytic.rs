//! Analytical performance model and the evaluation ladder built on it.
//!
//! Op level: a chunk's latency is the longest path through tile compute
//! delays and flow delays. A flow is delayed by its hop latency plus the
//! serialization of its volume at a fair share of every link it crosses; the
//! share is the link width divided by the number of flows of the same
//! producer operator on that link.
//!
//! Chunk level: per-stage chunk latencies are combined with inter-chunk
//! traffic on the reticle grid, DRAM traffic and pipeline bubbles into an
//! iteration time. The other fidelities only swap the chunk latency.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cost_model::{
    area_of, inter_reticle_side_gbps, power_of, stack_bytes_per_s, ActionCounts, ComponentDb, PowerBreakdown,
    CLOCK_HZ, MEM_CTRL_BYTES_PER_S, NET_IF_BYTES_PER_S,
};
use crate::design_space::{DesignPoint, Granularity, MemoryStyle};
use crate::error::{DseError, Result};
use crate::gnn::{topology_graph, waits_by_link, WaitPredictor};
use crate::mapping::{flow_flits, region_shape, schedule_and_map, ChunkRegion, CompiledChunk, LogicCoreGraph};
use crate::mesh::{Coord, Dir, MeshSpec};
use crate::noc::{serialization_cycles, simulate_with, SimConfig};
use crate::workload::{
    check_strategy, chunk_footprint, enumerate_strategies, inter_chunk_edges, partition_and_allocate, stage_graph,
    stage_layers, InterChunkKind, LlmSpec, Mode, ParallelStrategy, Phase,
};

/// Chunk executions per micro-batch in training: forward, recomputation from
/// checkpoints, and a backward pass costing two forwards.
pub const TRAIN_PASSES: f64 = 4.0;
/// All-reduces per layer in training (forward, recompute, backward) relative
/// to inference.
const TRAIN_TP_FACTOR: f64 = 3.0;
/// Weights stay on chip when they use at most this share of the chunk SRAM.
pub const RESIDENT_WEIGHT_SHARE: f64 = 0.5;
/// Analytical leaders re-run at a higher fidelity by [`Evaluator::best`].
pub const DEFAULT_TOP_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fidelity {
    Analytical,
    Gnn,
    CycleSim,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Analytical => "analytical",
            Fidelity::Gnn => "gnn",
            Fidelity::CycleSim => "cycle",
        })
    }
}

impl FromStr for Fidelity {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "analytical" | "analytic" => Ok(Fidelity::Analytical),
            "gnn" => Ok(Fidelity::Gnn),
            "cycle" | "cyclesim" | "sim" => Ok(Fidelity::CycleSim),
            _ => Err(DseError::InvalidParam(format!("unknown fidelity {s:?}"))),
        }
    }
}

/// Iteration latency by cause, cycles. Sums to the iteration latency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub compute: f64,
    pub noc: f64,
    pub inter_reticle: f64,
    pub dram: f64,
    pub pipeline_bubble: f64,
}

impl LatencyBreakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.noc + self.inter_reticle + self.dram + self.pipeline_bubble
    }

    fn scaled(&self, k: f64) -> Self {
        LatencyBreakdown {
            compute: self.compute * k,
            noc: self.noc * k,
            inter_reticle: self.inter_reticle * k,
            dram: self.dram * k,
            pipeline_bubble: self.pipeline_bubble * k,
        }
    }

    fn add(&mut self, o: &LatencyBreakdown) {
        self.compute += o.compute;
        self.noc += o.noc;
        self.inter_reticle += o.inter_reticle;
        self.dram += o.dram;
        self.pipeline_bubble += o.pipeline_bubble;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmark: String,
    /// Trained, prefilled or generated tokens per second, by mode.
    pub tokens_per_s: f64,
    pub iteration_latency_cycles: f64,
    pub breakdown: LatencyBreakdown,
    /// Per wafer.
    #[serde(rename = "avg_power_W")]
    pub avg_power_w: f64,
    /// Per wafer.
    #[serde(rename = "peak_power_W")]
    pub peak_power_w: f64,
    /// Whole system.
    pub power: PowerBreakdown,
    pub actions: ActionCounts,
    pub fidelity: Fidelity,
    pub strategy: ParallelStrategy,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkLatency {
    pub cycles: f64,
    /// Longest path with every flow delay set to zero.
    pub compute_cycles: f64,
}

/// m / (m + pp - 1).
pub fn pipeline_efficiency(m: u32, pp: u32) -> f64 {
    m as f64 / (m + pp - 1) as f64
}

/// Longest path through node compute and the given edge delays, honouring
/// same-core ordering.
pub fn longest_path(g: &LogicCoreGraph, edge_delay: &[f64]) -> Result<f64> {
    let n = g.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (e, &d) in g.edges.iter().zip(edge_delay) {
        out[e.src as usize].push((e.dst as usize, d));
        indeg[e.dst as usize] += 1;
    }
    for (v, ps) in g.preds.iter().enumerate() {
        for &p in ps {
            out[p as usize].push((v, 0.0));
            indeg[v] += 1;
        }
    }
    let mut start = vec![0.0f64; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    let mut latency = 0.0f64;
    while let Some(u) = queue.pop_front() {
        seen += 1;
        let finish = start[u] + g.nodes[u].cost.compute_cycles as f64;
        latency = latency.max(finish);
        for &(v, d) in &out[u] {
            start[v] = start[v].max(finish + d);
            indeg[v] -= 1;
            if indeg[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    if seen < n {
        return Err(DseError::CycleDetected);
    }
    Ok(latency)
}

/// Cycles to move `bits` over `width` bits per cycle shared by `flows`.
pub fn fair_share_cycles(bits: u64, flows: u64, width: u32) -> u64 {
    (bits * flows).div_ceil(width.max(1) as u64)
}

fn flow_links(chunk: &CompiledChunk, i: usize) -> Vec<usize> {
    let mesh = &chunk.mapping.mesh;
    let e = &chunk.graph.edges[i];
    let mut v = Vec::with_capacity(chunk.mapping.paths[i].len() + 2);
    v.push(mesh.injection_link(chunk.node_pos(e.src)));
    v.extend_from_slice(&chunk.mapping.paths[i]);
    v.push(mesh.ejection_link(chunk.node_pos(e.dst)));
    v
}

/// Analytical delay of every logic edge; zero for flows between tiles on
/// the same core.
pub fn flow_delays(chunk: &CompiledChunk) -> Result<Vec<f64>> {
    let g = &chunk.graph;
    let mesh = &chunk.mapping.mesh;
    let local: Vec<bool> = g.edges.iter().map(|e| chunk.node_pos(e.src) == chunk.node_pos(e.dst)).collect();
    let mut concurrent: HashMap<(usize, usize), u64> = HashMap::new();
    let mut links = Vec::with_capacity(g.edges.len());
    for (i, e) in g.edges.iter().enumerate() {
        if local[i] || e.bytes == 0 {
            links.push(Vec::new());
            continue;
        }
        let ls = flow_links(chunk, i);
        let op = g.nodes[e.src as usize].op;
        for &l in &ls {
            if mesh.link_bits[l] == 0 {
                let (a, b) = mesh.link_endpoints(l).unwrap_or((Coord::new(0, 0), Coord::new(0, 0)));
                return Err(DseError::Unroutable(format!("link {l} ({a:?} -> {b:?}) has zero width")));
            }
            *concurrent.entry((l, op)).or_default() += 1;
        }
        links.push(ls);
    }
    let r = mesh.router_latency as f64;
    let mut out = Vec::with_capacity(g.edges.len());
    for (i, e) in g.edges.iter().enumerate() {
        if links[i].is_empty() {
            out.push(0.0);
            continue;
        }
        let f = flow_flits(e.bytes, e.packet_bytes, mesh.flit_bytes);
        let op = g.nodes[e.src as usize].op;
        let ser = links[i]
            .iter()
            .map(|&l| serialization_cycles(f * concurrent[&(l, op)], mesh.link_bits[l]))
            .max()
            .unwrap_or(0);
        let hops: f64 = chunk.mapping.paths[i].iter().map(|&l| r + mesh.link_extra[l] as f64).sum();
        out.push(hops + ser as f64);
    }
    Ok(out)
}

pub fn op_level_analytical(chunk: &CompiledChunk) -> Result<ChunkLatency> {
    let delays = flow_delays(chunk)?;
    Ok(ChunkLatency {
        cycles: longest_path(&chunk.graph, &delays)?,
        compute_cycles: longest_path(&chunk.graph, &vec![0.0; chunk.graph.edges.len()])?,
    })
}

/// Edge delays rebuilt from predicted per-link waits: flits, waits and hop
/// latency over the path.
pub fn flow_delays_from_waits(chunk: &CompiledChunk, waits: &[f64]) -> Vec<f64> {
    let mesh = &chunk.mapping.mesh;
    let r = mesh.router_latency as f64;
    chunk
        .graph
        .edges
        .iter()
        .zip(&chunk.mapping.paths)
        .map(|(e, path)| {
            if path.is_empty() && chunk.node_pos(e.src) == chunk.node_pos(e.dst) {
                return 0.0;
            }
            let k = flow_flits(e.bytes, e.packet_bytes, mesh.flit_bytes) as f64;
            k + path.iter().map(|&l| waits[l] + r + mesh.link_extra[l] as f64).sum::<f64>()
        })
        .collect()
}

/// Placement of chunk regions on the reticle grids of all wafers.
#[derive(Debug, Clone)]
struct Layout {
    grid: MeshSpec,
    a: u32,
    b: u32,
    k: u32,
    per_wafer: u32,
    wafers: u32,
    link_bytes_per_s: f64,
}

impl Layout {
    fn new(p: &DesignPoint, chunks: u32) -> Result<Self> {
        let total = p.n_reticles() * p.n_wafers;
        if chunks == 0 || total % chunks != 0 || chunks % p.n_wafers != 0 {
            return Err(DseError::Unmappable(format!("{chunks} chunks do not tile {total} reticles")));
        }
        let k = total / chunks;
        let (a, b) = region_shape(k, p.wafer.reticle_rows);
        Ok(Layout {
            grid: MeshSpec::uniform(p.wafer.reticle_rows, p.wafer.reticle_cols, 1),
            a,
            b,
            k,
            per_wafer: chunks / p.n_wafers,
            wafers: p.n_wafers,
            link_bytes_per_s: inter_reticle_side_gbps(p) * 1e9 / 8.0,
        })
    }

    fn links_per_wafer(&self) -> usize {
        self.grid.n_nodes() * 4
    }

    /// Wafer and reticles of chunk `i`; slots are visited in snake order.
    fn reticles(&self, i: u32) -> (u32, Vec<Coord>) {
        let wafer = i / self.per_wafer;
        let slot = i % self.per_wafer;
        let nx = self.grid.cols / self.b;
        let sy = slot / nx;
        let col = slot % nx;
        let sx = if sy % 2 == 0 { col } else { nx - 1 - col };
        let mut v = Vec::with_capacity(self.k as usize);
        for y in sy * self.a..(sy + 1) * self.a {
            for x in sx * self.b..(sx + 1) * self.b {
                v.push(Coord::new(x, y));
            }
        }
        (wafer, v)
    }

    /// Links from a reticle to the nearest wafer edge.
    fn edge_route(&self, c: Coord) -> Vec<usize> {
        let (rows, cols) = (self.grid.rows, self.grid.cols);
        let options = [(c.x, Dir::West), (cols - 1 - c.x, Dir::East), (c.y, Dir::South), (rows - 1 - c.y, Dir::North)];
        let (dist, d) = options.into_iter().min_by_key(|&(n, _)| n).expect("four options");
        let mut at = c;
        let mut v = Vec::with_capacity(dist as usize);
        for _ in 0..dist {
            v.push(self.grid.link(at, d));
            at = at.step(d);
        }
        v
    }
}

/// Bytes on every reticle link and wafer interface for one traffic phase.
#[derive(Debug, Clone)]
struct Loads {
    reticle: Vec<f64>,
    wafer_out: Vec<f64>,
    wafer_in: Vec<f64>,
}

impl Loads {
    fn new(l: &Layout) -> Self {
        Loads {
            reticle: vec![0.0; l.links_per_wafer() * l.wafers as usize],
            wafer_out: vec![0.0; l.wafers as usize],
            wafer_in: vec![0.0; l.wafers as usize],
        }
    }

    /// Splits `bytes` evenly over the lanes pairing the two chunks' reticles.
    fn transfer(&mut self, l: &Layout, src: u32, dst: u32, bytes: f64) {
        if src == dst || bytes <= 0.0 {
            return;
        }
        let (ws, rs) = l.reticles(src);
        let (wd, rd) = l.reticles(dst);
        if ws != wd {
            self.wafer_out[ws as usize] += bytes;
            self.wafer_in[wd as usize] += bytes;
            return;
        }
        let lane = bytes / l.k as f64;
        let off = ws as usize * l.links_per_wafer();
        for (s, d) in rs.iter().zip(&rd) {
            for link in l.grid.route(*s, *d) {
                self.reticle[off + link] += lane;
            }
        }
    }

    fn seconds(&self, l: &Layout, p: &DesignPoint) -> Result<f64> {
        let max_link = self.reticle.iter().cloned().fold(0.0, f64::max);
        let mut t = if max_link > 0.0 { max_link / l.link_bytes_per_s } else { 0.0 };
        let max_if = self.wafer_out.iter().chain(&self.wafer_in).cloned().fold(0.0, f64::max);
        if max_if > 0.0 {
            if p.wafer.n_network_ifaces == 0 {
                return Err(DseError::Unroutable("inter-wafer traffic with no network interfaces".into()));
            }
            t = t.max(max_if / (p.wafer.n_network_ifaces as f64 * NET_IF_BYTES_PER_S));
        }
        Ok(t)
    }

    /// (bits times hops on reticle links, bits through wafer interfaces)
    fn bits(&self) -> (f64, f64) {
        (8.0 * self.reticle.iter().sum::<f64>(), 8.0 * self.wafer_out.iter().sum::<f64>())
    }
}

/// DRAM cost when every chunk moves the same number of bytes at once.
#[derive(Debug, Clone, Copy)]
struct DramModel {
    /// Seconds per byte per chunk; infinite when there is no DRAM path.
    s_per_byte: f64,
    /// Reticle-link bit-hops per byte, off-chip routing only.
    hop_bits_per_byte: f64,
    stacking: bool,
}

impl DramModel {
    fn new(p: &DesignPoint, l: &Layout, reticle_mm2: f64) -> Self {
        match p.wafer.memory_style {
            MemoryStyle::StackingDram => {
                let bw = l.k as f64 * stack_bytes_per_s(p, reticle_mm2);
                DramModel { s_per_byte: 1.0 / bw, hop_bits_per_byte: 0.0, stacking: true }
            }
            MemoryStyle::OffChipDram => {
                let ctrl = p.wafer.n_mem_controllers as f64 * MEM_CTRL_BYTES_PER_S;
                let ctrl_s = l.per_wafer as f64 / ctrl;
                let mut load = vec![0.0; l.links_per_wafer()];
                let mut hops = 0.0;
                let lane = 1.0 / l.k as f64;
                for i in 0..l.per_wafer {
                    for c in l.reticles(i).1 {
                        for link in l.edge_route(c) {
                            load[link] += lane;
                            hops += lane;
                        }
                    }
                }
                let route_s = load.iter().cloned().fold(0.0, f64::max) / l.link_bytes_per_s;
                DramModel {
                    s_per_byte: ctrl_s.max(route_s),
                    hop_bits_per_byte: 8.0 * hops / l.per_wafer as f64,
                    stacking: false,
                }
            }
        }
    }

    fn seconds(&self, bytes: f64) -> Result<f64> {
        if bytes <= 0.0 {
            return Ok(0.0);
        }
        if !self.s_per_byte.is_finite() {
            return Err(DseError::Unroutable("DRAM traffic with no memory bandwidth".into()));
        }
        Ok(bytes * self.s_per_byte)
    }

    /// Adds `bytes` moved by each of `chunks` chunks to `a`.
    fn count(&self, a: &mut ActionCounts, bytes: f64, chunks: u32) {
        let total = bytes * chunks as f64;
        if self.stacking {
            a.stack_dram_bit += (8.0 * total) as u64;
        } else {
            a.offchip_dram_bit += (8.0 * total) as u64;
            a.inter_reticle_bit += (self.hop_bits_per_byte * total) as u64;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ChunkKey {
    tp: u32,
    mb: u32,
    layers: u32,
    dense: bool,
    shape: (u32, u32),
    fidelity: Fidelity,
}

#[derive(Debug, Clone, Copy)]
struct ChunkTiming {
    latency: f64,
    compute: f64,
    actions: ActionCounts,
    cores: u32,
    fidelity: Fidelity,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub fidelity: Fidelity,
    pub seed: u64,
    /// Analytical leaders re-evaluated when the fidelity is not analytical.
    pub top_k: usize,
    pub sim: SimConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { fidelity: Fidelity::Analytical, seed: 0, top_k: DEFAULT_TOP_K, sim: SimConfig::default() }
    }
}

/// Per-token decode cost of one pipeline stage: `alpha + beta * ctx` cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeModel {
    pub alpha: f64,
    pub beta: f64,
    pub micro_batches: u32,
    pub pp: u32,
}

impl DecodeModel {
    /// Cycles for every sequence to gain one token at context `ctx`.
    pub fn step_cycles(&self, ctx: u64) -> f64 {
        self.micro_batches.max(self.pp) as f64 * (self.alpha + self.beta * ctx as f64)
    }

    /// Sum of step cycles for contexts `s_in .. s_in + s_out`.
    pub fn total_cycles(&self, s_in: u64, s_out: u64) -> f64 {
        let (si, so) = (s_in as f64, s_out as f64);
        let ctx_sum = so * si + so * (so - 1.0) / 2.0;
        self.micro_batches.max(self.pp) as f64 * (so * self.alpha + self.beta * ctx_sum)
    }
}

/// KV bytes of one sequence after a prompt of `s_in` tokens.
pub fn kv_bytes_per_sequence(model: &LlmSpec, s_in: u64) -> f64 {
    let mut b = 2.0
        * s_in as f64
        * model.hidden_size as f64
        * model.precision_bytes as f64
        * model.n_layers as f64;
    if model.mqa {
        b /= model.n_heads as f64;
    }
    b
}

/// Evaluates one workload on one design point.
pub struct Evaluator<'a> {
    model: &'a LlmSpec,
    p: DesignPoint,
    db: &'a ComponentDb,
    opts: EvalOptions,
    reticle_mm2: f64,
    gnn: RefCell<Option<Box<dyn WaitPredictor + 'a>>>,
    cache: RefCell<HashMap<ChunkKey, ChunkTiming>>,
    warned: Cell<bool>,
}

impl<'a> Evaluator<'a> {
    pub fn new(model: &'a LlmSpec, p: &DesignPoint, db: &'a ComponentDb, opts: EvalOptions) -> Result<Self> {
        model.check()?;
        p.check()?;
        let reticle_mm2 = area_of(p, db)?.reticle_mm2;
        Ok(Evaluator {
            model,
            p: *p,
            db,
            opts,
            reticle_mm2,
            gnn: RefCell::new(None),
            cache: RefCell::new(HashMap::new()),
            warned: Cell::new(false),
        })
    }

    /// Routes `Gnn` fidelity through `predictor`.
    pub fn with_predictor(self, predictor: Box<dyn WaitPredictor + 'a>) -> Self {
        *self.gnn.borrow_mut() = Some(predictor);
        self
    }

    pub fn options(&self) -> &EvalOptions {
        &self.opts
    }

    pub fn strategies(&self) -> Result<Vec<ParallelStrategy>> {
        enumerate_strategies(self.model, &self.p, &self.db.params)
    }

    /// Compiles one stage chunk of `s` with `layers` layers.
    pub fn compile(&self, s: &ParallelStrategy, layers: u32, dense: bool) -> Result<CompiledChunk> {
        let l = Layout::new(&self.p, s.chunks())?;
        let phase = if dense { Phase::DecodeDense } else { Phase::Forward };
        let g = stage_graph(self.model, s.tp, s.micro_batch, 0, layers, phase);
        let region = ChunkRegion::new(l.a, l.b);
        let assignments = partition_and_allocate(&g, region.working_cores(&self.p), &self.p.core)?;
        schedule_and_map(&g, &assignments, &self.p, &region)
    }

    fn timing(&self, s: &ParallelStrategy, layers: u32, dense: bool, fidelity: Fidelity) -> Result<ChunkTiming> {
        let l = Layout::new(&self.p, s.chunks())?;
        let key = ChunkKey { tp: s.tp, mb: s.micro_batch, layers, dense, shape: (l.a, l.b), fidelity };
        if let Some(t) = self.cache.borrow().get(&key) {
            return Ok(*t);
        }
        let chunk = self.compile(s, layers, dense)?;
        let analytic = op_level_analytical(&chunk)?;
        let (latency, used) = match fidelity {
            Fidelity::Analytical => (analytic.cycles, Fidelity::Analytical),
            Fidelity::CycleSim => {
                let r = simulate_with(&chunk.trace(), self.opts.seed, &self.opts.sim)?;
                (r.total_cycles as f64, Fidelity::CycleSim)
            }
            Fidelity::Gnn => match self.gnn_latency(&chunk, analytic.cycles)? {
                Some(c) => (c, Fidelity::Gnn),
                None => (analytic.cycles, Fidelity::Analytical),
            },
        };
        let t = ChunkTiming {
            latency: latency.max(analytic.compute_cycles),
            compute: analytic.compute_cycles,
            actions: chunk.actions(),
            cores: chunk.graph.n_cores,
            fidelity: used,
        };
        self.cache.borrow_mut().insert(key, t);
        Ok(t)
    }

    fn gnn_latency(&self, chunk: &CompiledChunk, analytic: f64) -> Result<Option<f64>> {
        let mut slot = self.gnn.borrow_mut();
        let Some(pred) = slot.as_mut() else {
            if !self.warned.replace(true) {
                warn!("no congestion predictor available; falling back to analytical fidelity");
            }
            return Ok(None);
        };
        let g = topology_graph(chunk, analytic);
        let waits = match pred.predict(&g) {
            Ok(w) => waits_by_link(&g, &w, chunk.mapping.mesh.n_links())?,
            Err(e) => {
                warn!("congestion predictor failed ({e}); falling back to analytical fidelity");
                *slot = None;
                return Ok(None);
            }
        };
        Ok(Some(longest_path(&chunk.graph, &flow_delays_from_waits(chunk, &waits))?))
    }

    fn chunk_sram_bytes(&self, l: &Layout) -> f64 {
        l.k as f64 * self.p.working_cores_per_reticle() as f64 * self.p.core.buffer_size_kb as f64 * 1024.0
    }

    /// Cost of all edges of `kind`, each scaled by `scale`, moved at once.
    fn traffic(&self, l: &Layout, s: &ParallelStrategy, edges: &[crate::workload::InterChunkEdge], kind: InterChunkKind, scale: f64) -> Result<Traffic> {
        let mut loads = Loads::new(l);
        for e in edges.iter().filter(|e| e.kind == kind) {
            loads.transfer(l, e.src.index(s), e.dst.index(s), e.bytes as f64 * scale);
        }
        let (reticle_bits, wafer_bits) = loads.bits();
        Ok(Traffic { cycles: loads.seconds(l, &self.p)? * CLOCK_HZ, reticle_bits, wafer_bits })
    }

    fn stage_timings(&self, s: &ParallelStrategy, dense: bool, fidelity: Fidelity) -> Result<Stages> {
        let mut per = BTreeMap::new();
        for ls in stage_layers(self.model.n_layers, s.pp) {
            *per.entry(ls).or_insert(0u32) += 1;
        }
        let mut worst: Option<(u32, ChunkTiming)> = None;
        let mut out = Vec::new();
        for (&ls, &count) in per.iter() {
            let t = self.timing(s, ls, dense, fidelity)?;
            if worst.map_or(true, |(_, w)| t.latency > w.latency) {
                worst = Some((ls, t));
            }
            out.push((ls, count, t));
        }
        let (worst_layers, worst) = worst.ok_or_else(|| DseError::Unmappable("no pipeline stages".into()))?;
        let fidelity = out.iter().map(|(_, _, t)| t.fidelity).min().unwrap_or(fidelity);
        Ok(Stages { all: out, worst, worst_layers, fidelity })
    }

    /// Memory traffic of one chunk.
    fn memory_plan(&self, l: &Layout, s: &ParallelStrategy) -> MemoryPlan {
        let fp = chunk_footprint(self.model, s);
        let sram = self.chunk_sram_bytes(l);
        let resident = fp.weights <= RESIDENT_WEIGHT_SHARE * sram;
        let on_chip_weights = if resident { fp.weights } else { 0.0 };
        MemoryPlan {
            weights: fp.weights,
            resident,
            kv_resident: on_chip_weights + fp.kv_cache <= sram,
            activations_fit: on_chip_weights + fp.activations <= sram,
            state_fits: fp.weights + fp.training_state <= sram,
            training_state: fp.training_state,
        }
    }

    /// Training or prompt processing with `passes` chunk executions per
    /// micro-batch.
    fn forward_like(&self, s: &ParallelStrategy, fidelity: Fidelity) -> Result<Priced> {
        let model = self.model;
        let train = model.mode == Mode::Train;
        let passes = if train { TRAIN_PASSES } else { 1.0 };
        let l = Layout::new(&self.p, s.chunks())?;
        let dram = DramModel::new(&self.p, &l, self.reticle_mm2);
        let st = self.stage_timings(s, false, fidelity)?;
        let m = s.micro_batches(model) as f64;
        let edges = inter_chunk_edges(model, s, model.seq_len as u64);
        let tp_scale = ring(s.tp) * if train { TRAIN_TP_FACTOR } else { 1.0 };
        let tp = self.traffic(&l, s, &edges, InterChunkKind::TpCollective, tp_scale)?;
        let pp = self.traffic(&l, s, &edges, InterChunkKind::PpActivation, if train { 2.0 } else { 1.0 })?;
        let dp = self.traffic(&l, s, &edges, InterChunkKind::DpGradient, ring(s.dp))?;

        let mem = self.memory_plan(&l, s);
        let p_bytes = model.precision_bytes as f64;
        let h = model.hidden_size as f64;
        let tokens = s.micro_batch as f64 * model.seq_len as f64;
        let ls = st.worst_layers as f64;
        let mut mb_bytes = 0.0;
        let mut iter_bytes = 0.0;
        if !mem.resident {
            mb_bytes += mem.weights * passes;
        }
        if train {
            if !mem.activations_fit {
                mb_bytes += 2.0 * (ls / 2.0).ceil() * tokens * h * p_bytes;
            }
            if !mem.state_fits {
                iter_bytes += 2.0 * (mem.weights + mem.training_state);
            }
        } else if !mem.kv_resident {
            let mut kv = 2.0 * ls * tokens * h / s.tp as f64 * p_bytes;
            if model.mqa {
                kv /= model.n_heads as f64;
            }
            mb_bytes += kv;
        }
        let dram_mb = dram.seconds(mb_bytes)? * CLOCK_HZ;
        let dram_iter = dram.seconds(iter_bytes)? * CLOCK_HZ;

        let w = st.worst;
        let t_stage = passes * w.latency + tp.cycles + pp.cycles + dram_mb;
        let bubble = (s.pp - 1) as f64 * t_stage;
        let breakdown = LatencyBreakdown {
            compute: m * passes * w.compute,
            noc: m * passes * (w.latency - w.compute),
            inter_reticle: m * (tp.cycles + pp.cycles) + dp.cycles,
            dram: m * dram_mb + dram_iter,
            pipeline_bubble: bubble,
        };
        let mut actions = ActionCounts::default();
        for (_, count, t) in &st.all {
            actions.add(&t.actions.scaled(passes * m * (*count * s.tp * s.dp) as f64));
        }
        actions.inter_reticle_bit += (m * (tp.reticle_bits + pp.reticle_bits) + dp.reticle_bits) as u64;
        actions.inter_wafer_bit += (m * (tp.wafer_bits + pp.wafer_bits) + dp.wafer_bits) as u64;
        dram.count(&mut actions, mb_bytes * m + iter_bytes, s.chunks());
        Ok(Priced { iteration: breakdown.total(), breakdown, actions, fidelity: st.fidelity })
    }

    /// Prefill of the prompt followed by token-by-token generation.
    fn generation(&self, s: &ParallelStrategy, fidelity: Fidelity) -> Result<Priced> {
        let model = self.model;
        let prefill = self.forward_like(s, fidelity)?;
        let (_, decode) = self.decode_part(s, fidelity)?;
        let s_in = model.seq_len as u64;
        let batch = model.batch_size as f64;
        let t_p = prefill.iteration;
        let t_d = decode.iteration;
        let mut breakdown = prefill.breakdown;
        breakdown.add(&decode.breakdown);
        let mut actions = prefill.actions;
        actions.add(&decode.actions);
        let fidelity = prefill.fidelity.min(decode.fidelity);
        let (rho, kv_bw) = match self.p.hetero.granularity {
            Granularity::None => {
                return Ok(Priced { iteration: breakdown.total(), breakdown, actions, fidelity });
            }
            g => self.hetero_split(g)?,
        };
        let prefill_rate = rho * batch / (t_p / CLOCK_HZ);
        let decode_rate = (1.0 - rho) * batch / (t_d / CLOCK_HZ);
        let kv_rate = kv_bw / kv_bytes_per_sequence(model, s_in);
        let rate = prefill_rate.min(decode_rate).min(kv_rate);
        let iteration = batch / rate * CLOCK_HZ;
        let breakdown = breakdown.scaled(iteration / (t_p + t_d));
        let kv_bits = 8.0 * kv_bytes_per_sequence(model, s_in) * batch;
        match self.p.hetero.granularity {
            Granularity::WaferLevel => actions.inter_wafer_bit += kv_bits as u64,
            Granularity::ReticleLevel => actions.inter_reticle_bit += kv_bits as u64,
            _ => {
                actions.noc_hop_flit += (kv_bits / (8.0 * self.db.params.flit_bytes as f64)) as u64;
            }
        }
        Ok(Priced { iteration, breakdown, actions, fidelity })
    }

    /// Effective prefill share and KV transfer bandwidth (bytes/s) for a
    /// split configuration.
    fn hetero_split(&self, g: Granularity) -> Result<(f64, f64)> {
        let p = &self.p;
        let rho = p.hetero.prefill_ratio;
        let w = p.n_wafers as f64;
        let side = inter_reticle_side_gbps(p) * 1e9 / 8.0;
        let split = |n: u32| -> f64 { ((rho * n as f64).round().clamp(1.0, (n - 1) as f64)) / n as f64 };
        match g {
            Granularity::None => Ok((1.0, f64::INFINITY)),
            Granularity::CoreLevel => {
                let cut = p.reticle.core_rows as f64 * p.core.noc_bw as f64 * CLOCK_HZ / 8.0;
                Ok((rho, w * p.n_reticles() as f64 * cut))
            }
            Granularity::ReticleLevel => {
                let n = p.n_reticles();
                if n < 2 {
                    return Err(DseError::InvalidParam("reticle-level split needs at least two reticles".into()));
                }
                Ok((split(n), w * p.wafer.reticle_rows as f64 * side))
            }
            Granularity::WaferLevel => {
                if p.n_wafers < 2 {
                    return Err(DseError::InvalidParam("wafer-level split needs at least two wafers".into()));
                }
                if p.wafer.n_network_ifaces == 0 {
                    return Err(DseError::Unroutable("wafer-level split with no network interfaces".into()));
                }
                let r = split(p.n_wafers);
                let wp = (r * w).round();
                Ok((r, wp.min(w - wp) * p.wafer.n_network_ifaces as f64 * NET_IF_BYTES_PER_S))
            }
        }
    }

    /// Per-token decode model of `s` and the priced generation of
    /// `gen_len` tokens.
    pub fn decode_model(&self, s: &ParallelStrategy) -> Result<DecodeModel> {
        Ok(self.decode_part(s, Fidelity::Analytical)?.0)
    }

    fn decode_part(&self, s: &ParallelStrategy, fidelity: Fidelity) -> Result<(DecodeModel, Priced)> {
        let model = self.model;
        let l = Layout::new(&self.p, s.chunks())?;
        let dram = DramModel::new(&self.p, &l, self.reticle_mm2);
        let st = self.stage_timings(s, true, fidelity)?;
        let edges = inter_chunk_edges(model, s, 1);
        let tp = self.traffic(&l, s, &edges, InterChunkKind::TpCollective, ring(s.tp))?;
        let pp = self.traffic(&l, s, &edges, InterChunkKind::PpActivation, 1.0)?;
        let mem = self.memory_plan(&l, s);
        let w_bytes = if mem.resident { 0.0 } else { mem.weights };
        let t_w = dram.seconds(w_bytes)? * CLOCK_HZ;
        let w = st.worst;
        let alpha = w.latency + tp.cycles + pp.cycles + t_w;

        let h = model.hidden_size as f64;
        let tp_f = s.tp as f64;
        let mb = s.micro_batch as f64;
        let ls = st.worst_layers as f64;
        let flops_pos = 4.0 * mb * h / tp_f;
        let mut kv_pos = 2.0 * mb * h / tp_f * model.precision_bytes as f64;
        if model.mqa {
            kv_pos /= model.n_heads as f64;
        }
        let cores = w.cores.max(1) as f64;
        let compute_rate = ls * flops_pos / (2.0 * self.p.core.mac_num as f64 * cores);
        let kv_rate = if mem.kv_resident {
            ls * kv_pos * 8.0 / (self.p.core.buffer_bw as f64 * cores)
        } else {
            dram.seconds(ls * kv_pos)? * CLOCK_HZ
        };
        let beta = compute_rate.max(kv_rate);
        let m = s.micro_batches(model);
        let dm = DecodeModel { alpha, beta, micro_batches: m, pp: s.pp };

        let s_in = model.seq_len as u64;
        let s_out = model.gen_len() as u64;
        let (si, so) = (s_in as f64, s_out as f64);
        let ctx_sum = so * si + so * (so - 1.0) / 2.0;
        let total = dm.total_cycles(s_in, s_out);
        let mf = m as f64;
        let attention = beta * ctx_sum * mf;
        let kv_bound = kv_rate > compute_rate && !mem.kv_resident;
        let idle = (m.max(s.pp) - m) as f64 * (so * alpha + beta * ctx_sum);
        let breakdown = LatencyBreakdown {
            compute: mf * so * w.compute + if kv_bound { 0.0 } else { attention },
            noc: mf * so * (w.latency - w.compute),
            inter_reticle: mf * so * (tp.cycles + pp.cycles),
            dram: mf * so * t_w + if kv_bound { attention } else { 0.0 },
            pipeline_bubble: idle,
        };
        debug_assert!((breakdown.total() - total).abs() <= 1e-6 * total.max(1.0));

        let mut actions = ActionCounts::default();
        for (_, count, t) in &st.all {
            actions.add(&t.actions.scaled(so * mf * (*count * s.tp * s.dp) as f64));
        }
        let replicas = mf * (s.tp * s.dp) as f64 * model.n_layers as f64;
        actions.mac_op += (ctx_sum * replicas * flops_pos / 2.0) as u64;
        let kv_read = ctx_sum * replicas * kv_pos;
        if mem.kv_resident {
            actions.sram_read_bit += (8.0 * kv_read) as u64;
        } else {
            dram.count(&mut actions, kv_read / s.chunks() as f64, s.chunks());
        }
        actions.inter_reticle_bit += (so * mf * (tp.reticle_bits + pp.reticle_bits)) as u64;
        actions.inter_wafer_bit += (so * mf * (tp.wafer_bits + pp.wafer_bits)) as u64;
        dram.count(&mut actions, w_bytes * so * mf, s.chunks());
        Ok((dm, Priced { iteration: total, breakdown, actions, fidelity: st.fidelity }))
    }

    /// Report for strategy `s` at `fidelity`.
    pub fn evaluate(&self, s: &ParallelStrategy, fidelity: Fidelity) -> Result<EvalReport> {
        check_strategy(self.model, s)?;
        let model = self.model;
        let priced = match model.mode {
            Mode::Train | Mode::Prefill => self.forward_like(s, fidelity)?,
            Mode::Decode => self.generation(s, fidelity)?,
        };
        let runtime_s = priced.iteration / CLOCK_HZ;
        let tokens = match model.mode {
            Mode::Train | Mode::Prefill => model.batch_size as f64 * model.seq_len as f64,
            Mode::Decode => model.batch_size as f64 * model.gen_len() as f64,
        };
        let power = power_of(&self.p, self.db, &priced.actions, runtime_s)?;
        let wafers = self.p.n_wafers as f64;
        Ok(EvalReport {
            benchmark: model.name.clone(),
            tokens_per_s: tokens / runtime_s,
            iteration_latency_cycles: priced.iteration,
            breakdown: priced.breakdown,
            avg_power_w: power.avg_power_w / wafers,
            peak_power_w: power.peak_power_w,
            power: power.breakdown,
            actions: priced.actions,
            fidelity: priced.fidelity,
            strategy: *s,
            seed: self.opts.seed,
        })
    }

    /// Best strategy at the configured fidelity. Every strategy is ranked
    /// analytically; for the other fidelities the `top_k` leaders are
    /// re-evaluated. Ties go to the lexicographically smaller strategy.
    pub fn best(&self) -> Result<EvalReport> {
        let strategies = self.strategies()?;
        let mut ranked = Vec::new();
        let mut first_err = None;
        for s in &strategies {
            match self.evaluate(s, Fidelity::Analytical) {
                Ok(r) => ranked.push(r),
                Err(e) => {
                    log::debug!("strategy {s:?} skipped: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        if ranked.is_empty() {
            return Err(first_err.unwrap_or_else(|| DseError::Unmappable(self.model.name.clone())));
        }
        let fid = self.opts.fidelity;
        if fid == Fidelity::Analytical {
            return Ok(argmax(ranked));
        }
        ranked.sort_by(|a, b| b.tokens_per_s.total_cmp(&a.tokens_per_s).then(a.strategy.cmp(&b.strategy)));
        ranked.truncate(self.opts.top_k.max(1));
        let mut leaders: Vec<ParallelStrategy> = ranked.iter().map(|r| r.strategy).collect();
        leaders.sort();
        let mut out = Vec::with_capacity(leaders.len());
        for s in &leaders {
            out.push(self.evaluate(s, fid)?);
        }
        Ok(argmax(out))
    }
}

fn ring(n: u32) -> f64 {
    2.0 * (n as f64 - 1.0) / n as f64
}

/// Highest throughput; the first of equals in strategy order wins.
fn argmax(mut reports: Vec<EvalReport>) -> EvalReport {
    reports.sort_by(|a, b| a.strategy.cmp(&b.strategy));
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.tokens_per_s > reports[best].tokens_per_s {
            best = i;
        }
    }
    reports.swap_remove(best)
}

struct Traffic {
    cycles: f64,
    reticle_bits: f64,
    wafer_bits: f64,
}

struct Stages {
    /// (layers, stage count, timing)
    all: Vec<(u32, u32, ChunkTiming)>,
    worst: ChunkTiming,
    worst_layers: u32,
    fidelity: Fidelity,
}

struct MemoryPlan {
    weights: f64,
    training_state: f64,
    resident: bool,
    kv_resident: bool,
    activations_fit: bool,
    state_fits: bool,
}

struct Priced {
    iteration: f64,
    breakdown: LatencyBreakdown,
    actions: ActionCounts,
    fidelity: Fidelity,
}

/// Best strategy and its report at `opts.fidelity`.
pub fn best_strategy(model: &LlmSpec, p: &DesignPoint, db: &ComponentDb, opts: &EvalOptions) -> Result<(ParallelStrategy, EvalReport)> {
    let r = Evaluator::new(model, p, db, opts.clone())?.best()?;
    Ok((r.strategy, r))
}

/// Analytical evaluation of a training workload.
pub fn evaluate_training(model: &LlmSpec, p: &DesignPoint, db: &ComponentDb) -> Result<EvalReport> {
    if model.mode != Mode::Train {
        return Err(DseError::InvalidParam(format!("{} is not a training workload", model.name)));
    }
    Ok(best_strategy(model, p, db, &EvalOptions::default())?.1)
}

/// Analytical evaluation of a prefill or generation workload, including the
/// configured prefill/decode split.
pub fn evaluate_inference(model: &LlmSpec, p: &DesignPoint, db: &ComponentDb) -> Result<EvalReport> {
    if model.mode == Mode::Train {
        return Err(DseError::InvalidParam(format!("{} is a training workload", model.name)));
    }
    Ok(best_strategy(model, p, db, &EvalOptions::default())?.1)
}

/// Cycle-level evaluation: analytical ranking, simulated leaders.
pub fn high_fidelity_eval(model: &LlmSpec, p: &DesignPoint, db: &ComponentDb, seed: u64) -> Result<EvalReport> {
    let opts = EvalOptions { fidelity: Fidelity::CycleSim, seed, ..EvalOptions::default() };
    Ok(best_strategy(model, p, db, &opts)?.1)
}

/// Per-link bytes of one micro-batch of inter-chunk traffic, as CSV.
pub fn link_load_csv(model: &LlmSpec, p: &DesignPoint, s: &ParallelStrategy) -> Result<String> {
    let l = Layout::new(p, s.chunks())?;
    let mut loads = Loads::new(&l);
    let q = if model.mode == Mode::Decode { 1 } else { model.seq_len as u64 };
    for e in inter_chunk_edges(model, s, q) {
        loads.transfer(&l, e.src.index(s), e.dst.index(s), e.bytes as f64);
    }
    let mut out = String::from("wafer,x,y,dir,bytes\n");
    let per = l.links_per_wafer();
    for (i, b) in loads.reticle.iter().enumerate() {
        if *b > 0.0 {
            let c = l.grid.coord((i % per) / 4);
            let d = Dir::ALL[i % 4];
            out.push_str(&format!("{},{},{},{:?},{}\n", i / per, c.x, c.y, d, b));
        }
    }
    Ok(out)
}
