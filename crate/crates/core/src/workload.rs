//! LLM workloads: benchmark specs, parallel strategies, memory footprints,
//! per-chunk operator graphs and core allocation.
//!
//! A chunk is one (data-parallel replica, pipeline stage, tensor shard) cell.
//! Chunks are numbered `(dp * pp + stage) * tp + shard`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost_model::CostParams;
use crate::design_space::{CoreConfig, DesignPoint, MemoryStyle};
use crate::error::{DseError, Result};
use crate::tile::min_tile_bytes;

/// Activation bytes per token per hidden unit kept for one layer's backward
/// pass, fp16.
pub const ACT_BYTES_PER_TOKEN_HIDDEN: f64 = 34.0;
/// Layers between activation checkpoints.
pub const CHECKPOINT_EVERY: u32 = 2;
/// Training bytes per parameter: fp16 weights and gradients plus fp32 Adam
/// state and master weights.
pub const TRAIN_BYTES_PER_PARAM: f64 = 16.0;
/// Die area of the GPU used for the equal-area wafer count, mm².
pub const GPU_DIE_MM2: f64 = 814.0;
pub const WAFER_USABLE_MM2: f64 = 215.0 * 215.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Train,
    /// Prompt processing only.
    Prefill,
    /// End-to-end generation: prefill the prompt, then decode `gen_len`
    /// tokens per sequence.
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSpec {
    pub name: String,
    pub n_layers: u32,
    pub hidden_size: u32,
    pub n_heads: u32,
    /// Listed parameter count in billions; the cost model uses the layer
    /// shapes instead.
    #[serde(default)]
    pub n_params_b: f64,
    pub batch_size: u32,
    pub seq_len: u32,
    pub mode: Mode,
    #[serde(default = "default_precision")]
    pub precision_bytes: u32,
    #[serde(default)]
    pub mqa: bool,
    /// Generated tokens per sequence; defaults to `seq_len`.
    #[serde(default)]
    pub gen_len: Option<u32>,
    /// GPU count of the reference system, used for the equal-area wafer count.
    #[serde(default)]
    pub gpus: Option<u32>,
}

fn default_precision() -> u32 {
    2
}

impl LlmSpec {
    pub fn check(&self) -> Result<()> {
        let pos = [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("n_heads", self.n_heads),
            ("batch_size", self.batch_size),
            ("seq_len", self.seq_len),
            ("precision_bytes", self.precision_bytes),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(DseError::InvalidParam(format!("{}: {name} must be positive", self.name)));
            }
        }
        if self.hidden_size % self.n_heads != 0 {
            return Err(DseError::InvalidParam(format!(
                "{}: hidden_size {} not divisible by n_heads {}",
                self.name, self.hidden_size, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        (self.hidden_size / self.n_heads) as u64
    }

    pub fn gen_len(&self) -> u32 {
        self.gen_len.unwrap_or(self.seq_len)
    }

    /// Longest context the KV cache must hold.
    pub fn kv_context(&self) -> u32 {
        match self.mode {
            Mode::Train | Mode::Prefill => self.seq_len,
            Mode::Decode => self.seq_len + self.gen_len(),
        }
    }

    pub fn params_per_layer(&self) -> u64 {
        12 * (self.hidden_size as u64).pow(2)
    }

    /// Wafers whose usable area matches the reference GPU count.
    pub fn wafers_equal_area(&self) -> u32 {
        match self.gpus {
            Some(g) => ((g as f64 * GPU_DIE_MM2 / WAFER_USABLE_MM2).ceil() as u32).max(1),
            None => 1,
        }
    }

    /// Forward FLOPs of the whole model for `mb` sequences of `q` new tokens
    /// attending over `kv` positions.
    pub fn forward_flops(&self, mb: u64, q: u64, kv: u64) -> u64 {
        let h = self.hidden_size as u64;
        let t = mb * q;
        let dense = 2 * t * self.params_per_layer();
        let attn = 4 * mb * q * kv * h;
        self.n_layers as u64 * (dense + attn)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchmarkFile {
    benchmark: Vec<LlmSpec>,
}

/// Reads a TOML file holding `[[benchmark]]` tables.
pub fn load_benchmarks(path: &Path) -> Result<Vec<LlmSpec>> {
    let text = std::fs::read_to_string(path)?;
    let f: BenchmarkFile = toml::from_str(&text)?;
    for b in &f.benchmark {
        b.check()?;
    }
    Ok(f.benchmark)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParallelStrategy {
    pub tp: u32,
    pub pp: u32,
    pub dp: u32,
    pub micro_batch: u32,
}

impl ParallelStrategy {
    pub fn chunks(&self) -> u32 {
        self.tp * self.pp * self.dp
    }

    pub fn micro_batches(&self, model: &LlmSpec) -> u32 {
        model.batch_size / self.dp / self.micro_batch
    }
}

/// Layers held by each pipeline stage; remainder layers go to later stages.
pub fn stage_layers(n_layers: u32, pp: u32) -> Vec<u32> {
    let base = n_layers / pp;
    let extra = n_layers % pp;
    (0..pp).map(|s| base + u32::from(s >= pp - extra)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub weights: f64,
    /// Gradients and optimizer state.
    pub training_state: f64,
    pub activations: f64,
    pub kv_cache: f64,
}

impl Footprint {
    pub fn total(&self) -> f64 {
        self.weights + self.training_state + self.activations + self.kv_cache
    }
}

/// Memory needed by the largest chunk of `s`, bytes.
pub fn chunk_footprint(model: &LlmSpec, s: &ParallelStrategy) -> Footprint {
    let layers = stage_layers(model.n_layers, s.pp).into_iter().max().unwrap_or(0) as f64;
    let tp = s.tp as f64;
    let h = model.hidden_size as f64;
    let prec = model.precision_bytes as f64;
    let params = model.params_per_layer() as f64 * layers / tp;
    let tokens = s.micro_batch as f64 * model.seq_len as f64;
    let layer_act = ACT_BYTES_PER_TOKEN_HIDDEN * tokens * h * (prec / 2.0) / tp;
    match model.mode {
        Mode::Train => {
            let m = s.micro_batches(model) as f64;
            let in_flight = m.min(s.pp as f64);
            let checkpoints = (layers / CHECKPOINT_EVERY as f64).ceil() * tokens * h * prec;
            Footprint {
                weights: 2.0 * params,
                training_state: (TRAIN_BYTES_PER_PARAM - 2.0) * params,
                activations: in_flight * checkpoints + CHECKPOINT_EVERY as f64 * layer_act,
                kv_cache: 0.0,
            }
        }
        Mode::Prefill | Mode::Decode => {
            let seqs = (model.batch_size / s.dp) as f64;
            let mut kv = 2.0 * model.kv_context() as f64 * seqs * h * prec * layers / tp;
            if model.mqa {
                kv /= model.n_heads as f64;
            }
            Footprint { weights: prec * params, training_state: 0.0, activations: layer_act, kv_cache: kv }
        }
    }
}

/// SRAM plus DRAM share available to each of `c` chunks, bytes.
pub fn chunk_capacity(p: &DesignPoint, params: &CostParams, c: u32) -> f64 {
    let reticles = (p.n_reticles() * p.n_wafers) as f64 / c as f64;
    let sram = reticles * p.working_cores_per_reticle() as f64 * p.core.buffer_size_kb as f64 * 1024.0;
    let dram_gb = match p.wafer.memory_style {
        MemoryStyle::StackingDram => params.stack_capacity_gb(p.reticle.stacking_dram_bw_density),
        MemoryStyle::OffChipDram => p.wafer.n_mem_controllers as f64 * params.offchip_gb_per_controller,
    };
    sram + dram_gb * 1e9 * p.n_wafers as f64 / c as f64
}

fn divisors(n: u32) -> Vec<u32> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// All strategies whose chunk count tiles the system and whose largest chunk
/// fits its memory share, in lexicographic order.
pub fn enumerate_strategies(model: &LlmSpec, p: &DesignPoint, params: &CostParams) -> Result<Vec<ParallelStrategy>> {
    model.check()?;
    let total = p.n_reticles() * p.n_wafers;
    let mut out = Vec::new();
    for tp in divisors(total) {
        if model.n_heads % tp != 0 {
            continue;
        }
        for pp in divisors(total / tp) {
            if pp > model.n_layers {
                continue;
            }
            for dp in divisors(total / tp / pp) {
                let c = tp * pp * dp;
                if c % p.n_wafers != 0 || model.batch_size % dp != 0 {
                    continue;
                }
                let cap = chunk_capacity(p, params, c);
                for micro_batch in divisors(model.batch_size / dp) {
                    let s = ParallelStrategy { tp, pp, dp, micro_batch };
                    if chunk_footprint(model, &s).total() <= cap {
                        out.push(s);
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(DseError::Unmappable(format!(
            "{} does not fit {} reticles with the configured memory",
            model.name, total
        )));
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    Gemm,
    /// Scores and weighted sum of one attention block, priced as a GEMM of
    /// `rows x head_dim` over a reduction of twice the context.
    Attention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Op {
    pub name: String,
    pub layer: u32,
    pub kind: OpKind,
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub ew_passes: u32,
    pub weight_bytes: u64,
    pub in_bytes: u64,
    pub out_bytes: u64,
}

impl Op {
    pub fn flops(&self) -> u64 {
        2 * self.m * self.n * self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpEdge {
    pub src: usize,
    pub dst: usize,
    pub bytes: u64,
}

/// Operators of one chunk in topological order; every edge points forward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorGraph {
    pub ops: Vec<Op>,
    pub edges: Vec<OpEdge>,
    pub precision_bytes: u32,
}

impl OperatorGraph {
    pub fn flops(&self) -> u64 {
        self.ops.iter().map(Op::flops).sum()
    }

    pub fn weight_bytes(&self) -> u64 {
        self.ops.iter().map(|o| o.weight_bytes).sum()
    }

    pub fn check(&self) -> Result<()> {
        for e in &self.edges {
            if e.src >= e.dst || e.dst >= self.ops.len() {
                return Err(DseError::CycleDetected);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Full-sequence forward pass (training and prefill).
    Forward,
    /// One generated token per sequence attending over `ctx` positions.
    Decode { ctx: u32 },
    /// Decode step without the attention block, which the evaluator prices
    /// per context position.
    DecodeDense,
}

/// Operator graph of `layers` consecutive layers for one tensor shard.
pub fn stage_graph(model: &LlmSpec, tp: u32, mb: u32, first_layer: u32, layers: u32, phase: Phase) -> OperatorGraph {
    let p = model.precision_bytes as u64;
    let h = model.hidden_size as u64;
    let tp = tp as u64;
    let hp = h / tp;
    let heads = (model.n_heads as u64) / tp;
    let dh = model.head_dim();
    let mb = mb as u64;
    let (q, kv, attention) = match phase {
        Phase::Forward => (model.seq_len as u64, model.seq_len as u64, true),
        Phase::Decode { ctx } => (1, ctx as u64, true),
        Phase::DecodeDense => (1, 0, false),
    };
    let t = mb * q;
    let mut ops = Vec::new();
    let mut edges = Vec::new();
    let gemm = |name: &str, layer: u32, m: u64, n: u64, k: u64, ew: u32, weights: bool| Op {
        name: format!("l{layer}.{name}"),
        layer,
        kind: OpKind::Gemm,
        m,
        n,
        k,
        ew_passes: ew,
        weight_bytes: if weights { n * k * p } else { 0 },
        in_bytes: m * k * p,
        out_bytes: m * n * p,
    };
    for l in first_layer..first_layer + layers {
        let base = ops.len();
        if base > 0 {
            edges.push(OpEdge { src: base - 1, dst: base, bytes: t * h * p });
        }
        ops.push(gemm("qkv", l, t, 3 * hp, h, 1, true));
        if attention {
            let rows = mb * heads * q;
            ops.push(Op {
                name: format!("l{l}.attn"),
                layer: l,
                kind: OpKind::Attention,
                m: rows,
                n: dh,
                k: 2 * kv,
                ew_passes: 1,
                weight_bytes: 0,
                in_bytes: t * 3 * hp * p,
                out_bytes: rows * dh * p,
            });
            edges.push(OpEdge { src: base, dst: base + 1, bytes: t * 3 * hp * p });
        }
        let out = ops.len();
        let feed = if attention { t * hp * p } else { t * 3 * hp * p };
        edges.push(OpEdge { src: out - 1, dst: out, bytes: feed });
        ops.push(gemm("out", l, t, h, hp, 1, true));
        edges.push(OpEdge { src: out, dst: out + 1, bytes: t * h * p });
        ops.push(gemm("up", l, t, 4 * hp, h, 2, true));
        edges.push(OpEdge { src: out + 1, dst: out + 2, bytes: t * 4 * hp * p });
        ops.push(gemm("down", l, t, h, 4 * hp, 1, true));
    }
    OperatorGraph { ops, edges, precision_bytes: model.precision_bytes }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChunkId {
    pub dp: u32,
    pub stage: u32,
    pub tp: u32,
}

impl ChunkId {
    pub fn index(&self, s: &ParallelStrategy) -> u32 {
        (self.dp * s.pp + self.stage) * s.tp + self.tp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterChunkKind {
    TpCollective,
    PpActivation,
    DpGradient,
    KvTransfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cadence {
    PerMicroBatch,
    PerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterChunkEdge {
    pub kind: InterChunkKind,
    pub src: ChunkId,
    pub dst: ChunkId,
    /// Forward-pass payload; the evaluator applies backward and ring factors.
    pub bytes: u64,
    pub cadence: Cadence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: ChunkId,
    pub first_layer: u32,
    pub layers: u32,
    pub graph: OperatorGraph,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub strategy: ParallelStrategy,
    pub chunks: Vec<Chunk>,
    pub edges: Vec<InterChunkEdge>,
}

pub fn check_strategy(model: &LlmSpec, s: &ParallelStrategy) -> Result<()> {
    if s.tp == 0 || s.pp == 0 || s.dp == 0 || s.micro_batch == 0 {
        return Err(DseError::InvalidParam("strategy degrees must be positive".into()));
    }
    if s.tp > model.n_heads || model.n_heads % s.tp != 0 {
        return Err(DseError::InvalidParam(format!("tp {} does not split {} heads", s.tp, model.n_heads)));
    }
    if s.pp > model.n_layers {
        return Err(DseError::InvalidParam(format!("pp {} exceeds {} layers", s.pp, model.n_layers)));
    }
    if model.batch_size % s.dp != 0 || (model.batch_size / s.dp) % s.micro_batch != 0 {
        return Err(DseError::InvalidParam(format!("micro-batch {} does not divide the batch share", s.micro_batch)));
    }
    Ok(())
}

fn phase_of(model: &LlmSpec) -> Phase {
    match model.mode {
        Mode::Train | Mode::Prefill => Phase::Forward,
        Mode::Decode => Phase::Decode { ctx: model.seq_len },
    }
}

/// Traffic between chunks for one micro-batch of `q` new tokens per
/// sequence, plus the per-iteration gradient exchange in training.
pub fn inter_chunk_edges(model: &LlmSpec, s: &ParallelStrategy, q: u64) -> Vec<InterChunkEdge> {
    let p = model.precision_bytes as u64;
    let h = model.hidden_size as u64;
    let t = s.micro_batch as u64 * q;
    let layers = stage_layers(model.n_layers, s.pp);
    let mut edges = Vec::new();
    for dp in 0..s.dp {
        for stage in 0..s.pp {
            let ls = layers[stage as usize] as u64;
            for tp in 0..s.tp {
                let id = ChunkId { dp, stage, tp };
                if s.tp > 1 {
                    edges.push(InterChunkEdge {
                        kind: InterChunkKind::TpCollective,
                        src: id,
                        dst: ChunkId { tp: (tp + 1) % s.tp, ..id },
                        bytes: 2 * ls * t * h * p,
                        cadence: Cadence::PerMicroBatch,
                    });
                }
                if stage + 1 < s.pp {
                    edges.push(InterChunkEdge {
                        kind: InterChunkKind::PpActivation,
                        src: id,
                        dst: ChunkId { stage: stage + 1, ..id },
                        bytes: t * h * p,
                        cadence: Cadence::PerMicroBatch,
                    });
                }
                if s.dp > 1 && model.mode == Mode::Train {
                    // fp16 gradients of the shard
                    edges.push(InterChunkEdge {
                        kind: InterChunkKind::DpGradient,
                        src: id,
                        dst: ChunkId { dp: (dp + 1) % s.dp, ..id },
                        bytes: 2 * ls * model.params_per_layer() / s.tp as u64,
                        cadence: Cadence::PerIteration,
                    });
                }
            }
        }
    }
    edges
}

/// Splits the model into `pp * dp * tp` chunk graphs for one micro-batch
/// and lists the traffic between chunks.
pub fn build_chunk_graphs(model: &LlmSpec, s: &ParallelStrategy) -> Result<ChunkPlan> {
    model.check()?;
    check_strategy(model, s)?;
    let phase = phase_of(model);
    let q = match phase {
        Phase::Forward => model.seq_len as u64,
        _ => 1,
    };
    let layers = stage_layers(model.n_layers, s.pp);
    let mut firsts = Vec::with_capacity(layers.len());
    let mut acc = 0;
    for &l in &layers {
        firsts.push(acc);
        acc += l;
    }
    let mut chunks = Vec::new();
    for dp in 0..s.dp {
        for stage in 0..s.pp {
            let graph = stage_graph(model, s.tp, s.micro_batch, firsts[stage as usize], layers[stage as usize], phase);
            for tp in 0..s.tp {
                chunks.push(Chunk {
                    id: ChunkId { dp, stage, tp },
                    first_layer: firsts[stage as usize],
                    layers: layers[stage as usize],
                    graph: graph.clone(),
                });
            }
        }
    }
    Ok(ChunkPlan { strategy: *s, chunks, edges: inter_chunk_edges(model, s, q) })
}

/// Core counts proportional to `weights` by the largest-remainder rule, ties
/// to the lower index, then topped up so every entry gets at least one core.
pub fn largest_remainder(weights: &[f64], total: u32) -> Vec<u32> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = weights.iter().sum();
    let quota: Vec<f64> = if sum > 0.0 {
        weights.iter().map(|w| w / sum * total as f64).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let mut out: Vec<u32> = quota.iter().map(|q| q.floor() as u32).collect();
    let mut left = total - out.iter().sum::<u32>().min(total);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = quota[a] - quota[a].floor();
        let fb = quota[b] - quota[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    while let Some(z) = out.iter().position(|&c| c == 0) {
        let donor = (0..n)
            .filter(|&j| out[j] >= 2)
            .max_by(|&a, &b| (out[a] as f64 - quota[a]).total_cmp(&(out[b] as f64 - quota[b])).then(b.cmp(&a)));
        match donor {
            Some(d) => {
                out[d] -= 1;
                out[z] += 1;
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    /// Contiguous operator indices.
    pub ops: Vec<usize>,
    pub cores: u32,
    pub flops: u64,
}

/// Splits `g` into contiguous operator groups, at most one per core, and
/// gives each group a FLOP-proportional share of `cores`.
pub fn partition_and_allocate(g: &OperatorGraph, cores: u32, core: &CoreConfig) -> Result<Vec<Assignment>> {
    if cores == 0 {
        return Err(DseError::RegionTooSmall("no cores for the chunk".into()));
    }
    let buffer = core.buffer_size_kb as u64 * 1024;
    for op in &g.ops {
        let need = min_tile_bytes(op.k, g.precision_bytes);
        if need > buffer {
            return Err(DseError::TileTooLarge(format!("{} needs {need} B per tile, buffer holds {buffer} B", op.name)));
        }
    }
    let mut groups: Vec<(Vec<usize>, u64)> = g.ops.iter().enumerate().map(|(i, o)| (vec![i], o.flops())).collect();
    while groups.len() > cores as usize {
        let best = (0..groups.len() - 1).min_by_key(|&i| (groups[i].1 + groups[i + 1].1, i)).expect("two groups");
        let (ops, f) = groups.remove(best + 1);
        groups[best].0.extend(ops);
        groups[best].1 += f;
    }
    let weights: Vec<f64> = groups.iter().map(|(_, f)| *f as f64).collect();
    let alloc = largest_remainder(&weights, cores);
    Ok(groups.into_iter().zip(alloc).map(|((ops, flops), cores)| Assignment { ops, cores, flops }).collect())
}
