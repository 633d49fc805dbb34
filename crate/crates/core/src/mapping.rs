//! Tiling, placement and routing of one chunk on its physical core region.
//!
//! A chunk owns an `a x b` block of reticles. Its mesh is the physical core
//! array of that block, spare columns included (spare and defective routers
//! still forward traffic). Logic cores are placed row-major over the working
//! positions; a defective core shifts the rest of its reticle row right into
//! the spare columns.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cost_model::{inter_reticle_side_gbps, ActionCounts};
use crate::design_space::DesignPoint;
use crate::error::{DseError, Result};
use crate::mesh::{Coord, Dir, MeshSpec};
use crate::noc::{SimTrace, TraceFlow, TraceNode};
use crate::tile::{tile_eval, TileCost, TileShape};
use crate::workload::{Assignment, OperatorGraph};

/// Extra cycles on every link that crosses a reticle boundary.
pub const INTER_RETICLE_EXTRA_CYCLES: u32 = 10;

/// Reticle block shape for a chunk of `k` reticles on a grid with
/// `reticle_rows` rows: `gcd(k, rows)` rows by the rest.
pub fn region_shape(k: u32, reticle_rows: u32) -> (u32, u32) {
    fn gcd(a: u32, b: u32) -> u32 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let a = gcd(k, reticle_rows).max(1);
    (a, k / a)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChunkRegion {
    pub reticle_rows: u32,
    pub reticle_cols: u32,
    /// Defective physical cores, region coordinates.
    pub defects: BTreeSet<Coord>,
}

impl ChunkRegion {
    pub fn new(reticle_rows: u32, reticle_cols: u32) -> Self {
        ChunkRegion { reticle_rows, reticle_cols, defects: BTreeSet::new() }
    }

    pub fn physical_dims(&self, p: &DesignPoint) -> (u32, u32) {
        let cols = p.reticle.core_cols + p.reticle.spare_cols();
        (self.reticle_rows * p.reticle.core_rows, self.reticle_cols * cols)
    }

    pub fn working_cores(&self, p: &DesignPoint) -> u32 {
        self.reticle_rows * self.reticle_cols * p.working_cores_per_reticle()
    }

    /// Region mesh with narrower, slower links across reticle boundaries.
    pub fn mesh(&self, p: &DesignPoint) -> MeshSpec {
        let (rows, cols) = self.physical_dims(p);
        let phys_cols = p.reticle.core_cols + p.reticle.spare_cols();
        let side = inter_reticle_side_gbps(p);
        let ew_bits = ((side / p.reticle.core_rows as f64).floor() as u32).max(1);
        let ns_bits = ((side / phys_cols as f64).floor() as u32).max(1);
        let mut m = MeshSpec::uniform(rows, cols, p.core.noc_bw);
        for y in 0..rows {
            for x in 0..cols {
                let c = Coord::new(x, y);
                for d in Dir::ALL {
                    let Some(n) = m.neighbor(c, d) else { continue };
                    let (crosses, bits) = match d {
                        Dir::East | Dir::West => (x / phys_cols != n.x / phys_cols, ew_bits),
                        Dir::North | Dir::South => (y / p.reticle.core_rows != n.y / p.reticle.core_rows, ns_bits),
                    };
                    if crosses {
                        let l = m.link(c, d);
                        m.link_bits[l] = bits;
                        m.link_extra[l] = INTER_RETICLE_EXTRA_CYCLES;
                    }
                }
            }
        }
        m
    }

    /// Physical position of every working logic core, row-major.
    pub fn place(&self, p: &DesignPoint) -> Result<Vec<Coord>> {
        let (rows, _) = self.physical_dims(p);
        let phys_cols = p.reticle.core_cols + p.reticle.spare_cols();
        let mut out = Vec::with_capacity(self.working_cores(p) as usize);
        for y in 0..rows {
            for rc in 0..self.reticle_cols {
                let x0 = rc * phys_cols;
                let good: Vec<u32> = (x0..x0 + phys_cols).filter(|&x| !self.defects.contains(&Coord::new(x, y))).collect();
                if good.len() < p.reticle.core_cols as usize {
                    return Err(DseError::RegionTooSmall(format!(
                        "row {y} of reticle column {rc} has {} working cores, needs {}",
                        good.len(),
                        p.reticle.core_cols
                    )));
                }
                out.extend(good[..p.reticle.core_cols as usize].iter().map(|&x| Coord::new(x, y)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicNode {
    pub id: u32,
    /// Logic core index.
    pub core: u32,
    pub op: usize,
    pub tile: TileShape,
    pub cost: TileCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicEdge {
    pub src: u32,
    pub dst: u32,
    pub bytes: u64,
    pub packet_bytes: u32,
    /// Producer output cadence, cycles per packet.
    pub interval: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VirtualKind {
    ChunkInput,
    ChunkOutput,
    Dram,
}

/// Traffic between a logic node and an endpoint outside the chunk mesh;
/// priced at chunk level, never routed on the NoC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualEdge {
    pub kind: VirtualKind,
    pub node: u32,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogicCoreGraph {
    pub n_cores: u32,
    pub nodes: Vec<LogicNode>,
    pub edges: Vec<LogicEdge>,
    /// Same-core ordering constraints between tiles of merged operators.
    pub preds: Vec<Vec<u32>>,
    pub virtual_edges: Vec<VirtualEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mapping {
    pub mesh: MeshSpec,
    /// Physical position of each logic core.
    pub core_pos: Vec<Coord>,
    /// Mesh links of each logic edge, X then Y.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledChunk {
    pub graph: LogicCoreGraph,
    pub mapping: Mapping,
}

/// Flits needed for `bytes` split into packets of `packet_bytes`.
pub fn flow_flits(bytes: u64, packet_bytes: u32, flit_bytes: u32) -> u64 {
    if bytes == 0 {
        return 0;
    }
    let pb = packet_bytes.max(1) as u64;
    let fb = flit_bytes as u64;
    (bytes / pb) * pb.div_ceil(fb) + (bytes % pb).div_ceil(fb)
}

/// Even split of `len` into `parts` ranges.
fn split(len: u64, parts: u64, i: u64) -> (u64, u64) {
    (len * i / parts, len * (i + 1) / parts)
}

struct OpTiles {
    /// (node id, byte range of the producer output in edge space)
    out: Vec<(u32, u64, u64)>,
    /// (node id, first row, end row)
    rows: Vec<(u32, u64, u64)>,
}

pub fn schedule_and_map(
    g: &OperatorGraph,
    assignments: &[Assignment],
    p: &DesignPoint,
    region: &ChunkRegion,
) -> Result<CompiledChunk> {
    g.check()?;
    let n_cores: u32 = assignments.iter().map(|a| a.cores).sum();
    let working = region.working_cores(p);
    if n_cores > working {
        return Err(DseError::RegionTooSmall(format!("{n_cores} logic cores, {working} working cores")));
    }
    let positions = region.place(p)?;
    let mesh = region.mesh(p);
    let prec = g.precision_bytes as u64;

    let mut nodes: Vec<LogicNode> = Vec::new();
    let mut tiles: Vec<Option<OpTiles>> = (0..g.ops.len()).map(|_| None).collect();
    let mut preds: Vec<Vec<u32>> = Vec::new();
    let mut virtual_edges = Vec::new();
    let mut first_core = 0u32;
    for a in assignments {
        let mut last_on_core: Vec<Option<u32>> = vec![None; a.cores as usize];
        for &oi in &a.ops {
            let op = &g.ops[oi];
            let gr = (a.cores as u64).min(op.m).max(1);
            let gc = (a.cores as u64 / gr).min(op.n).max(1);
            let mut ot = OpTiles { out: Vec::new(), rows: Vec::new() };
            let mut offset = 0u64;
            for t in 0..gr * gc {
                let (r0, r1) = split(op.m, gr, t / gc);
                let (c0, c1) = split(op.n, gc, t % gc);
                let shape = TileShape { m: r1 - r0, n: c1 - c0, k: op.k, ew_passes: op.ew_passes };
                let cost = tile_eval(&shape, &p.core, g.precision_bytes)?;
                let id = nodes.len() as u32;
                let slot = t as usize;
                nodes.push(LogicNode { id, core: first_core + t as u32, op: oi, tile: shape, cost });
                preds.push(last_on_core[slot].into_iter().collect());
                last_on_core[slot] = Some(id);
                let size = shape.m * shape.n * prec;
                ot.out.push((id, offset, offset + size));
                offset += size;
                ot.rows.push((id, r0, r1));
                if op.weight_bytes > 0 {
                    virtual_edges.push(VirtualEdge { kind: VirtualKind::Dram, node: id, bytes: shape.n * shape.k * prec });
                }
                if oi == 0 {
                    virtual_edges.push(VirtualEdge {
                        kind: VirtualKind::ChunkInput,
                        node: id,
                        bytes: op.in_bytes * (r1 - r0) / op.m.max(1),
                    });
                }
                if oi + 1 == g.ops.len() {
                    virtual_edges.push(VirtualEdge { kind: VirtualKind::ChunkOutput, node: id, bytes: size });
                }
            }
            tiles[oi] = Some(ot);
        }
        first_core += a.cores;
    }

    let mut edges = Vec::new();
    for e in &g.edges {
        let prod = tiles[e.src].as_ref().expect("every op is tiled");
        let cons = tiles[e.dst].as_ref().expect("every op is tiled");
        let out_total = g.ops[e.src].out_bytes.max(1);
        let m_dst = g.ops[e.dst].m.max(1);
        for &(pn, a0, a1) in &prod.out {
            let a0 = a0 * e.bytes / out_total;
            let a1 = a1 * e.bytes / out_total;
            let pnode = &nodes[pn as usize];
            let packet = (pnode.tile.n * prec).clamp(1, u32::MAX as u64) as u32;
            for &(cn, r0, r1) in &cons.rows {
                let b0 = e.bytes * r0 / m_dst;
                let b1 = e.bytes * r1 / m_dst;
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if hi > lo {
                    edges.push(LogicEdge {
                        src: pn,
                        dst: cn,
                        bytes: hi - lo,
                        packet_bytes: packet,
                        interval: pnode.cost.output_interval_cycles,
                    });
                }
            }
        }
    }

    let core_pos: Vec<Coord> = positions[..n_cores as usize].to_vec();
    let paths = edges
        .iter()
        .map(|e| {
            let s = core_pos[nodes[e.src as usize].core as usize];
            let d = core_pos[nodes[e.dst as usize].core as usize];
            mesh.route(s, d)
        })
        .collect();
    Ok(CompiledChunk {
        graph: LogicCoreGraph { n_cores, nodes, edges, preds, virtual_edges },
        mapping: Mapping { mesh, core_pos, paths },
    })
}

impl CompiledChunk {
    pub fn node_pos(&self, node: u32) -> Coord {
        self.mapping.core_pos[self.graph.nodes[node as usize].core as usize]
    }

    /// Graph-mode simulator trace of one chunk execution.
    pub fn trace(&self) -> SimTrace {
        let nodes = self
            .graph
            .nodes
            .iter()
            .map(|n| TraceNode {
                id: n.id,
                core: self.mapping.core_pos[n.core as usize],
                compute_cycles: n.cost.compute_cycles,
                preds: self.graph.preds[n.id as usize].clone(),
            })
            .collect();
        let flows = self
            .graph
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| TraceFlow {
                id: i as u32,
                src: self.node_pos(e.src),
                dst: self.node_pos(e.dst),
                bytes: e.bytes,
                packet_bytes: e.packet_bytes,
                start: 0,
                interval: e.interval.min(u32::MAX as u64) as u32,
                src_node: Some(e.src),
                dst_node: Some(e.dst),
            })
            .collect();
        SimTrace { mesh: self.mapping.mesh.clone(), nodes, flows }
    }

    /// Flit-hops over mesh links for one execution.
    pub fn flit_hops(&self) -> u64 {
        let fb = self.mapping.mesh.flit_bytes;
        self.graph
            .edges
            .iter()
            .zip(&self.mapping.paths)
            .map(|(e, path)| flow_flits(e.bytes, e.packet_bytes, fb) * path.len() as u64)
            .sum()
    }

    /// Core-side actions of one execution.
    pub fn actions(&self) -> ActionCounts {
        let mut a = ActionCounts::default();
        for n in &self.graph.nodes {
            a.mac_op += n.cost.mac_ops;
            a.sram_read_bit += n.cost.sram_read_bits;
            a.sram_write_bit += n.cost.sram_write_bits;
        }
        a.noc_hop_flit = self.flit_hops();
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design_space::Dataflow;
    use crate::workload::{Op, OpEdge, OpKind};

    fn point(rows: u32, cols: u32) -> DesignPoint {
        let mut p = DesignPoint::reference();
        p.core.dataflow = Dataflow::WS;
        p.reticle.core_rows = rows;
        p.reticle.core_cols = cols;
        p.reticle.redundancy_cols = Some(1);
        p
    }

    fn gemm(name: &str, m: u64, n: u64, k: u64) -> Op {
        Op {
            name: name.into(),
            layer: 0,
            kind: OpKind::Gemm,
            m,
            n,
            k,
            ew_passes: 0,
            weight_bytes: n * k * 2,
            in_bytes: m * k * 2,
            out_bytes: m * n * 2,
        }
    }

    #[test]
    fn gemm_rows_split_evenly() {
        let g = OperatorGraph { ops: vec![gemm("a", 256, 256, 256)], edges: vec![], precision_bytes: 2 };
        let p = point(2, 2);
        let a = vec![Assignment { ops: vec![0], cores: 4, flops: 0 }];
        let c = schedule_and_map(&g, &a, &p, &ChunkRegion::new(1, 1)).unwrap();
        assert_eq!(c.graph.nodes.len(), 4);
        for n in &c.graph.nodes {
            assert_eq!((n.tile.m, n.tile.n, n.tile.k), (64, 256, 256));
        }
    }

    #[test]
    fn defect_shifts_core_right() {
        let p = point(2, 3);
        let mut r = ChunkRegion::new(1, 1);
        let clean = r.place(&p).unwrap();
        assert_eq!(clean[1], Coord::new(1, 0));
        r.defects.insert(Coord::new(1, 0));
        let shifted = r.place(&p).unwrap();
        assert_eq!(shifted[0], Coord::new(0, 0));
        assert_eq!(shifted[1], Coord::new(2, 0));
        assert_eq!(shifted[2], Coord::new(3, 0));
        r.defects.insert(Coord::new(0, 0));
        assert!(matches!(r.place(&p), Err(DseError::RegionTooSmall(_))));
    }

    #[test]
    fn producer_consumer_route() {
        let g = OperatorGraph {
            ops: vec![gemm("a", 4, 8, 8), gemm("b", 4, 8, 8)],
            edges: vec![OpEdge { src: 0, dst: 1, bytes: 64 }],
            precision_bytes: 2,
        };
        let mut p = point(2, 3);
        p.reticle.redundancy_cols = Some(0);
        // logic core 0 at (0,0) produces, logic core 5 at (2,1) consumes
        let a = vec![
            Assignment { ops: vec![0], cores: 1, flops: 0 },
            Assignment { ops: vec![], cores: 4, flops: 0 },
            Assignment { ops: vec![1], cores: 1, flops: 0 },
        ];
        let c = schedule_and_map(&g, &a, &p, &ChunkRegion::new(1, 1)).unwrap();
        assert_eq!(c.graph.edges.len(), 1);
        let m = &c.mapping.mesh;
        let o = Coord::new(0, 0);
        assert_eq!(c.mapping.paths[0], vec![m.link(o, Dir::East), m.link(Coord::new(1, 0), Dir::East), m.link(Coord::new(2, 0), Dir::North)]);
    }

    #[test]
    fn region_shapes_tile_the_grid() {
        assert_eq!(region_shape(4, 2), (2, 2));
        assert_eq!(region_shape(3, 2), (1, 3));
        assert_eq!(region_shape(6, 4), (2, 3));
    }

    #[test]
    fn reticle_boundary_links_are_marked() {
        let p = point(2, 2);
        let r = ChunkRegion::new(1, 2);
        let m = r.mesh(&p);
        // physical columns per reticle: 2 working + 1 spare
        let cross = m.link(Coord::new(2, 0), Dir::East);
        let inner = m.link(Coord::new(1, 0), Dir::East);
        assert_eq!(m.link_extra[cross], INTER_RETICLE_EXTRA_CYCLES);
        assert_eq!(m.link_extra[inner], 0);
        assert_eq!(m.link_bits[inner], p.core.noc_bw);
    }

    #[test]
    fn flit_count_per_packet() {
        assert_eq!(flow_flits(100, 40, 32), 2 + 2 + 1);
        assert_eq!(flow_flits(64, 64, 32), 2);
        assert_eq!(flow_flits(0, 64, 32), 0);
    }
}
