//! Interchange with the learned congestion model.
//!
//! A compiled chunk becomes a [`TopologyGraph`]: routers with their packet
//! injection rate, directed mesh links with their transmission volume. A
//! predictor returns one average waiting time per link; edge latencies are
//! rebuilt as `flits + sum(wait) + hops * r`.
//!
//! The model runs out of process. [`SubprocessPredictor`] writes one graph
//! JSON per line to the child's stdin and reads one response line back.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::mapping::{flow_flits, CompiledChunk};
use crate::mesh::{Dir, MeshSpec};

pub const TOPOLOGY_SCHEMA: &str = "wafer-dse-topology/1";
/// Environment variable holding the command that starts a predictor.
pub const GNN_CMD_ENV: &str = "WAFER_DSE_GNN_CMD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoNode {
    pub id: u32,
    pub x: u32,
    pub y: u32,
    /// Flits injected per cycle over the chunk execution.
    pub injection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoEdge {
    /// Link id in the mesh numbering.
    pub link: u32,
    pub src: u32,
    pub dst: u32,
    /// Flits carried.
    pub volume: f64,
    /// Flits per cycle.
    pub bandwidth: f64,
    pub extra_latency: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoFlow {
    pub src: u32,
    pub dst: u32,
    pub flits: u64,
    /// Mesh link ids, X then Y.
    pub path: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub schema: String,
    pub rows: u32,
    pub cols: u32,
    pub router_latency: u32,
    pub nodes: Vec<TopoNode>,
    pub edges: Vec<TopoEdge>,
    pub flows: Vec<TopoFlow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    #[serde(default)]
    pub waits: Option<Vec<f64>>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Mesh links that connect two routers, in link-id order.
pub fn mesh_edges(mesh: &MeshSpec) -> Vec<(usize, u32, u32)> {
    let mut out = Vec::new();
    for node in 0..mesh.n_nodes() {
        let c = mesh.coord(node);
        for d in Dir::ALL {
            if let Some(n) = mesh.neighbor(c, d) {
                out.push((mesh.link(c, d), node as u32, mesh.node(n) as u32));
            }
        }
    }
    out
}

/// Topology graph of a compiled chunk; `duration` is the execution time the
/// injection rates are averaged over.
pub fn topology_graph(chunk: &CompiledChunk, duration: f64) -> TopologyGraph {
    let mesh = &chunk.mapping.mesh;
    let dur = duration.max(1.0);
    let mut injected = vec![0u64; mesh.n_nodes()];
    let mut volume = vec![0u64; mesh.n_links()];
    let mut flows = Vec::new();
    for (e, path) in chunk.graph.edges.iter().zip(&chunk.mapping.paths) {
        let s = chunk.node_pos(e.src);
        let d = chunk.node_pos(e.dst);
        if s == d {
            continue;
        }
        let f = flow_flits(e.bytes, e.packet_bytes, mesh.flit_bytes);
        injected[mesh.node(s)] += f;
        for &l in path {
            volume[l] += f;
        }
        flows.push(TopoFlow {
            src: mesh.node(s) as u32,
            dst: mesh.node(d) as u32,
            flits: f,
            path: path.iter().map(|&l| l as u32).collect(),
        });
    }
    let nodes = (0..mesh.n_nodes())
        .map(|i| {
            let c = mesh.coord(i);
            TopoNode { id: i as u32, x: c.x, y: c.y, injection_rate: injected[i] as f64 / dur }
        })
        .collect();
    let edges = mesh_edges(mesh)
        .into_iter()
        .map(|(l, src, dst)| TopoEdge {
            link: l as u32,
            src,
            dst,
            volume: volume[l] as f64,
            bandwidth: mesh.flits_per_cycle(l),
            extra_latency: mesh.link_extra[l],
        })
        .collect();
    TopologyGraph {
        schema: TOPOLOGY_SCHEMA.into(),
        rows: mesh.rows,
        cols: mesh.cols,
        router_latency: mesh.router_latency,
        nodes,
        edges,
        flows,
    }
}

/// `k + sum(wait over path) + hops * r`.
pub fn reconstruct_latency(waits: &[f64], path: &[usize], k: u64, router_latency: u32) -> Result<f64> {
    let mut sum = 0.0;
    for &l in path {
        sum += waits.get(l).copied().ok_or_else(|| DseError::InvalidParam(format!("no wait for link {l}")))?;
    }
    Ok(k as f64 + sum + (path.len() as u64 * router_latency as u64) as f64)
}

pub trait WaitPredictor {
    /// One non-negative wait per entry of `g.edges`.
    fn predict(&mut self, g: &TopologyGraph) -> Result<Vec<f64>>;
}

/// Scatters per-edge predictions into a per-link vector.
pub fn waits_by_link(g: &TopologyGraph, preds: &[f64], n_links: usize) -> Result<Vec<f64>> {
    if preds.len() != g.edges.len() {
        return Err(DseError::Parse(format!("expected {} predictions, got {}", g.edges.len(), preds.len())));
    }
    let mut out = vec![0.0; n_links];
    for (e, &w) in g.edges.iter().zip(preds) {
        if !w.is_finite() || w < 0.0 {
            return Err(DseError::Parse(format!("invalid wait {w} for link {}", e.link)));
        }
        out[e.link as usize] = w;
    }
    Ok(out)
}

pub struct SubprocessPredictor {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessPredictor {
    /// Starts `cmd` through the shell.
    pub fn spawn(cmd: &str) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(cmd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessPredictor { child, stdin, stdout })
    }

    /// Predictor named by the environment, if any.
    pub fn from_env() -> Option<Result<Self>> {
        std::env::var(GNN_CMD_ENV).ok().filter(|s| !s.trim().is_empty()).map(|c| Self::spawn(&c))
    }
}

impl WaitPredictor for SubprocessPredictor {
    fn predict(&mut self, g: &TopologyGraph) -> Result<Vec<f64>> {
        let line = serde_json::to_string(g)?;
        writeln!(self.stdin, "{line}")?;
        self.stdin.flush()?;
        let mut resp = String::new();
        if self.stdout.read_line(&mut resp)? == 0 {
            return Err(DseError::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "predictor closed its output")));
        }
        let r: PredictResponse = serde_json::from_str(resp.trim())?;
        match (r.waits, r.error) {
            (Some(w), _) => Ok(w),
            (None, Some(e)) => Err(DseError::Parse(format!("predictor error: {e}"))),
            (None, None) => Err(DseError::Parse("empty predictor response".into())),
        }
    }
}

impl Drop for SubprocessPredictor {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
