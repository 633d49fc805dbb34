//! 2D mesh geometry, link numbering and dimension-ordered routing.
//!
//! Link ids: `4 * node + dir` for the four mesh directions, then one
//! injection link per node, then one ejection link per node. North is `+y`.

use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};

pub const FLIT_BITS: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dir {
    East = 0,
    West = 1,
    North = 2,
    South = 3,
}

impl Dir {
    pub const ALL: [Dir; 4] = [Dir::East, Dir::West, Dir::North, Dir::South];

    pub fn opposite(self) -> Dir {
        match self {
            Dir::East => Dir::West,
            Dir::West => Dir::East,
            Dir::North => Dir::South,
            Dir::South => Dir::North,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: u32,
    pub y: u32,
}

impl Coord {
    pub fn new(x: u32, y: u32) -> Self {
        Coord { x, y }
    }

    pub fn manhattan(self, o: Coord) -> u32 {
        self.x.abs_diff(o.x) + self.y.abs_diff(o.y)
    }

    pub fn step(self, d: Dir) -> Coord {
        match d {
            Dir::East => Coord::new(self.x + 1, self.y),
            Dir::West => Coord::new(self.x - 1, self.y),
            Dir::North => Coord::new(self.x, self.y + 1),
            Dir::South => Coord::new(self.x, self.y - 1),
        }
    }
}

/// Directions taken by X-then-Y routing from `src` to `dst`.
pub fn xy_dirs(src: Coord, dst: Coord) -> Vec<Dir> {
    let mut out = Vec::with_capacity(src.manhattan(dst) as usize);
    let h = if dst.x > src.x { Dir::East } else { Dir::West };
    out.extend(std::iter::repeat(h).take(src.x.abs_diff(dst.x) as usize));
    let v = if dst.y > src.y { Dir::North } else { Dir::South };
    out.extend(std::iter::repeat(v).take(src.y.abs_diff(dst.y) as usize));
    out
}

/// Next direction from `at` towards `dst`, `None` when arrived.
pub fn xy_next(at: Coord, dst: Coord) -> Option<Dir> {
    if dst.x > at.x {
        Some(Dir::East)
    } else if dst.x < at.x {
        Some(Dir::West)
    } else if dst.y > at.y {
        Some(Dir::North)
    } else if dst.y < at.y {
        Some(Dir::South)
    } else {
        None
    }
}

/// Mesh with per-link width and extra latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub rows: u32,
    pub cols: u32,
    /// Router pipeline latency per hop, cycles.
    pub router_latency: u32,
    pub flit_bytes: u32,
    /// Width of every link in bits per cycle, indexed by link id.
    pub link_bits: Vec<u32>,
    /// Additional traversal latency per link, cycles.
    pub link_extra: Vec<u32>,
}

impl MeshSpec {
    /// Mesh with identical links everywhere, injection and ejection included.
    pub fn uniform(rows: u32, cols: u32, bits: u32) -> Self {
        let n = (rows * cols) as usize;
        MeshSpec {
            rows,
            cols,
            router_latency: 2,
            flit_bytes: FLIT_BITS / 8,
            link_bits: vec![bits; 6 * n],
            link_extra: vec![0; 6 * n],
        }
    }

    /// Mesh split into blocks of `block_cols x block_rows` routers; links that
    /// cross a block boundary get `cross_bits` width and `cross_extra` latency.
    pub fn blocked(
        rows: u32,
        cols: u32,
        bits: u32,
        block_cols: u32,
        block_rows: u32,
        cross_bits: u32,
        cross_extra: u32,
    ) -> Self {
        let mut m = Self::uniform(rows, cols, bits);
        for y in 0..rows {
            for x in 0..cols {
                let c = Coord::new(x, y);
                for d in Dir::ALL {
                    if let Some(n) = m.neighbor(c, d) {
                        let crosses = match d {
                            Dir::East | Dir::West => x / block_cols != n.x / block_cols,
                            Dir::North | Dir::South => y / block_rows != n.y / block_rows,
                        };
                        if crosses {
                            let l = m.link(c, d);
                            m.link_bits[l] = cross_bits;
                            m.link_extra[l] = cross_extra;
                        }
                    }
                }
            }
        }
        m
    }

    pub fn n_nodes(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn n_links(&self) -> usize {
        6 * self.n_nodes()
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.x < self.cols && c.y < self.rows
    }

    pub fn node(&self, c: Coord) -> usize {
        (c.y * self.cols + c.x) as usize
    }

    pub fn coord(&self, node: usize) -> Coord {
        Coord::new(node as u32 % self.cols, node as u32 / self.cols)
    }

    pub fn neighbor(&self, c: Coord, d: Dir) -> Option<Coord> {
        let ok = match d {
            Dir::East => c.x + 1 < self.cols,
            Dir::West => c.x > 0,
            Dir::North => c.y + 1 < self.rows,
            Dir::South => c.y > 0,
        };
        ok.then(|| c.step(d))
    }

    pub fn link(&self, c: Coord, d: Dir) -> usize {
        4 * self.node(c) + d as usize
    }

    pub fn injection_link(&self, c: Coord) -> usize {
        4 * self.n_nodes() + self.node(c)
    }

    pub fn ejection_link(&self, c: Coord) -> usize {
        5 * self.n_nodes() + self.node(c)
    }

    /// Mesh links of the X-then-Y route, in order.
    pub fn route(&self, src: Coord, dst: Coord) -> Vec<usize> {
        let mut at = src;
        let mut out = Vec::new();
        for d in xy_dirs(src, dst) {
            out.push(self.link(at, d));
            at = at.step(d);
        }
        out
    }

    /// Injection link, mesh links and ejection link of a route.
    pub fn route_with_endpoints(&self, src: Coord, dst: Coord) -> Vec<usize> {
        let mut out = vec![self.injection_link(src)];
        out.extend(self.route(src, dst));
        out.push(self.ejection_link(dst));
        out
    }

    /// Width of a link in flits per cycle.
    pub fn flits_per_cycle(&self, link: usize) -> f64 {
        self.link_bits[link] as f64 / (8.0 * self.flit_bytes as f64)
    }

    /// Latency of a route's head flit through an idle network.
    pub fn zero_load_head_latency(&self, src: Coord, dst: Coord) -> u64 {
        self.route(src, dst).iter().map(|&l| (self.router_latency + self.link_extra[l]) as u64).sum()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.n_links();
        if self.rows == 0 || self.cols == 0 {
            return Err(DseError::InvalidParam("mesh must have at least one router".into()));
        }
        if self.link_bits.len() != n || self.link_extra.len() != n {
            return Err(DseError::InvalidParam(format!("mesh needs {n} link entries")));
        }
        if self.router_latency == 0 {
            return Err(DseError::InvalidParam("router latency must be at least one cycle".into()));
        }
        if self.flit_bytes == 0 {
            return Err(DseError::InvalidParam("flit size must be positive".into()));
        }
        Ok(())
    }

    /// Link id to (router, direction) for mesh links; `None` for injection
    /// and ejection links.
    pub fn link_endpoints(&self, link: usize) -> Option<(Coord, Coord)> {
        if link >= 4 * self.n_nodes() {
            return None;
        }
        let c = self.coord(link / 4);
        let d = Dir::ALL[link % 4];
        self.neighbor(c, d).map(|n| (c, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xy_route_goes_east_then_north() {
        assert_eq!(xy_dirs(Coord::new(0, 0), Coord::new(2, 1)), vec![Dir::East, Dir::East, Dir::North]);
        assert!(xy_dirs(Coord::new(1, 1), Coord::new(1, 1)).is_empty());
        assert_eq!(xy_dirs(Coord::new(3, 2), Coord::new(1, 0)), vec![Dir::West, Dir::West, Dir::South, Dir::South]);
    }

    #[test]
    fn blocked_mesh_marks_boundary_links() {
        let m = MeshSpec::blocked(4, 4, 256, 2, 2, 64, 10);
        let inner = m.link(Coord::new(0, 0), Dir::East);
        let cross = m.link(Coord::new(1, 0), Dir::East);
        let up = m.link(Coord::new(0, 1), Dir::North);
        assert_eq!((m.link_bits[inner], m.link_extra[inner]), (256, 0));
        assert_eq!((m.link_bits[cross], m.link_extra[cross]), (64, 10));
        assert_eq!(m.link_bits[up], 64);
        assert_eq!(m.zero_load_head_latency(Coord::new(0, 0), Coord::new(3, 0)), 2 + 12 + 2);
    }

    #[test]
    fn link_endpoints_round_trip() {
        let m = MeshSpec::uniform(3, 5, 256);
        let a = Coord::new(2, 1);
        let l = m.link(a, Dir::North);
        assert_eq!(m.link_endpoints(l), Some((a, Coord::new(2, 2))));
        assert_eq!(m.link_endpoints(m.injection_link(a)), None);
    }
}
