//! Pareto dominance and two-objective hypervolume.
//!
//! Throughput is maximized and power minimized. The reference point is
//! `(throughput_floor, power_cap)`; only points strictly better than it in
//! both objectives contribute.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub throughput: f64,
    pub power: f64,
}

impl Objective {
    pub fn new(throughput: f64, power: f64) -> Self {
        Objective { throughput, power }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub throughput: f64,
    pub power: f64,
}

/// `a` is at least as good everywhere and strictly better somewhere.
pub fn dominates(a: &Objective, b: &Objective) -> bool {
    a.throughput >= b.throughput && a.power <= b.power && (a.throughput > b.throughput || a.power < b.power)
}

/// Indices of the non-dominated points; of identical points only the first
/// is kept.
pub fn non_dominated(points: &[Objective]) -> Vec<usize> {
    let mut out = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if dominates(q, p) || (j < i && q == p) {
                continue 'outer;
            }
        }
        out.push(i);
    }
    out
}

/// Exact dominated area by a staircase sweep.
pub fn hypervolume(points: &[Objective], r: Reference) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.throughput > r.throughput && p.power < r.power)
        .map(|p| (p.throughput, p.power))
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut ceiling = r.power;
    for (t, p) in pts {
        if p < ceiling {
            area += (t - r.throughput) * (ceiling - p);
            ceiling = p;
        }
    }
    area
}
