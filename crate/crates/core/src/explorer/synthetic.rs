//! A bi-fidelity two-objective test problem with a known Pareto front.
//!
//! High fidelity on `x` in [0, 1]^d, with `g = 1 + 9 * mean(x[1..])`:
//!
//! ```text
//! throughput = 1 - x0
//! power      = 10 * g * (1 - sqrt(x0 / g))
//! ```
//!
//! The front is `x[1..] = 0`, i.e. `power = 10 * (1 - sqrt(1 - throughput))`.
//! Low fidelity adds smooth biases that keep the optimum in the same place.

use super::pareto::{hypervolume, Objective, Reference};
use super::space::UnitGrid;
use crate::error::Result;

pub const DIM: usize = 6;
pub const LEVELS: usize = 11;
pub const REFERENCE: Reference = Reference { throughput: 0.0, power: 12.0 };

pub fn space() -> UnitGrid {
    UnitGrid { dim: DIM, levels: LEVELS, reference: REFERENCE }
}

fn g(x: &[f64]) -> f64 {
    1.0 + 9.0 * x[1..].iter().sum::<f64>() / (x.len() - 1) as f64
}

pub fn high(x: &[f64]) -> Result<Objective> {
    let g = g(x);
    Ok(Objective::new(1.0 - x[0], 10.0 * g * (1.0 - (x[0] / g).sqrt())))
}

pub fn low(x: &[f64]) -> Result<Objective> {
    let h = high(x)?;
    let bias = 0.3 * (3.0 * x[1]).cos() + 0.2 * x[2];
    Ok(Objective::new(h.throughput * (1.0 + 0.05 * (5.0 * x[0]).sin()), 0.9 * h.power + bias))
}

/// Front points on the grid's `x0` levels.
pub fn true_front() -> Vec<Objective> {
    (0..LEVELS)
        .map(|i| {
            let mut x = vec![0.0; DIM];
            x[0] = i as f64 / (LEVELS - 1) as f64;
            high(&x).expect("synthetic")
        })
        .collect()
}

/// Best hypervolume reachable on the grid.
pub fn optimal_hypervolume() -> f64 {
    hypervolume(&true_front(), REFERENCE)
}
