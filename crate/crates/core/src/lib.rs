//! Design-space exploration for wafer-scale LLM accelerators.
//!
//! The crate covers the configuration space and its constraints, yield and
//! cost models, an LLM workload compiler, an analytical evaluator, a
//! cycle-level mesh NoC simulator and a multi-fidelity Bayesian explorer.

pub mod analytic;
pub mod cost_model;
pub mod dataset;
pub mod design_space;
pub mod error;
pub mod explorer;
pub mod gnn;
pub mod mapping;
pub mod mesh;
pub mod metrics;
pub mod noc;
pub mod suite;
pub mod tile;
pub mod workload;
pub mod yield_model;

pub use error::{DseError, Result};
