//! Pareto search over the design space.

pub mod archive;
pub mod ehvi;
pub mod gp;
pub mod mfmobo;
pub mod pareto;
pub mod space;
pub mod synthetic;

pub use archive::{Acquisition, Level, ParetoArchive, Record};
pub use mfmobo::{run_baseline, run_mfmobo, Algorithm, BaselineOptions, MfmoboConfig, RunIo};
pub use pareto::{hypervolume, Objective, Reference};
