//! Evaluation records, the Pareto archive and its file formats.
//!
//! An archive file is JSON lines, one [`Record`] per evaluation in the order
//! they happened, so a partial file is a valid prefix of the run.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pareto::{hypervolume, non_dominated, Objective, Reference};
use crate::error::{DseError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    High,
}

/// What chose the point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    /// Initial design.
    Init,
    Random,
    /// EHVI on the low-fidelity surrogate.
    EhviLow,
    /// EHVI on the high-fidelity surrogate.
    EhviHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: usize,
    /// Loop iteration; absent for initial samples.
    pub iteration: Option<usize>,
    pub fidelity: Level,
    pub acquisition: Acquisition,
    pub x: Vec<f64>,
    pub throughput: f64,
    pub power: f64,
    pub feasible: bool,
    /// Hypervolume of this fidelity's front once the record is added.
    pub hypervolume: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<serde_json::Value>,
}

impl Record {
    pub fn objective(&self) -> Objective {
        Objective::new(self.throughput, self.power)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoArchive {
    pub reference: Reference,
    pub records: Vec<Record>,
}

impl ParetoArchive {
    pub fn new(reference: Reference) -> Self {
        ParetoArchive { reference, records: Vec::new() }
    }

    pub fn calls(&self, level: Level) -> usize {
        self.records.iter().filter(|r| r.fidelity == level).count()
    }

    /// Non-dominated feasible records of one fidelity (the set χ).
    pub fn front(&self, level: Level) -> Vec<&Record> {
        let rs: Vec<&Record> = self.records.iter().filter(|r| r.fidelity == level && r.feasible).collect();
        let objs: Vec<Objective> = rs.iter().map(|r| r.objective()).collect();
        non_dominated(&objs).into_iter().map(|i| rs[i]).collect()
    }

    pub fn front_objectives(&self, level: Level) -> Vec<Objective> {
        self.front(level).iter().map(|r| r.objective()).collect()
    }

    pub fn hypervolume(&self, level: Level) -> f64 {
        hypervolume(&self.front_objectives(level), self.reference)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("records serialize"));
            s.push('\n');
        }
        s
    }

    /// `index,iteration,fidelity,hypervolume`, one row per evaluation.
    pub fn trajectory_csv(&self) -> String {
        let mut s = String::from("index,iteration,fidelity,hypervolume\n");
        for r in &self.records {
            let it = r.iteration.map(|i| i.to_string()).unwrap_or_default();
            let f = if r.fidelity == Level::High { "high" } else { "low" };
            let _ = writeln!(s, "{},{},{},{}", r.index, it, f, r.hypervolume);
        }
        s
    }

    /// The front of one fidelity, throughput descending.
    pub fn pareto_csv(&self, level: Level) -> String {
        let mut front = self.front(level);
        front.sort_by(|a, b| b.throughput.total_cmp(&a.throughput));
        let mut s = String::from("index,throughput,power,x\n");
        for r in front {
            let x: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{},{},{},{}", r.index, r.throughput, r.power, x.join(";"));
        }
        s
    }
}

pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(line) {
            Ok(r) => out.push(r),
            // A torn final line from an interrupted write is dropped.
            Err(_) if n + 1 == lines.len() => break,
            Err(e) => return Err(DseError::Parse(format!("{}:{}: {e}", path.display(), n + 1))),
        }
    }
    for (i, r) in out.iter().enumerate() {
        if r.index != i {
            return Err(DseError::Parse(format!("{}: record {i} has index {}", path.display(), r.index)));
        }
    }
    Ok(out)
}

/// Appends records to a JSON-lines file, flushing after each.
pub struct JsonlSink {
    file: std::fs::File,
}

impl JsonlSink {
    /// Opens `path`, truncating it to the `keep` records already replayed.
    pub fn open(path: &Path, keep: &[Record]) -> Result<Self> {
        let mut file = std::fs::File::create(path)?;
        for r in keep {
            writeln!(file, "{}", serde_json::to_string(r)?)?;
        }
        file.flush()?;
        Ok(JsonlSink { file })
    }

    pub fn push(&mut self, r: &Record) -> Result<()> {
        writeln!(self.file, "{}", serde_json::to_string(r)?)?;
        self.file.flush()?;
        Ok(())
    }
}
