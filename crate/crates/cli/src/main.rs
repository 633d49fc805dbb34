//! `wafer-dse`: validate, evaluate and explore wafer-scale chip designs.
//!
//! Exit codes: 0 success, 1 constraint violation, 2 input or configuration
//! error, 3 infeasible workload, 4 internal error.

mod casestudy;
mod spec;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use wafer_dse::analytic::{link_load_csv, EvalOptions, Evaluator, Fidelity};
use wafer_dse::cost_model::{ComponentDb, CostParams};
use wafer_dse::dataset::{gen_dataset, write_archive};
use wafer_dse::design_space::{validate_with, DesignPoint, GridSpec, Limits};
use wafer_dse::error::{DseError, Result};
use wafer_dse::explorer::archive::{read_records, JsonlSink};
use wafer_dse::explorer::space::{GridSpace, Space, WscObjective};
use wafer_dse::explorer::{run_baseline, run_mfmobo, Algorithm, BaselineOptions, Level, ParetoArchive, RunIo};
use wafer_dse::gnn::SubprocessPredictor;
use wafer_dse::mesh::{Coord, MeshSpec};
use wafer_dse::noc::{simulate, SimTrace, TraceFlow};
use wafer_dse::suite::{desk_suite, hotspot_trace};
use wafer_dse::workload::{load_benchmarks, LlmSpec};
use wafer_dse::yield_model::YieldParams;

use casestudy::CaseStudy;
use spec::ExperimentSpec;

const DEFAULT_SEED: u64 = 42;
const DEFAULT_BENCHMARKS: &str = "benchmarks/desk/gpt.toml";

#[derive(Parser)]
#[command(name = "wafer-dse", version, about = "Design-space exploration for wafer-scale LLM accelerators")]
struct Cli {
    /// Seed for every stochastic step; recorded in the output.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Component database CSV; the calibrated built-in table otherwise.
    #[arg(long, global = true)]
    component_db: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a design point against the area, power, yield, SRAM and stress constraints.
    Validate {
        #[arg(long)]
        point: PathBuf,
        /// TOML file with yield parameters.
        #[arg(long)]
        yield_params: Option<PathBuf>,
    },
    /// Evaluate one benchmark on one design point.
    Eval {
        #[arg(long)]
        point: PathBuf,
        #[arg(long)]
        benchmark: String,
        #[arg(long, default_value = DEFAULT_BENCHMARKS)]
        benchmarks: PathBuf,
        #[arg(long, default_value = "analytical")]
        fidelity: String,
        #[arg(long)]
        yield_params: Option<PathBuf>,
        /// Write per-link inter-chunk traffic of the chosen strategy as CSV.
        #[arg(long)]
        dump_links: Option<PathBuf>,
    },
    /// Run a Pareto search described by an experiment TOML.
    Explore {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec: mfmobo, mobo or random.
        #[arg(long)]
        algorithm: Option<String>,
        /// Continue from an existing archive instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Simulate a binary or JSON trace cycle by cycle.
    Sim {
        #[arg(long)]
        trace: PathBuf,
        /// Print only the totals, not per-flow and per-link vectors.
        #[arg(long)]
        summary: bool,
    },
    /// Write a training archive for the learned congestion model.
    GenDataset {
        #[arg(long, default_value_t = 200)]
        n: usize,
    },
    /// Parameter sweeps over the desk grid.
    Casestudy {
        name: String,
        #[arg(long)]
        benchmark: Option<String>,
        #[arg(long, default_value = DEFAULT_BENCHMARKS)]
        benchmarks: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Grid points sampled per sweep value.
        #[arg(long, default_value_t = 24)]
        samples: usize,
    },
    /// Summaries and shipped reference files.
    Report {
        #[arg(value_enum)]
        what: ReportKind,
        /// Archive file for `report archive`.
        path: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    /// Front and hypervolume of an exploration archive.
    Archive,
    /// Component database and grids.
    Defaults,
    /// Fidelity suite and reference traces.
    Suite,
}

/// A command outcome other than success.
enum Failure {
    Violation,
    Error(DseError),
}

impl From<DseError> for Failure {
    fn from(e: DseError) -> Self {
        Failure::Error(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Error(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Error(e.into())
    }
}

fn exit_code(e: &DseError) -> u8 {
    match e {
        DseError::EmptySpace(_) | DseError::IncompleteDb(_) | DseError::InvalidParam(_) | DseError::Parse(_) | DseError::Io(_) => 2,
        DseError::Unmappable(_) | DseError::TileTooLarge(_) | DseError::RegionTooSmall(_) | DseError::Unroutable(_) => 3,
        DseError::CycleDetected | DseError::Deadlock { .. } | DseError::SingularKernel => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation) => ExitCode::from(1),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn run(cli: &Cli) -> CmdResult {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    match &cli.cmd {
        Cmd::Validate { point, yield_params } => cmd_validate(cli, point, yield_params.as_deref(), seed),
        Cmd::Eval { point, benchmark, benchmarks, fidelity, yield_params, dump_links } => {
            let fidelity: Fidelity = fidelity.parse()?;
            cmd_eval(cli, point, benchmark, benchmarks, fidelity, yield_params.as_deref(), dump_links.as_deref(), seed)
        }
        Cmd::Explore { spec, algorithm, resume } => cmd_explore(cli, spec, algorithm.as_deref(), *resume),
        Cmd::Sim { trace, summary } => cmd_sim(cli, trace, *summary, seed),
        Cmd::GenDataset { n } => cmd_gen_dataset(cli, *n, seed),
        Cmd::Casestudy { name, benchmark, benchmarks, grid, samples } => {
            let case: CaseStudy = name.parse()?;
            cmd_casestudy(cli, case, benchmark.as_deref(), benchmarks, grid.as_deref(), *samples, seed)
        }
        Cmd::Report { what, path } => match what {
            ReportKind::Archive => {
                let path = path.as_deref().ok_or_else(|| DseError::InvalidParam("report archive needs a path".into()))?;
                cmd_report_archive(cli, path)
            }
            ReportKind::Defaults => cmd_report_defaults(cli),
            ReportKind::Suite => cmd_report_suite(cli, seed),
        },
    }
}

fn load_db(path: Option<&Path>) -> Result<ComponentDb> {
    match path {
        Some(p) => ComponentDb::load(p, CostParams::default()),
        None => Ok(ComponentDb::calibrated_default()),
    }
}

fn load_point(path: &Path) -> Result<DesignPoint> {
    let p: DesignPoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(p)
}

fn load_yield(path: Option<&Path>) -> Result<YieldParams> {
    let y = match path {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => YieldParams::default(),
    };
    y.check()?;
    Ok(y)
}

fn find_benchmark(path: &Path, name: &str) -> Result<LlmSpec> {
    load_benchmarks(path)?
        .into_iter()
        .find(|m| m.name == name)
        .ok_or_else(|| DseError::InvalidParam(format!("benchmark {name:?} not in {}", path.display())))
}

/// Writes `text` to `--out` when given, stdout otherwise.
fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn with_seed(v: impl serde::Serialize, seed: u64) -> Result<String> {
    let mut v = serde_json::to_value(v)?;
    if let Value::Object(m) = &mut v {
        m.insert("seed".into(), json!(seed));
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

fn cmd_validate(cli: &Cli, point: &Path, yield_path: Option<&Path>, seed: u64) -> CmdResult {
    let db = load_db(cli.component_db.as_deref())?;
    let p = load_point(point)?;
    let mut yp = load_yield(yield_path)?;
    if cli.seed.is_some() {
        yp.mc_seed = seed;
    }
    let report = validate_with(&p, &db, &yp, &Limits::default())?;
    emit(cli, &with_seed(&report, yp.mc_seed)?)?;
    if report.passed {
        Ok(())
    } else {
        Err(Failure::Violation)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    cli: &Cli,
    point: &Path,
    benchmark: &str,
    benchmarks: &Path,
    fidelity: Fidelity,
    yield_path: Option<&Path>,
    dump_links: Option<&Path>,
    seed: u64,
) -> CmdResult {
    let db = load_db(cli.component_db.as_deref())?;
    let model = find_benchmark(benchmarks, benchmark)?;
    let p = load_point(point)?;
    let yp = load_yield(yield_path)?;
    let check = validate_with(&p, &db, &yp, &Limits::default())?;
    if !check.passed {
        for v in &check.violations {
            eprintln!("constraint violation: {:?}: {}", v.constraint, v.detail);
        }
        return Err(Failure::Violation);
    }
    let p = check.resolved(&p);
    let opts = EvalOptions { fidelity, seed, ..EvalOptions::default() };
    let mut ev = Evaluator::new(&model, &p, &db, opts)?;
    if fidelity == Fidelity::Gnn {
        // Without a predictor the evaluator warns and falls back to analytical.
        if let Some(pred) = SubprocessPredictor::from_env() {
            ev = ev.with_predictor(Box::new(pred?));
        }
    }
    let report = ev.best()?;
    if let Some(path) = dump_links {
        std::fs::write(path, link_load_csv(&model, &p, &report.strategy)?)?;
    }
    emit(cli, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(())
}

fn write_outputs(dir: &Path, archive: &ParetoArchive, meta: &Value) -> Result<()> {
    let level = if archive.calls(Level::High) > 0 { Level::High } else { Level::Low };
    std::fs::write(dir.join("pareto.csv"), archive.pareto_csv(level))?;
    std::fs::write(dir.join("hypervolume.csv"), archive.trajectory_csv())?;
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

fn cmd_explore(cli: &Cli, spec_path: &Path, algorithm: Option<&str>, resume: bool) -> CmdResult {
    let spec = ExperimentSpec::load(spec_path)?;
    let seed = cli.seed.unwrap_or(spec.seed);
    let algo: Algorithm = match algorithm {
        Some(a) => a.parse()?,
        None => spec.algorithm()?,
    };
    let (low_fid, high_fid) = spec.fidelities()?;
    let db_path = cli.component_db.clone().or_else(|| spec.component_db.clone());
    let db = load_db(db_path.as_deref())?;
    let grid = spec.grid()?;
    let models = spec.models()?;
    let yp = spec.yield_params.clone().unwrap_or_default();
    yp.check()?;
    let limits = Limits::default();
    let space = GridSpace::new(grid.clone(), limits.power_cap_w)?;
    let cfg = spec.mfmobo(seed);
    cfg.check()?;
    let root = cli.out.clone().or_else(|| spec.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let algo_name = format!("{algo:?}").to_ascii_lowercase();
    for model in &models {
        let dir = root.join(&model.name).join(&algo_name);
        std::fs::create_dir_all(&dir)?;
        let archive_path = dir.join("archive.jsonl");
        let replay = if resume && archive_path.exists() { read_records(&archive_path)? } else { Vec::new() };
        if !replay.is_empty() {
            log::info!("{}: resuming after {} records", model.name, replay.len());
        }
        let mut sink = JsonlSink::open(&archive_path, &replay)?;
        let io = RunIo { replay, sink: Some(Box::new(move |r| sink.push(r))) };
        let objective = |fidelity| WscObjective {
            grid: &grid,
            model,
            db: &db,
            yield_params: yp.clone(),
            limits,
            opts: EvalOptions { fidelity, seed, ..EvalOptions::default() },
        };
        let low = objective(low_fid);
        let high = objective(high_fid);
        let mut f_low = |x: &[f64]| low.evaluate(x);
        let mut f_high = |x: &[f64]| high.evaluate(x);
        let archive = match algo {
            Algorithm::Mfmobo => run_mfmobo(&space, &mut f_low, &mut f_high, &cfg, io)?,
            _ => {
                let budget = spec.explorer.budget.unwrap_or(cfg.n0);
                run_baseline(&space, &mut f_high, budget, algo, seed, &BaselineOptions::from(&cfg), io)?
            }
        };
        let meta = json!({
            "benchmark": model.name,
            "algorithm": algo_name,
            "seed": seed,
            "low_fidelity": low_fid.to_string(),
            "high_fidelity": high_fid.to_string(),
            "calls": { "low": archive.calls(Level::Low), "high": archive.calls(Level::High) },
            "hypervolume": archive.hypervolume(Level::High),
            "reference": { "throughput": archive.reference.throughput, "power": archive.reference.power },
            "config": {
                "d0": cfg.d0, "d1": cfg.d1, "n0": cfg.n0, "n1": cfg.n1, "warmup_k": cfg.warmup_k,
                "candidate_pool": cfg.candidate_pool, "qmc_samples": cfg.qmc_samples,
            },
        });
        write_outputs(&dir, &archive, &meta)?;
        println!("{} [{}]: {} high / {} low evaluations, hypervolume {:e}", model.name, algo_name, archive.calls(Level::High), archive.calls(Level::Low), archive.hypervolume(Level::High));
        for r in archive.front(Level::High) {
            println!("  {:>12.4} tokens/s  {:>10.2} W  (record {})", r.throughput, r.power, r.index);
        }
    }
    Ok(())
}

fn read_trace(path: &Path) -> Result<SimTrace> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    } else {
        SimTrace::read_binary(&mut BufReader::new(File::open(path)?))
    }
}

fn cmd_sim(cli: &Cli, trace: &Path, summary: bool, seed: u64) -> CmdResult {
    let t = read_trace(trace)?;
    let r = simulate(&t, seed)?;
    let text = if summary {
        serde_json::to_string_pretty(&json!({
            "total_cycles": r.total_cycles,
            "flits_injected": r.flits_injected,
            "flits_ejected": r.flits_ejected,
            "flit_hops": r.flit_hops,
            "out_of_order": r.out_of_order,
            "seed": r.seed,
        }))?
    } else {
        serde_json::to_string_pretty(&r)?
    };
    emit(cli, &(text + "\n"))?;
    Ok(())
}

fn cmd_gen_dataset(cli: &Cli, n: usize, seed: u64) -> CmdResult {
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    let cases = desk_suite();
    let configs: Vec<DesignPoint> = cases.iter().map(|c| c.point).collect();
    let mut models: Vec<LlmSpec> = Vec::new();
    for c in &cases {
        if !models.iter().any(|m| m.name == c.model.name) {
            models.push(c.model.clone());
        }
    }
    let samples = gen_dataset(&configs, &models, seed, n)?;
    write_archive(&out, &samples, seed)?;
    println!("{} samples written to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_casestudy(
    cli: &Cli,
    case: CaseStudy,
    benchmark: Option<&str>,
    benchmarks: &Path,
    grid: Option<&Path>,
    samples: usize,
    seed: u64,
) -> CmdResult {
    let db = load_db(cli.component_db.as_deref())?;
    let model = find_benchmark(benchmarks, benchmark.unwrap_or(case.default_benchmark()))?;
    let grid = match grid {
        Some(p) => GridSpec::load(p)?,
        None => GridSpec::desk(),
    };
    let ctx = casestudy::Ctx { model: &model, db: &db, yield_params: YieldParams::default(), samples, seed };
    let table = casestudy::run(case, &ctx, &grid)?;
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{}.csv", case.file_stem())), &table)?;
            let meta = json!({ "case": case.file_stem(), "benchmark": model.name, "samples": samples, "seed": seed });
            std::fs::write(dir.join(format!("{}.meta.json", case.file_stem())), serde_json::to_string_pretty(&meta)? + "\n")?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_report_archive(cli: &Cli, path: &Path) -> CmdResult {
    let records = read_records(path)?;
    let cap = records.iter().filter(|r| !r.feasible).map(|r| r.power).next();
    let reference = match cap {
        Some(power) => wafer_dse::explorer::Reference { throughput: 0.0, power },
        None => {
            let space = GridSpace::new(GridSpec::desk(), Limits::default().power_cap_w)?;
            space.reference()
        }
    };
    let archive = ParetoArchive { reference, records };
    let front: Vec<Value> = archive
        .front(Level::High)
        .iter()
        .map(|r| json!({ "index": r.index, "throughput": r.throughput, "power": r.power, "point": r.point }))
        .collect();
    let summary = json!({
        "records": archive.records.len(),
        "calls": { "low": archive.calls(Level::Low), "high": archive.calls(Level::High) },
        "hypervolume": { "low": archive.hypervolume(Level::Low), "high": archive.hypervolume(Level::High) },
        "front": front,
    });
    emit(cli, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(())
}

fn cmd_report_defaults(cli: &Cli) -> CmdResult {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(dir.join("grids"))?;
    std::fs::write(dir.join("component_db.csv"), ComponentDb::calibrated_default().to_csv()?)?;
    let grid = |g: &GridSpec| toml::to_string(g).map_err(|e| DseError::Parse(e.to_string()));
    std::fs::write(dir.join("grids/desk.toml"), grid(&GridSpec::desk())?)?;
    std::fs::write(dir.join("grids/full.toml"), grid(&GridSpec::full())?)?;
    std::fs::write(dir.join("yield.toml"), toml::to_string(&YieldParams::default()).map_err(|e| DseError::Parse(e.to_string()))?)?;
    println!("defaults written to {}", dir.display());
    Ok(())
}

/// One flow across a row of routers: nothing else on the network.
fn line_trace() -> SimTrace {
    SimTrace {
        mesh: MeshSpec::uniform(1, 6, 256),
        nodes: Vec::new(),
        flows: vec![TraceFlow {
            id: 0,
            src: Coord::new(0, 0),
            dst: Coord::new(5, 0),
            bytes: 4096,
            packet_bytes: 256,
            start: 0,
            interval: 0,
            src_node: None,
            dst_node: None,
        }],
    }
}

fn write_trace(path: &Path, t: &SimTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    t.write_binary(&mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn cmd_report_suite(cli: &Cli, seed: u64) -> CmdResult {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    std::fs::create_dir_all(dir.join("suite"))?;
    std::fs::create_dir_all(dir.join("traces"))?;
    let cases = desk_suite();
    std::fs::write(dir.join("suite/desk_suite.json"), serde_json::to_string_pretty(&cases)? + "\n")?;
    write_trace(&dir.join("traces/hotspot_8x8.trace"), &hotspot_trace(8, 128, 2048))?;
    write_trace(&dir.join("traces/line_1x6.trace"), &line_trace())?;
    for c in cases.iter().take(4) {
        write_trace(&dir.join(format!("traces/{}.trace", c.name)), &c.compile()?.trace())?;
    }
    println!("suite of {} cases and traces written to {} (seed {seed})", cases.len(), dir.display());
    Ok(())
}
