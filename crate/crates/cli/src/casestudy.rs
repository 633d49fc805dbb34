//! Parameter sweeps over the desk grid.
//!
//! Each sweep fixes one axis to a value, draws a seeded sample of the rest
//! of the grid and keeps the best feasible throughput and the lowest
//! energy-delay product. Infeasible points count as zero throughput.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wafer_dse::analytic::{best_strategy, EvalOptions, EvalReport};
use wafer_dse::cost_model::{ComponentDb, CLOCK_HZ};
use wafer_dse::design_space::{validate, DesignPoint, Granularity, GridSpec, Integration, PREFILL_UNUSED};
use wafer_dse::error::{DseError, Result};
use wafer_dse::explorer::space::{GridSpace, Space};
use wafer_dse::workload::LlmSpec;
use wafer_dse::yield_model::YieldParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseStudy {
    CoreGranularity,
    ReticleGranularity,
    IntegrationStyle,
    InferenceBandwidth,
    Heterogeneity,
}

impl FromStr for CaseStudy {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Ok(match key.as_str() {
            "coregranularity" | "core" => CaseStudy::CoreGranularity,
            "reticlegranularity" | "reticle" => CaseStudy::ReticleGranularity,
            "integrationstyle" | "integration" => CaseStudy::IntegrationStyle,
            "inferencebandwidth" | "bandwidth" => CaseStudy::InferenceBandwidth,
            "heterogeneity" | "hetero" => CaseStudy::Heterogeneity,
            _ => return Err(DseError::InvalidParam(format!("unknown case study {s:?}"))),
        })
    }
}

impl CaseStudy {
    pub fn file_stem(self) -> &'static str {
        match self {
            CaseStudy::CoreGranularity => "core_granularity",
            CaseStudy::ReticleGranularity => "reticle_granularity",
            CaseStudy::IntegrationStyle => "integration_style",
            CaseStudy::InferenceBandwidth => "inference_bandwidth",
            CaseStudy::Heterogeneity => "heterogeneity",
        }
    }

    /// Benchmark the sweep runs on by default.
    pub fn default_benchmark(self) -> &'static str {
        match self {
            CaseStudy::InferenceBandwidth | CaseStudy::Heterogeneity => "desk-gpt-1.7b-decode",
            _ => "desk-gpt-1.7b",
        }
    }
}

pub struct Ctx<'a> {
    pub model: &'a LlmSpec,
    pub db: &'a ComponentDb,
    pub yield_params: YieldParams,
    pub samples: usize,
    pub seed: u64,
}

/// Analytical report of a point, or `None` when it violates a constraint or
/// cannot be mapped.
fn eval(ctx: &Ctx, p: &DesignPoint) -> Result<Option<EvalReport>> {
    let rep = validate(p, ctx.db, &ctx.yield_params)?;
    if !rep.passed {
        return Ok(None);
    }
    let opts = EvalOptions { seed: ctx.seed, ..EvalOptions::default() };
    match best_strategy(ctx.model, &rep.resolved(p), ctx.db, &opts) {
        Ok((_, r)) => Ok(Some(r)),
        Err(DseError::Unmappable(_) | DseError::TileTooLarge(_) | DseError::RegionTooSmall(_) | DseError::Unroutable(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Joules per iteration times seconds per iteration.
fn edp(r: &EvalReport, n_wafers: u32) -> f64 {
    let t = r.iteration_latency_cycles / CLOCK_HZ;
    r.avg_power_w * n_wafers as f64 * t * t
}

struct Best {
    throughput: f64,
    edp: f64,
    feasible: usize,
}

fn best_of(ctx: &Ctx, grid: &GridSpec, salt: u64) -> Result<Best> {
    let space = GridSpace::new(grid.clone(), f64::INFINITY)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut b = Best { throughput: 0.0, edp: f64::INFINITY, feasible: 0 };
    for _ in 0..ctx.samples {
        let p = grid.snap(&space.sample(&mut rng))?;
        if let Some(r) = eval(ctx, &p)? {
            b.feasible += 1;
            b.throughput = b.throughput.max(r.tokens_per_s);
            b.edp = b.edp.min(edp(&r, p.n_wafers));
        }
    }
    Ok(b)
}

fn fmt_edp(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        String::new()
    }
}

pub fn run(case: CaseStudy, ctx: &Ctx, grid: &GridSpec) -> Result<String> {
    let mut out = String::new();
    match case {
        CaseStudy::CoreGranularity => {
            out.push_str("mac_num,core_tflops,best_tokens_per_s,best_edp,feasible\n");
            for (i, &mac) in grid.mac_num.iter().enumerate() {
                let g = GridSpec { mac_num: vec![mac], ..grid.clone() };
                let b = best_of(ctx, &g, i as u64)?;
                let flops = 2.0 * mac as f64 * CLOCK_HZ / 1e12;
                let _ = writeln!(out, "{mac},{flops},{},{},{}", b.throughput, fmt_edp(b.edp), b.feasible);
            }
        }
        CaseStudy::ReticleGranularity => {
            out.push_str("core_rows,core_cols,cores_per_reticle,best_tokens_per_s,best_edp,feasible\n");
            let mut i = 0u64;
            for &r in &grid.core_rows {
                for &c in &grid.core_cols {
                    let g = GridSpec { core_rows: vec![r], core_cols: vec![c], ..grid.clone() };
                    let b = best_of(ctx, &g, i)?;
                    i += 1;
                    let _ = writeln!(out, "{r},{c},{},{},{},{}", r * c, b.throughput, fmt_edp(b.edp), b.feasible);
                }
            }
        }
        CaseStudy::IntegrationStyle => {
            out.push_str("sample,spare_cols,yield_die_stitching,yield_info_sow,tokens_per_s_die_stitching,tokens_per_s_info_sow\n");
            let g = GridSpec { integration: vec![Integration::DieStitching], ..grid.clone() };
            let space = GridSpace::new(g.clone(), f64::INFINITY)?;
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            for i in 0..ctx.samples {
                // Both styles get the spare count die stitching needs.
                let ds = g.snap(&space.sample(&mut rng))?;
                let ds = validate(&ds, ctx.db, &ctx.yield_params)?.resolved(&ds);
                let mut info = ds;
                info.wafer.integration = Integration::InfoSoW;
                let y = |p: &DesignPoint| validate(p, ctx.db, &ctx.yield_params).map(|r| r.yield_report.wafer_yield);
                let t = |p: &DesignPoint| eval(ctx, p).map(|r| r.map_or(0.0, |r| r.tokens_per_s));
                let _ = writeln!(out, "{i},{},{},{},{},{}", ds.reticle.spare_cols(), y(&ds)?, y(&info)?, t(&ds)?, t(&info)?);
            }
        }
        CaseStudy::InferenceBandwidth => {
            out.push_str("axis,value,best_tokens_per_s,best_edp,feasible\n");
            for (i, &bw) in grid.buffer_bw.iter().enumerate() {
                let g = GridSpec { buffer_bw: vec![bw], ..grid.clone() };
                let b = best_of(ctx, &g, i as u64)?;
                let _ = writeln!(out, "sram_bw_bits,{bw},{},{},{}", b.throughput, fmt_edp(b.edp), b.feasible);
            }
            for (i, &d) in grid.stacking_dram_bw_density.iter().enumerate() {
                let g = GridSpec {
                    stacking_dram_bw_density: vec![d],
                    memory_style: vec![wafer_dse::design_space::MemoryStyle::StackingDram],
                    ..grid.clone()
                };
                let b = best_of(ctx, &g, 100 + i as u64)?;
                let _ = writeln!(out, "stack_tb_s_per_100mm2,{d},{},{},{}", b.throughput, fmt_edp(b.edp), b.feasible);
            }
        }
        CaseStudy::Heterogeneity => {
            out.push_str("granularity,prefill_ratio,best_tokens_per_s,best_edp,feasible\n");
            let ratios = [0.25, 0.5, 0.75];
            let mut i = 0u64;
            for g in Granularity::ALL {
                let rs: &[f64] = if g == Granularity::None { &[PREFILL_UNUSED] } else { &ratios };
                for &r in rs {
                    let spec = GridSpec { granularity: vec![g], prefill_ratio: vec![r], n_wafers: 2, ..grid.clone() };
                    let b = best_of(ctx, &spec, i)?;
                    i += 1;
                    let ratio = if g == Granularity::None { String::new() } else { r.to_string() };
                    let _ = writeln!(out, "{g:?},{ratio},{},{},{}", b.throughput, fmt_edp(b.edp), b.feasible);
                }
            }
        }
    }
    Ok(out)
}
