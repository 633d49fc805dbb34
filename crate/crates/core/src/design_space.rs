//! Configuration schema, candidate grids and the constraint validator.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost_model::{area_of, peak_power_w, AreaReport, ComponentDb};
use crate::error::{DseError, Result};
use crate::yield_model::{reticle_report, ReticleLayout, YieldParams, YieldReport};

/// Prefill share stored on points without heterogeneity, where it is unused.
pub const PREFILL_UNUSED: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataflow {
    WS,
    IS,
    OS,
}

impl Dataflow {
    pub const ALL: [Dataflow; 3] = [Dataflow::WS, Dataflow::IS, Dataflow::OS];
}

impl fmt::Display for Dataflow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Integration {
    DieStitching,
    InfoSoW,
}

impl Integration {
    pub const ALL: [Integration; 2] = [Integration::DieStitching, Integration::InfoSoW];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MemoryStyle {
    OffChipDram,
    StackingDram,
}

impl MemoryStyle {
    pub const ALL: [MemoryStyle; 2] = [MemoryStyle::OffChipDram, MemoryStyle::StackingDram];
}

/// Level at which prefill and decode get separate hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Granularity {
    None,
    CoreLevel,
    ReticleLevel,
    WaferLevel,
}

impl Granularity {
    pub const ALL: [Granularity; 4] =
        [Granularity::None, Granularity::CoreLevel, Granularity::ReticleLevel, Granularity::WaferLevel];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreConfig {
    pub dataflow: Dataflow,
    pub mac_num: u32,
    pub buffer_size_kb: u32,
    /// SRAM bandwidth, bits per cycle.
    pub buffer_bw: u32,
    /// Router link width, bits per cycle.
    pub noc_bw: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReticleConfig {
    pub core_rows: u32,
    /// Working cores per row, spares excluded.
    pub core_cols: u32,
    /// Inter-reticle bandwidth per side as a multiple of the reticle NoC
    /// bisection bandwidth.
    pub inter_reticle_bw_ratio: f64,
    /// TB/s per 100 mm²; ignored for off-chip memory.
    pub stacking_dram_bw_density: f64,
    /// Spare columns per row. `None` lets validation pick the smallest count
    /// that meets the yield target.
    #[serde(default)]
    pub redundancy_cols: Option<u32>,
}

impl ReticleConfig {
    pub fn spare_cols(&self) -> u32 {
        self.redundancy_cols.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaferConfig {
    pub reticle_rows: u32,
    pub reticle_cols: u32,
    pub integration: Integration,
    pub n_network_ifaces: u32,
    pub n_mem_controllers: u32,
    pub memory_style: MemoryStyle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeterogeneityConfig {
    pub granularity: Granularity,
    pub prefill_ratio: f64,
}

impl Default for HeterogeneityConfig {
    fn default() -> Self {
        HeterogeneityConfig { granularity: Granularity::None, prefill_ratio: PREFILL_UNUSED }
    }
}

/// A complete wafer-scale configuration. Serializes to JSON with a fixed key
/// order (declaration order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignPoint {
    pub core: CoreConfig,
    pub reticle: ReticleConfig,
    pub wafer: WaferConfig,
    #[serde(default)]
    pub hetero: HeterogeneityConfig,
    pub n_wafers: u32,
}

impl DesignPoint {
    /// A mid-range configuration used as a starting point in tests and docs.
    pub fn reference() -> Self {
        DesignPoint {
            core: CoreConfig { dataflow: Dataflow::WS, mac_num: 512, buffer_size_kb: 128, buffer_bw: 1024, noc_bw: 512 },
            reticle: ReticleConfig {
                core_rows: 8,
                core_cols: 8,
                inter_reticle_bw_ratio: 1.0,
                stacking_dram_bw_density: 1.0,
                redundancy_cols: None,
            },
            wafer: WaferConfig {
                reticle_rows: 2,
                reticle_cols: 2,
                integration: Integration::InfoSoW,
                n_network_ifaces: 4,
                n_mem_controllers: 4,
                memory_style: MemoryStyle::StackingDram,
            },
            hetero: HeterogeneityConfig::default(),
            n_wafers: 1,
        }
    }

    pub fn n_reticles(&self) -> u32 {
        self.wafer.reticle_rows * self.wafer.reticle_cols
    }

    pub fn working_cores_per_reticle(&self) -> u32 {
        self.reticle.core_rows * self.reticle.core_cols
    }

    pub fn with_spares(mut self, n: u32) -> Self {
        self.reticle.redundancy_cols = Some(n);
        self
    }

    /// Peak compute of one core, FLOP per second.
    pub fn core_flops(&self) -> f64 {
        2.0 * self.core.mac_num as f64 * crate::cost_model::CLOCK_HZ
    }

    /// Structural checks independent of the component database.
    pub fn check(&self) -> Result<()> {
        let c = &self.core;
        let r = &self.reticle;
        let w = &self.wafer;
        let pos = [
            ("mac_num", c.mac_num),
            ("buffer_size_kb", c.buffer_size_kb),
            ("buffer_bw", c.buffer_bw),
            ("noc_bw", c.noc_bw),
            ("core_rows", r.core_rows),
            ("core_cols", r.core_cols),
            ("reticle_rows", w.reticle_rows),
            ("reticle_cols", w.reticle_cols),
            ("n_wafers", self.n_wafers),
        ];
        for (name, v) in pos {
            if v == 0 {
                return Err(DseError::InvalidParam(format!("{name} must be at least 1")));
            }
        }
        if !(r.inter_reticle_bw_ratio > 0.0 && r.inter_reticle_bw_ratio.is_finite()) {
            return Err(DseError::InvalidParam("inter_reticle_bw_ratio must be positive".into()));
        }
        if !(r.stacking_dram_bw_density >= 0.0 && r.stacking_dram_bw_density.is_finite()) {
            return Err(DseError::InvalidParam("stacking_dram_bw_density must be non-negative".into()));
        }
        let h = &self.hetero;
        if h.granularity != Granularity::None && !(h.prefill_ratio > 0.0 && h.prefill_ratio < 1.0) {
            return Err(DseError::InvalidParam(format!("prefill_ratio {} outside (0, 1)", h.prefill_ratio)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("design point serializes")
    }
}

/// Physical reticle layout implied by a point and its area report.
pub fn layout_of(p: &DesignPoint, area: &AreaReport) -> ReticleLayout {
    let side = area.core_mm2.sqrt();
    ReticleLayout::new(
        side,
        side,
        p.reticle.core_rows as usize,
        (p.reticle.core_cols + p.reticle.spare_cols()) as usize,
        area.margin_mm,
        area.tsv_strip_mm,
        area.tsv_count,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub reticle_area_mm2: f64,
    pub reticle_field_mm: (f64, f64),
    pub wafer_span_mm: f64,
    pub power_cap_w: f64,
    pub tsv_area_fraction: f64,
    /// Largest spare-column count tried, as a multiple of the working columns.
    pub max_spare_ratio: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            reticle_area_mm2: 858.0,
            reticle_field_mm: (26.0, 33.0),
            wafer_span_mm: 215.0,
            power_cap_w: 15_000.0,
            tsv_area_fraction: 0.015,
            max_spare_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    Area,
    Power,
    Yield,
    Sram,
    Stress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub detail: String,
    /// `(limit - value) / limit`; negative when violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub spare_cols: u32,
    pub area: AreaReport,
    pub peak_power_w: f64,
    #[serde(rename = "yield")]
    pub yield_report: YieldReport,
}

impl ConstraintReport {
    /// The validated point with its spare columns fixed.
    pub fn resolved(&self, p: &DesignPoint) -> DesignPoint {
        p.with_spares(self.spare_cols)
    }
}

fn margin(limit: f64, value: f64) -> f64 {
    (limit - value) / limit
}

/// Area violations for a reticle of the given size on `p`'s wafer grid.
pub fn area_violations(p: &DesignPoint, area: &AreaReport, limits: &Limits) -> Vec<Violation> {
    let mut out = Vec::new();
    if area.reticle_mm2 > limits.reticle_area_mm2 {
        out.push(Violation {
            constraint: Constraint::Area,
            detail: format!("reticle area {:.3} mm² exceeds {} mm²", area.reticle_mm2, limits.reticle_area_mm2),
            margin: margin(limits.reticle_area_mm2, area.reticle_mm2),
        });
    }
    let (fw, fh) = limits.reticle_field_mm;
    let (w, h) = (area.reticle_width_mm, area.reticle_height_mm);
    let fits = (w <= fw && h <= fh) || (w <= fh && h <= fw);
    if !fits {
        let long = w.max(h);
        let short = w.min(h);
        let worst = margin(fw.min(fh), short).min(margin(fw.max(fh), long));
        out.push(Violation {
            constraint: Constraint::Area,
            detail: format!("reticle {w:.3} x {h:.3} mm does not fit the {fw} x {fh} mm field"),
            margin: worst,
        });
    }
    let (sw, sh) = area.wafer_span_mm(p);
    let span = sw.max(sh);
    if span > limits.wafer_span_mm {
        out.push(Violation {
            constraint: Constraint::Area,
            detail: format!("reticle grid spans {sw:.1} x {sh:.1} mm, wafer allows {0} x {0} mm", limits.wafer_span_mm),
            margin: margin(limits.wafer_span_mm, span),
        });
    }
    out
}

/// Yield of `p` with its spare count as given.
pub fn yield_of(p: &DesignPoint, area: &AreaReport, params: &YieldParams) -> Result<YieldReport> {
    let layout = layout_of(p, area);
    reticle_report(&layout, p.reticle.core_cols as usize, p.n_reticles(), p.wafer.integration, params)
}

/// Smallest spare-column count meeting the yield target, with its area and
/// yield. When no count up to the limit suffices the largest tried is returned.
pub fn resolve_spares(
    p: &DesignPoint,
    db: &ComponentDb,
    params: &YieldParams,
    limits: &Limits,
) -> Result<(u32, AreaReport, YieldReport)> {
    if let Some(n) = p.reticle.redundancy_cols {
        let area = area_of(p, db)?;
        let y = yield_of(p, &area, params)?;
        return Ok((n, area, y));
    }
    let max_n = ((p.reticle.core_cols as f64 * limits.max_spare_ratio).ceil() as u32).max(1);
    let mut last = None;
    for n in 0..=max_n {
        let q = p.with_spares(n);
        let area = area_of(&q, db)?;
        let y = yield_of(&q, &area, params)?;
        if y.wafer_yield >= params.yield_target {
            return Ok((n, area, y));
        }
        last = Some((n, area, y));
    }
    Ok(last.expect("at least one spare count tried"))
}

/// Checks area, power, yield, SRAM and stress constraints and reports every
/// violation. Missing database rows are an error, not a violation.
pub fn validate(p: &DesignPoint, db: &ComponentDb, params: &YieldParams) -> Result<ConstraintReport> {
    validate_with(p, db, params, &Limits::default())
}

pub fn validate_with(p: &DesignPoint, db: &ComponentDb, params: &YieldParams, limits: &Limits) -> Result<ConstraintReport> {
    p.check()?;
    params.check()?;
    let sram_ok = db.sram_feasible(p.core.buffer_size_kb, p.core.buffer_bw)?;
    let (spares, area, yr) = resolve_spares(p, db, params, limits)?;
    let q = p.with_spares(spares);
    let peak = peak_power_w(&q, db, &area)?;

    let mut violations = area_violations(&q, &area, limits);
    if peak > limits.power_cap_w {
        violations.push(Violation {
            constraint: Constraint::Power,
            detail: format!("peak power {:.1} W exceeds {} W", peak, limits.power_cap_w),
            margin: margin(limits.power_cap_w, peak),
        });
    }
    if yr.wafer_yield < params.yield_target {
        violations.push(Violation {
            constraint: Constraint::Yield,
            detail: format!(
                "wafer yield {:.4} below {} with {} spare columns",
                yr.wafer_yield, params.yield_target, spares
            ),
            margin: (yr.wafer_yield - params.yield_target) / params.yield_target,
        });
    }
    if !sram_ok {
        violations.push(Violation {
            constraint: Constraint::Sram,
            detail: format!(
                "SRAM macro {} KB at {} bit/cycle is not in the feasible set",
                p.core.buffer_size_kb, p.core.buffer_bw
            ),
            margin: -1.0,
        });
    }
    let fraction = area.tsv_count as f64 * db.params.tsv_hole_mm2() / area.reticle_mm2;
    if fraction > limits.tsv_area_fraction {
        violations.push(Violation {
            constraint: Constraint::Stress,
            detail: format!(
                "TSV holes cover {:.3}% of the reticle, limit {:.3}%",
                100.0 * fraction,
                100.0 * limits.tsv_area_fraction
            ),
            margin: margin(limits.tsv_area_fraction, fraction),
        });
    }
    Ok(ConstraintReport {
        passed: violations.is_empty(),
        violations,
        spare_cols: spares,
        area,
        peak_power_w: peak,
        yield_report: yr,
    })
}

/// How a raw coordinate is compared against grid values when snapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisScale {
    /// Index into an enum's variants.
    Categorical,
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: &'static str,
    pub scale: AxisScale,
    /// Sorted ascending, deduplicated, natural units (variant index for
    /// categorical axes).
    pub values: Vec<f64>,
}

impl Axis {
    fn transform(&self, v: f64) -> f64 {
        match self.scale {
            AxisScale::Log => v.max(f64::MIN_POSITIVE).ln(),
            _ => v,
        }
    }

    /// Index of the nearest grid value; ties go to the smaller value.
    pub fn nearest(&self, raw: f64) -> usize {
        let t = if raw.is_nan() { self.transform(self.values[0]) } else { self.transform(raw) };
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &v) in self.values.iter().enumerate() {
            let d = (self.transform(v) - t).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

pub const AXIS_NAMES: [&str; 17] = [
    "dataflow",
    "mac_num",
    "buffer_size_kb",
    "buffer_bw",
    "noc_bw",
    "core_rows",
    "core_cols",
    "inter_reticle_bw_ratio",
    "stacking_dram_bw_density",
    "reticle_rows",
    "reticle_cols",
    "integration",
    "n_network_ifaces",
    "n_mem_controllers",
    "memory_style",
    "granularity",
    "prefill_ratio",
];

/// Candidate values per parameter. Values outside the supported ranges are
/// dropped; an axis left empty makes the space empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub dataflow: Vec<Dataflow>,
    pub mac_num: Vec<u32>,
    pub buffer_size_kb: Vec<u32>,
    pub buffer_bw: Vec<u32>,
    pub noc_bw: Vec<u32>,
    pub core_rows: Vec<u32>,
    pub core_cols: Vec<u32>,
    pub inter_reticle_bw_ratio: Vec<f64>,
    pub stacking_dram_bw_density: Vec<f64>,
    pub reticle_rows: Vec<u32>,
    pub reticle_cols: Vec<u32>,
    pub integration: Vec<Integration>,
    pub n_network_ifaces: Vec<u32>,
    pub n_mem_controllers: Vec<u32>,
    pub memory_style: Vec<MemoryStyle>,
    pub granularity: Vec<Granularity>,
    pub prefill_ratio: Vec<f64>,
    pub n_wafers: u32,
}

fn pow2_range(lo: u32, hi: u32) -> Vec<u32> {
    (lo.trailing_zeros()..=hi.trailing_zeros()).map(|e| 1 << e).collect()
}

pub const INTER_RETICLE_RATIOS: [f64; 7] = [0.2, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0];
pub const STACK_DENSITIES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

impl GridSpec {
    /// The full candidate space. Array dimensions run up to sizes that can
    /// still fit a reticle or the wafer with the smallest cores.
    pub fn full() -> Self {
        GridSpec {
            dataflow: Dataflow::ALL.to_vec(),
            mac_num: pow2_range(8, 4096),
            buffer_size_kb: pow2_range(32, 2048),
            buffer_bw: pow2_range(32, 4096),
            noc_bw: pow2_range(32, 4096),
            core_rows: (1..=64).collect(),
            core_cols: (1..=64).collect(),
            inter_reticle_bw_ratio: INTER_RETICLE_RATIOS.to_vec(),
            stacking_dram_bw_density: STACK_DENSITIES.to_vec(),
            reticle_rows: (1..=8).collect(),
            reticle_cols: (1..=8).collect(),
            integration: Integration::ALL.to_vec(),
            n_network_ifaces: vec![0, 4, 8, 16, 32],
            n_mem_controllers: vec![0, 4, 8, 16, 32],
            memory_style: MemoryStyle::ALL.to_vec(),
            granularity: Granularity::ALL.to_vec(),
            prefill_ratio: (1..=9).map(|i| i as f64 / 10.0).collect(),
            n_wafers: 1,
        }
    }

    /// A small space that compiles and simulates in well under a second per
    /// point.
    pub fn desk() -> Self {
        GridSpec {
            dataflow: Dataflow::ALL.to_vec(),
            mac_num: pow2_range(64, 1024),
            buffer_size_kb: pow2_range(64, 512),
            buffer_bw: pow2_range(256, 2048),
            noc_bw: pow2_range(64, 1024),
            core_rows: vec![2, 3, 4],
            core_cols: vec![2, 3, 4],
            inter_reticle_bw_ratio: INTER_RETICLE_RATIOS.to_vec(),
            stacking_dram_bw_density: STACK_DENSITIES.to_vec(),
            reticle_rows: vec![2],
            reticle_cols: vec![2],
            integration: Integration::ALL.to_vec(),
            n_network_ifaces: vec![4],
            n_mem_controllers: vec![4],
            memory_style: MemoryStyle::ALL.to_vec(),
            granularity: vec![Granularity::None],
            prefill_ratio: vec![PREFILL_UNUSED],
            n_wafers: 1,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(serde_json::from_str(&text)?),
            _ => Ok(toml::from_str(&text)?),
        }
    }

    /// Axes after dropping out-of-range values, in [`AXIS_NAMES`] order.
    pub fn axes(&self) -> Result<Vec<Axis>> {
        fn ints(v: &[u32], keep: impl Fn(u32) -> bool) -> Vec<f64> {
            v.iter().copied().filter(|&x| keep(x)).map(f64::from).collect()
        }
        fn reals(v: &[f64], keep: impl Fn(f64) -> bool) -> Vec<f64> {
            v.iter().copied().filter(|&x| x.is_finite() && keep(x)).collect()
        }
        fn cats<T: PartialEq>(v: &[T], all: &[T]) -> Vec<f64> {
            all.iter().enumerate().filter(|(_, a)| v.contains(a)).map(|(i, _)| i as f64).collect()
        }
        let p2 = |lo: u32, hi: u32| move |x: u32| x.is_power_of_two() && (lo..=hi).contains(&x);
        let raw = [
            (AxisScale::Categorical, cats(&self.dataflow, &Dataflow::ALL)),
            (AxisScale::Log, ints(&self.mac_num, p2(8, 4096))),
            (AxisScale::Log, ints(&self.buffer_size_kb, p2(32, 2048))),
            (AxisScale::Log, ints(&self.buffer_bw, p2(32, 4096))),
            (AxisScale::Log, ints(&self.noc_bw, p2(32, 4096))),
            (AxisScale::Linear, ints(&self.core_rows, |x| x >= 1)),
            (AxisScale::Linear, ints(&self.core_cols, |x| x >= 1)),
            (AxisScale::Linear, reals(&self.inter_reticle_bw_ratio, |x| (0.2..=2.0).contains(&x))),
            (AxisScale::Log, reals(&self.stacking_dram_bw_density, |x| (0.25..=4.0).contains(&x))),
            (AxisScale::Linear, ints(&self.reticle_rows, |x| x >= 1)),
            (AxisScale::Linear, ints(&self.reticle_cols, |x| x >= 1)),
            (AxisScale::Categorical, cats(&self.integration, &Integration::ALL)),
            (AxisScale::Linear, ints(&self.n_network_ifaces, |_| true)),
            (AxisScale::Linear, ints(&self.n_mem_controllers, |_| true)),
            (AxisScale::Categorical, cats(&self.memory_style, &MemoryStyle::ALL)),
            (AxisScale::Categorical, cats(&self.granularity, &Granularity::ALL)),
            (AxisScale::Linear, reals(&self.prefill_ratio, |x| x > 0.0 && x < 1.0)),
        ];
        if self.n_wafers == 0 {
            return Err(DseError::EmptySpace("n_wafers must be at least 1".into()));
        }
        let mut axes = Vec::with_capacity(raw.len());
        for ((scale, mut values), name) in raw.into_iter().zip(AXIS_NAMES) {
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.is_empty() {
                return Err(DseError::EmptySpace(format!("no admissible values for {name}")));
            }
            axes.push(Axis { name, scale, values });
        }
        Ok(axes)
    }

    /// log10 of the number of distinct points, without enumerating them.
    pub fn cardinality_log10(&self) -> Result<f64> {
        let axes = self.axes()?;
        let mut log = 0.0;
        for a in &axes[..15] {
            log += (a.values.len() as f64).log10();
        }
        Ok(log + (hetero_pairs(&axes).len() as f64).log10())
    }

    /// Lazily enumerates the Cartesian product.
    pub fn enumerate(&self) -> Result<GridIter> {
        let axes = self.axes()?;
        let hetero = hetero_pairs(&axes);
        let mut radix: Vec<usize> = axes[..15].iter().map(|a| a.values.len()).collect();
        radix.push(hetero.len());
        Ok(GridIter { axes, hetero, radix: radix.clone(), idx: vec![0; radix.len()], done: false, n_wafers: self.n_wafers })
    }

    /// Maps a raw vector in [`AXIS_NAMES`] order to the nearest grid point.
    pub fn snap(&self, raw: &[f64]) -> Result<DesignPoint> {
        let axes = self.axes()?;
        if raw.len() != axes.len() {
            return Err(DseError::InvalidParam(format!("expected {} coordinates, got {}", axes.len(), raw.len())));
        }
        let vals: Vec<f64> = axes.iter().zip(raw).map(|(a, &r)| a.values[a.nearest(r)]).collect();
        Ok(point_from_values(&vals, self.n_wafers))
    }
}

/// Natural-unit coordinates of a point, in [`AXIS_NAMES`] order.
pub fn to_raw(p: &DesignPoint) -> Vec<f64> {
    let idx = |all: &[_], v| all.iter().position(|x| *x == v).expect("variant listed") as f64;
    vec![
        Dataflow::ALL.iter().position(|d| *d == p.core.dataflow).unwrap() as f64,
        p.core.mac_num as f64,
        p.core.buffer_size_kb as f64,
        p.core.buffer_bw as f64,
        p.core.noc_bw as f64,
        p.reticle.core_rows as f64,
        p.reticle.core_cols as f64,
        p.reticle.inter_reticle_bw_ratio,
        p.reticle.stacking_dram_bw_density,
        p.wafer.reticle_rows as f64,
        p.wafer.reticle_cols as f64,
        idx(&Integration::ALL.map(|x| x as u8), p.wafer.integration as u8),
        p.wafer.n_network_ifaces as f64,
        p.wafer.n_mem_controllers as f64,
        idx(&MemoryStyle::ALL.map(|x| x as u8), p.wafer.memory_style as u8),
        idx(&Granularity::ALL.map(|x| x as u8), p.hetero.granularity as u8),
        p.hetero.prefill_ratio,
    ]
}

fn point_from_values(v: &[f64], n_wafers: u32) -> DesignPoint {
    let u = |x: f64| x.round() as u32;
    let granularity = Granularity::ALL[v[15] as usize];
    DesignPoint {
        core: CoreConfig {
            dataflow: Dataflow::ALL[v[0] as usize],
            mac_num: u(v[1]),
            buffer_size_kb: u(v[2]),
            buffer_bw: u(v[3]),
            noc_bw: u(v[4]),
        },
        reticle: ReticleConfig {
            core_rows: u(v[5]),
            core_cols: u(v[6]),
            inter_reticle_bw_ratio: v[7],
            stacking_dram_bw_density: v[8],
            redundancy_cols: None,
        },
        wafer: WaferConfig {
            reticle_rows: u(v[9]),
            reticle_cols: u(v[10]),
            integration: Integration::ALL[v[11] as usize],
            n_network_ifaces: u(v[12]),
            n_mem_controllers: u(v[13]),
            memory_style: MemoryStyle::ALL[v[14] as usize],
        },
        hetero: HeterogeneityConfig {
            granularity,
            prefill_ratio: if granularity == Granularity::None { PREFILL_UNUSED } else { v[16] },
        },
        n_wafers,
    }
}

fn hetero_pairs(axes: &[Axis]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &g in &axes[15].values {
        if Granularity::ALL[g as usize] == Granularity::None {
            out.push((g, PREFILL_UNUSED));
        } else {
            out.extend(axes[16].values.iter().map(|&r| (g, r)));
        }
    }
    out
}

/// Odometer over grid indices; the last parameter varies fastest.
pub struct GridIter {
    axes: Vec<Axis>,
    hetero: Vec<(f64, f64)>,
    radix: Vec<usize>,
    idx: Vec<usize>,
    done: bool,
    n_wafers: u32,
}

impl Iterator for GridIter {
    type Item = DesignPoint;

    fn next(&mut self) -> Option<DesignPoint> {
        if self.done {
            return None;
        }
        let mut vals: Vec<f64> = self.axes[..15].iter().zip(&self.idx).map(|(a, &i)| a.values[i]).collect();
        let (g, r) = self.hetero[self.idx[15]];
        vals.push(g);
        vals.push(r);
        let point = point_from_values(&vals, self.n_wafers);
        let mut k = self.radix.len();
        loop {
            if k == 0 {
                self.done = true;
                break;
            }
            k -= 1;
            self.idx[k] += 1;
            if self.idx[k] < self.radix[k] {
                break;
            }
            self.idx[k] = 0;
        }
        Some(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single() -> GridSpec {
        let p = DesignPoint::reference();
        GridSpec {
            dataflow: vec![p.core.dataflow],
            mac_num: vec![p.core.mac_num],
            buffer_size_kb: vec![p.core.buffer_size_kb],
            buffer_bw: vec![p.core.buffer_bw],
            noc_bw: vec![p.core.noc_bw],
            core_rows: vec![p.reticle.core_rows],
            core_cols: vec![p.reticle.core_cols],
            inter_reticle_bw_ratio: vec![1.0],
            stacking_dram_bw_density: vec![1.0],
            reticle_rows: vec![2],
            reticle_cols: vec![2],
            integration: vec![Integration::InfoSoW],
            n_network_ifaces: vec![4],
            n_mem_controllers: vec![4],
            memory_style: vec![MemoryStyle::StackingDram],
            granularity: vec![Granularity::None],
            prefill_ratio: vec![0.5],
            n_wafers: 1,
        }
    }

    #[test]
    fn product_cardinality() {
        let mut g = single();
        g.dataflow = vec![Dataflow::WS, Dataflow::OS];
        g.mac_num = vec![256, 512];
        assert_eq!(g.enumerate().unwrap().count(), 4);
        assert_eq!(single().enumerate().unwrap().next().unwrap(), DesignPoint::reference());
    }

    #[test]
    fn off_grid_value_empties_axis() {
        let mut g = single();
        g.mac_num = vec![6];
        assert!(matches!(g.enumerate(), Err(DseError::EmptySpace(_))));
    }

    #[test]
    fn full_space_exceeds_1e14() {
        assert!(GridSpec::full().cardinality_log10().unwrap() > 14.0);
    }

    #[test]
    fn snap_ties_and_clamps() {
        let g = GridSpec::full();
        let mut raw = to_raw(&DesignPoint::reference());
        raw[1] = 700.0;
        assert_eq!(g.snap(&raw).unwrap().core.mac_num, 512);
        // geometric midpoint of 512 and 1024 ties toward the smaller value
        raw[1] = (512.0f64 * 1024.0).sqrt();
        assert_eq!(g.snap(&raw).unwrap().core.mac_num, 512);
        raw[1] = 1e9;
        assert_eq!(g.snap(&raw).unwrap().core.mac_num, 4096);
        raw[1] = -5.0;
        assert_eq!(g.snap(&raw).unwrap().core.mac_num, 8);
    }

    #[test]
    fn snap_on_grid_is_identity() {
        let p = DesignPoint::reference();
        assert_eq!(GridSpec::full().snap(&to_raw(&p)).unwrap(), p);
    }

    #[test]
    fn json_key_order_is_stable() {
        let s = DesignPoint::reference().to_json();
        assert!(s.starts_with("{\"core\":{\"dataflow\":\"WS\",\"mac_num\":512"));
        let back: DesignPoint = serde_json::from_str(&s).unwrap();
        assert_eq!(back.to_json(), s);
    }

    #[test]
    fn area_margin_sign() {
        let db = ComponentDb::calibrated_default();
        let p = DesignPoint::reference().with_spares(0);
        let mut a = area_of(&p, &db).unwrap();
        a.reticle_mm2 = 858.0;
        a.reticle_width_mm = 26.0;
        a.reticle_height_mm = 33.0;
        assert!(area_violations(&p, &a, &Limits::default()).is_empty());
        a.reticle_mm2 = 860.0;
        let v = area_violations(&p, &a, &Limits::default());
        assert_eq!(v.len(), 1);
        assert!((v[0].margin - (-2.0 / 858.0)).abs() < 1e-12);
    }

    #[test]
    fn reference_point_validates() {
        let db = ComponentDb::calibrated_default();
        let r = validate(&DesignPoint::reference(), &db, &YieldParams::default()).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        assert!(r.yield_report.wafer_yield >= 0.9);
    }

    #[test]
    fn sram_feasibility_and_missing_rows() {
        let db = ComponentDb::calibrated_default();
        let mut p = DesignPoint::reference();
        p.core.buffer_size_kb = 32;
        p.core.buffer_bw = 4096 * 2;
        assert!(matches!(validate(&p, &db, &YieldParams::default()), Err(DseError::IncompleteDb(_))));
        p.core.buffer_bw = 4096;
        p.core.buffer_size_kb = 256;
        let r = validate(&p, &db, &YieldParams::default()).unwrap();
        assert!(r.passed, "{:?}", r.violations);
        p.core.buffer_size_kb = 32;
        p.core.buffer_bw = 1024;
        let r = validate(&p, &db, &YieldParams::default()).unwrap();
        assert!(r.violations.iter().any(|v| v.constraint == Constraint::Sram));
    }
}
