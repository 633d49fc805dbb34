//! Core, reticle and wafer yield.
//!
//! A core's yield is the product of a Murphy defect term and linear
//! proximity penalties from nearby screw holes and TSV blocks. Reticle yield
//! accounts for spare cores (closed-form binomial when all cores share one
//! yield, Monte Carlo otherwise) and wafer yield depends on whether the
//! integration style allows known-good-die selection.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::design_space::Integration;
use crate::error::{DseError, Result};

/// Below this value of `A * D0` the Murphy expression is evaluated through its
/// series expansion.
const MURPHY_SERIES_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct YieldParams {
    /// Average defect density, defects per cm².
    pub defect_density: f64,
    pub stress_loss: f64,
    pub stress_radius_mm: f64,
    pub tsv_loss: f64,
    pub tsv_radius_mm: f64,
    pub yield_target: f64,
    pub mc_samples: u64,
    pub mc_seed: u64,
}

impl Default for YieldParams {
    fn default() -> Self {
        YieldParams {
            defect_density: 0.1,
            stress_loss: 0.1,
            stress_radius_mm: 1.0,
            tsv_loss: 0.1,
            tsv_radius_mm: 1.0,
            yield_target: 0.9,
            mc_samples: 100_000,
            mc_seed: 42,
        }
    }
}

impl YieldParams {
    pub fn check(&self) -> Result<()> {
        let fractions = [
            ("stress_loss", self.stress_loss),
            ("tsv_loss", self.tsv_loss),
            ("yield_target", self.yield_target),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(DseError::InvalidParam(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.stress_radius_mm > 0.0 && self.tsv_radius_mm > 0.0) {
            return Err(DseError::InvalidParam("influence radii must be positive".into()));
        }
        if !(self.defect_density >= 0.0) {
            return Err(DseError::InvalidParam("defect density must be non-negative".into()));
        }
        if self.mc_samples == 0 {
            return Err(DseError::InvalidParam("mc_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Murphy yield `[(1 - e^{-A D0}) / (A D0)]^2` for a die of `area_cm2`.
pub fn murphy_yield(area_cm2: f64, defect_density: f64) -> Result<f64> {
    if !(area_cm2 > 0.0) {
        return Err(DseError::InvalidParam(format!("area must be positive, got {area_cm2}")));
    }
    if !(defect_density >= 0.0) {
        return Err(DseError::InvalidParam(format!(
            "defect density must be non-negative, got {defect_density}"
        )));
    }
    let x = area_cm2 * defect_density;
    if x < MURPHY_SERIES_CUTOFF {
        // (1 - x/2 + x^2/6)^2 = 1 - x + 7x^2/12 + O(x^3)
        return Ok(1.0 - x + 7.0 * x * x / 12.0);
    }
    let r = -(-x).exp_m1() / x;
    Ok(r * r)
}

/// Linear recovery of yield with distance from a stress source.
///
/// `d` is the distance from the source to the nearest vertex of the core.
pub fn proximity_yield(d: f64, loss: f64, d_max: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&loss) {
        return Err(DseError::InvalidParam(format!("loss {loss} outside [0, 1]")));
    }
    if !(d >= 0.0) {
        return Err(DseError::InvalidParam(format!("distance must be non-negative, got {d}")));
    }
    if !(d_max > 0.0) {
        return Err(DseError::InvalidParam(format!("d_max must be positive, got {d_max}")));
    }
    if d >= d_max {
        return Ok(1.0);
    }
    Ok((loss / d_max * d + 1.0 - loss).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x0 - x).max(0.0).max(x - self.x1);
        let dy = (self.y0 - y).max(0.0).max(y - self.y1);
        dx.hypot(dy)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    fn overlaps(&self, other: &Rect) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Physical placement of cores, screw holes and TSV blocks inside one reticle.
///
/// Coordinates are millimetres from the reticle's lower-left corner. The core
/// array sits inside an interconnect ring of width `margin_mm`; when stacking
/// DRAM is present the TSV field is a horizontal strip splitting the array in
/// two halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReticleLayout {
    pub core_w_mm: f64,
    pub core_h_mm: f64,
    pub rows: usize,
    /// Physical columns per row, spares included.
    pub cols: usize,
    pub margin_mm: f64,
    pub width_mm: f64,
    pub height_mm: f64,
    pub screw_holes: Vec<(f64, f64)>,
    pub tsv_blocks: Vec<Rect>,
    pub tsv_count: u64,
}

impl ReticleLayout {
    pub fn new(
        core_w_mm: f64,
        core_h_mm: f64,
        rows: usize,
        cols: usize,
        margin_mm: f64,
        tsv_strip_h_mm: f64,
        tsv_count: u64,
    ) -> Self {
        let array_w = cols as f64 * core_w_mm;
        let width = array_w + 2.0 * margin_mm;
        let height = rows as f64 * core_h_mm + tsv_strip_h_mm + 2.0 * margin_mm;
        let mut tsv_blocks = Vec::new();
        if tsv_strip_h_mm > 0.0 {
            let y0 = margin_mm + (rows / 2) as f64 * core_h_mm;
            tsv_blocks.push(Rect { x0: margin_mm, y0, x1: margin_mm + array_w, y1: y0 + tsv_strip_h_mm });
        }
        ReticleLayout {
            core_w_mm,
            core_h_mm,
            rows,
            cols,
            margin_mm,
            width_mm: width,
            height_mm: height,
            screw_holes: vec![(0.0, 0.0), (width, 0.0), (0.0, height), (width, height)],
            tsv_blocks,
            tsv_count,
        }
    }

    fn tsv_strip_h(&self) -> f64 {
        self.tsv_blocks.first().map_or(0.0, |b| b.y1 - b.y0)
    }

    /// Footprint of the core at `(row, col)`.
    pub fn core_rect(&self, row: usize, col: usize) -> Rect {
        let shift = if row >= self.rows / 2 { self.tsv_strip_h() } else { 0.0 };
        let x0 = self.margin_mm + col as f64 * self.core_w_mm;
        let y0 = self.margin_mm + row as f64 * self.core_h_mm + shift;
        Rect { x0, y0, x1: x0 + self.core_w_mm, y1: y0 + self.core_h_mm }
    }

    /// True when no TSV block intersects a core footprint.
    pub fn tsv_clear_of_cores(&self) -> bool {
        (0..self.rows).all(|r| {
            (0..self.cols).all(|c| {
                let core = self.core_rect(r, c);
                self.tsv_blocks.iter().all(|b| !b.overlaps(&core))
            })
        })
    }

    pub fn tsv_area_fraction(&self, tsv_hole_mm2: f64) -> f64 {
        self.tsv_count as f64 * tsv_hole_mm2 / (self.width_mm * self.height_mm)
    }

    pub fn core_area_cm2(&self) -> f64 {
        self.core_w_mm * self.core_h_mm / 100.0
    }
}

fn nearest_vertex_distance(core: &Rect, mut dist: impl FnMut(f64, f64) -> f64) -> f64 {
    [(core.x0, core.y0), (core.x1, core.y0), (core.x0, core.y1), (core.x1, core.y1)]
        .into_iter()
        .map(|(x, y)| dist(x, y))
        .fold(f64::INFINITY, f64::min)
}

/// Yield of the core at `(row, col)`: Murphy term times every screw-hole and
/// TSV-block penalty within range.
pub fn core_yield(pos: (usize, usize), layout: &ReticleLayout, params: &YieldParams) -> Result<f64> {
    let (row, col) = pos;
    if row >= layout.rows || col >= layout.cols {
        return Err(DseError::InvalidParam(format!(
            "core ({row}, {col}) outside a {}x{} array",
            layout.rows, layout.cols
        )));
    }
    let core = layout.core_rect(row, col);
    let mut y = murphy_yield(layout.core_area_cm2(), params.defect_density)?;
    for &(hx, hy) in &layout.screw_holes {
        let d = nearest_vertex_distance(&core, |x, y| (x - hx).hypot(y - hy));
        y *= proximity_yield(d, params.stress_loss, params.stress_radius_mm)?;
    }
    for block in &layout.tsv_blocks {
        let d = nearest_vertex_distance(&core, |x, y| block.distance_to(x, y));
        y *= proximity_yield(d, params.tsv_loss, params.tsv_radius_mm)?;
    }
    Ok(y)
}

/// Per-position yields for the whole array, row-major.
pub fn core_yield_map(layout: &ReticleLayout, params: &YieldParams) -> Result<Vec<Vec<f64>>> {
    (0..layout.rows)
        .map(|r| (0..layout.cols).map(|c| core_yield((r, c), layout, params)).collect())
        .collect()
}

/// Result of a redundancy-aware yield computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RedundantYield {
    pub value: f64,
    /// Standard error of the estimate; zero for closed-form results.
    pub std_error: f64,
    /// Monte Carlo samples drawn; zero when the closed form was used.
    pub samples: u64,
}

/// Probability that at least `p` of `p + n` independent cores with yield `y`
/// are functional.
pub fn binomial_survival(p: u64, n: u64, y: f64) -> f64 {
    let total = p + n;
    if y >= 1.0 {
        return 1.0;
    }
    if y <= 0.0 {
        return if p == 0 { 1.0 } else { 0.0 };
    }
    let (ly, lq) = (y.ln(), (-y).ln_1p());
    let sum: f64 = (p..=total)
        .map(|i| (ln_binomial(total, i) + i as f64 * ly + (total - i) as f64 * lq).exp())
        .sum();
    sum.min(1.0)
}

fn all_equal(yields: &[f64]) -> bool {
    yields.windows(2).all(|w| w[0] == w[1])
}

fn check_yields(yields: &[f64]) -> Result<()> {
    if let Some(bad) = yields.iter().find(|y| !(**y > 0.0 && **y <= 1.0)) {
        return Err(DseError::InvalidParam(format!("core yield {bad} outside (0, 1]")));
    }
    Ok(())
}

fn standard_error(value: f64, samples: u64) -> f64 {
    (value * (1.0 - value) / samples as f64).sqrt()
}

/// Yield of a reticle with `p` working and `n` spare cores pooled across the
/// whole reticle.
///
/// `core_yields` lists all `p + n` per-core yields. Uniform yields use the
/// binomial closed form; otherwise `samples` Monte Carlo draws are taken from
/// `rng`.
pub fn reticle_yield_redundant<R: Rng>(
    p: i64,
    n: i64,
    core_yields: &[f64],
    rng: &mut R,
    samples: u64,
) -> Result<RedundantYield> {
    if p < 1 || n < 0 {
        return Err(DseError::InvalidParam(format!("need p >= 1 and n >= 0, got p={p}, n={n}")));
    }
    let (p, n) = (p as u64, n as u64);
    if core_yields.len() as u64 != p + n {
        return Err(DseError::InvalidParam(format!(
            "expected {} core yields, got {}",
            p + n,
            core_yields.len()
        )));
    }
    check_yields(core_yields)?;
    if all_equal(core_yields) {
        return Ok(RedundantYield { value: binomial_survival(p, n, core_yields[0]), std_error: 0.0, samples: 0 });
    }
    if samples == 0 {
        return Err(DseError::InvalidParam("Monte Carlo needs at least one sample".into()));
    }
    let mut survived = 0u64;
    for _ in 0..samples {
        let alive = core_yields.iter().filter(|&&y| rng.gen::<f64>() < y).count() as u64;
        if alive >= p {
            survived += 1;
        }
    }
    let value = survived as f64 / samples as f64;
    Ok(RedundantYield { value, std_error: standard_error(value, samples), samples })
}

/// Row-structured redundancy: every row must keep `working` functional cores
/// out of its physical cores (working plus spares), rows fail independently.
pub fn reticle_yield_rows<R: Rng>(
    working: u64,
    rows: &[Vec<f64>],
    rng: &mut R,
    samples: u64,
) -> Result<RedundantYield> {
    if working < 1 {
        return Err(DseError::InvalidParam("rows need at least one working core".into()));
    }
    for row in rows {
        if (row.len() as u64) < working {
            return Err(DseError::InvalidParam(format!(
                "row has {} cores but needs {working} working",
                row.len()
            )));
        }
        check_yields(row)?;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if all_equal(&flat) && !flat.is_empty() {
        let spares = rows[0].len() as u64 - working;
        let per_row = binomial_survival(working, spares, flat[0]);
        return Ok(RedundantYield { value: per_row.powi(rows.len() as i32), std_error: 0.0, samples: 0 });
    }
    if samples == 0 {
        return Err(DseError::InvalidParam("Monte Carlo needs at least one sample".into()));
    }
    let mut survived = 0u64;
    for _ in 0..samples {
        let ok = rows.iter().all(|row| {
            let dead = row.iter().filter(|&&y| rng.gen::<f64>() >= y).count() as u64;
            row.len() as u64 - dead >= working
        });
        if ok {
            survived += 1;
        }
    }
    let value = survived as f64 / samples as f64;
    Ok(RedundantYield { value, std_error: standard_error(value, samples), samples })
}

/// Wafer yield from the reticle yield. Known-good-die assembly (InFO-SoW)
/// discards failing reticles before integration; die stitching needs every
/// reticle to work.
pub fn wafer_yield(reticle_yield: f64, n_reticles: u32, integration: Integration) -> f64 {
    match integration {
        Integration::InfoSoW => reticle_yield,
        Integration::DieStitching => reticle_yield.powi(n_reticles as i32),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    /// Yield per physical core position, row-major.
    pub core_yield: Vec<Vec<f64>>,
    pub reticle_yield: f64,
    pub reticle_std_error: f64,
    pub wafer_yield: f64,
    pub spare_cols: u32,
    /// Fraction of the core array spent on spares.
    pub redundancy_overhead: f64,
    pub mc_samples: u64,
    pub mc_seed: u64,
}

/// Yield of a reticle laid out as `layout` with `working` cores required per
/// row. `layout.cols - working` columns are spares.
pub fn reticle_report(
    layout: &ReticleLayout,
    working: usize,
    n_reticles: u32,
    integration: Integration,
    params: &YieldParams,
) -> Result<YieldReport> {
    params.check()?;
    let map = core_yield_map(layout, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.mc_seed);
    let r = reticle_yield_rows(working as u64, &map, &mut rng, params.mc_samples)?;
    let spares = layout.cols.saturating_sub(working) as u32;
    Ok(YieldReport {
        core_yield: map,
        reticle_yield: r.value,
        reticle_std_error: r.std_error,
        wafer_yield: wafer_yield(r.value, n_reticles, integration),
        spare_cols: spares,
        redundancy_overhead: spares as f64 / layout.cols as f64,
        mc_samples: r.samples,
        mc_seed: params.mc_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn murphy_zero_defects_is_one() {
        assert_eq!(murphy_yield(3.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn murphy_rejects_non_positive_area() {
        assert!(murphy_yield(0.0, 0.1).is_err());
        assert!(murphy_yield(-1.0, 0.1).is_err());
    }

    #[test]
    fn murphy_series_is_continuous() {
        let below = murphy_yield(1e-9, 1.0).unwrap();
        let above = murphy_yield(1.0001e-8, 1.0).unwrap();
        let at = murphy_yield(1e-8, 1.0).unwrap();
        assert!((below - (1.0 - 1e-9)).abs() < 1e-15);
        assert!((at - above).abs() < 1e-9);
    }

    #[test]
    fn proximity_boundaries() {
        assert_eq!(proximity_yield(1.0, 0.1, 1.0).unwrap(), 1.0);
        assert!((proximity_yield(0.0, 0.1, 1.0).unwrap() - 0.9).abs() < 1e-15);
        assert!((proximity_yield(0.5, 0.1, 1.0).unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(proximity_yield(7.0, 0.1, 1.0).unwrap(), 1.0);
        assert!(proximity_yield(0.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn far_core_sees_only_murphy() {
        let layout = ReticleLayout::new(2.0, 2.0, 4, 4, 3.0, 0.0, 0);
        let params = YieldParams::default();
        let m = murphy_yield(0.04, 0.1).unwrap();
        let y = core_yield((1, 1), &layout, &params).unwrap();
        assert_eq!(y, m);
    }

    #[test]
    fn core_touching_screw_hole() {
        // No margin: the lower-left core has a vertex on the reticle corner.
        let layout = ReticleLayout::new(3.0, 3.0, 3, 3, 0.0, 0.0, 0);
        let params = YieldParams { defect_density: 0.0, ..Default::default() };
        let y = core_yield((0, 0), &layout, &params).unwrap();
        assert!((y - 0.9).abs() < 1e-12);
        // with murphy = 0.95 the product is 0.855
        assert!((0.95 * y - 0.855).abs() < 1e-12);
    }

    #[test]
    fn tsv_block_strictly_lowers_adjacent_core() {
        let params = YieldParams::default();
        let plain = ReticleLayout::new(2.0, 2.0, 4, 4, 3.0, 0.0, 0);
        let with_tsv = ReticleLayout::new(2.0, 2.0, 4, 4, 3.0, 0.5, 1000);
        let a = core_yield((1, 1), &plain, &params).unwrap();
        let b = core_yield((1, 1), &with_tsv, &params).unwrap();
        assert!(b < a);
        assert!(with_tsv.tsv_clear_of_cores());
    }

    #[test]
    fn redundancy_rejects_negative_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(reticle_yield_redundant(0, 0, &[], &mut rng, 10).is_err());
        assert!(reticle_yield_redundant(1, -1, &[0.9], &mut rng, 10).is_err());
    }

    #[test]
    fn wafer_yield_styles_agree_for_one_reticle() {
        assert_eq!(
            wafer_yield(0.93, 1, Integration::DieStitching),
            wafer_yield(0.93, 1, Integration::InfoSoW)
        );
        assert_eq!(wafer_yield(0.95, 25, Integration::InfoSoW), 0.95);
    }
}
