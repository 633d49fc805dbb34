//! Area and power estimation from a component database.
//!
//! The database maps component kind plus configuration to area, static power
//! and energy per action. Area rolls up core -> reticle -> wafer; power is
//! static power plus action counts times per-action energy.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design_space::{Dataflow, DesignPoint, Integration, MemoryStyle};
use crate::error::{DseError, Result};

pub const CLOCK_HZ: f64 = 1e9;
pub const DB_SCHEMA_LINE: &str = "# wafer-dse component-db v1";

/// Bytes per second carried by one network interface.
pub const NET_IF_BYTES_PER_S: f64 = 100e9;
/// Bytes per second served by one off-chip memory controller.
pub const MEM_CTRL_BYTES_PER_S: f64 = 160e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Sram,
    Mac,
    Router,
    Control,
    Phy,
    Tsv,
    StackDram,
    OffchipDram,
    MemCtrl,
    NetIf,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 10] = [
        ComponentKind::Sram,
        ComponentKind::Mac,
        ComponentKind::Router,
        ComponentKind::Control,
        ComponentKind::Phy,
        ComponentKind::Tsv,
        ComponentKind::StackDram,
        ComponentKind::OffchipDram,
        ComponentKind::MemCtrl,
        ComponentKind::NetIf,
    ];

    fn name(self) -> &'static str {
        match self {
            ComponentKind::Sram => "sram",
            ComponentKind::Mac => "mac",
            ComponentKind::Router => "router",
            ComponentKind::Control => "control",
            ComponentKind::Phy => "phy",
            ComponentKind::Tsv => "tsv",
            ComponentKind::StackDram => "stack_dram",
            ComponentKind::OffchipDram => "offchip_dram",
            ComponentKind::MemCtrl => "mem_ctrl",
            ComponentKind::NetIf => "net_if",
        }
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentKind {
    type Err = DseError;
    fn from_str(s: &str) -> Result<Self> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DseError::Parse(format!("unknown component kind '{s}'")))
    }
}

/// One database row. Units depend on the kind:
///
/// * `sram`, `mac`, `router`, `control`, `mem_ctrl`, `net_if`: area and static
///   power per instance.
/// * `phy`: area (mm²) and static power (W) per Gbps of link bandwidth.
/// * `tsv`: footprint per TSV on the pitch grid.
/// * `stack_dram`: static power per TB/s of provisioned bandwidth.
///
/// `energy_pj` is per action: per MAC, per SRAM bit read, per flit hop, per
/// bit moved across a PHY, TSV stack, DRAM device, controller or interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub kind: ComponentKind,
    pub config: String,
    pub area_mm2: f64,
    pub static_w: f64,
    pub energy_pj: f64,
    #[serde(default)]
    pub energy_write_pj: f64,
    #[serde(default = "yes")]
    pub feasible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Multiplier over summed macro area accounting for placement.
    pub placement_overhead: f64,
    pub tsv_size_um: f64,
    pub tsv_pitch_um: f64,
    pub gbps_per_tsv: f64,
    pub flit_bytes: u32,
    pub offchip_gb_per_controller: f64,
    /// Stacking DRAM capacity per wafer: `intercept - slope * bw_density`.
    pub stack_capacity_intercept_gb: f64,
    pub stack_capacity_slope: f64,
    /// Outgoing mesh links per router counted by the peak-power bound.
    pub router_links_per_core: u32,
}

impl Default for CostParams {
    fn default() -> Self {
        // Line through (0.25 TB/s/100mm², 40 GB) and (4, 8 GB).
        let slope = 32.0 / 3.75;
        CostParams {
            placement_overhead: 1.15,
            tsv_size_um: 5.0,
            tsv_pitch_um: 15.0,
            gbps_per_tsv: 1.0,
            flit_bytes: 32,
            offchip_gb_per_controller: 64.0,
            stack_capacity_intercept_gb: 40.0 + 0.25 * slope,
            stack_capacity_slope: slope,
            router_links_per_core: 4,
        }
    }
}

impl CostParams {
    pub fn stack_capacity_gb(&self, bw_density: f64) -> f64 {
        (self.stack_capacity_intercept_gb - self.stack_capacity_slope * bw_density).max(0.0)
    }

    pub fn tsv_hole_mm2(&self) -> f64 {
        (self.tsv_size_um * 1e-3).powi(2)
    }

    pub fn tsv_footprint_mm2(&self) -> f64 {
        (self.tsv_pitch_um * 1e-3).powi(2)
    }
}

pub fn sram_key(size_kb: u32, bw_bits: u32) -> String {
    format!("{size_kb}kb/{bw_bits}b")
}

pub fn mac_key(df: Dataflow, mac_num: u32) -> String {
    format!("{df}/{mac_num}")
}

pub fn router_key(noc_bw: u32) -> String {
    format!("{noc_bw}b")
}

pub fn phy_key(integration: Integration) -> String {
    match integration {
        Integration::DieStitching => "offset_exposure".to_string(),
        Integration::InfoSoW => "rdl".to_string(),
    }
}

const DEFAULT_KEY: &str = "default";

/// Immutable component table.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDb {
    records: BTreeMap<(ComponentKind, String), ComponentRecord>,
    pub params: CostParams,
}

impl ComponentDb {
    pub fn from_records(records: impl IntoIterator<Item = ComponentRecord>, params: CostParams) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in records {
            let vals = [r.area_mm2, r.static_w, r.energy_pj, r.energy_write_pj];
            if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(DseError::Parse(format!("negative or non-finite value in {} {}", r.kind, r.config)));
            }
            map.insert((r.kind, r.config.clone()), r);
        }
        Ok(ComponentDb { records: map, params })
    }

    pub fn get(&self, kind: ComponentKind, config: &str) -> Result<&ComponentRecord> {
        self.records
            .get(&(kind, config.to_string()))
            .ok_or_else(|| DseError::IncompleteDb(format!("{kind} {config}")))
    }

    fn single(&self, kind: ComponentKind) -> Result<&ComponentRecord> {
        self.get(kind, DEFAULT_KEY)
    }

    pub fn records(&self) -> impl Iterator<Item = &ComponentRecord> {
        self.records.values()
    }

    pub fn remove(&mut self, kind: ComponentKind, config: &str) -> Option<ComponentRecord> {
        self.records.remove(&(kind, config.to_string()))
    }

    pub fn insert(&mut self, record: ComponentRecord) {
        self.records.insert((record.kind, record.config.clone()), record);
    }

    /// SRAM macro feasibility. Missing rows are an incomplete database, not an
    /// infeasible macro.
    pub fn sram_feasible(&self, size_kb: u32, bw_bits: u32) -> Result<bool> {
        Ok(self.get(ComponentKind::Sram, &sram_key(size_kb, bw_bits))?.feasible)
    }

    /// Calibrated placeholder numbers for a 14 nm-class process. These are not
    /// measured data; replace them with a characterised table when available.
    pub fn calibrated_default() -> Self {
        let mut rows = Vec::new();
        let pow2 = |lo: u32, hi: u32| (lo.trailing_zeros()..=hi.trailing_zeros()).map(|e| 1u32 << e);
        for size in pow2(32, 2048) {
            for bw in pow2(32, 4096) {
                let read = 0.08 * (1.0 + 0.15 * ((size / 32) as f64).log2());
                rows.push(ComponentRecord {
                    kind: ComponentKind::Sram,
                    config: sram_key(size, bw),
                    area_mm2: 0.0011 * size as f64 + 0.00006 * bw as f64 + 0.01,
                    static_w: 2e-5 * size as f64,
                    energy_pj: read,
                    energy_write_pj: 1.2 * read,
                    feasible: bw <= 16 * size,
                });
            }
        }
        for df in Dataflow::ALL {
            let f = match df {
                Dataflow::WS => 1.0,
                Dataflow::IS => 1.02,
                Dataflow::OS => 1.06,
            };
            for n in pow2(8, 4096) {
                rows.push(ComponentRecord {
                    kind: ComponentKind::Mac,
                    config: mac_key(df, n),
                    area_mm2: 0.00045 * f * n as f64 + 0.005,
                    static_w: 2e-5 * n as f64,
                    energy_pj: 0.9 * f,
                    energy_write_pj: 0.0,
                    feasible: true,
                });
            }
        }
        for bw in pow2(32, 4096) {
            rows.push(ComponentRecord {
                kind: ComponentKind::Router,
                config: router_key(bw),
                area_mm2: 0.004 + 0.00004 * bw as f64,
                static_w: 0.002 + 2e-6 * bw as f64,
                energy_pj: 16.0,
                energy_write_pj: 0.0,
                feasible: true,
            });
        }
        let simple = |kind, area_mm2, static_w, energy_pj| ComponentRecord {
            kind,
            config: DEFAULT_KEY.to_string(),
            area_mm2,
            static_w,
            energy_pj,
            energy_write_pj: 0.0,
            feasible: true,
        };
        rows.push(simple(ComponentKind::Control, 0.06, 0.01, 0.0));
        rows.push(simple(ComponentKind::Tsv, CostParams::default().tsv_footprint_mm2(), 0.0, 0.0));
        rows.push(simple(ComponentKind::StackDram, 0.0, 0.5, 2.5));
        rows.push(simple(ComponentKind::OffchipDram, 0.0, 0.0, 12.0));
        rows.push(simple(ComponentKind::MemCtrl, 3.0, 1.0, 1.5));
        rows.push(simple(ComponentKind::NetIf, 4.0, 1.5, 3.0));
        rows.push(ComponentRecord {
            kind: ComponentKind::Phy,
            config: phy_key(Integration::DieStitching),
            area_mm2: 1300e-6,
            static_w: 1e-4,
            energy_pj: 0.25,
            energy_write_pj: 0.0,
            feasible: true,
        });
        rows.push(ComponentRecord {
            kind: ComponentKind::Phy,
            config: phy_key(Integration::InfoSoW),
            area_mm2: 3900e-6,
            static_w: 2e-4,
            energy_pj: 0.8,
            energy_write_pj: 0.0,
            feasible: true,
        });
        ComponentDb::from_records(rows, CostParams::default()).expect("default db is well-formed")
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.records.values() {
            w.serialize(r)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| DseError::Parse(e.to_string()))?)
            .map_err(|e| DseError::Parse(e.to_string()))?;
        Ok(format!("{DB_SCHEMA_LINE}\n{body}"))
    }

    pub fn from_csv_str(text: &str, params: CostParams) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim() == DB_SCHEMA_LINE => {}
            other => {
                return Err(DseError::Parse(format!(
                    "component db must start with '{DB_SCHEMA_LINE}', found {other:?}"
                )))
            }
        }
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(body.as_bytes());
        let records = rdr.deserialize::<ComponentRecord>().collect::<std::result::Result<Vec<_>, _>>()?;
        ComponentDb::from_records(records, params)
    }

    pub fn load(path: &Path, params: CostParams) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text, params)
    }
}

/// Inter-reticle PHY area for `gbps` of bandwidth.
pub fn phy_area_mm2(gbps: f64, integration: Integration, db: &ComponentDb) -> Result<f64> {
    Ok(gbps * db.get(ComponentKind::Phy, &phy_key(integration))?.area_mm2)
}

/// TSVs needed to deliver `bw_density` TB/s per 100 mm² over `reticle_mm2`.
pub fn tsv_count_for(bw_density: f64, reticle_mm2: f64, params: &CostParams) -> u64 {
    let gbps = bw_density * (reticle_mm2 / 100.0) * 1000.0 * 8.0;
    // Round away float noise before the ceiling.
    let per_tsv = gbps / params.gbps_per_tsv;
    let rounded = (per_tsv * 1e6).round() / 1e6;
    rounded.ceil().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreAreaBreakdown {
    pub mac: f64,
    pub sram: f64,
    pub router: f64,
    pub control: f64,
    pub placement: f64,
}

impl CoreAreaBreakdown {
    pub fn total(&self) -> f64 {
        self.mac + self.sram + self.router + self.control + self.placement
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReticleAreaBreakdown {
    pub working_cores: f64,
    pub spare_cores: f64,
    pub tsv: f64,
    pub phy: f64,
}

impl ReticleAreaBreakdown {
    pub fn total(&self) -> f64 {
        self.working_cores + self.spare_cores + self.tsv + self.phy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub core_mm2: f64,
    pub reticle_mm2: f64,
    pub wafer_mm2: f64,
    pub reticle_width_mm: f64,
    pub reticle_height_mm: f64,
    /// Width of the interconnect ring around the core array.
    pub margin_mm: f64,
    pub tsv_strip_mm: f64,
    pub tsv_count: u64,
    /// Bandwidth per reticle side, Gbps.
    pub phy_side_gbps: f64,
    pub core: CoreAreaBreakdown,
    pub reticle: ReticleAreaBreakdown,
    pub wafer_edge_mm2: f64,
}

impl AreaReport {
    pub fn wafer_span_mm(&self, p: &DesignPoint) -> (f64, f64) {
        (
            p.wafer.reticle_cols as f64 * self.reticle_width_mm,
            p.wafer.reticle_rows as f64 * self.reticle_height_mm,
        )
    }
}

/// Reticle bisection bandwidth of the working core array, bits per cycle.
pub fn reticle_bisection_bits(p: &DesignPoint) -> f64 {
    p.reticle.core_rows.min(p.reticle.core_cols) as f64 * p.core.noc_bw as f64
}

/// Inter-reticle bandwidth per reticle side, Gbps (bits per cycle at 1 GHz).
pub fn inter_reticle_side_gbps(p: &DesignPoint) -> f64 {
    p.reticle.inter_reticle_bw_ratio * reticle_bisection_bits(p)
}

pub fn core_area(p: &DesignPoint, db: &ComponentDb) -> Result<CoreAreaBreakdown> {
    let c = &p.core;
    let mac = db.get(ComponentKind::Mac, &mac_key(c.dataflow, c.mac_num))?.area_mm2;
    let sram = db.get(ComponentKind::Sram, &sram_key(c.buffer_size_kb, c.buffer_bw))?.area_mm2;
    let router = db.get(ComponentKind::Router, &router_key(c.noc_bw))?.area_mm2;
    let control = db.single(ComponentKind::Control)?.area_mm2;
    let sum = mac + sram + router + control;
    Ok(CoreAreaBreakdown { mac, sram, router, control, placement: sum * (db.params.placement_overhead - 1.0) })
}

pub fn area_of(p: &DesignPoint, db: &ComponentDb) -> Result<AreaReport> {
    let core = core_area(p, db)?;
    let core_mm2 = core.total();
    let side = core_mm2.sqrt();
    let rows = p.reticle.core_rows as f64;
    let working = p.reticle.core_cols as f64;
    let phys_cols = working + p.reticle.spare_cols() as f64;
    let array_w = phys_cols * side;
    let array_h = rows * side;
    let array = array_w * array_h;

    let phy_side_gbps = inter_reticle_side_gbps(p);
    let phy = 4.0 * phy_area_mm2(phy_side_gbps, p.wafer.integration, db)?;

    let (tsv_count, tsv) = match p.wafer.memory_style {
        MemoryStyle::StackingDram if p.reticle.stacking_dram_bw_density > 0.0 => {
            let fp = db.single(ComponentKind::Tsv)?.area_mm2;
            let per_mm2 = p.reticle.stacking_dram_bw_density * 80.0 / db.params.gbps_per_tsv;
            let share = fp * per_mm2;
            if share >= 1.0 {
                return Err(DseError::InvalidParam("TSV field exceeds the reticle".into()));
            }
            let estimate = (array + phy) / (1.0 - share);
            let count = tsv_count_for(p.reticle.stacking_dram_bw_density, estimate, &db.params);
            (count, count as f64 * fp)
        }
        _ => (0, 0.0),
    };
    let strip = if tsv > 0.0 { tsv / array_w } else { 0.0 };
    // Solve (aw + 2m)(ah + t + 2m) = aw (ah + t) + phy for the ring width m.
    let b = array_w + array_h + strip;
    let margin = ((b * b + 4.0 * phy).sqrt() - b) / 4.0;

    let reticle = ReticleAreaBreakdown {
        working_cores: rows * working * core_mm2,
        spare_cores: rows * p.reticle.spare_cols() as f64 * core_mm2,
        tsv,
        phy,
    };
    let reticle_mm2 = reticle.total();
    let edge = p.wafer.n_mem_controllers as f64 * db.single(ComponentKind::MemCtrl)?.area_mm2
        + p.wafer.n_network_ifaces as f64 * db.single(ComponentKind::NetIf)?.area_mm2;
    let n_ret = (p.wafer.reticle_rows * p.wafer.reticle_cols) as f64;
    Ok(AreaReport {
        core_mm2,
        reticle_mm2,
        wafer_mm2: n_ret * reticle_mm2 + edge,
        reticle_width_mm: array_w + 2.0 * margin,
        reticle_height_mm: array_h + strip + 2.0 * margin,
        margin_mm: margin,
        tsv_strip_mm: strip,
        tsv_count,
        phy_side_gbps,
        core,
        reticle,
        wafer_edge_mm2: edge,
    })
}

/// Counts of energy-consuming actions accumulated by an evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionCounts {
    pub mac_op: u64,
    pub sram_read_bit: u64,
    pub sram_write_bit: u64,
    pub noc_hop_flit: u64,
    pub inter_reticle_bit: u64,
    pub stack_dram_bit: u64,
    pub offchip_dram_bit: u64,
    pub inter_wafer_bit: u64,
}

impl ActionCounts {
    pub fn add(&mut self, o: &ActionCounts) {
        self.mac_op += o.mac_op;
        self.sram_read_bit += o.sram_read_bit;
        self.sram_write_bit += o.sram_write_bit;
        self.noc_hop_flit += o.noc_hop_flit;
        self.inter_reticle_bit += o.inter_reticle_bit;
        self.stack_dram_bit += o.stack_dram_bit;
        self.offchip_dram_bit += o.offchip_dram_bit;
        self.inter_wafer_bit += o.inter_wafer_bit;
    }

    pub fn scaled(&self, k: f64) -> ActionCounts {
        let s = |v: u64| (v as f64 * k).round() as u64;
        ActionCounts {
            mac_op: s(self.mac_op),
            sram_read_bit: s(self.sram_read_bit),
            sram_write_bit: s(self.sram_write_bit),
            noc_hop_flit: s(self.noc_hop_flit),
            inter_reticle_bit: s(self.inter_reticle_bit),
            stack_dram_bit: s(self.stack_dram_bit),
            offchip_dram_bit: s(self.offchip_dram_bit),
            inter_wafer_bit: s(self.inter_wafer_bit),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerBreakdown {
    pub static_w: f64,
    pub mac_w: f64,
    pub sram_w: f64,
    pub noc_w: f64,
    pub inter_reticle_w: f64,
    pub dram_w: f64,
    pub inter_wafer_w: f64,
}

impl PowerBreakdown {
    pub fn total(&self) -> f64 {
        self.static_w + self.mac_w + self.sram_w + self.noc_w + self.inter_reticle_w + self.dram_w + self.inter_wafer_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    /// Average power of the whole system over the run.
    pub avg_power_w: f64,
    /// Upper bound with every unit active, per wafer.
    pub peak_power_w: f64,
    pub breakdown: PowerBreakdown,
}

struct Energies {
    mac: f64,
    sram_r: f64,
    sram_w: f64,
    flit: f64,
    phy: f64,
    stack: f64,
    offchip: f64,
    netif: f64,
}

fn energies(p: &DesignPoint, db: &ComponentDb) -> Result<Energies> {
    let c = &p.core;
    let sram = db.get(ComponentKind::Sram, &sram_key(c.buffer_size_kb, c.buffer_bw))?;
    Ok(Energies {
        mac: db.get(ComponentKind::Mac, &mac_key(c.dataflow, c.mac_num))?.energy_pj,
        sram_r: sram.energy_pj,
        sram_w: sram.energy_write_pj,
        flit: db.get(ComponentKind::Router, &router_key(c.noc_bw))?.energy_pj,
        phy: db.get(ComponentKind::Phy, &phy_key(p.wafer.integration))?.energy_pj,
        stack: db.single(ComponentKind::StackDram)?.energy_pj,
        offchip: db.single(ComponentKind::OffchipDram)?.energy_pj
            + db.single(ComponentKind::MemCtrl)?.energy_pj,
        netif: db.single(ComponentKind::NetIf)?.energy_pj,
    })
}

/// Stacking DRAM bandwidth per reticle, bytes per second.
pub fn stack_bytes_per_s(p: &DesignPoint, reticle_mm2: f64) -> f64 {
    match p.wafer.memory_style {
        MemoryStyle::StackingDram => p.reticle.stacking_dram_bw_density * 1e12 * reticle_mm2 / 100.0,
        MemoryStyle::OffChipDram => 0.0,
    }
}

/// Static power of one wafer.
pub fn static_power_w(p: &DesignPoint, db: &ComponentDb, area: &AreaReport) -> Result<f64> {
    let c = &p.core;
    let per_core = db.get(ComponentKind::Mac, &mac_key(c.dataflow, c.mac_num))?.static_w
        + db.get(ComponentKind::Sram, &sram_key(c.buffer_size_kb, c.buffer_bw))?.static_w
        + db.get(ComponentKind::Router, &router_key(c.noc_bw))?.static_w
        + db.single(ComponentKind::Control)?.static_w;
    let n_ret = (p.wafer.reticle_rows * p.wafer.reticle_cols) as f64;
    let cores = p.working_cores_per_reticle() as f64 * n_ret;
    let phy = 4.0 * area.phy_side_gbps * db.get(ComponentKind::Phy, &phy_key(p.wafer.integration))?.static_w;
    let stack = stack_bytes_per_s(p, area.reticle_mm2) / 1e12 * db.single(ComponentKind::StackDram)?.static_w;
    let edge = p.wafer.n_mem_controllers as f64 * db.single(ComponentKind::MemCtrl)?.static_w
        + p.wafer.n_network_ifaces as f64 * db.single(ComponentKind::NetIf)?.static_w;
    Ok(cores * per_core + n_ret * (phy + stack) + edge)
}

/// Per-wafer power with every unit running at full rate.
pub fn peak_power_w(p: &DesignPoint, db: &ComponentDb, area: &AreaReport) -> Result<f64> {
    let e = energies(p, db)?;
    let c = &p.core;
    let n_ret = (p.wafer.reticle_rows * p.wafer.reticle_cols) as f64;
    let cores = p.working_cores_per_reticle() as f64 * n_ret;
    let flits_per_cycle = c.noc_bw as f64 / (8.0 * db.params.flit_bytes as f64);
    let per_core_pj_per_cycle = c.mac_num as f64 * e.mac
        + c.buffer_bw as f64 * e.sram_r
        + db.params.router_links_per_core as f64 * flits_per_cycle * e.flit;
    let core_w = cores * per_core_pj_per_cycle * CLOCK_HZ * 1e-12;
    let phy_w = n_ret * 4.0 * area.phy_side_gbps * 1e9 * e.phy * 1e-12;
    let stack_w = n_ret * stack_bytes_per_s(p, area.reticle_mm2) * 8.0 * e.stack * 1e-12;
    let off_w = p.wafer.n_mem_controllers as f64 * MEM_CTRL_BYTES_PER_S * 8.0 * e.offchip * 1e-12;
    let net_w = p.wafer.n_network_ifaces as f64 * NET_IF_BYTES_PER_S * 8.0 * e.netif * 1e-12;
    Ok(static_power_w(p, db, area)? + core_w + phy_w + stack_w + off_w + net_w)
}

/// Average and peak power for a run of `runtime_s` seconds that performed
/// `counts` actions over the whole system.
pub fn power_of(p: &DesignPoint, db: &ComponentDb, counts: &ActionCounts, runtime_s: f64) -> Result<PowerReport> {
    if !(runtime_s > 0.0) {
        return Err(DseError::InvalidParam(format!("runtime must be positive, got {runtime_s}")));
    }
    let area = area_of(p, db)?;
    let e = energies(p, db)?;
    let w = |count: u64, pj: f64| count as f64 * pj * 1e-12 / runtime_s;
    let breakdown = PowerBreakdown {
        static_w: static_power_w(p, db, &area)? * p.n_wafers as f64,
        mac_w: w(counts.mac_op, e.mac),
        sram_w: w(counts.sram_read_bit, e.sram_r) + w(counts.sram_write_bit, e.sram_w),
        noc_w: w(counts.noc_hop_flit, e.flit),
        inter_reticle_w: w(counts.inter_reticle_bit, e.phy),
        dram_w: w(counts.stack_dram_bit, e.stack) + w(counts.offchip_dram_bit, e.offchip),
        inter_wafer_w: w(counts.inter_wafer_bit, e.netif),
    };
    Ok(PowerReport { avg_power_w: breakdown.total(), peak_power_w: peak_power_w(p, db, &area)?, breakdown })
}
