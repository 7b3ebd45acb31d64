//! Area, energy, power and carbon accounting.
//!
//! A [`CostTable`] maps component names to per-instance area, per-event
//! energy and leakage. Area is structural (instance counts derived from a
//! [`Design`]), energy multiplies [`EventCounts`] by per-event costs and adds
//! leakage over wall time.
//!
//! The magnitudes in [`CostTable::default`] are placeholders chosen to be
//! plausible for a 45 nm node at 400 MHz. They are not measured values; load
//! a table from configuration for anything beyond relative comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::{BaselineKind, Design, EventCounts, GemmEngine, NonlinearEngine};
use crate::vlp::ARRAY_WIDTH;

const W: u64 = ARRAY_WIDTH as u64;

/// Bits per row of the single output FIFO in a Mugi array.
pub const MUGI_OUTPUT_FIFO_BITS: u64 = 64;
/// Bits per row of the pipelined input registers in a Carat array.
pub const CARAT_INPUT_PIPELINE_BITS: u64 = 8 * 20;
/// Bits per row of the double-buffered output FIFOs in a Carat array.
pub const CARAT_OUTPUT_FIFO_BITS: u64 = 2 * 64;
/// FIFO bits per Mugi-L lookup table: 16 signed rows of 8 BF16 entries.
pub const MUGI_L_LUT_BITS: u64 = 2 * W * W * 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("cost table has no entry for component `{0}`")]
    MissingComponent(String),
    #[error("cost table entry `{0}` has a negative or non-finite value")]
    InvalidEntry(String),
    #[error("no SRAM size class covers {0} bytes")]
    NoSramClass(u64),
    #[error("carbon parameters must be positive")]
    InvalidCarbon,
    #[error("cannot derive efficiency from zero {0}")]
    Degenerate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentCost {
    #[serde(default)]
    pub area_mm2: f64,
    #[serde(default)]
    pub energy_pj: f64,
    #[serde(default)]
    pub leakage_mw: f64,
}

impl ComponentCost {
    pub const fn new(area_mm2: f64, energy_pj: f64, leakage_mw: f64) -> Self {
        ComponentCost { area_mm2, energy_pj, leakage_mw }
    }

    fn valid(&self) -> bool {
        [self.area_mm2, self.energy_pj, self.leakage_mw].iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

/// Costs of one SRAM macro size class. Area and leakage scale with capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SramClass {
    pub max_bytes: u64,
    pub read_pj_per_bit: f64,
    pub write_pj_per_bit: f64,
    pub area_mm2_per_kb: f64,
    pub leakage_mw_per_kb: f64,
}

/// Component names understood by the area and energy models.
pub mod component {
    pub const TC: &str = "tc";
    pub const PE: &str = "pe";
    pub const COLUMN_ADDER: &str = "column_adder";
    pub const ACCUMULATOR: &str = "accumulator";
    pub const FIFO_BIT: &str = "fifo_bit";
    pub const NONLINEAR_CONTROL: &str = "nonlinear_control";
    pub const VECTOR_LANE: &str = "vector_lane";
    pub const MAC_PE: &str = "mac_pe";
    pub const SIMD_PE: &str = "simd_pe";
    pub const FIGNA_PE: &str = "figna_pe";
    pub const TENSOR_MAC: &str = "tensor_mac";
    pub const PRECISE_LANE: &str = "precise_lane";
    pub const PWL_LANE: &str = "pwl_lane";
    pub const TAYLOR_LANE: &str = "taylor_lane";
    pub const LUT: &str = "lut";
    pub const ROUTER: &str = "router";
    pub const NOC_HOP: &str = "noc_hop";
    pub const DRAM: &str = "dram";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub components: BTreeMap<String, ComponentCost>,
    /// Sorted by `max_bytes`; an SRAM uses the first class that fits it.
    pub sram: Vec<SramClass>,
}

impl Default for CostTable {
    fn default() -> Self {
        use component::*;
        let entries = [
            (TC, ComponentCost::new(0.000_2, 0.05, 0.000_4)),
            (PE, ComponentCost::new(0.000_9, 0.03, 0.001_5)),
            (COLUMN_ADDER, ComponentCost::new(0.001_5, 0.9, 0.003)),
            (ACCUMULATOR, ComponentCost::new(0.002, 1.1, 0.004)),
            (FIFO_BIT, ComponentCost::new(0.000_005, 0.004, 0.000_01)),
            (NONLINEAR_CONTROL, ComponentCost::new(0.04, 0.0, 0.08)),
            (VECTOR_LANE, ComponentCost::new(0.012, 2.0, 0.025)),
            (MAC_PE, ComponentCost::new(0.008_5, 1.6, 0.017)),
            (SIMD_PE, ComponentCost::new(0.008_3, 1.5, 0.016_5)),
            (FIGNA_PE, ComponentCost::new(0.009_5, 1.7, 0.019)),
            (TENSOR_MAC, ComponentCost::new(0.006, 1.2, 0.012)),
            (PRECISE_LANE, ComponentCost::new(0.03, 1.5, 0.06)),
            (PWL_LANE, ComponentCost::new(0.012, 1.2, 0.024)),
            (TAYLOR_LANE, ComponentCost::new(0.015, 1.5, 0.03)),
            (LUT, ComponentCost::new(0.000_5, 0.5, 0.001)),
            (ROUTER, ComponentCost::new(0.05, 0.0, 0.1)),
            (NOC_HOP, ComponentCost::new(0.0, 0.5, 0.0)),
            (DRAM, ComponentCost::new(0.0, 160.0, 0.0)),
        ];
        CostTable {
            components: entries.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            sram: vec![
                SramClass {
                    max_bytes: 64 * 1024,
                    read_pj_per_bit: 0.08,
                    write_pj_per_bit: 0.1,
                    area_mm2_per_kb: 0.001_5,
                    leakage_mw_per_kb: 0.02,
                },
                SramClass {
                    max_bytes: 1024 * 1024,
                    read_pj_per_bit: 0.15,
                    write_pj_per_bit: 0.18,
                    area_mm2_per_kb: 0.001_3,
                    leakage_mw_per_kb: 0.018,
                },
                SramClass {
                    max_bytes: u64::MAX,
                    read_pj_per_bit: 0.3,
                    write_pj_per_bit: 0.35,
                    area_mm2_per_kb: 0.001_2,
                    leakage_mw_per_kb: 0.016,
                },
            ],
        }
    }
}

impl CostTable {
    pub fn get(&self, name: &str) -> Result<ComponentCost, CostError> {
        self.components.get(name).copied().ok_or_else(|| CostError::MissingComponent(name.to_string()))
    }

    pub fn sram_class(&self, bytes: u64) -> Result<SramClass, CostError> {
        self.sram.iter().find(|c| c.max_bytes >= bytes).copied().ok_or(CostError::NoSramClass(bytes))
    }

    pub fn validate(&self) -> Result<(), CostError> {
        for (name, c) in &self.components {
            if !c.valid() {
                return Err(CostError::InvalidEntry(name.clone()));
            }
        }
        for c in &self.sram {
            let v = [c.read_pj_per_bit, c.write_pj_per_bit, c.area_mm2_per_kb, c.leakage_mw_per_kb];
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(CostError::InvalidEntry(format!("sram<={}", c.max_bytes)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarbonParams {
    /// gCO2eq per joule.
    pub carbon_intensity: f64,
    /// gCO2eq per mm^2.
    pub carbon_per_area: f64,
}

impl CarbonParams {
    pub fn new(carbon_intensity: f64, carbon_per_area: f64) -> Result<Self, CostError> {
        let p = CarbonParams { carbon_intensity, carbon_per_area };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.carbon_intensity) && ok(self.carbon_per_area) {
            Ok(())
        } else {
            Err(CostError::InvalidCarbon)
        }
    }
}

/// Operational and embodied carbon in grams.
pub fn carbon_of(energy_j: f64, area_mm2: f64, params: &CarbonParams) -> (f64, f64) {
    (energy_j * params.carbon_intensity, area_mm2 * params.carbon_per_area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaItem {
    /// What the instances implement, e.g. `output_fifo` for FIFO bits.
    pub label: String,
    pub component: String,
    pub count: u64,
    pub area_mm2: f64,
    pub leakage_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaBreakdown {
    pub items: Vec<AreaItem>,
    /// One node.
    pub node_mm2: f64,
    /// All nodes plus routers.
    pub chip_mm2: f64,
    pub node_leakage_mw: f64,
    pub chip_leakage_mw: f64,
}

impl AreaBreakdown {
    pub fn area_of(&self, label: &str) -> f64 {
        self.items.iter().filter(|i| i.label == label).map(|i| i.area_mm2).sum()
    }

    /// Row FIFOs and pipeline registers of a VLP array.
    pub fn buffer_mm2(&self) -> f64 {
        self.area_of("output_fifo") + self.area_of("input_pipeline")
    }
}

struct Builder<'a> {
    table: &'a CostTable,
    items: Vec<AreaItem>,
}

impl Builder<'_> {
    fn add(&mut self, label: &str, component: &str, count: u64) -> Result<(), CostError> {
        let c = self.table.get(component)?;
        self.items.push(AreaItem {
            label: label.to_string(),
            component: component.to_string(),
            count,
            area_mm2: c.area_mm2 * count as f64,
            leakage_mw: c.leakage_mw * count as f64,
        });
        Ok(())
    }

    fn sram(&mut self, label: &str, bytes: u64) -> Result<(), CostError> {
        let c = self.table.sram_class(bytes)?;
        let kb = bytes as f64 / 1024.0;
        self.items.push(AreaItem {
            label: label.to_string(),
            component: format!("sram<={}", c.max_bytes),
            count: bytes,
            area_mm2: c.area_mm2_per_kb * kb,
            leakage_mw: c.leakage_mw_per_kb * kb,
        });
        Ok(())
    }
}

fn lane_component(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::PreciseVector => component::PRECISE_LANE,
        BaselineKind::PwlVector => component::PWL_LANE,
        BaselineKind::TaylorVector => component::TAYLOR_LANE,
        _ => component::LUT,
    }
}

fn mac_component(kind: BaselineKind) -> &'static str {
    match kind {
        BaselineKind::Systolic => component::MAC_PE,
        BaselineKind::Simd => component::SIMD_PE,
        BaselineKind::SystolicFigna | BaselineKind::SimdFigna => component::FIGNA_PE,
        _ => component::TENSOR_MAC,
    }
}

fn vlp_array(b: &mut Builder, h: u64, carat: bool) -> Result<(), CostError> {
    use component::*;
    b.add("temporal_converters", TC, h)?;
    b.add("pe_array", PE, h * W)?;
    if carat {
        b.add("input_pipeline", FIFO_BIT, h * CARAT_INPUT_PIPELINE_BITS)?;
        b.add("output_fifo", FIFO_BIT, h * CARAT_OUTPUT_FIFO_BITS)?;
    } else {
        b.add("output_fifo", FIFO_BIT, h * MUGI_OUTPUT_FIFO_BITS)?;
    }
    b.add("column_adders", COLUMN_ADDER, W)?;
    b.add("output_accumulators", ACCUMULATOR, W)
}

/// Structural area of `design` under `table`.
pub fn area_of(design: &Design, table: &CostTable) -> Result<AreaBreakdown, CostError> {
    use component::*;
    let node = &design.node;
    let mut b = Builder { table, items: Vec::new() };
    match design.gemm {
        GemmEngine::Vlp => vlp_array(&mut b, node.height as u64, false)?,
        GemmEngine::Baseline(g) => {
            let d = g.dim as u64;
            match g.kind {
                BaselineKind::Carat => vlp_array(&mut b, d, true)?,
                BaselineKind::TensorCore => {
                    b.add("pe_array", TENSOR_MAC, 8 * 16 * 16)?;
                    b.add("output_accumulators", ACCUMULATOR, 8 * 16)?;
                }
                kind => {
                    b.add("pe_array", mac_component(kind), d * d)?;
                    b.add("output_accumulators", ACCUMULATOR, d)?;
                }
            }
        }
    }
    match design.nonlinear {
        NonlinearEngine::Vlp => b.add("nonlinear_control", NONLINEAR_CONTROL, 1)?,
        NonlinearEngine::Baseline(n) if n.kind == BaselineKind::MugiL => {
            b.add("lut_ports", LUT, n.dim as u64)?;
            b.add("lut_storage", FIFO_BIT, n.dim as u64 * MUGI_L_LUT_BITS)?;
        }
        NonlinearEngine::Baseline(n) => b.add("nonlinear_unit", lane_component(n.kind), n.dim as u64)?,
    }
    b.add("vector_unit", VECTOR_LANE, node.vector_lanes as u64)?;
    b.sram("isram", node.isram_bytes)?;
    b.sram("wsram", node.wsram_bytes)?;
    b.sram("osram", node.osram_bytes)?;

    let node_mm2: f64 = b.items.iter().map(|i| i.area_mm2).sum();
    let node_leak: f64 = b.items.iter().map(|i| i.leakage_mw).sum();
    let nodes = design.noc.nodes();
    let (router_area, router_leak) = if nodes > 1 {
        let r = table.get(ROUTER)?;
        (r.area_mm2 * nodes as f64, r.leakage_mw * nodes as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(AreaBreakdown {
        items: b.items,
        node_mm2,
        chip_mm2: node_mm2 * nodes as f64 + router_area,
        node_leakage_mw: node_leak,
        chip_leakage_mw: node_leak * nodes as f64 + router_leak,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub dynamic_j: f64,
    pub leakage_j: f64,
    pub offchip_j: f64,
}

impl EnergyBreakdown {
    /// Dynamic plus leakage energy of the chip itself.
    pub fn onchip_j(&self) -> f64 {
        self.dynamic_j + self.leakage_j
    }

    pub fn total_j(&self) -> f64 {
        self.onchip_j() + self.offchip_j
    }
}

/// Energy of `events` executed by `design` over `seconds` of wall time.
pub fn energy_of(
    design: &Design,
    events: &EventCounts,
    seconds: f64,
    table: &CostTable,
) -> Result<EnergyBreakdown, CostError> {
    use component::*;
    let area = area_of(design, table)?;
    let pj = |name: &str| table.get(name).map(|c| c.energy_pj);
    let mac = match design.gemm {
        GemmEngine::Baseline(g) if g.kind != BaselineKind::Carat => mac_component(g.kind),
        _ => MAC_PE,
    };
    let nl_ops = match design.nonlinear {
        NonlinearEngine::Baseline(n) => lane_component(n.kind),
        NonlinearEngine::Vlp => PRECISE_LANE,
    };
    let counted = |n: u64, name: &str| -> Result<f64, CostError> { if n == 0 { Ok(0.0) } else { Ok(n as f64 * pj(name)?) } };

    // Every SRAM access is charged at the class of the largest node buffer.
    let node = &design.node;
    let sram = table.sram_class(node.isram_bytes.max(node.wsram_bytes).max(node.osram_bytes))?;
    let dynamic_pj = counted(events.tc_spikes, TC)?
        + counted(events.pe_subscriptions, PE)?
        + counted(events.column_accumulations, COLUMN_ADDER)?
        + counted(events.output_accumulations, ACCUMULATOR)?
        + counted(events.mac_ops, mac)?
        + counted(events.vector_ops, VECTOR_LANE)?
        + counted(events.nonlinear_ops, nl_ops)?
        + counted(events.lut_lookups, LUT)?
        + counted(events.fifo_bits, FIFO_BIT)?
        + counted(events.noc_byte_hops, NOC_HOP)?
        + events.sram_read_bits as f64 * sram.read_pj_per_bit
        + events.sram_write_bits as f64 * sram.write_pj_per_bit;
    Ok(EnergyBreakdown {
        dynamic_j: dynamic_pj * 1e-12,
        leakage_j: area.chip_leakage_mw * 1e-3 * seconds,
        offchip_j: counted(events.dram_bytes, DRAM)? * 1e-12,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub area_mm2: f64,
    /// On-chip energy for the measured tokens.
    pub energy_j: f64,
    pub offchip_energy_j: f64,
    pub avg_power_w: f64,
    pub throughput: f64,
    /// Tokens/s per microjoule spent per token.
    pub energy_eff: f64,
    /// Tokens/s per watt.
    pub power_eff: f64,
    pub operational_carbon_g: f64,
    pub embodied_carbon_g: f64,
}

impl CostReport {
    pub fn new(
        area_mm2: f64,
        energy: EnergyBreakdown,
        seconds: f64,
        tokens: f64,
        carbon: &CarbonParams,
    ) -> Result<Self, CostError> {
        if seconds <= 0.0 {
            return Err(CostError::Degenerate("runtime"));
        }
        if tokens <= 0.0 {
            return Err(CostError::Degenerate("tokens"));
        }
        let energy_j = energy.onchip_j();
        if energy_j <= 0.0 {
            return Err(CostError::Degenerate("energy"));
        }
        let throughput = tokens / seconds;
        let avg_power_w = energy_j / seconds;
        let uj_per_token = energy_j * 1e6 / tokens;
        let (operational, embodied) = carbon_of(energy_j, area_mm2, carbon);
        Ok(CostReport {
            area_mm2,
            energy_j,
            offchip_energy_j: energy.offchip_j,
            avg_power_w,
            throughput,
            energy_eff: throughput / uj_per_token,
            power_eff: throughput / avg_power_w,
            operational_carbon_g: operational,
            embodied_carbon_g: embodied,
        })
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::perf::config::{BaselineConfig, NocConfig};
    use proptest::prelude::*;

    fn events() -> impl Strategy<Value = EventCounts> {
        prop::collection::vec(0u64..1_000_000, 13).prop_map(|v| EventCounts {
            tc_spikes: v[0],
            pe_subscriptions: v[1],
            column_accumulations: v[2],
            output_accumulations: v[3],
            mac_ops: v[4],
            vector_ops: v[5],
            nonlinear_ops: v[6],
            lut_lookups: v[7],
            fifo_bits: v[8],
            sram_read_bits: v[9],
            sram_write_bits: v[10],
            noc_byte_hops: v[11],
            dram_bytes: v[12],
        })
    }

    proptest! {
        #[test]
        fn area_items_sum_to_node(h in prop::sample::select(vec![32u32, 64, 128, 256]), carat in any::<bool>(), mesh in 1u32..5) {
            let t = CostTable::default();
            let d = if carat {
                Design::baseline("c", BaselineConfig::new(BaselineKind::Carat, h), BaselineConfig::new(BaselineKind::PwlVector, 16))
            } else {
                Design::mugi("m", h)
            }
            .with_noc(NocConfig::mesh(mesh, mesh));
            let a = area_of(&d, &t).unwrap();
            let sum: f64 = a.items.iter().map(|i| i.area_mm2).sum();
            prop_assert!((sum - a.node_mm2).abs() <= 1e-12 * a.node_mm2);
            prop_assert!(a.chip_mm2 >= a.node_mm2 * (mesh * mesh) as f64);
        }

        #[test]
        fn energy_ignores_trace_order(trace in prop::collection::vec(events(), 1..8), seconds in 0.0f64..1.0) {
            let t = CostTable::default();
            let d = Design::mugi("m", 128);
            let forward = trace.iter().fold(EventCounts::default(), |a, &e| a + e);
            let backward = trace.iter().rev().fold(EventCounts::default(), |a, &e| a + e);
            prop_assert_eq!(energy_of(&d, &forward, seconds, &t).unwrap(), energy_of(&d, &backward, seconds, &t).unwrap());
        }
    }
}
