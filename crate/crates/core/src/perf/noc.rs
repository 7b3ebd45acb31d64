//! Multi-node execution over a 2D mesh.
//!
//! Each op is split across nodes (instances first, then rows of the INT4
//! matrix, so no inter-node reduction is needed) and its DRAM and NoC
//! traffic is overlapped with compute when the double-buffered working set
//! fits the node SRAMs.

use serde::{Deserialize, Serialize};

use super::analytical::op_cycles;
use super::config::{Design, GemmEngine, NonlinearEngine};
use super::{ceil_div, Bound, ChannelBytes, EventCounts, GemmShape, OpShape, OpTiming, PerfError};
use crate::vlp::ARRAY_WIDTH;

const W: u64 = ARRAY_WIDTH as u64;
/// K steps buffered ahead when an op carries no quantization group.
const DEFAULT_GRANULE: u64 = 128;
const PARTIAL_BYTES: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledOp {
    pub name: String,
    pub shape: OpShape,
    /// Work handled by the busiest node.
    pub per_node: OpShape,
    pub nodes_used: u64,
    pub compute_cycles: u64,
    pub transfer_cycles: u64,
    pub fits_buffers: bool,
    /// Off-chip bandwidth that would hide all transfers behind compute.
    pub required_offchip_bytes_per_s: f64,
    pub timing: OpTiming,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub design: String,
    pub ops: Vec<ScheduledOp>,
    pub total_cycles: u64,
    pub events: EventCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub name: String,
    pub shape: String,
    pub cycles: u64,
    pub bound: Bound,
    pub utilization: f64,
}

impl Schedule {
    pub fn seconds(&self, frequency_hz: f64) -> f64 {
        self.total_cycles as f64 / frequency_hz
    }

    pub fn trace(&self) -> Vec<TraceRecord> {
        self.ops
            .iter()
            .map(|o| TraceRecord {
                name: o.name.clone(),
                shape: describe(&o.shape),
                cycles: o.timing.cycles,
                bound: o.timing.bound,
                utilization: o.timing.utilization,
            })
            .collect()
    }
}

pub fn describe(op: &OpShape) -> String {
    match op {
        OpShape::Gemm(g) => {
            let mut s = format!("gemm {}x{}x{}", g.m, g.n, g.k);
            if g.instances > 1 {
                s.push_str(&format!(" x{}", g.instances));
            }
            if let Some(q) = g.group_size {
                s.push_str(&format!(" g{q}"));
            }
            s
        }
        OpShape::Nonlinear { class, elements } => format!("{class:?} {elements}").to_lowercase(),
    }
}

/// Share of `op` given to one node, and how many nodes receive work.
pub fn partition(op: &OpShape, nodes: u64) -> (OpShape, u64) {
    match *op {
        OpShape::Gemm(g) if g.instances >= nodes => {
            let inst = ceil_div(g.instances, nodes);
            (OpShape::Gemm(GemmShape { instances: inst, ..g }), ceil_div(g.instances, inst))
        }
        OpShape::Gemm(g) => {
            let per_instance = nodes / g.instances;
            let m = ceil_div(g.m, per_instance);
            (OpShape::Gemm(GemmShape { m, instances: 1, ..g }), g.instances * ceil_div(g.m, m))
        }
        OpShape::Nonlinear { class, elements } => {
            let e = ceil_div(elements, nodes);
            (OpShape::Nonlinear { class, elements: e }, ceil_div(elements, e))
        }
    }
}

/// Double-buffered per-node working set for each SRAM.
pub fn buffer_demand(design: &Design, op: &OpShape) -> ChannelBytes {
    let node = &design.node;
    let ib = node.input_word_bits as u64;
    let wb = node.weight_word_bits as u64;
    match op {
        OpShape::Gemm(g) => {
            let granule = g.group_size.unwrap_or(DEFAULT_GRANULE).min(g.k);
            let (rows, cols) = match design.gemm {
                GemmEngine::Vlp => (node.height as u64, W),
                GemmEngine::Baseline(b) => (b.dim as u64, b.dim as u64),
            };
            ChannelBytes {
                input: 2 * ceil_div(cols * granule * ib, 8),
                weight: 2 * (ceil_div(rows * granule * wb, 8) + rows * ib / 8),
                output: 2 * rows * cols * PARTIAL_BYTES,
            }
        }
        OpShape::Nonlinear { .. } => {
            let lanes = match design.nonlinear {
                NonlinearEngine::Vlp => node.lanes(),
                NonlinearEngine::Baseline(b) => b.dim as u64,
            };
            // Inputs stream through the output side; the LUT window sits in the input SRAM.
            ChannelBytes {
                input: 2 * 2 * W * W * ib / 8,
                weight: 0,
                output: 2 * 2 * lanes * ib / 8,
            }
        }
    }
}

fn fits(design: &Design, op: &OpShape) -> bool {
    let d = buffer_demand(design, op);
    let n = &design.node;
    d.input <= n.isram_bytes && d.weight <= n.wsram_bytes && d.output <= n.osram_bytes
}

/// Core cycles to move `bytes` off chip and across the mesh.
pub fn transfer_cycles(design: &Design, bytes: &ChannelBytes) -> u64 {
    let f = design.node.frequency_hz;
    let noc = &design.noc;
    let dram = (bytes.total() as f64 * f / noc.offchip_bytes_per_s).ceil() as u64;
    if noc.nodes() == 1 {
        return dram;
    }
    // Each channel enters the mesh through one link per row.
    let per_cycle = (noc.link_bytes_per_cycle * noc.rows as u64) as f64;
    let widest = bytes.input.max(bytes.weight).max(bytes.output) as f64;
    let mesh = (widest / per_cycle * f / noc.frequency_hz).ceil() as u64;
    dram.max(mesh)
}

/// Runs `ops` in order on `design`'s mesh.
pub fn noc_schedule(design: &Design, ops: &[(String, OpShape)]) -> Result<Schedule, PerfError> {
    design.validate()?;
    let nodes = design.noc.nodes();
    let hops = if nodes == 1 { 0 } else { (design.noc.rows as u64 + design.noc.cols as u64) / 2 };
    let mut out = Vec::with_capacity(ops.len());
    let mut total = 0u64;
    let mut events = EventCounts::default();
    for (name, op) in ops {
        op.validate()?;
        let (per_node, used) = partition(op, nodes);
        let mut timing = op_cycles(design, &per_node)?;
        let compute = timing.cycles;
        let bytes = op.bytes();
        let transfer = transfer_cycles(design, &bytes);
        let fits_buffers = fits(design, &per_node);
        timing.cycles = if fits_buffers { compute.max(transfer) } else { compute + transfer };
        timing.bound = if transfer > compute { Bound::Memory } else { Bound::Compute };
        timing.mem_bytes_read = bytes.input + bytes.weight;
        timing.mem_bytes_written = bytes.output;
        timing.events = timing.events.scaled(used);
        timing.events.dram_bytes += bytes.total();
        timing.events.noc_byte_hops += bytes.total() * hops;
        total += timing.cycles;
        events += timing.events;
        out.push(ScheduledOp {
            name: name.clone(),
            shape: *op,
            per_node,
            nodes_used: used,
            compute_cycles: compute,
            transfer_cycles: transfer,
            fits_buffers,
            required_offchip_bytes_per_s: bytes.total() as f64 * design.node.frequency_hz / compute.max(1) as f64,
            timing,
        });
    }
    Ok(Schedule { design: design.id.clone(), ops: out, total_cycles: total, events })
}
