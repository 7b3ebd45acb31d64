//! Cycle-level performance model.
//!
//! [`analytical`] holds the closed-form cycle counts used for sweeps;
//! [`event`] replays the same hardware as a discrete-event simulation and is
//! expected to agree with the closed forms exactly. [`noc`] distributes an
//! operation graph over a mesh of nodes and overlaps compute with transfers.

pub mod analytical;
pub mod config;
pub mod event;
pub mod noc;

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use analytical::{baseline_cycles, gemm_cycles, nonlinear_cycles, op_cycles};
pub use config::{ArrayConfig, BaselineConfig, BaselineKind, Design, GemmEngine, NocConfig, NonlinearEngine};
pub use noc::{noc_schedule, Schedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerfError {
    #[error("{kind:?} cannot execute {op}")]
    Unsupported { kind: BaselineKind, op: &'static str },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid op shape: {0}")]
    InvalidShape(String),
}

/// `ceil(a / b)` for positive `b`.
#[inline]
pub(crate) fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

/// `instances` independent GEMMs of `M x K` (INT4 weights or KV cache) times
/// `K x N` (BF16 activations). `group_size` is the quantization group along K;
/// `None` means no dequantization pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub instances: u64,
    pub group_size: Option<u64>,
}

impl GemmShape {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        GemmShape { m, n, k, instances: 1, group_size: None }
    }

    pub fn with_instances(self, instances: u64) -> Self {
        GemmShape { instances, ..self }
    }

    pub fn with_group(self, group_size: u64) -> Self {
        GemmShape { group_size: Some(group_size), ..self }
    }

    pub fn macs(&self) -> u64 {
        self.instances * self.m * self.n * self.k
    }

    pub fn groups(&self) -> u64 {
        self.group_size.map_or(0, |g| ceil_div(self.k, g))
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        if self.m == 0 || self.n == 0 || self.k == 0 || self.instances == 0 {
            return Err(PerfError::InvalidShape(format!("zero dimension in {self:?}")));
        }
        if self.group_size == Some(0) {
            return Err(PerfError::InvalidShape("quantization group of 0".into()));
        }
        Ok(())
    }

    /// DRAM traffic: INT4 matrix plus BF16 scales, BF16 activations in, BF16 results out.
    pub fn bytes(&self) -> ChannelBytes {
        let weight = self.instances * (ceil_div(self.m * self.k, 2) + self.m * self.groups() * 2);
        ChannelBytes {
            input: self.instances * self.k * self.n * 2,
            weight,
            output: self.instances * self.m * self.n * 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearClass {
    /// exp plus sum and normalization.
    Softmax,
    /// Element-wise SiLU / GELU.
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum OpShape {
    Gemm(GemmShape),
    Nonlinear { class: NonlinearClass, elements: u64 },
}

impl OpShape {
    pub fn bytes(&self) -> ChannelBytes {
        match self {
            OpShape::Gemm(g) => g.bytes(),
            OpShape::Nonlinear { elements, .. } => ChannelBytes { input: elements * 2, weight: 0, output: elements * 2 },
        }
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        match self {
            OpShape::Gemm(g) => g.validate(),
            OpShape::Nonlinear { elements: 0, .. } => Err(PerfError::InvalidShape("nonlinear op with no elements".into())),
            OpShape::Nonlinear { .. } => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelBytes {
    pub input: u64,
    pub weight: u64,
    pub output: u64,
}

impl ChannelBytes {
    pub fn total(&self) -> u64 {
        self.input + self.weight + self.output
    }
}

/// Activity counts that energy accounting multiplies by per-event costs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Temporal-converter spikes (one per magnitude per window).
    pub tc_spikes: u64,
    /// PE latches on a spike.
    pub pe_subscriptions: u64,
    /// Column accumulator adds in a VLP array (one per column per window cycle).
    pub column_accumulations: u64,
    /// Partial-sum / output accumulator updates.
    pub output_accumulations: u64,
    /// Multiply-accumulates in conventional PEs.
    pub mac_ops: u64,
    /// Vector-unit operations (max subtraction, scaling, dequantization).
    pub vector_ops: u64,
    /// Stage operations inside vector nonlinear units (PWL, Taylor, iterative exp).
    pub nonlinear_ops: u64,
    /// Lookups in dedicated LUTs.
    pub lut_lookups: u64,
    pub fifo_bits: u64,
    pub sram_read_bits: u64,
    pub sram_write_bits: u64,
    pub noc_byte_hops: u64,
    pub dram_bytes: u64,
}

impl Add for EventCounts {
    type Output = EventCounts;
    fn add(mut self, o: EventCounts) -> EventCounts {
        self += o;
        self
    }
}

impl AddAssign for EventCounts {
    fn add_assign(&mut self, o: EventCounts) {
        self.tc_spikes += o.tc_spikes;
        self.pe_subscriptions += o.pe_subscriptions;
        self.column_accumulations += o.column_accumulations;
        self.output_accumulations += o.output_accumulations;
        self.mac_ops += o.mac_ops;
        self.vector_ops += o.vector_ops;
        self.nonlinear_ops += o.nonlinear_ops;
        self.lut_lookups += o.lut_lookups;
        self.fifo_bits += o.fifo_bits;
        self.sram_read_bits += o.sram_read_bits;
        self.sram_write_bits += o.sram_write_bits;
        self.noc_byte_hops += o.noc_byte_hops;
        self.dram_bytes += o.dram_bytes;
    }
}

impl EventCounts {
    pub fn scaled(mut self, k: u64) -> EventCounts {
        let fields = [
            &mut self.tc_spikes,
            &mut self.pe_subscriptions,
            &mut self.column_accumulations,
            &mut self.output_accumulations,
            &mut self.mac_ops,
            &mut self.vector_ops,
            &mut self.nonlinear_ops,
            &mut self.lut_lookups,
            &mut self.fifo_bits,
            &mut self.sram_read_bits,
            &mut self.sram_write_bits,
            &mut self.noc_byte_hops,
            &mut self.dram_bytes,
        ];
        for f in fields {
            *f *= k;
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Compute,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpTiming {
    /// Wall-clock cycles for the op.
    pub cycles: u64,
    /// Cycles in which the main compute engine holds work.
    pub busy_cycles: u64,
    /// Sum over lanes of cycles doing useful work.
    pub busy_lane_cycles: u64,
    pub total_lanes: u64,
    /// Busy lane-cycles over lanes available during busy cycles.
    pub utilization: f64,
    /// Share of the column (N-side) lanes that carry real data.
    pub column_utilization: f64,
    pub mem_bytes_read: u64,
    pub mem_bytes_written: u64,
    pub bound: Bound,
    pub events: EventCounts,
}

impl OpTiming {
    pub(crate) fn compute(
        cycles: u64,
        busy_cycles: u64,
        busy_lane_cycles: u64,
        total_lanes: u64,
        column_utilization: f64,
        events: EventCounts,
    ) -> Self {
        let utilization = if busy_cycles == 0 {
            0.0
        } else {
            busy_lane_cycles as f64 / (busy_cycles as f64 * total_lanes as f64)
        };
        OpTiming {
            cycles,
            busy_cycles,
            busy_lane_cycles,
            total_lanes,
            utilization,
            column_utilization,
            mem_bytes_read: 0,
            mem_bytes_written: 0,
            bound: Bound::Compute,
            events,
        }
    }

    /// Cycle and event fields that the closed form and the event simulation
    /// must agree on.
    pub fn signature(&self) -> (u64, u64, u64, u64, EventCounts) {
        (self.cycles, self.busy_cycles, self.busy_lane_cycles, self.total_lanes, self.events)
    }
}
