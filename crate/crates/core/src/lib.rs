//! Bit-faithful functional model and cycle/cost simulator of a
//! value-level-parallel (VLP) accelerator for LLM inference.
//!
//! * [`numeric`]: BF16 / INT4 fields, mantissa rounding, exponent scan.
//! * [`lut`]: value-centric tables and per-mapping sliding windows.
//! * [`vlp`]: temporal coding, nonlinear approximation, softmax, BF16xINT4 GEMM.
//! * [`perf`]: closed-form cycle model plus an event-driven cross-check.
//! * [`cost`]: area, energy and carbon accounting.
//! * [`workload`]: LLM operation graphs.
//! * [`experiment`]: configs, sweeps, reports and error curves.

pub mod numeric;
pub mod lut;
pub mod vlp;
pub mod perf;
pub mod cost;
pub mod workload;
pub mod experiment;

pub use numeric::{Bf16, Int4};
