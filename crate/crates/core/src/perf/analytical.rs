//! Closed-form cycle and event counts.
//!
//! VLP GEMM is output-stationary: a tile covers `H` rows of the INT4 matrix
//! and 8 columns of activations, and every K step costs one 8-cycle window.
//! Dequantization of a finished tile runs on the vector unit and overlaps
//! with the next tile, so tiles form a two-stage pipeline.

use super::config::{ArrayConfig, BaselineConfig, BaselineKind, Design, GemmEngine, NonlinearEngine};
use super::{ceil_div, EventCounts, GemmShape, NonlinearClass, OpShape, OpTiming, PerfError};
use crate::vlp::ARRAY_WIDTH;

const W: u64 = ARRAY_WIDTH as u64;
/// Cycles of one temporal window.
pub const WINDOW: u64 = 8;
/// Mantissa and exponent phases that follow the load of a value-reuse mapping.
pub const NONLINEAR_PHASES: u64 = 2;
/// Extra cycles before the last column of a window finishes.
pub const COLUMN_STAGGER: u64 = W - 1;
/// Per-entry bits of the pipelined row registers in a Carat array.
pub const CARAT_ROW_STAGE_BITS: u64 = 20;
pub(crate) const PARTIAL_BITS: u64 = 32;

/// Latency from the last window of a tile to its results leaving the array.
pub fn gemm_drain(node: &ArrayConfig) -> u64 {
    COLUMN_STAGGER + node.pipeline_depth
}

/// Latency of the last nonlinear mapping after its load window.
pub fn nonlinear_depth(node: &ArrayConfig) -> u64 {
    NONLINEAR_PHASES * WINDOW + COLUMN_STAGGER + node.pipeline_depth
}

/// Vector-unit cycles to dequantize one finished tile.
pub fn dequant_cycles_per_tile(height: u64, node: &ArrayConfig, groups: u64) -> u64 {
    groups * ceil_div(height * W, node.vector_lanes as u64)
}

/// GEMM on the VLP array of `cfg`.
pub fn gemm_cycles(cfg: &ArrayConfig, shape: &GemmShape) -> Result<OpTiming, PerfError> {
    cfg.validate()?;
    shape.validate()?;
    Ok(vlp_gemm(cfg.height as u64, cfg, shape, false))
}

/// Softmax or activation over `elements` values on the VLP array of `cfg`.
pub fn nonlinear_cycles(cfg: &ArrayConfig, elements: u64, class: NonlinearClass) -> Result<OpTiming, PerfError> {
    cfg.validate()?;
    OpShape::Nonlinear { class, elements }.validate()?;
    let core = vlp_nonlinear(cfg.height as u64, cfg, elements, class);
    Ok(wrap_softmax(core, cfg, elements, class))
}

/// An op on a comparison engine. `node` supplies the vector unit, word
/// widths and pipeline depth shared by all designs.
pub fn baseline_cycles(cfg: &BaselineConfig, node: &ArrayConfig, op: &OpShape) -> Result<OpTiming, PerfError> {
    cfg.validate()?;
    node.validate()?;
    op.validate()?;
    let d = cfg.dim as u64;
    match *op {
        OpShape::Gemm(ref s) => match cfg.kind {
            BaselineKind::Systolic | BaselineKind::Simd | BaselineKind::SystolicFigna | BaselineKind::SimdFigna => {
                Ok(array_gemm(cfg.kind, d, node, s))
            }
            BaselineKind::TensorCore => Ok(tensor_core_gemm(cfg.fill_cycles, node, s)),
            BaselineKind::Carat => Ok(vlp_gemm(d, node, s, true)),
            kind => Err(PerfError::Unsupported { kind, op: "GEMM" }),
        },
        OpShape::Nonlinear { class, elements } => {
            if !cfg.kind.runs_nonlinear() {
                return Err(PerfError::Unsupported { kind: cfg.kind, op: "nonlinear ops" });
            }
            let core = vector_nonlinear(cfg, node, elements);
            Ok(wrap_softmax(core, node, elements, class))
        }
    }
}

/// Single-node timing of `op` on `design`, with DRAM traffic attached.
pub fn op_cycles(design: &Design, op: &OpShape) -> Result<OpTiming, PerfError> {
    let mut t = match (op, design.gemm, design.nonlinear) {
        (OpShape::Gemm(s), GemmEngine::Vlp, _) => gemm_cycles(&design.node, s)?,
        (OpShape::Gemm(_), GemmEngine::Baseline(b), _) => baseline_cycles(&b, &design.node, op)?,
        (OpShape::Nonlinear { class, elements }, _, NonlinearEngine::Vlp) => {
            nonlinear_cycles(&design.node, *elements, *class)?
        }
        (OpShape::Nonlinear { .. }, _, NonlinearEngine::Baseline(b)) => baseline_cycles(&b, &design.node, op)?,
    };
    let bytes = op.bytes();
    t.mem_bytes_read = bytes.input + bytes.weight;
    t.mem_bytes_written = bytes.output;
    Ok(t)
}

pub(crate) fn vlp_gemm(h: u64, node: &ArrayConfig, s: &GemmShape, carat: bool) -> OpTiming {
    let (m, n, k, inst) = (s.m, s.n, s.k, s.instances);
    let row_tiles = ceil_div(m, h);
    let col_tiles = ceil_div(n, W);
    let tiles = inst * row_tiles * col_tiles;
    let array = WINDOW * k + gemm_drain(node);
    let groups = s.groups();
    let vector = dequant_cycles_per_tile(h, node, groups);
    let cycles = if vector == 0 { tiles * array } else { array + vector + (tiles - 1) * array.max(vector) };

    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;
    let mut ev = EventCounts {
        tc_spikes: inst * m * k * col_tiles,
        pe_subscriptions: inst * m * n * k,
        column_accumulations: inst * row_tiles * n * k * WINDOW,
        output_accumulations: inst * m * n * k,
        vector_ops: inst * m * n * groups,
        fifo_bits: inst * m * n * groups.max(1) * PARTIAL_BITS,
        sram_read_bits: inst * (m * k * wb * col_tiles + k * n * ib * row_tiles + m * groups * ib * col_tiles),
        sram_write_bits: inst * m * n * ib,
        ..Default::default()
    };
    if carat {
        ev.fifo_bits += inst * m * k * col_tiles * W * CARAT_ROW_STAGE_BITS;
    }
    OpTiming::compute(
        cycles,
        tiles * WINDOW * k,
        inst * m * n * WINDOW * k,
        h * W,
        n as f64 / (col_tiles * W) as f64,
        ev,
    )
}

/// Exp / activation mapping on the VLP array, without the softmax passes.
fn vlp_nonlinear(h: u64, node: &ArrayConfig, e: u64, class: NonlinearClass) -> OpTiming {
    let per_map = h * W;
    let maps = ceil_div(e, per_map);
    let last = e - (maps - 1) * per_map;
    let active_cols = (maps - 1) * W + last.min(W);
    // Exp tables cover one sign; activations stream both.
    let lut_rows = match class {
        NonlinearClass::Softmax => W,
        NonlinearClass::Activation => 2 * W,
    };
    let ib = node.input_word_bits as u64;
    let ev = EventCounts {
        tc_spikes: 2 * e,
        pe_subscriptions: 2 * e,
        sram_read_bits: maps * lut_rows * W * ib + e * ib,
        sram_write_bits: e * ib,
        ..Default::default()
    };
    OpTiming::compute(
        WINDOW * maps + nonlinear_depth(node),
        WINDOW * maps,
        WINDOW * e,
        per_map,
        active_cols as f64 / (maps * W) as f64,
        ev,
    )
}

/// Adds max subtraction before, and the sum store and normalization after,
/// the exp pass of a softmax.
pub(crate) fn wrap_softmax(mut t: OpTiming, node: &ArrayConfig, e: u64, class: NonlinearClass) -> OpTiming {
    if class == NonlinearClass::Softmax {
        let pass = ceil_div(e, node.vector_lanes as u64);
        let ib = node.input_word_bits as u64;
        t.cycles += 2 * pass + 1;
        t.events.vector_ops += 2 * e;
        t.events.output_accumulations += e;
        t.events.sram_read_bits += 2 * e * ib;
        t.events.sram_write_bits += e * ib + PARTIAL_BITS;
    }
    t
}

fn vector_nonlinear(cfg: &BaselineConfig, node: &ArrayConfig, e: u64) -> OpTiming {
    let d = cfg.dim as u64;
    let groups = ceil_div(e, d);
    let c = cfg.per_element_cycles;
    let ib = node.input_word_bits as u64;
    let mut ev = EventCounts { sram_read_bits: e * ib, sram_write_bits: e * ib, ..Default::default() };
    let col_util = e as f64 / (groups * d) as f64;
    match cfg.kind {
        BaselineKind::PreciseVector => {
            ev.nonlinear_ops = e * c;
            OpTiming::compute(groups * c, groups * c, e * c, d, col_util, ev)
        }
        BaselineKind::PwlVector | BaselineKind::TaylorVector => {
            ev.nonlinear_ops = e * c;
            OpTiming::compute(groups - 1 + c, groups, e, d, col_util, ev)
        }
        BaselineKind::MugiL => {
            ev.lut_lookups = e;
            OpTiming::compute(groups + node.pipeline_depth, groups, e, d, col_util, ev)
        }
        _ => unreachable!("checked by caller"),
    }
}

/// Fill and drain cycles around the M stream of one systolic / SIMD tile.
pub fn array_fill_drain(kind: BaselineKind, dim: u64) -> (u64, u64) {
    match kind {
        BaselineKind::Systolic | BaselineKind::SystolicFigna => (dim, dim),
        _ => (dim, adder_tree_depth(dim) + 1),
    }
}

pub fn adder_tree_depth(dim: u64) -> u64 {
    64 - (dim.max(1) - 1).leading_zeros() as u64
}

/// `dim x dim` array holding a K x N activation block; the INT4 matrix
/// streams through one row per cycle.
fn array_gemm(kind: BaselineKind, d: u64, node: &ArrayConfig, s: &GemmShape) -> OpTiming {
    let (m, n, k, inst) = (s.m, s.n, s.k, s.instances);
    let k_tiles = ceil_div(k, d);
    let n_tiles = ceil_div(n, d);
    let tiles = inst * k_tiles * n_tiles;
    let (fill, drain) = array_fill_drain(kind, d);
    let groups = s.groups();
    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;
    let vector_ops = if kind.is_figna() { inst * m * n * groups } else { inst * m * k * n_tiles };
    let ev = EventCounts {
        mac_ops: s.macs(),
        output_accumulations: inst * m * n * k_tiles,
        vector_ops,
        sram_read_bits: inst
            * (k * n * ib + m * k * wb * n_tiles + m * groups * ib * n_tiles + m * n * PARTIAL_BITS * (k_tiles - 1)),
        sram_write_bits: inst * m * n * (PARTIAL_BITS * (k_tiles - 1) + ib),
        ..Default::default()
    };
    OpTiming::compute(
        tiles * (m + fill + drain),
        tiles * m,
        s.macs(),
        d * d,
        n as f64 / (n_tiles * d) as f64,
        ev,
    )
}

pub const TC_M: u64 = 8;
pub const TC_N: u64 = 16;
pub const TC_K: u64 = 16;

fn tensor_core_gemm(fill: u64, node: &ArrayConfig, s: &GemmShape) -> OpTiming {
    let (m, n, k, inst) = (s.m, s.n, s.k, s.instances);
    let (mb, nb, kb) = (ceil_div(m, TC_M), ceil_div(n, TC_N), ceil_div(k, TC_K));
    let blocks = inst * mb * nb * kb;
    let groups = s.groups();
    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;
    let ev = EventCounts {
        mac_ops: s.macs(),
        output_accumulations: inst * m * n * kb,
        vector_ops: inst * m * k * nb,
        sram_read_bits: inst * (k * n * ib * mb + m * k * wb * nb + m * groups * ib * nb),
        sram_write_bits: inst * m * n * ib,
        ..Default::default()
    };
    OpTiming::compute(blocks + fill, blocks, s.macs(), TC_M * TC_N * TC_K, n as f64 / (nb * TC_N) as f64, ev)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::perf::config::NocConfig;
    use crate::perf::noc_schedule;
    use proptest::prelude::*;

    fn gemm_shape() -> impl Strategy<Value = GemmShape> {
        (1u64..300, 1u64..40, 1u64..300, 1u64..4, prop::option::of(1u64..64)).prop_map(|(m, n, k, inst, g)| {
            let s = GemmShape::new(m, n, k).with_instances(inst);
            match g {
                Some(g) => s.with_group(g),
                None => s,
            }
        })
    }

    fn design(pick: usize, h: u32) -> Design {
        let nl = BaselineConfig::new(BaselineKind::PreciseVector, 16);
        match pick {
            0 => Design::mugi("m", h),
            1 => Design::baseline("c", BaselineConfig::new(BaselineKind::Carat, h), BaselineConfig::new(BaselineKind::PwlVector, 16)),
            2 => Design::baseline("sa", BaselineConfig::systolic(h / 8), nl),
            3 => Design::baseline("sd", BaselineConfig::simd(h / 8), nl),
            _ => Design::baseline("tc", BaselineConfig::tensor_core(), nl),
        }
    }

    proptest! {
        #[test]
        fn utilization_is_a_fraction(s in gemm_shape(), pick in 0usize..5, h in prop::sample::select(vec![32u32, 64, 128, 256])) {
            let t = op_cycles(&design(pick, h), &OpShape::Gemm(s)).unwrap();
            prop_assert!(t.utilization > 0.0 && t.utilization <= 1.0);
            prop_assert!(t.column_utilization > 0.0 && t.column_utilization <= 1.0);
            prop_assert!(t.busy_cycles <= t.cycles);
        }

        #[test]
        fn taller_arrays_never_add_tiles(s in gemm_shape(), h in prop::sample::select(vec![32u32, 64, 128])) {
            // without dequantization every tile costs the same fixed latency
            let s = GemmShape { group_size: None, ..s };
            let cycles = |h: u32| gemm_cycles(&ArrayConfig::with_height(h), &s).unwrap().cycles;
            let per_tile = WINDOW * s.k + gemm_drain(&ArrayConfig::with_height(h));
            prop_assert_eq!(cycles(h) % per_tile, 0);
            prop_assert!(cycles(2 * h) <= cycles(h));
        }

        #[test]
        fn nonlinear_throughput_scales_with_height(n in 1u64..50, h in prop::sample::select(vec![32u32, 64, 128])) {
            let e = n * 2 * h as u64 * WINDOW;
            let fixed = nonlinear_depth(&ArrayConfig::with_height(h));
            let steady = |h: u32| nonlinear_cycles(&ArrayConfig::with_height(h), e, NonlinearClass::Activation).unwrap().cycles - fixed;
            prop_assert_eq!(steady(h), 2 * steady(2 * h));
        }

        #[test]
        fn double_buffering_law(s in gemm_shape(), sram_kb in 1u64..128, gbps in 1f64..512.0, mesh in 1u32..4) {
            let mut d = Design::mugi("m", 64).with_noc(NocConfig::mesh(mesh, mesh));
            d.node.wsram_bytes = sram_kb * 1024;
            d.noc.offchip_bytes_per_s = gbps * 1e9;
            let sched = noc_schedule(&d, &[("op".to_string(), OpShape::Gemm(s))]).unwrap();
            let o = &sched.ops[0];
            let want = if o.fits_buffers { o.compute_cycles.max(o.transfer_cycles) } else { o.compute_cycles + o.transfer_cycles };
            prop_assert_eq!(o.timing.cycles, want);
        }
    }
}
