//! Discrete-event replay of the engines in [`super::analytical`].
//!
//! Every spike, latch, accumulator add, MAC and pipeline hand-off is an
//! event on a time-ordered queue; wall time is the timestamp of the last
//! completion. Data values only steer when a spike fires inside its window,
//! so a fixed pseudo-random magnitude pattern stands in for real operands.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::analytical::{
    array_fill_drain, dequant_cycles_per_tile, gemm_drain, CARAT_ROW_STAGE_BITS, COLUMN_STAGGER, PARTIAL_BITS, TC_K,
    TC_M, TC_N, WINDOW,
};
use super::config::{ArrayConfig, BaselineConfig, BaselineKind, Design, GemmEngine, NonlinearEngine};
use super::{ceil_div, EventCounts, GemmShape, NonlinearClass, OpShape, OpTiming, PerfError};
use crate::vlp::ARRAY_WIDTH;

const W: u64 = ARRAY_WIDTH as u64;

/// Time-ordered queue; ties pop in insertion order.
struct Queue<E: Ord> {
    heap: BinaryHeap<Reverse<(u64, u64, E)>>,
    seq: u64,
    last: u64,
}

impl<E: Ord> Queue<E> {
    fn new() -> Self {
        Queue { heap: BinaryHeap::new(), seq: 0, last: 0 }
    }

    fn push(&mut self, time: u64, ev: E) {
        debug_assert!(time >= self.last, "event scheduled in the past");
        self.heap.push(Reverse((time, self.seq, ev)));
        self.seq += 1;
    }

    fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((t, _, e)) = self.heap.pop()?;
        self.last = t;
        Some((t, e))
    }
}

fn magnitude(row: u64, k: u64) -> u64 {
    (row * 5 + k * 3 + 1) % WINDOW
}

/// Geometry of tile `t` when tiles are enumerated instance-major, then by
/// row tile, then by column tile.
fn tile_extent(t: u64, m: u64, n: u64, rh: u64, cw: u64) -> (u64, u64, u64, u64) {
    let rt = ceil_div(m, rh);
    let ct = ceil_div(n, cw);
    let within = t % (rt * ct);
    let (ri, ci) = (within / ct, within % ct);
    (ri, ci, (m - ri * rh).min(rh), (n - ci * cw).min(cw))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GemmEv {
    TileStart(u64),
    Spike(u64),
    Subscribe,
    ColumnAdd,
    TileDrained(u64),
    VectorDone,
}

/// Event replay of a GEMM on a VLP array of `h` rows.
pub fn simulate_vlp_gemm(h: u64, node: &ArrayConfig, s: &GemmShape, carat: bool) -> Result<OpTiming, PerfError> {
    node.validate()?;
    s.validate()?;
    if h == 0 {
        return Err(PerfError::InvalidConfig("array height must be positive".into()));
    }
    let (m, n, k) = (s.m, s.n, s.k);
    let tiles = s.instances * ceil_div(m, h) * ceil_div(n, W);
    let groups = s.groups();
    let dequant = dequant_cycles_per_tile(h, node, groups);
    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;

    let mut q = Queue::new();
    let mut ev = EventCounts::default();
    let (mut busy, mut lane_busy, mut cols_used, mut end) = (0u64, 0u64, 0u64, 0u64);
    let mut pending: VecDeque<u64> = VecDeque::new();
    let mut vector_busy = false;
    q.push(0, GemmEv::TileStart(0));

    while let Some((now, e)) = q.pop() {
        match e {
            GemmEv::TileStart(t) => {
                let (_, _, rows, cols) = tile_extent(t, m, n, h, W);
                cols_used += cols;
                busy += WINDOW * k;
                ev.sram_read_bits += rows * groups * ib;
                for kk in 0..k {
                    let w = now + WINDOW * kk;
                    ev.sram_read_bits += rows * wb + cols * ib;
                    for r in 0..rows {
                        let mag = magnitude(r, kk);
                        q.push(w + mag, GemmEv::Spike(r));
                        for c in 0..cols {
                            q.push(w + c + mag, GemmEv::Subscribe);
                        }
                    }
                    for c in 0..cols {
                        for step in 0..WINDOW {
                            q.push(w + c + step, GemmEv::ColumnAdd);
                        }
                    }
                }
                q.push(now + WINDOW * k + gemm_drain(node), GemmEv::TileDrained(t));
            }
            GemmEv::Spike(_) => {
                ev.tc_spikes += 1;
                if carat {
                    ev.fifo_bits += W * CARAT_ROW_STAGE_BITS;
                }
            }
            GemmEv::Subscribe => {
                ev.pe_subscriptions += 1;
                ev.output_accumulations += 1;
                lane_busy += WINDOW;
            }
            GemmEv::ColumnAdd => ev.column_accumulations += 1,
            GemmEv::TileDrained(t) => {
                end = end.max(now);
                let (_, _, rows, cols) = tile_extent(t, m, n, h, W);
                ev.fifo_bits += rows * cols * groups.max(1) * PARTIAL_BITS;
                ev.vector_ops += rows * cols * groups;
                ev.sram_write_bits += rows * cols * ib;
                if t + 1 < tiles {
                    q.push(now, GemmEv::TileStart(t + 1));
                }
                if dequant > 0 {
                    pending.push_back(t);
                    if !vector_busy {
                        pending.pop_front();
                        vector_busy = true;
                        q.push(now + dequant, GemmEv::VectorDone);
                    }
                }
            }
            GemmEv::VectorDone => {
                end = end.max(now);
                vector_busy = false;
                if pending.pop_front().is_some() {
                    vector_busy = true;
                    q.push(now + dequant, GemmEv::VectorDone);
                }
            }
        }
    }
    Ok(OpTiming::compute(end, busy, lane_busy, h * W, cols_used as f64 / (tiles * W) as f64, ev))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum NlEv {
    MaxChunk(u64),
    CoreStart,
    StageDone(u8, u64),
    Spike,
    Output(u64),
    SumStored,
    NormChunk(u64),
}

/// Exp or activation core on the VLP array; see [`simulate_nonlinear`].
fn vlp_core(h: u64, node: &ArrayConfig, e: u64, class: NonlinearClass, q: &mut Queue<NlEv>, now: u64, st: &mut NlState) {
    let per_map = h * W;
    let maps = ceil_div(e, per_map);
    let ib = node.input_word_bits as u64;
    let lut_rows = if class == NonlinearClass::Softmax { W } else { 2 * W };
    st.lanes = per_map;
    st.outstanding = maps;
    for i in 0..maps {
        let count = (e - i * per_map).min(per_map);
        st.cols_used += count.min(W);
        st.col_slots += W;
        st.ev.sram_read_bits += lut_rows * W * ib + count * ib;
        // The loader streams one mapping per window.
        q.push(now + WINDOW * (i + 1), NlEv::StageDone(0, i));
    }
}

struct NlState {
    ev: EventCounts,
    busy: u64,
    lane_busy: u64,
    lanes: u64,
    cols_used: u64,
    col_slots: u64,
    outstanding: u64,
    stage_free: [u64; 3],
}

/// Event replay of a nonlinear op on the VLP array (`engine == None`) or on
/// a baseline nonlinear engine.
fn simulate_nl(
    engine: Option<&BaselineConfig>,
    node: &ArrayConfig,
    e: u64,
    class: NonlinearClass,
) -> Result<OpTiming, PerfError> {
    node.validate()?;
    OpShape::Nonlinear { class, elements: e }.validate()?;
    if let Some(b) = engine {
        b.validate()?;
        if !b.kind.runs_nonlinear() {
            return Err(PerfError::Unsupported { kind: b.kind, op: "nonlinear ops" });
        }
    }
    let h = node.height as u64;
    let lanes = node.vector_lanes as u64;
    let ib = node.input_word_bits as u64;
    let softmax = class == NonlinearClass::Softmax;
    let pass = ceil_div(e, lanes);

    let mut q = Queue::new();
    let mut st = NlState {
        ev: EventCounts::default(),
        busy: 0,
        lane_busy: 0,
        lanes: 0,
        cols_used: 0,
        col_slots: 0,
        outstanding: 0,
        stage_free: [0; 3],
    };
    let mut end = 0;
    if softmax {
        for c in 0..pass {
            q.push(c, NlEv::MaxChunk(c));
        }
    } else {
        q.push(0, NlEv::CoreStart);
    }

    while let Some((now, ev)) = q.pop() {
        match ev {
            NlEv::MaxChunk(c) => {
                let n = (e - c * lanes).min(lanes);
                st.ev.vector_ops += n;
                st.ev.sram_read_bits += n * ib;
                if c + 1 == pass {
                    q.push(now + 1, NlEv::CoreStart);
                }
            }
            NlEv::CoreStart => match engine {
                None => vlp_core(h, node, e, class, &mut q, now, &mut st),
                Some(b) => baseline_core(b, node, e, &mut q, now, &mut st),
            },
            NlEv::StageDone(stage, i) => {
                let per_map = h * W;
                let count = (e - i * per_map).min(per_map);
                match stage {
                    0 => st.busy += WINDOW,
                    1 | 2 => {}
                    _ => unreachable!(),
                }
                if stage < 2 {
                    let next = stage as usize + 1;
                    let start = now.max(st.stage_free[next]);
                    st.stage_free[next] = start + WINDOW;
                    for idx in 0..count {
                        // Mantissa spikes follow the rounded index, exponent
                        // spikes the window column.
                        let offset = if next == 1 { magnitude(idx / W, idx % W) } else { idx % W };
                        q.push(start + offset, NlEv::Spike);
                        if next == 1 {
                            st.lane_busy += WINDOW;
                        }
                    }
                    q.push(start + WINDOW, NlEv::StageDone(next as u8, i));
                } else {
                    q.push(now + COLUMN_STAGGER + node.pipeline_depth, NlEv::Output(count));
                }
            }
            NlEv::Spike => {
                st.ev.tc_spikes += 1;
                st.ev.pe_subscriptions += 1;
            }
            NlEv::Output(count) => {
                st.ev.sram_write_bits += count * ib;
                st.outstanding -= 1;
                if st.outstanding == 0 {
                    if softmax {
                        q.push(now + 1, NlEv::SumStored);
                    } else {
                        end = now;
                    }
                }
            }
            NlEv::SumStored => {
                st.ev.sram_write_bits += PARTIAL_BITS;
                for c in 0..pass {
                    q.push(now + c + 1, NlEv::NormChunk(c));
                }
            }
            NlEv::NormChunk(c) => {
                let n = (e - c * lanes).min(lanes);
                st.ev.vector_ops += n;
                st.ev.output_accumulations += n;
                st.ev.sram_read_bits += n * ib;
                st.ev.sram_write_bits += n * ib;
                end = end.max(now);
            }
        }
    }
    let col_util = st.cols_used as f64 / st.col_slots as f64;
    Ok(OpTiming::compute(end, st.busy, st.lane_busy, st.lanes, col_util, st.ev))
}

/// Vector nonlinear engines: groups of `dim` elements issue back to back
/// (iterative unit) or one per cycle (pipelined units).
fn baseline_core(b: &BaselineConfig, node: &ArrayConfig, e: u64, q: &mut Queue<NlEv>, now: u64, st: &mut NlState) {
    let d = b.dim as u64;
    let groups = ceil_div(e, d);
    let ib = node.input_word_bits as u64;
    st.lanes = d;
    st.outstanding = groups;
    for g in 0..groups {
        let count = (e - g * d).min(d);
        st.cols_used += count;
        st.col_slots += d;
        st.ev.sram_read_bits += count * ib;
        let (issue, latency, occupancy) = match b.kind {
            BaselineKind::PreciseVector => (g * b.per_element_cycles, b.per_element_cycles, b.per_element_cycles),
            BaselineKind::PwlVector | BaselineKind::TaylorVector => (g, b.per_element_cycles, 1),
            BaselineKind::MugiL => (g, 1 + node.pipeline_depth, 1),
            _ => unreachable!("checked by caller"),
        };
        st.busy += occupancy;
        st.lane_busy += count * occupancy;
        match b.kind {
            BaselineKind::MugiL => st.ev.lut_lookups += count,
            _ => st.ev.nonlinear_ops += count * b.per_element_cycles,
        }
        q.push(now + issue + latency, NlEv::Output(count));
    }
}

/// Event replay of a softmax or activation on the VLP array of `cfg`.
pub fn simulate_nonlinear(cfg: &ArrayConfig, elements: u64, class: NonlinearClass) -> Result<OpTiming, PerfError> {
    simulate_nl(None, cfg, elements, class)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ArrEv {
    TileStart(u64),
    Preload,
    Mac,
    TileDone(u64),
    Block(u64),
}

fn simulate_array_gemm(kind: BaselineKind, d: u64, node: &ArrayConfig, s: &GemmShape) -> OpTiming {
    let (m, n, k) = (s.m, s.n, s.k);
    let k_tiles = ceil_div(k, d);
    let n_tiles = ceil_div(n, d);
    let tiles = s.instances * k_tiles * n_tiles;
    let (fill, drain) = array_fill_drain(kind, d);
    let groups = s.groups();
    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;

    let mut q = Queue::new();
    let mut ev = EventCounts::default();
    let (mut busy, mut cols_used, mut end) = (0u64, 0u64, 0u64);
    q.push(0, ArrEv::TileStart(0));
    while let Some((now, e)) = q.pop() {
        match e {
            ArrEv::TileStart(t) => {
                // Tiles run N-major within an instance so K tiles of one
                // output block are adjacent.
                let within = t % (k_tiles * n_tiles);
                let (ni, ki) = (within / k_tiles, within % k_tiles);
                let kact = (k - ki * d).min(d);
                let nact = (n - ni * d).min(d);
                cols_used += nact;
                busy += m;
                for r in 0..kact {
                    q.push(now + r, ArrEv::Preload);
                }
                ev.sram_read_bits += m * kact * wb;
                if ki == 0 {
                    ev.sram_read_bits += m * groups * ib;
                } else {
                    ev.sram_read_bits += m * nact * PARTIAL_BITS;
                }
                if ki + 1 < k_tiles {
                    ev.sram_write_bits += m * nact * PARTIAL_BITS;
                } else {
                    ev.sram_write_bits += m * nact * ib;
                }
                ev.vector_ops += if kind.is_figna() {
                    if ki + 1 == k_tiles {
                        m * nact * groups
                    } else {
                        0
                    }
                } else {
                    m * kact
                };
                ev.output_accumulations += m * nact;
                for i in 0..m {
                    for r in 0..kact {
                        for _ in 0..nact {
                            q.push(now + fill + i + r.min(drain), ArrEv::Mac);
                        }
                    }
                }
                ev.sram_read_bits += kact * nact * ib;
                q.push(now + fill + m + drain, ArrEv::TileDone(t));
            }
            ArrEv::Preload => {}
            ArrEv::Mac => ev.mac_ops += 1,
            ArrEv::TileDone(t) => {
                end = now;
                if t + 1 < tiles {
                    q.push(now, ArrEv::TileStart(t + 1));
                }
            }
            ArrEv::Block(_) => unreachable!(),
        }
    }
    OpTiming::compute(end, busy, ev.mac_ops, d * d, cols_used as f64 / (tiles * d) as f64, ev)
}

fn simulate_tensor_core(fill: u64, node: &ArrayConfig, s: &GemmShape) -> OpTiming {
    let (m, n, k) = (s.m, s.n, s.k);
    let (mb, nb, kb) = (ceil_div(m, TC_M), ceil_div(n, TC_N), ceil_div(k, TC_K));
    let per_inst = mb * nb * kb;
    let blocks = s.instances * per_inst;
    let groups = s.groups();
    let wb = node.weight_word_bits as u64;
    let ib = node.input_word_bits as u64;

    let mut q = Queue::new();
    let mut ev = EventCounts::default();
    let (mut busy, mut cols_used, mut col_slots, mut end) = (0u64, 0u64, 0u64, 0u64);
    for b in 0..blocks {
        q.push(b, ArrEv::Block(b));
    }
    while let Some((now, e)) = q.pop() {
        let ArrEv::Block(b) = e else { unreachable!() };
        let within = b % per_inst;
        let (mi, ni, ki) = (within / (nb * kb), (within / kb) % nb, within % kb);
        let mact = (m - mi * TC_M).min(TC_M);
        let nact = (n - ni * TC_N).min(TC_N);
        let kact = (k - ki * TC_K).min(TC_K);
        busy += 1;
        if mi == 0 {
            cols_used += nact * kb;
            col_slots += TC_N * kb;
        }
        ev.mac_ops += mact * nact * kact;
        ev.output_accumulations += mact * nact;
        ev.vector_ops += mact * kact;
        ev.sram_read_bits += kact * nact * ib + mact * kact * wb;
        if ki == 0 {
            ev.sram_read_bits += mact * groups * ib;
        }
        if ki + 1 == kb {
            ev.sram_write_bits += mact * nact * ib;
        }
        end = now + 1 + fill;
    }
    OpTiming::compute(end, busy, ev.mac_ops, TC_M * TC_N * TC_K, cols_used as f64 / col_slots as f64, ev)
}

/// Event replay of `op` on a baseline engine.
pub fn simulate_baseline(cfg: &BaselineConfig, node: &ArrayConfig, op: &OpShape) -> Result<OpTiming, PerfError> {
    cfg.validate()?;
    node.validate()?;
    op.validate()?;
    let d = cfg.dim as u64;
    match *op {
        OpShape::Gemm(ref s) => match cfg.kind {
            BaselineKind::Systolic | BaselineKind::Simd | BaselineKind::SystolicFigna | BaselineKind::SimdFigna => {
                Ok(simulate_array_gemm(cfg.kind, d, node, s))
            }
            BaselineKind::TensorCore => Ok(simulate_tensor_core(cfg.fill_cycles, node, s)),
            BaselineKind::Carat => simulate_vlp_gemm(d, node, s, true),
            kind => Err(PerfError::Unsupported { kind, op: "GEMM" }),
        },
        OpShape::Nonlinear { class, elements } => simulate_nl(Some(cfg), node, elements, class),
    }
}

/// Event replay counterpart of [`super::op_cycles`].
pub fn simulate_op(design: &Design, op: &OpShape) -> Result<OpTiming, PerfError> {
    let mut t = match (op, design.gemm, design.nonlinear) {
        (OpShape::Gemm(s), GemmEngine::Vlp, _) => {
            simulate_vlp_gemm(design.node.height as u64, &design.node, s, false)?
        }
        (OpShape::Gemm(_), GemmEngine::Baseline(b), _) => simulate_baseline(&b, &design.node, op)?,
        (OpShape::Nonlinear { class, elements }, _, NonlinearEngine::Vlp) => {
            simulate_nonlinear(&design.node, *elements, *class)?
        }
        (OpShape::Nonlinear { .. }, _, NonlinearEngine::Baseline(b)) => simulate_baseline(&b, &design.node, op)?,
    };
    let bytes = op.bytes();
    t.mem_bytes_read = bytes.input + bytes.weight;
    t.mem_bytes_written = bytes.output;
    Ok(t)
}
