//! Functional model of the VLP datapath.
//!
//! Values here are what the hardware produces, computed the way the hardware
//! produces them: magnitudes become single spikes inside a fixed window, a
//! shared stream of candidate results (accumulated weights, or LUT rows) is
//! broadcast, and every consumer latches the candidate present on its spike.

use thiserror::Error;

use crate::lut::{clamp_exponent, select_window, Clamp, Lut, LutError, NonlinearKind, SlidingWindow, WindowPolicy};
use crate::numeric::{exponent_stats, split_and_round, Bf16, Int4, NumericError, Special, SplitInput};

/// Array columns. Matches the 3-bit rounded mantissa (8-cycle window).
pub const ARRAY_WIDTH: usize = 8;
/// Magnitude bits of a weight row: 3 bits of INT4, 8-cycle window.
pub const WEIGHT_MAG_BITS: u32 = 3;

#[derive(Debug, Error)]
pub enum VlpError {
    #[error("magnitude {magnitude} does not fit a {bits}-bit temporal window")]
    TemporalRange { magnitude: u32, bits: u32 },
    #[error("degenerate softmax: every input is -inf")]
    DegenerateSoftmax,
    #[error("softmax input {index} is not finite ({value})")]
    NonFiniteSoftmaxInput { index: usize, value: Bf16 },
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("array height must be at least 1")]
    ZeroHeight,
    #[error(transparent)]
    Lut(#[from] LutError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A magnitude carried as one spike inside a `2^bits`-cycle window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalSignal {
    pub spike_cycle: u32,
    pub bits: u32,
}

impl TemporalSignal {
    pub fn window(&self) -> u32 {
        1 << self.bits
    }

    pub fn fires_at(&self, cycle: u32) -> bool {
        cycle == self.spike_cycle
    }
}

pub fn temporal_encode(magnitude: u32, bits: u32) -> Result<TemporalSignal, VlpError> {
    if bits >= 32 || magnitude >= 1 << bits {
        return Err(VlpError::TemporalRange { magnitude, bits });
    }
    Ok(TemporalSignal { spike_cycle: magnitude, bits })
}

/// `i * w` by accumulating `w` once per cycle and latching the running sum on
/// the spike of `i`. `i` may use up to 4 bits.
pub fn temporal_multiply(i: u32, w: Bf16) -> Result<f32, VlpError> {
    let signal = temporal_encode(i, 4)?;
    let addend = w.to_f32();
    let mut acc = 0.0f32;
    for cycle in 0..signal.window() {
        if signal.fires_at(cycle) {
            return Ok(acc);
        }
        acc += addend;
    }
    unreachable!("spike lies inside its window")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxPath {
    Lut,
    Special,
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ApproxResult {
    pub value: Bf16,
    /// 0-indexed cycle at which the result is latched: mantissa spike plus
    /// exponent column. Zero for results that never touch the LUT.
    pub subscription_cycle: u32,
    pub path: ApproxPath,
}

impl ApproxResult {
    /// Elapsed cycles until the result is available.
    pub fn elapsed_cycles(&self) -> u32 {
        self.subscription_cycle + 1
    }
}

fn special_result(kind: NonlinearKind, s: &SplitInput) -> Bf16 {
    match s.special {
        Special::Zero => Bf16::from_f64(kind.eval(0.0)),
        Special::Inf => Bf16::from_f64(kind.limit(s.sign)),
        Special::Nan => Bf16::NAN,
        Special::None => unreachable!(),
    }
}

/// Post-processing: pick the exponent column, or route specials and
/// out-of-window exponents.
fn post_process(x: Bf16, s: &SplitInput, sw: Option<&SlidingWindow>, kind: NonlinearKind) -> Result<ApproxResult, VlpError> {
    if s.is_special() {
        return Ok(ApproxResult { value: special_result(kind, s), subscription_cycle: 0, path: ApproxPath::Special });
    }
    let sw = sw.expect("finite input implies a selected window");
    if !sw.covers_sign(s.sign) {
        return Err(LutError::SignNotCovered { kind, negative: s.sign }.into());
    }
    let m = s.mantissa_index;
    let lut_at = |column: usize, path| ApproxResult {
        value: sw.entry(s.sign, m, column).expect("column inside window"),
        subscription_cycle: m as u32 + column as u32,
        path,
    };
    let flushed = ApproxResult { value: Bf16::ZERO, subscription_cycle: 0, path: ApproxPath::Clamp };
    Ok(match (clamp_exponent(s, sw, kind)?, kind) {
        (Clamp::InWindow(c), _) => lut_at(c, ApproxPath::Lut),
        (Clamp::Underflow, NonlinearKind::Exp) => lut_at(0, ApproxPath::Clamp),
        (Clamp::Overflow, NonlinearKind::Exp) => lut_at(sw.width() - 1, ApproxPath::Clamp),
        (Clamp::Underflow, _) => flushed,
        (Clamp::Overflow, _) if s.sign => flushed,
        (Clamp::Overflow, _) => ApproxResult { value: x, subscription_cycle: 0, path: ApproxPath::Clamp },
    })
}

/// Approximate one mapping given as a flat slice; every element shares the
/// sliding window chosen from the mapping's exponent range.
pub fn approximate_mapping(xs: &[Bf16], lut: &Lut, policy: WindowPolicy) -> Result<Vec<ApproxResult>, VlpError> {
    let split: Vec<SplitInput> = xs.iter().copied().map(split_and_round).collect();
    let window = exponent_stats(&split).ok().map(|stats| select_window(lut, stats, policy));
    xs.iter()
        .zip(&split)
        .map(|(&x, s)| post_process(x, s, window.as_ref(), lut.kind()))
        .collect()
}

/// Approximate an `H x 8` mapping.
pub fn approximate(grid: &[[Bf16; ARRAY_WIDTH]], lut: &Lut, policy: WindowPolicy) -> Result<Vec<[ApproxResult; ARRAY_WIDTH]>, VlpError> {
    let flat: Vec<Bf16> = grid.iter().flatten().copied().collect();
    let out = approximate_mapping(&flat, lut, policy)?;
    Ok(out
        .chunks_exact(ARRAY_WIDTH)
        .map(|c| c.try_into().expect("chunk of ARRAY_WIDTH"))
        .collect())
}

/// Approximate a vector of any length, `rows * 8` elements per mapping.
pub fn approximate_vector(xs: &[Bf16], lut: &Lut, policy: WindowPolicy, rows: usize) -> Result<Vec<ApproxResult>, VlpError> {
    if rows == 0 {
        return Err(VlpError::ZeroHeight);
    }
    let mut out = Vec::with_capacity(xs.len());
    for mapping in xs.chunks(rows * ARRAY_WIDTH) {
        out.extend(approximate_mapping(mapping, lut, policy)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct SoftmaxOptions {
    pub policy: WindowPolicy,
    /// Array height; one mapping covers `rows * 8` elements.
    pub rows: usize,
}

impl Default for SoftmaxOptions {
    fn default() -> Self {
        SoftmaxOptions { policy: WindowPolicy::AlignMax, rows: 256 }
    }
}

/// Inputs after max subtraction, each difference taken at FP32 and rounded to BF16.
pub fn subtract_max(xs: &[Bf16]) -> Result<Vec<Bf16>, VlpError> {
    if xs.is_empty() {
        return Err(VlpError::EmptyInput);
    }
    if let Some((index, &value)) = xs.iter().enumerate().find(|(_, v)| v.is_nan() || v.to_f32() == f32::INFINITY) {
        return Err(VlpError::NonFiniteSoftmaxInput { index, value });
    }
    let max = xs.iter().map(|v| v.to_f32()).fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return Err(VlpError::DegenerateSoftmax);
    }
    Ok(xs.iter().map(|v| Bf16::from_f32(v.to_f32() - max)).collect())
}

pub fn softmax(xs: &[Bf16], lut: &Lut) -> Result<Vec<Bf16>, VlpError> {
    softmax_with(xs, lut, SoftmaxOptions::default())
}

/// exp via the array while oAcc sums at FP32, then one vector pass scaling
/// every exp by the FP32 reciprocal of the sum.
pub fn softmax_with(xs: &[Bf16], lut: &Lut, opts: SoftmaxOptions) -> Result<Vec<Bf16>, VlpError> {
    let shifted = subtract_max(xs)?;
    let exps = approximate_vector(&shifted, lut, opts.policy, opts.rows)?;
    let sum: f32 = exps.iter().fold(0.0f32, |acc, r| acc + r.value.to_f32());
    let recip = 1.0f32 / sum;
    Ok(exps
        .iter()
        .map(|r| Bf16::from_f64(r.value.to_f64() * recip as f64))
        .collect())
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, VlpError> {
        if data.len() != rows * cols {
            return Err(VlpError::DimensionMismatch(format!("{rows}x{cols} matrix given {} values", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// INT4 matrix with one BF16 scale per (row, group of `group_size` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedMatrix {
    pub values: Matrix<Int4>,
    pub group_size: usize,
    pub scales: Matrix<Bf16>,
}

impl QuantizedMatrix {
    pub fn new(values: Matrix<Int4>, group_size: usize, scales: Matrix<Bf16>) -> Result<Self, VlpError> {
        if group_size == 0 || values.cols % group_size != 0 {
            return Err(VlpError::DimensionMismatch(format!(
                "group size {group_size} does not divide {} columns",
                values.cols
            )));
        }
        let groups = values.cols / group_size;
        if scales.rows != values.rows || scales.cols != groups {
            return Err(VlpError::DimensionMismatch(format!(
                "scales are {}x{}, expected {}x{groups}",
                scales.rows, scales.cols, values.rows
            )));
        }
        Ok(QuantizedMatrix { values, group_size, scales })
    }

    /// Symmetric per-group quantization onto `[-7, 7]`.
    pub fn quantize(data: &Matrix<f32>, group_size: usize) -> Result<Self, VlpError> {
        if group_size == 0 || data.cols % group_size != 0 {
            return Err(VlpError::DimensionMismatch(format!("group size {group_size} does not divide {}", data.cols)));
        }
        let groups = data.cols / group_size;
        let mut scales = Vec::with_capacity(data.rows * groups);
        let mut values = Vec::with_capacity(data.rows * data.cols);
        for r in 0..data.rows {
            let row = &data.data[r * data.cols..(r + 1) * data.cols];
            for chunk in row.chunks(group_size) {
                let amax = chunk.iter().fold(0.0f32, |a, v| a.max(v.abs()));
                let scale = Bf16::from_f32(if amax > 0.0 { amax / 7.0 } else { 1.0 });
                let s = scale.to_f32();
                scales.push(scale);
                values.extend(chunk.iter().map(|v| Int4::new((v / s).round().clamp(-7.0, 7.0) as i32).unwrap()));
            }
        }
        QuantizedMatrix::new(
            Matrix::new(data.rows, data.cols, values)?,
            group_size,
            Matrix::new(data.rows, groups, scales)?,
        )
    }

    pub fn rows(&self) -> usize {
        self.values.rows
    }

    pub fn cols(&self) -> usize {
        self.values.cols
    }

    pub fn negated(&self) -> Self {
        let data = self
            .values
            .data
            .iter()
            .map(|v| Int4::new(-(v.value() as i32)).unwrap_or(Int4::new(7).unwrap()))
            .collect();
        QuantizedMatrix { values: Matrix { data, ..self.values.clone() }, ..self.clone() }
    }
}

/// Output-stationary `A (M x K, INT4 rows) * B (K x N, BF16 columns)`.
///
/// Per tile of `array_height` rows and 8 columns, each column streams
/// `0, b, 2b, ..., 7b` (value reuse) and each row latches the entry its
/// weight magnitude spikes on. Partial sums stay in FP32; each quantization
/// group is scaled by the vector unit before being added to the output.
pub fn gemm(a: &QuantizedMatrix, b: &Matrix<Bf16>, array_height: usize) -> Result<Matrix<Bf16>, VlpError> {
    if array_height == 0 {
        return Err(VlpError::ZeroHeight);
    }
    if a.cols() != b.rows {
        return Err(VlpError::DimensionMismatch(format!(
            "A is {}x{}, B is {}x{}",
            a.rows(),
            a.cols(),
            b.rows,
            b.cols
        )));
    }
    let (m_dim, n_dim, k_dim) = (a.rows(), b.cols, a.cols());
    let window = 1usize << WEIGHT_MAG_BITS;
    let mut out = Matrix::filled(m_dim, n_dim, Bf16::ZERO);

    for row0 in (0..m_dim).step_by(array_height) {
        let rows = array_height.min(m_dim - row0);
        for col0 in (0..n_dim).step_by(ARRAY_WIDTH) {
            let cols = ARRAY_WIDTH.min(n_dim - col0);
            let mut total = vec![0.0f32; rows * cols];
            let mut partial = vec![0.0f32; rows * cols];
            for (g, group) in (0..k_dim).step_by(a.group_size).enumerate() {
                for k in group..group + a.group_size {
                    for c in 0..cols {
                        // column accumulator over one temporal window
                        let addend = b.get(k, col0 + c).to_f32();
                        let mut stream = [0.0f32; 8];
                        for t in 1..window {
                            stream[t] = stream[t - 1] + addend;
                        }
                        for r in 0..rows {
                            let (negative, mag) = a.values.get(row0 + r, k).sign_magnitude();
                            let latched = stream[mag as usize];
                            partial[r * cols + c] += if negative { -latched } else { latched };
                        }
                    }
                }
                for r in 0..rows {
                    let scale = a.scales.get(row0 + r, g).to_f32();
                    for c in 0..cols {
                        total[r * cols + c] += scale * partial[r * cols + c];
                        partial[r * cols + c] = 0.0;
                    }
                }
            }
            for r in 0..rows {
                for c in 0..cols {
                    out.data[(row0 + r) * n_dim + col0 + c] = Bf16::from_f32(total[r * cols + c]);
                }
            }
        }
    }
    Ok(out)
}

/// Plain triple loop over the same groups in the same order, multiplying
/// instead of streaming. Weights go through the same sign-magnitude
/// saturation as the array. Used to cross-check [`gemm`].
pub fn gemm_reference(a: &QuantizedMatrix, b: &Matrix<Bf16>) -> Result<Matrix<Bf16>, VlpError> {
    if a.cols() != b.rows {
        return Err(VlpError::DimensionMismatch(format!("A has {} columns, B has {} rows", a.cols(), b.rows)));
    }
    let mut out = Matrix::filled(a.rows(), b.cols, Bf16::ZERO);
    for m in 0..a.rows() {
        for n in 0..b.cols {
            let mut total = 0.0f32;
            for (g, k0) in (0..a.cols()).step_by(a.group_size).enumerate() {
                let mut part = 0.0f32;
                for k in k0..k0 + a.group_size {
                    let (neg, mag) = a.values.get(m, k).sign_magnitude();
                    let w = if neg { -(mag as f32) } else { mag as f32 };
                    part += w * b.get(k, n).to_f32();
                }
                total += a.scales.get(m, g).to_f32() * part;
            }
            out.data[m * b.cols + n] = Bf16::from_f32(total);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut::LutWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bf(x: f64) -> Bf16 {
        Bf16::from_f64(x)
    }

    /// Brute-force triple loop, same group order, ordinary multiplies.
    fn reference_gemm(a: &QuantizedMatrix, b: &Matrix<Bf16>) -> Matrix<Bf16> {
        let mut out = Matrix::filled(a.rows(), b.cols, Bf16::ZERO);
        for m in 0..a.rows() {
            for n in 0..b.cols {
                let mut total = 0.0f32;
                for g in 0..a.cols() / a.group_size {
                    let mut part = 0.0f32;
                    for k in g * a.group_size..(g + 1) * a.group_size {
                        part += a.values.get(m, k).value() as f32 * b.get(k, n).to_f32();
                    }
                    total += a.scales.get(m, g).to_f32() * part;
                }
                out.data[m * b.cols + n] = Bf16::from_f32(total);
            }
        }
        out
    }

    fn unit_scaled(rows: usize, cols: usize, vals: &[i32]) -> QuantizedMatrix {
        let values = Matrix::new(rows, cols, vals.iter().map(|&v| Int4::new(v).unwrap()).collect()).unwrap();
        QuantizedMatrix::new(values, cols, Matrix::filled(rows, 1, Bf16::ONE)).unwrap()
    }

    #[test]
    fn temporal_encode_examples() {
        assert_eq!(temporal_encode(3, 3).unwrap().spike_cycle, 3);
        assert_eq!(temporal_encode(0, 3).unwrap().spike_cycle, 0);
        assert_eq!(temporal_encode(7, 3).unwrap().spike_cycle, 7);
        assert!(temporal_encode(8, 3).is_err());
        let s = temporal_encode(3, 3).unwrap();
        assert_eq!((0..s.window()).filter(|&c| s.fires_at(c)).count(), 1);
    }

    #[test]
    fn temporal_multiply_examples() {
        assert_eq!(temporal_multiply(3, Bf16::ONE).unwrap(), 3.0);
        assert_eq!(temporal_multiply(0, bf(-17.5)).unwrap(), 0.0);
        assert_eq!(temporal_multiply(5, bf(0.25)).unwrap(), 1.25);
        assert!(temporal_multiply(16, Bf16::ONE).is_err());
    }

    #[test]
    fn fig4_walkthrough_cycle() {
        // S-M-E = 0-3-2 on a window whose base exponent is 0
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(0, 7, true).unwrap()).unwrap();
        let x = bf(1.375 * 4.0);
        let r = approximate_mapping(&[x], &lut, WindowPolicy::AlignMax).unwrap()[0];
        assert_eq!(r.path, ApproxPath::Lut);
        assert_eq!(r.subscription_cycle, 5);
        assert_eq!(r.elapsed_cycles(), 6);
        assert_eq!(r.value, bf(5.5f64.exp()));
    }

    #[test]
    fn approximate_examples() {
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-3, 4, false).unwrap()).unwrap();
        let out = approximate_mapping(&[Bf16::ZERO, bf(-1.5)], &lut, WindowPolicy::AlignMax).unwrap();
        assert_eq!(out[0].value, Bf16::ONE);
        assert_eq!(out[0].path, ApproxPath::Special);
        assert_eq!(out[1].value, bf((-1.5f64).exp()));
        // unsigned exp table rejects positive inputs
        assert!(approximate_mapping(&[bf(1.0)], &lut, WindowPolicy::AlignMax).is_err());
    }

    #[test]
    fn grid_shape_and_shared_window() {
        let lut = Lut::build(NonlinearKind::Silu, LutWindow::new(-6, 5, true).unwrap()).unwrap();
        let mut grid = vec![[bf(0.75); ARRAY_WIDTH]; 2];
        grid[1][7] = bf(40.0); // exponent 5 pulls the window to [-2, 5]
        let out = approximate(&grid, &lut, WindowPolicy::AlignMax).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1][7].value, bf(NonlinearKind::Silu.eval(40.0)));
        assert_eq!(out[0][0].value, bf(NonlinearKind::Silu.eval(0.75)));
        grid[0][0] = bf(0.01); // exponent -7 now below the window
        let out = approximate(&grid, &lut, WindowPolicy::AlignMax).unwrap();
        assert_eq!(out[0][0].value, Bf16::ZERO);
        assert_eq!(out[0][0].path, ApproxPath::Clamp);
    }

    #[test]
    fn activation_overflow_passes_through() {
        let lut = Lut::build(NonlinearKind::GeluTanh, LutWindow::new(-3, 4, true).unwrap()).unwrap();
        let big = bf(100.0);
        let out = approximate_mapping(&[big, big.neg()], &lut, WindowPolicy::AlignMin).unwrap();
        assert_eq!(out[0].value, big);
        assert_eq!(out[1].value, Bf16::ZERO);
    }

    #[test]
    fn specials_route_around_the_lut() {
        let lut = Lut::build(NonlinearKind::Silu, LutWindow::new(-3, 4, true).unwrap()).unwrap();
        let out = approximate_mapping(&[Bf16::INFINITY, Bf16::NEG_INFINITY, Bf16::NAN, Bf16::NEG_ZERO], &lut, WindowPolicy::AlignMax).unwrap();
        assert_eq!(out[0].value, Bf16::INFINITY);
        assert_eq!(out[1].value, Bf16::ZERO);
        assert!(out[2].value.is_nan());
        assert_eq!(out[3].value, Bf16::ZERO);
        assert!(out.iter().all(|r| r.path == ApproxPath::Special));
    }

    #[test]
    fn softmax_uniform() {
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-6, 5, false).unwrap()).unwrap();
        let out = softmax(&[bf(0.3); 4], &lut).unwrap();
        assert!(out.iter().all(|&v| v == bf(0.25)));
    }

    #[test]
    fn softmax_dominated() {
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-3, 4, false).unwrap()).unwrap();
        let out = softmax(&[bf(0.0), bf(-3.0e4)], &lut).unwrap();
        assert!((out[0].to_f32() - 1.0).abs() < 1e-2);
        assert!(out[1].to_f32() < 1e-6);
    }

    #[test]
    fn softmax_matches_rounded_reference() {
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-6, 5, false).unwrap()).unwrap();
        let xs = [bf(0.0), bf(-1.0), bf(-2.0)];
        let out = softmax(&xs, &lut).unwrap();
        let rounded: Vec<f64> = xs.iter().map(|&x| if x.to_f32() == 0.0 { 0.0 } else { split_and_round(x).value() }).collect();
        let denom: f64 = rounded.iter().map(|v| v.exp()).sum();
        for (o, r) in out.iter().zip(&rounded) {
            let expect = bf(r.exp() / denom);
            assert!(o.ulp_distance(expect) <= 1, "{o:?} vs {expect:?}");
        }
    }

    #[test]
    fn softmax_errors() {
        let lut = Lut::build(NonlinearKind::Exp, LutWindow::new(-6, 5, false).unwrap()).unwrap();
        assert!(matches!(softmax(&[Bf16::NEG_INFINITY; 3], &lut), Err(VlpError::DegenerateSoftmax)));
        assert!(matches!(softmax(&[], &lut), Err(VlpError::EmptyInput)));
        assert!(matches!(softmax(&[Bf16::NAN], &lut), Err(VlpError::NonFiniteSoftmaxInput { .. })));
        let out = softmax(&[Bf16::NEG_INFINITY, bf(1.0)], &lut).unwrap();
        assert_eq!(out, vec![Bf16::ZERO, Bf16::ONE]);
    }

    #[test]
    fn gemm_examples() {
        let a = unit_scaled(1, 1, &[1]);
        let b = Matrix::new(1, 1, vec![Bf16::ONE]).unwrap();
        assert_eq!(gemm(&a, &b, 8).unwrap().data, vec![Bf16::ONE]);

        let a = unit_scaled(1, 2, &[3, -2]);
        let b = Matrix::new(2, 1, vec![bf(1.5), bf(0.5)]).unwrap();
        assert_eq!(gemm(&a, &b, 8).unwrap().data, vec![bf(3.5)]);
    }

    #[test]
    fn gemm_matches_reference_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let vals: Vec<i32> = (0..16).map(|_| rng.gen_range(-7..=7)).collect();
            let values = Matrix::new(4, 4, vals.iter().map(|&v| Int4::new(v).unwrap()).collect()).unwrap();
            let scales = Matrix::new(4, 2, (0..8).map(|_| bf(rng.gen_range(0.01..2.0))).collect()).unwrap();
            let a = QuantizedMatrix::new(values, 2, scales).unwrap();
            let b = Matrix::new(4, 4, (0..16).map(|_| bf(rng.gen_range(-4.0..4.0))).collect()).unwrap();
            for h in [1, 2, 3, 8] {
                assert_eq!(gemm(&a, &b, h).unwrap(), reference_gemm(&a, &b));
            }
            let neg = gemm(&a.negated(), &b, 4).unwrap();
            let pos = gemm(&a, &b, 4).unwrap();
            assert!(neg.data.iter().zip(&pos.data).all(|(n, p)| n.to_f32() == -p.to_f32()));
        }
    }

    #[test]
    fn gemm_rejects_bad_shapes() {
        let a = unit_scaled(2, 3, &[1, 2, 3, 4, 5, 6]);
        let b = Matrix::filled(2, 2, Bf16::ONE);
        assert!(matches!(gemm(&a, &b, 8), Err(VlpError::DimensionMismatch(_))));
        assert!(matches!(gemm(&a, &Matrix::filled(3, 1, Bf16::ONE), 0), Err(VlpError::ZeroHeight)));
        let values = Matrix::filled(2, 3, Int4::default());
        assert!(QuantizedMatrix::new(values, 2, Matrix::filled(2, 1, Bf16::ONE)).is_err());
    }

    #[test]
    fn quantize_round_trips_within_half_step() {
        let data = Matrix::new(2, 4, vec![0.5, -1.0, 0.25, 0.7, 3.0, -3.0, 0.0, 1.5]).unwrap();
        let q = QuantizedMatrix::quantize(&data, 4).unwrap();
        for r in 0..2 {
            let s = q.scales.get(r, 0).to_f32();
            for c in 0..4 {
                let back = q.values.get(r, c).value() as f32 * s;
                assert!((back - data.get(r, c)).abs() <= 0.5 * s + 1e-6);
            }
        }
    }
}
