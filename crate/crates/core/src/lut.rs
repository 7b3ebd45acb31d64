//! Value-centric lookup tables.
//!
//! A table holds one row per (sign, rounded mantissa) pair; each row carries
//! the function value for every exponent of the configured window, in
//! ascending exponent order. Per mapping, an 8-column slice of the table (the
//! sliding window) is streamed into the array.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{Bf16, ExponentRange, SplitInput, ROUNDED_MANT_BITS};

/// Columns of the VLP array, and therefore of a sliding window.
pub const WINDOW_COLUMNS: usize = 8;
const MANTISSA_ROWS: usize = 1 << ROUNDED_MANT_BITS;
const LUT_MAGIC: &[u8; 4] = b"MLUT";
const LUT_FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum LutError {
    #[error("lut window [{min}, {max}] is empty")]
    EmptyWindow { min: i32, max: i32 },
    #[error("lut for {kind:?} does not store rows for sign {}", if *.negative { "-" } else { "+" })]
    SignNotCovered { kind: NonlinearKind, negative: bool },
    #[error("special input reached exponent clamping")]
    SpecialInput,
    #[error("malformed lut artifact: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearKind {
    /// `e^x` as used by softmax after max subtraction.
    Exp,
    /// `x / (1 + e^-x)`
    Silu,
    /// Exact GELU via the error function.
    Gelu,
    /// GELU, tanh approximation with the cubic term.
    GeluTanh,
    /// GELU, factored tanh approximation.
    GeluFast,
}

impl NonlinearKind {
    pub const ALL: [NonlinearKind; 5] = [
        NonlinearKind::Exp,
        NonlinearKind::Silu,
        NonlinearKind::Gelu,
        NonlinearKind::GeluTanh,
        NonlinearKind::GeluFast,
    ];

    /// Double-precision reference.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            NonlinearKind::Exp => x.exp(),
            NonlinearKind::Silu => x / (1.0 + (-x).exp()),
            NonlinearKind::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
            NonlinearKind::GeluTanh => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            NonlinearKind::GeluFast => {
                0.5 * x * (1.0 + (0.7978845608 * x * (1.0 + 0.004715 * x * x)).tanh())
            }
        }
    }

    /// Value at `+inf` (`negative == false`) or `-inf`.
    pub fn limit(self, negative: bool) -> f64 {
        // all supported kinds grow without bound on the right and vanish on the left
        if negative { 0.0 } else { f64::INFINITY }
    }

    /// Sign covered by an unsigned table: softmax exponents are never positive,
    /// activations keep the positive half.
    pub fn unsigned_sign(self) -> bool {
        matches!(self, NonlinearKind::Exp)
    }

    fn code(self) -> u8 {
        match self {
            NonlinearKind::Exp => 0,
            NonlinearKind::Silu => 1,
            NonlinearKind::Gelu => 2,
            NonlinearKind::GeluTanh => 3,
            NonlinearKind::GeluFast => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LutWindow {
    pub min_exp: i32,
    pub max_exp: i32,
    /// Store rows for both signs.
    pub signed: bool,
}

impl LutWindow {
    pub fn new(min_exp: i32, max_exp: i32, signed: bool) -> Result<Self, LutError> {
        if max_exp < min_exp {
            return Err(LutError::EmptyWindow { min: min_exp, max: max_exp });
        }
        Ok(LutWindow { min_exp, max_exp, signed })
    }

    pub fn width(&self) -> usize {
        (self.max_exp - self.min_exp + 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lut {
    kind: NonlinearKind,
    window: LutWindow,
    rows: Vec<Vec<Bf16>>,
}

impl Lut {
    pub fn build(kind: NonlinearKind, window: LutWindow) -> Result<Self, LutError> {
        let window = LutWindow::new(window.min_exp, window.max_exp, window.signed)?;
        let signs: Vec<bool> = if window.signed { vec![false, true] } else { vec![kind.unsigned_sign()] };
        let rows = signs
            .iter()
            .flat_map(|&negative| (0..MANTISSA_ROWS as u8).map(move |m| (negative, m)))
            .map(|(negative, m)| {
                (window.min_exp..=window.max_exp)
                    .map(|e| {
                        let x = SplitInput { sign: negative, mantissa_index: m, exponent: e, special: crate::numeric::Special::None };
                        Bf16::from_f64(kind.eval(x.value()))
                    })
                    .collect()
            })
            .collect();
        Ok(Lut { kind, window, rows })
    }

    pub fn kind(&self) -> NonlinearKind {
        self.kind
    }

    pub fn window(&self) -> LutWindow {
        self.window
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn covers_sign(&self, negative: bool) -> bool {
        self.window.signed || negative == self.kind.unsigned_sign()
    }

    fn row_index(&self, negative: bool, mantissa: u8) -> Option<usize> {
        if !self.covers_sign(negative) || mantissa as usize >= MANTISSA_ROWS {
            return None;
        }
        let half = if self.window.signed && negative { MANTISSA_ROWS } else { 0 };
        Some(half + mantissa as usize)
    }

    pub fn row(&self, negative: bool, mantissa: u8) -> Option<&[Bf16]> {
        self.row_index(negative, mantissa).map(|i| self.rows[i].as_slice())
    }

    pub fn entry(&self, negative: bool, mantissa: u8, exponent: i32) -> Option<Bf16> {
        if exponent < self.window.min_exp || exponent > self.window.max_exp {
            return None;
        }
        self.row(negative, mantissa).map(|r| r[(exponent - self.window.min_exp) as usize])
    }

    /// Header followed by row-major little-endian 16-bit entries.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LutError> {
        w.write_all(LUT_MAGIC)?;
        w.write_all(&[LUT_FORMAT_VERSION, self.kind.code(), self.window.signed as u8, 0])?;
        w.write_all(&self.window.min_exp.to_le_bytes())?;
        w.write_all(&self.window.max_exp.to_le_bytes())?;
        for v in self.rows.iter().flatten() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, LutError> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header).map_err(|_| LutError::Format("truncated header".into()))?;
        if &header[..4] != LUT_MAGIC {
            return Err(LutError::Format("bad magic".into()));
        }
        if header[4] != LUT_FORMAT_VERSION {
            return Err(LutError::Format(format!("unsupported version {}", header[4])));
        }
        let kind = NonlinearKind::from_code(header[5])
            .ok_or_else(|| LutError::Format(format!("unknown kind code {}", header[5])))?;
        let signed = match header[6] {
            0 => false,
            1 => true,
            v => return Err(LutError::Format(format!("bad signed flag {v}"))),
        };
        let min_exp = i32::from_le_bytes(header[8..12].try_into().unwrap());
        let max_exp = i32::from_le_bytes(header[12..16].try_into().unwrap());
        let window = LutWindow::new(min_exp, max_exp, signed)?;
        let row_count = if signed { 2 * MANTISSA_ROWS } else { MANTISSA_ROWS };
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != row_count * window.width() * 2 {
            return Err(LutError::Format(format!(
                "expected {} entry bytes, found {}",
                row_count * window.width() * 2,
                body.len()
            )));
        }
        let entries: Vec<Bf16> =
            body.chunks_exact(2).map(|c| Bf16::from_bits(u16::from_le_bytes([c[0], c[1]]))).collect();
        let rows = entries.chunks(window.width()).map(<[Bf16]>::to_vec).collect();
        Ok(Lut { kind, window, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowPolicy {
    /// Top of the sliding window sits on the largest observed exponent.
    #[default]
    AlignMax,
    /// Bottom of the sliding window sits on the smallest observed exponent.
    AlignMin,
}

/// The exponent columns streamed to the array for one mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlidingWindow {
    pub kind: NonlinearKind,
    pub base_exp: i32,
    signed: bool,
    columns: usize,
    rows: Vec<Vec<Bf16>>,
}

impl SlidingWindow {
    /// Number of exponent columns; 8 unless the whole table is narrower.
    pub fn width(&self) -> usize {
        self.columns
    }

    pub fn top_exp(&self) -> i32 {
        self.base_exp + self.columns as i32 - 1
    }

    pub fn covers_sign(&self, negative: bool) -> bool {
        self.signed || negative == self.kind.unsigned_sign()
    }

    /// Entry in sub-row (sign, mantissa) at `column`.
    pub fn entry(&self, negative: bool, mantissa: u8, column: usize) -> Option<Bf16> {
        if !self.covers_sign(negative) || column >= self.columns {
            return None;
        }
        let half = if self.signed && negative { MANTISSA_ROWS } else { 0 };
        self.rows.get(half + mantissa as usize).map(|r| r[column])
    }
}

pub fn select_window(lut: &Lut, stats: ExponentRange, policy: WindowPolicy) -> SlidingWindow {
    let w = lut.window();
    let columns = w.width().min(WINDOW_COLUMNS);
    let highest_base = w.max_exp - columns as i32 + 1;
    let wanted = match policy {
        WindowPolicy::AlignMax => stats.max - columns as i32 + 1,
        WindowPolicy::AlignMin => stats.min,
    };
    let base_exp = wanted.clamp(w.min_exp, highest_base);
    let offset = (base_exp - w.min_exp) as usize;
    let rows = lut.rows.iter().map(|r| r[offset..offset + columns].to_vec()).collect();
    SlidingWindow { kind: lut.kind(), base_exp, signed: w.signed, columns, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clamp {
    InWindow(usize),
    Underflow,
    Overflow,
}

/// Place a rounded exponent relative to the sliding window. What happens on
/// underflow/overflow is decided by the post-processing stage.
pub fn clamp_exponent(x: &SplitInput, sw: &SlidingWindow, _kind: NonlinearKind) -> Result<Clamp, LutError> {
    if x.is_special() {
        return Err(LutError::SpecialInput);
    }
    Ok(if x.exponent < sw.base_exp {
        Clamp::Underflow
    } else if x.exponent > sw.top_exp() {
        Clamp::Overflow
    } else {
        Clamp::InWindow((x.exponent - sw.base_exp) as usize)
    })
}
