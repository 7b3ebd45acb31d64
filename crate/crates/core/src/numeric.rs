//! Bit-level BF16 and INT4 values, plus the field split performed on the
//! way into the array (mantissa rounding in M-proc, exponent scan in E-proc).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BF16_EXP_BIAS: i32 = 127;
pub const BF16_MANT_BITS: u32 = 7;
/// Mantissa bits kept after rounding; one temporal window is `1 << ROUNDED_MANT_BITS` cycles.
pub const ROUNDED_MANT_BITS: u32 = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NumericError {
    #[error("int4 value {0} outside [-8, 7]")]
    Int4OutOfRange(i32),
    #[error("no finite inputs")]
    NoFiniteInputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bf16Class {
    Zero,
    Subnormal,
    Normal,
    Infinite,
    Nan,
}

/// A bfloat16 value stored as its raw 16-bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bf16(u16);

impl Bf16 {
    pub const ZERO: Bf16 = Bf16(0x0000);
    pub const NEG_ZERO: Bf16 = Bf16(0x8000);
    pub const ONE: Bf16 = Bf16(0x3F80);
    pub const INFINITY: Bf16 = Bf16(0x7F80);
    pub const NEG_INFINITY: Bf16 = Bf16(0xFF80);
    pub const NAN: Bf16 = Bf16(0x7FC0);
    pub const MAX: Bf16 = Bf16(0x7F7F);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Bf16(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    /// Sign bit: `true` for negative.
    #[inline]
    pub const fn sign(self) -> bool {
        self.0 & 0x8000 != 0
    }

    /// Biased 8-bit exponent field.
    #[inline]
    pub const fn exponent_field(self) -> u8 {
        ((self.0 >> 7) & 0xFF) as u8
    }

    /// 7-bit fraction field.
    #[inline]
    pub const fn mantissa_field(self) -> u8 {
        (self.0 & 0x7F) as u8
    }

    pub const fn from_fields(sign: bool, exponent: u8, mantissa: u8) -> Self {
        Bf16(((sign as u16) << 15) | ((exponent as u16) << 7) | (mantissa as u16 & 0x7F))
    }

    pub fn class(self) -> Bf16Class {
        match (self.exponent_field(), self.mantissa_field()) {
            (0, 0) => Bf16Class::Zero,
            (0, _) => Bf16Class::Subnormal,
            (0xFF, 0) => Bf16Class::Infinite,
            (0xFF, _) => Bf16Class::Nan,
            _ => Bf16Class::Normal,
        }
    }

    pub fn is_nan(self) -> bool {
        self.class() == Bf16Class::Nan
    }

    pub fn is_finite(self) -> bool {
        self.exponent_field() != 0xFF
    }

    /// Unbiased exponent of a normal value.
    pub fn unbiased_exponent(self) -> i32 {
        self.exponent_field() as i32 - BF16_EXP_BIAS
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.to_f32() as f64
    }

    /// Round-to-nearest-even conversion from `f32`.
    pub fn from_f32(x: f32) -> Self {
        Self::from_f64(x as f64)
    }

    /// Round-to-nearest-even conversion from `f64` with a single rounding
    /// step (no double rounding through `f32`). Subnormal results are kept.
    pub fn from_f64(x: f64) -> Self {
        if x.is_nan() {
            return if x.is_sign_negative() { Bf16(0xFFC0) } else { Bf16::NAN };
        }
        let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        if a == 0.0 {
            return Bf16(sign);
        }
        if a.is_infinite() {
            return Bf16(sign | 0x7F80);
        }
        let biased = ((a.to_bits() >> 52) & 0x7FF) as i32;
        let exp = if biased == 0 { -1023 } else { biased - 1023 };
        // quantum of the bf16 grid at this binade (fixed below the normal range)
        let quantum = 2f64.powi(exp.max(-126) - BF16_MANT_BITS as i32);
        let rounded = (a / quantum).round_ties_even() * quantum;
        if rounded > f32::MAX as f64 {
            return Bf16(sign | 0x7F80);
        }
        Bf16(sign | ((rounded as f32).to_bits() >> 16) as u16)
    }

    pub fn neg(self) -> Self {
        Bf16(self.0 ^ 0x8000)
    }

    /// Distance in units-in-the-last-place between two finite values of the same sign.
    pub fn ulp_distance(self, other: Bf16) -> u32 {
        let key = |b: Bf16| -> i32 {
            let mag = (b.0 & 0x7FFF) as i32;
            if b.sign() { -mag } else { mag }
        };
        (key(self) - key(other)).unsigned_abs()
    }
}

impl fmt::Debug for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Bf16 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f32())
    }
}

impl From<Bf16> for f32 {
    fn from(v: Bf16) -> f32 {
        v.to_f32()
    }
}

/// Decode a raw pattern. Every pattern is valid.
pub fn decode_bf16(bits: u16) -> Bf16 {
    Bf16::from_bits(bits)
}

/// Signed 4-bit integer in `[-8, 7]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct Int4(i8);

impl Int4 {
    pub const MIN: i8 = -8;
    pub const MAX: i8 = 7;

    pub fn new(value: i32) -> Result<Self, NumericError> {
        if (Self::MIN as i32..=Self::MAX as i32).contains(&value) {
            Ok(Int4(value as i8))
        } else {
            Err(NumericError::Int4OutOfRange(value))
        }
    }

    pub const fn value(self) -> i8 {
        self.0
    }

    /// Sign and 3-bit magnitude as driven onto a row. The temporal window is
    /// 8 cycles wide, so -8 saturates to magnitude 7.
    pub fn sign_magnitude(self) -> (bool, u8) {
        let negative = self.0 < 0;
        let mag = self.0.unsigned_abs().min(7);
        (negative, mag)
    }
}

impl TryFrom<i8> for Int4 {
    type Error = NumericError;
    fn try_from(v: i8) -> Result<Self, Self::Error> {
        Int4::new(v as i32)
    }
}

impl From<Int4> for i8 {
    fn from(v: Int4) -> i8 {
        v.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Special {
    None,
    Zero,
    Inf,
    Nan,
}

/// Output of M-proc: sign, 3-bit rounded mantissa index and unbiased exponent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitInput {
    pub sign: bool,
    pub mantissa_index: u8,
    pub exponent: i32,
    pub special: Special,
}

impl SplitInput {
    pub fn is_special(&self) -> bool {
        self.special != Special::None
    }

    /// `(-1)^s * (1 + m/8) * 2^e`. Meaningless for specials.
    pub fn value(&self) -> f64 {
        let mag = (1.0 + self.mantissa_index as f64 / 8.0) * 2f64.powi(self.exponent);
        if self.sign { -mag } else { mag }
    }
}

/// Round the 7-bit mantissa to 3 bits (ties to even). A carry out of the
/// 3-bit field wraps the index to 0 and bumps the exponent. Subnormals are
/// flushed to the zero special.
pub fn split_and_round(x: Bf16) -> SplitInput {
    let sign = x.sign();
    let special = match x.class() {
        Bf16Class::Zero | Bf16Class::Subnormal => Special::Zero,
        Bf16Class::Infinite => Special::Inf,
        Bf16Class::Nan => Special::Nan,
        Bf16Class::Normal => Special::None,
    };
    if special != Special::None {
        return SplitInput { sign, mantissa_index: 0, exponent: 0, special };
    }
    let drop = BF16_MANT_BITS - ROUNDED_MANT_BITS;
    let mant = x.mantissa_field();
    let top = mant >> drop;
    let rem = mant & ((1 << drop) - 1);
    let half = 1 << (drop - 1);
    let round_up = rem > half || (rem == half && top & 1 == 1);
    let mut index = top + round_up as u8;
    let mut exponent = x.unbiased_exponent();
    if index == 1 << ROUNDED_MANT_BITS {
        index = 0;
        exponent += 1;
    }
    SplitInput { sign, mantissa_index: index, exponent, special }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExponentRange {
    pub min: i32,
    pub max: i32,
}

/// Exponent extrema over the non-special inputs of a mapping (E-proc).
pub fn exponent_stats<'a, I>(xs: I) -> Result<ExponentRange, NumericError>
where
    I: IntoIterator<Item = &'a SplitInput>,
{
    xs.into_iter()
        .filter(|x| !x.is_special())
        .fold(None, |acc: Option<ExponentRange>, x| {
            Some(match acc {
                None => ExponentRange { min: x.exponent, max: x.exponent },
                Some(r) => ExponentRange { min: r.min.min(x.exponent), max: r.max.max(x.exponent) },
            })
        })
        .ok_or(NumericError::NoFiniteInputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn normal(sign: bool, exp: i32, mant: u8) -> Bf16 {
        Bf16::from_fields(sign, (exp + BF16_EXP_BIAS) as u8, mant)
    }

    /// Scalar reference: round a 7-bit fraction to 3 bits, ties to even, on integers.
    fn reference_round(mant: u8) -> (u8, bool) {
        let scaled = mant as f64 / 16.0;
        let r = scaled.round_ties_even() as u8;
        if r == 8 { (0, true) } else { (r, false) }
    }

    #[test]
    fn decode_examples() {
        let one = decode_bf16(0x3F80);
        assert_eq!((one.sign(), one.exponent_field(), one.mantissa_field()), (false, 127, 0));
        assert_eq!(one.to_f32(), 1.0);
        assert_eq!(decode_bf16(0x0000).class(), Bf16Class::Zero);
        let six = decode_bf16(0xC0C0);
        assert!(six.sign());
        assert_eq!(six.unbiased_exponent(), 2);
        assert_eq!(six.mantissa_field(), 0b1000000);
        // widening oracle
        assert_eq!(f32::from_bits(0xC0C0_0000), -6.0);
        assert_eq!(six.to_f32(), -6.0);
    }

    #[test]
    fn classes_are_exclusive_and_complete() {
        for bits in 0..=u16::MAX {
            let x = Bf16::from_bits(bits);
            let f = x.to_f32();
            let expected = if f.is_nan() {
                Bf16Class::Nan
            } else if f.is_infinite() {
                Bf16Class::Infinite
            } else if f == 0.0 {
                Bf16Class::Zero
            } else if f.is_subnormal() {
                Bf16Class::Subnormal
            } else {
                Bf16Class::Normal
            };
            assert_eq!(x.class(), expected, "{bits:#06x}");
        }
    }

    #[test]
    fn from_f64_matches_f32_rounding_for_all_patterns() {
        // every bf16 value survives the f64 round trip
        for bits in 0..=u16::MAX {
            let x = Bf16::from_bits(bits);
            if x.is_nan() {
                assert!(Bf16::from_f64(x.to_f64()).is_nan());
            } else {
                assert_eq!(Bf16::from_f64(x.to_f64()), x);
            }
        }
        // halfway between 1.0 and next: ties to even goes down
        assert_eq!(Bf16::from_f64(1.0 + 2f64.powi(-8)), Bf16::ONE);
        assert_eq!(Bf16::from_f64(1.0 + 3.0 * 2f64.powi(-8)).to_f32(), 1.0 + 2f32.powi(-6));
        assert_eq!(Bf16::from_f64(1e39), Bf16::INFINITY);
        assert_eq!(Bf16::from_f64(-1e-60), Bf16::NEG_ZERO);
        assert_eq!(Bf16::from_f64(f64::from(f32::from_bits(0x0001_0000))), Bf16::from_bits(1));
    }

    #[test]
    fn split_exact_and_examples() {
        let s = split_and_round(normal(false, 3, 0));
        assert_eq!((s.mantissa_index, s.exponent, s.special), (0, 3, Special::None));
        let s = split_and_round(normal(false, 1, 0b0111011));
        assert_eq!((s.mantissa_index, s.exponent), (0b100, 1));
        let s = split_and_round(normal(true, -2, 0b1111111));
        assert_eq!((s.mantissa_index, s.exponent, s.sign), (0, -1, true));
    }

    #[test]
    fn split_matches_reference_for_every_mantissa() {
        for mant in 0..128u8 {
            let (idx, carry) = reference_round(mant);
            let s = split_and_round(normal(false, 0, mant));
            assert_eq!(s.mantissa_index, idx, "mant {mant:#09b}");
            assert_eq!(s.exponent, carry as i32);
        }
    }

    #[test]
    fn specials_pass_through() {
        assert_eq!(split_and_round(Bf16::ZERO).special, Special::Zero);
        assert_eq!(split_and_round(Bf16::from_bits(0x0001)).special, Special::Zero);
        assert_eq!(split_and_round(Bf16::NEG_INFINITY).special, Special::Inf);
        assert!(split_and_round(Bf16::NEG_INFINITY).sign);
        assert_eq!(split_and_round(Bf16::NAN).special, Special::Nan);
    }

    #[test]
    fn exponent_stats_examples() {
        let mk = |e| split_and_round(normal(false, e, 0));
        let r = exponent_stats(&[mk(2), mk(-1), mk(4)]).unwrap();
        assert_eq!((r.min, r.max), (-1, 4));
        let r = exponent_stats(&[mk(0)]).unwrap();
        assert_eq!((r.min, r.max), (0, 0));
        let zero = split_and_round(Bf16::ZERO);
        let r = exponent_stats(&[zero, mk(3)]).unwrap();
        assert_eq!((r.min, r.max), (3, 3));
        assert_eq!(exponent_stats(&[zero]), Err(NumericError::NoFiniteInputs));
        assert_eq!(exponent_stats(&[]), Err(NumericError::NoFiniteInputs));
    }

    #[test]
    fn int4_range_and_magnitude() {
        assert!(Int4::new(8).is_err());
        assert!(Int4::new(-9).is_err());
        assert_eq!(Int4::new(-8).unwrap().sign_magnitude(), (true, 7));
        assert_eq!(Int4::new(-3).unwrap().sign_magnitude(), (true, 3));
        assert_eq!(Int4::new(7).unwrap().sign_magnitude(), (false, 7));
        assert_eq!(Int4::new(0).unwrap().sign_magnitude(), (false, 0));
    }

    proptest! {
        #[test]
        fn bits_round_trip(bits in any::<u16>()) {
            let x = decode_bf16(bits);
            prop_assert_eq!(Bf16::from_fields(x.sign(), x.exponent_field(), x.mantissa_field()).to_bits(), bits);
        }

        #[test]
        fn rounding_error_is_bounded(bits in any::<u16>()) {
            let x = Bf16::from_bits(bits);
            prop_assume!(x.class() == Bf16Class::Normal);
            let s = split_and_round(x);
            let rel = ((s.value() - x.to_f64()) / x.to_f64()).abs();
            prop_assert!(rel <= 2f64.powi(-4), "rel {rel}");
        }

        #[test]
        fn rounding_is_monotone(a in 0x0080u16..0x7F80, b in 0x0080u16..0x7F80, neg in any::<bool>()) {
            let sign = if neg { 0x8000 } else { 0 };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let sl = split_and_round(Bf16::from_bits(lo | sign)).value().abs();
            let sh = split_and_round(Bf16::from_bits(hi | sign)).value().abs();
            prop_assert!(sl <= sh);
        }

        #[test]
        fn from_f32_agrees_with_bit_trick(x in any::<f32>()) {
            prop_assume!(!x.is_nan());
            // classic rne on the upper half of an f32
            let bits = x.to_bits();
            let trick = (bits.wrapping_add(0x7FFF + ((bits >> 16) & 1)) >> 16) as u16;
            prop_assert_eq!(Bf16::from_f32(x).to_bits(), trick);
        }
    }
}
