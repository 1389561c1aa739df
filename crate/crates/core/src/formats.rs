//! Binary floating-point encodings and a reference IEEE-754 multiply/add.
//!
//! Every shipped encoding (FP32, FP16, BF16, FP8-E4M3) is described by a
//! [`FloatFormat`]. Bit patterns are carried in the low bits of a `u32`.
//! Decoding produces an [`UnpackedValue`] with an integer significand, so
//! arithmetic can be carried out exactly and rounded exactly once.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("format {0} cannot encode infinity")]
    NoInfinity(FloatFormat),
    #[error("unknown float format `{0}`")]
    UnknownFormat(String),
}

/// How the all-ones exponent field is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NanRule {
    /// Exponent all ones: zero fraction is infinity, anything else is NaN.
    Ieee,
    /// OCP E4M3: no infinities; only `S.1111.111` is NaN.
    E4m3AllOnes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FloatFormat {
    pub total_bits: u32,
    pub exponent_bits: u32,
    pub mantissa_bits: u32,
    pub bias: i32,
    pub has_infinity: bool,
    pub nan_rule: NanRule,
}

impl FloatFormat {
    pub const FP32: FloatFormat = FloatFormat::ieee(8, 23);
    pub const FP16: FloatFormat = FloatFormat::ieee(5, 10);
    pub const BF16: FloatFormat = FloatFormat::ieee(8, 7);
    pub const FP8_E4M3: FloatFormat = FloatFormat {
        total_bits: 8,
        exponent_bits: 4,
        mantissa_bits: 3,
        bias: 7,
        has_infinity: false,
        nan_rule: NanRule::E4m3AllOnes,
    };

    pub const SHIPPED: [FloatFormat; 4] = [
        FloatFormat::FP32,
        FloatFormat::FP16,
        FloatFormat::BF16,
        FloatFormat::FP8_E4M3,
    ];

    /// An IEEE-style binary format with the standard bias.
    pub const fn ieee(exponent_bits: u32, mantissa_bits: u32) -> FloatFormat {
        FloatFormat {
            total_bits: 1 + exponent_bits + mantissa_bits,
            exponent_bits,
            mantissa_bits,
            bias: (1 << (exponent_bits - 1)) - 1,
            has_infinity: true,
            nan_rule: NanRule::Ieee,
        }
    }

    pub fn name(&self) -> &'static str {
        match *self {
            f if f == Self::FP32 => "fp32",
            f if f == Self::FP16 => "fp16",
            f if f == Self::BF16 => "bf16",
            f if f == Self::FP8_E4M3 => "fp8",
            _ => "custom",
        }
    }

    /// Format code used by the tile-binary file header.
    pub fn code(&self) -> Option<u8> {
        match *self {
            f if f == Self::FP32 => Some(1),
            f if f == Self::FP16 => Some(2),
            f if f == Self::BF16 => Some(3),
            f if f == Self::FP8_E4M3 => Some(4),
            _ => None,
        }
    }

    pub fn from_code(code: u8) -> Option<FloatFormat> {
        match code {
            1 => Some(Self::FP32),
            2 => Some(Self::FP16),
            3 => Some(Self::BF16),
            4 => Some(Self::FP8_E4M3),
            _ => None,
        }
    }

    /// Bytes per element in little-endian storage.
    pub fn storage_bytes(&self) -> usize {
        self.total_bits.div_ceil(8) as usize
    }

    pub fn sign_mask(&self) -> u32 {
        1 << (self.total_bits - 1)
    }

    pub fn magnitude_mask(&self) -> u32 {
        self.sign_mask() - 1
    }

    fn exponent_field_max(&self) -> u32 {
        (1 << self.exponent_bits) - 1
    }

    fn fraction_mask(&self) -> u32 {
        (1 << self.mantissa_bits) - 1
    }

    /// Unbiased exponent of the smallest normal (and of every subnormal).
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias
    }

    /// Unbiased exponent of the largest finite value.
    pub fn max_exponent(&self) -> i32 {
        match self.nan_rule {
            NanRule::Ieee => self.exponent_field_max() as i32 - 1 - self.bias,
            NanRule::E4m3AllOnes => self.exponent_field_max() as i32 - self.bias,
        }
    }

    /// Magnitude bits (sign cleared) of the largest finite value.
    pub fn max_finite_bits(&self) -> u32 {
        match self.nan_rule {
            NanRule::Ieee => ((self.exponent_field_max() - 1) << self.mantissa_bits) | self.fraction_mask(),
            NanRule::E4m3AllOnes => {
                (self.exponent_field_max() << self.mantissa_bits) | (self.fraction_mask() - 1)
            }
        }
    }

    pub fn canonical_nan(&self) -> u32 {
        match self.nan_rule {
            NanRule::Ieee => {
                (self.exponent_field_max() << self.mantissa_bits) | (1 << (self.mantissa_bits - 1))
            }
            NanRule::E4m3AllOnes => self.magnitude_mask(),
        }
    }

    pub fn infinity_bits(&self, negative: bool) -> Option<u32> {
        if !self.has_infinity {
            return None;
        }
        let sign = if negative { self.sign_mask() } else { 0 };
        Some(sign | (self.exponent_field_max() << self.mantissa_bits))
    }

    pub fn is_valid_pattern(&self, bits: u32) -> bool {
        self.total_bits == 32 || bits >> self.total_bits == 0
    }

    pub fn classify(&self, bits: u32) -> FloatClass {
        let field = (bits >> self.mantissa_bits) & self.exponent_field_max();
        let frac = bits & self.fraction_mask();
        if field == self.exponent_field_max() {
            match self.nan_rule {
                NanRule::Ieee if frac == 0 => return FloatClass::Infinity,
                NanRule::Ieee => return FloatClass::Nan,
                NanRule::E4m3AllOnes if frac == self.fraction_mask() => return FloatClass::Nan,
                NanRule::E4m3AllOnes => {}
            }
        }
        match (field, frac) {
            (0, 0) => FloatClass::Zero,
            (0, _) => FloatClass::Subnormal,
            _ => FloatClass::Normal,
        }
    }

    pub fn is_finite_pattern(&self, bits: u32) -> bool {
        !matches!(self.classify(bits), FloatClass::Infinity | FloatClass::Nan)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.name() {
            "custom" => write!(f, "e{}m{}", self.exponent_bits, self.mantissa_bits),
            name => f.write_str(name),
        }
    }
}

impl FromStr for FloatFormat {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "f32" => Ok(Self::FP32),
            "fp16" | "f16" => Ok(Self::FP16),
            "bf16" => Ok(Self::BF16),
            "fp8" | "fp8_e4m3" | "e4m3" => Ok(Self::FP8_E4M3),
            _ => Err(FormatError::UnknownFormat(s.to_string())),
        }
    }
}

impl Serialize for FloatFormat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for FloatFormat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FloatClass {
    Zero,
    Subnormal,
    Normal,
    Infinity,
    Nan,
}

/// Rounding applied when a value is squeezed into a narrower significand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    NearestEven,
    NearestAway,
    TowardZero,
    TowardPositive,
    TowardNegative,
}

impl Rounding {
    pub const ALL: [Rounding; 5] = [
        Rounding::NearestEven,
        Rounding::NearestAway,
        Rounding::TowardZero,
        Rounding::TowardPositive,
        Rounding::TowardNegative,
    ];
}

impl fmt::Display for Rounding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rounding::NearestEven => "nearest_even",
            Rounding::NearestAway => "nearest_away",
            Rounding::TowardZero => "toward_zero",
            Rounding::TowardPositive => "toward_positive",
            Rounding::TowardNegative => "toward_negative",
        })
    }
}

/// What `encode` does with a rounded magnitude above the largest finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overflow {
    /// Infinity of the value's sign; an error for formats without infinity.
    Infinity,
    /// Largest finite magnitude of the value's sign.
    MaxFinite,
}

/// A decoded number: `(-1)^sign * significand * 2^(exponent - scale)`.
///
/// Values produced by [`decode`] keep the format's stored exponent, so a
/// subnormal has `exponent = 1 - bias` and a significand with leading zeros.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UnpackedValue {
    pub sign: bool,
    pub exponent: i64,
    pub significand: u128,
    pub scale: u32,
    pub class: FloatClass,
}

impl UnpackedValue {
    pub fn zero(sign: bool) -> Self {
        UnpackedValue { sign, exponent: 0, significand: 0, scale: 0, class: FloatClass::Zero }
    }

    pub fn infinity(sign: bool) -> Self {
        UnpackedValue { sign, exponent: 0, significand: 0, scale: 0, class: FloatClass::Infinity }
    }

    pub fn nan() -> Self {
        UnpackedValue { sign: false, exponent: 0, significand: 0, scale: 0, class: FloatClass::Nan }
    }

    /// The exact value `(-1)^sign * magnitude * 2^lsb_exponent`, normalized so
    /// the leading significand bit sits at `scale`.
    pub fn exact(sign: bool, magnitude: u128, lsb_exponent: i64) -> Self {
        if magnitude == 0 {
            return Self::zero(sign);
        }
        let scale = 127 - magnitude.leading_zeros();
        UnpackedValue {
            sign,
            exponent: lsb_exponent + scale as i64,
            significand: magnitude,
            scale,
            class: FloatClass::Normal,
        }
    }

    /// Exact conversion from an `f64`.
    pub fn from_f64(x: f64) -> Self {
        if x.is_nan() {
            return Self::nan();
        }
        let sign = x.is_sign_negative();
        if x.is_infinite() {
            return Self::infinity(sign);
        }
        let bits = x.to_bits();
        let field = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        match field {
            0 if frac == 0 => Self::zero(sign),
            0 => Self::exact(sign, frac as u128, -1074),
            _ => Self::exact(sign, (frac | (1 << 52)) as u128, field - 1075),
        }
    }

    /// Nearest `f64`; exact whenever the value fits.
    pub fn to_f64(&self) -> f64 {
        let signed = |m: f64| if self.sign { -m } else { m };
        match self.class {
            FloatClass::Nan => f64::NAN,
            FloatClass::Infinity => signed(f64::INFINITY),
            FloatClass::Zero => signed(0.0),
            _ if self.significand == 0 => signed(0.0),
            _ => {
                let (emin, m) = (-1022i64, 52i64);
                let (n, q) =
                    round_significand(self.sign, self.significand, self.lsb_exponent(), emin, m, Rounding::NearestEven);
                let mag = (((q + m - emin) as i128) << m) + n as i128;
                if mag >= 0x7ff << 52 {
                    return signed(f64::INFINITY);
                }
                signed(f64::from_bits(mag as u64))
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.class == FloatClass::Zero || (self.is_finite() && self.significand == 0)
    }

    pub fn is_finite(&self) -> bool {
        !matches!(self.class, FloatClass::Infinity | FloatClass::Nan)
    }

    pub fn is_nan(&self) -> bool {
        self.class == FloatClass::Nan
    }

    /// Exponent of the least significant significand bit.
    pub fn lsb_exponent(&self) -> i64 {
        self.exponent - self.scale as i64
    }

    pub fn negated(mut self) -> Self {
        self.sign = !self.sign;
        self
    }
}

/// Rounds `sig * 2^lsb` onto the grid of a format with `m` fraction bits and
/// minimum exponent `emin`. Returns the integer significand and the exponent
/// of its unit; the significand may carry into `2^(m+1)`.
fn round_significand(sign: bool, sig: u128, lsb: i64, emin: i64, m: i64, rounding: Rounding) -> (u128, i64) {
    let top = lsb + 127 - sig.leading_zeros() as i64;
    let q = top.max(emin) - m;
    let shift = q - lsb;
    if shift <= 0 {
        return (sig << (-shift) as u32, q);
    }
    let (kept, rem_vs_half, inexact) = if shift >= 129 {
        (0, Ordering::Less, true)
    } else if shift == 128 {
        let half = 1u128 << 127;
        (0, sig.cmp(&half), true)
    } else {
        let rem = sig & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        (sig >> shift, rem.cmp(&half), rem != 0)
    };
    let bump = match rounding {
        Rounding::TowardZero => false,
        Rounding::NearestEven => {
            rem_vs_half == Ordering::Greater || (rem_vs_half == Ordering::Equal && kept & 1 == 1)
        }
        Rounding::NearestAway => rem_vs_half != Ordering::Less,
        Rounding::TowardPositive => inexact && !sign,
        Rounding::TowardNegative => inexact && sign,
    };
    (kept + bump as u128, q)
}

/// Decodes a bit pattern of `fmt`.
///
/// Panics if `bits` does not fit in `fmt.total_bits`.
pub fn decode(bits: u32, fmt: FloatFormat) -> UnpackedValue {
    assert!(fmt.is_valid_pattern(bits), "pattern {bits:#x} is wider than {fmt}");
    let sign = bits & fmt.sign_mask() != 0;
    let field = (bits >> fmt.mantissa_bits) & fmt.exponent_field_max();
    let frac = (bits & fmt.fraction_mask()) as u128;
    let scale = fmt.mantissa_bits;
    let emin = fmt.min_exponent() as i64;
    let class = fmt.classify(bits);
    match class {
        FloatClass::Nan => UnpackedValue::nan(),
        FloatClass::Infinity => UnpackedValue::infinity(sign),
        FloatClass::Zero => UnpackedValue { sign, exponent: emin, significand: 0, scale, class },
        FloatClass::Subnormal => UnpackedValue { sign, exponent: emin, significand: frac, scale, class },
        FloatClass::Normal => UnpackedValue {
            sign,
            exponent: field as i64 - fmt.bias as i64,
            significand: frac | (1 << scale),
            scale,
            class,
        },
    }
}

/// Encodes `v` into `fmt`, rounding the significand once.
pub fn encode(v: &UnpackedValue, fmt: FloatFormat, rounding: Rounding, overflow: Overflow) -> Result<u32, FormatError> {
    let sign_bit = if v.sign { fmt.sign_mask() } else { 0 };
    match v.class {
        FloatClass::Nan => return Ok(fmt.canonical_nan()),
        FloatClass::Infinity => return fmt.infinity_bits(v.sign).ok_or(FormatError::NoInfinity(fmt)),
        FloatClass::Zero => return Ok(sign_bit),
        _ if v.significand == 0 => return Ok(sign_bit),
        _ => {}
    }
    let emin = fmt.min_exponent() as i64;
    let m = fmt.mantissa_bits as i64;
    let (n, q) = round_significand(v.sign, v.significand, v.lsb_exponent(), emin, m, rounding);
    if n == 0 {
        return Ok(sign_bit);
    }
    // (q + m - emin) is the biased exponent field minus one for normals and
    // zero for subnormals; adding n (which includes the hidden bit) fixes both.
    let field_part = (q + m - emin) as i128;
    let mag = (field_part << m) + n as i128;
    if mag > fmt.max_finite_bits() as i128 {
        return match overflow {
            Overflow::Infinity => fmt.infinity_bits(v.sign).ok_or(FormatError::NoInfinity(fmt)),
            Overflow::MaxFinite => Ok(sign_bit | fmt.max_finite_bits()),
        };
    }
    Ok(sign_bit | mag as u32)
}

/// Rounds `v` to nearest-even in `fmt` and decodes the result. Overflow in a
/// format without infinity yields NaN.
pub fn round_to(v: &UnpackedValue, fmt: FloatFormat) -> UnpackedValue {
    match encode(v, fmt, Rounding::NearestEven, Overflow::Infinity) {
        Ok(bits) => decode(bits, fmt),
        Err(_) => UnpackedValue::nan(),
    }
}

/// Correctly rounded (nearest-even) product in `fmt`.
pub fn ieee_mul(a: &UnpackedValue, b: &UnpackedValue, fmt: FloatFormat) -> UnpackedValue {
    let sign = a.sign ^ b.sign;
    if a.is_nan() || b.is_nan() {
        return UnpackedValue::nan();
    }
    match (a.is_finite(), b.is_finite()) {
        (false, _) if b.is_zero() => return UnpackedValue::nan(),
        (_, false) if a.is_zero() => return UnpackedValue::nan(),
        (false, _) | (_, false) => return round_to(&UnpackedValue::infinity(sign), fmt),
        _ => {}
    }
    if a.is_zero() || b.is_zero() {
        return UnpackedValue::zero(sign);
    }
    let product = a
        .significand
        .checked_mul(b.significand)
        .expect("significands of supported formats multiply within 128 bits");
    round_to(&UnpackedValue::exact(sign, product, a.lsb_exponent() + b.lsb_exponent()), fmt)
}

/// Correctly rounded (nearest-even) sum in `fmt`. Exact cancellation gives +0.
pub fn ieee_add(a: &UnpackedValue, b: &UnpackedValue, fmt: FloatFormat) -> UnpackedValue {
    if a.is_nan() || b.is_nan() {
        return UnpackedValue::nan();
    }
    match (a.is_finite(), b.is_finite()) {
        (false, false) if a.sign != b.sign => return UnpackedValue::nan(),
        (false, _) => return round_to(a, fmt),
        (_, false) => return round_to(b, fmt),
        _ => {}
    }
    if a.is_zero() && b.is_zero() {
        return UnpackedValue::zero(a.sign && b.sign);
    }
    if a.is_zero() {
        return round_to(b, fmt);
    }
    if b.is_zero() {
        return round_to(a, fmt);
    }
    let lsb = a.lsb_exponent().min(b.lsb_exponent());
    let fits = |v: &UnpackedValue| {
        v.significand == 0 || (v.lsb_exponent() - lsb) + (128 - v.significand.leading_zeros() as i64) <= 126
    };
    if fits(a) && fits(b) {
        let widen = |v: &UnpackedValue| {
            let mag = (v.significand << (v.lsb_exponent() - lsb) as u32) as i128;
            if v.sign {
                -mag
            } else {
                mag
            }
        };
        let sum = widen(a) + widen(b);
        if sum == 0 {
            return UnpackedValue::zero(false);
        }
        return round_to(&UnpackedValue::exact(sum < 0, sum.unsigned_abs(), lsb), fmt);
    }
    let widen = |v: &UnpackedValue| {
        let mag = BigInt::from(v.significand) << (v.lsb_exponent() - lsb) as usize;
        if v.sign {
            -mag
        } else {
            mag
        }
    };
    let sum = widen(a) + widen(b);
    if sum.is_zero() {
        return UnpackedValue::zero(false);
    }
    let (sign, mag) = sum.into_parts();
    let (mag, lsb) = compress_sticky(mag, lsb);
    round_to(&UnpackedValue::exact(sign == Sign::Minus, mag, lsb), fmt)
}

/// Narrows a wide magnitude to at most 120 bits, folding every discarded bit
/// into the lowest kept bit. Rounding to any precision up to 118 bits is
/// unaffected.
fn compress_sticky(mag: BigUint, lsb: i64) -> (u128, i64) {
    const KEEP: u64 = 120;
    let bits = mag.bits();
    if bits <= KEEP {
        return (mag.to_u128().expect("fits in 120 bits"), lsb);
    }
    let shift = bits - KEEP;
    let kept = &mag >> shift as usize;
    let sticky = kept.clone() << shift as usize != mag;
    let kept = kept.to_u128().expect("fits in 120 bits") | sticky as u128;
    (kept, lsb + shift as i64)
}

/// Converts `v` into `fmt` with nearest-even rounding (exact when widening).
pub fn convert(v: &UnpackedValue, fmt: FloatFormat) -> UnpackedValue {
    round_to(v, fmt)
}

/// Encodes an `f64` that must be exactly representable in `fmt`.
pub fn exact_bits(x: f64, fmt: FloatFormat) -> Option<u32> {
    let v = UnpackedValue::from_f64(x);
    let bits = encode(&v, fmt, Rounding::NearestEven, Overflow::Infinity).ok()?;
    let back = decode(bits, fmt).to_f64();
    let same = back == x && back.is_sign_negative() == x.is_sign_negative();
    (same || (x.is_nan() && back.is_nan())).then_some(bits)
}

/// Value of a bit pattern as `f64` (exact for all shipped formats).
pub fn to_f64(bits: u32, fmt: FloatFormat) -> f64 {
    decode(bits, fmt).to_f64()
}
