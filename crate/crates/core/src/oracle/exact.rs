//! Wide-integer evaluation of the grouped truncating MMA semantics.
//!
//! This file deliberately re-derives bit decoding, product formation,
//! grid flooring and FP32 encoding from first principles with `BigInt`, so a
//! disagreement with the fast model points at a bug in one of the two.

use num_bigint::{BigInt, Sign};
use num_traits::{One, Signed, Zero};

use crate::formats::{FloatFormat, Rounding};
use crate::pipeline::{PipelineProfile, Slot};

use super::OracleError;

/// `magnitude * 2^scale_exponent`, held exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactAccumulator {
    pub magnitude: BigInt,
    pub scale_exponent: i64,
}

impl ExactAccumulator {
    pub fn zero() -> Self {
        ExactAccumulator { magnitude: BigInt::zero(), scale_exponent: 0 }
    }

    pub fn new(magnitude: BigInt, scale_exponent: i64) -> Self {
        ExactAccumulator { magnitude, scale_exponent }
    }

    pub fn is_zero(&self) -> bool {
        self.magnitude.is_zero()
    }

    /// Exact sum; the result uses the finer of the two scales.
    pub fn add(&self, other: &ExactAccumulator) -> ExactAccumulator {
        let scale = self.scale_exponent.min(other.scale_exponent);
        let lift = |x: &ExactAccumulator| &x.magnitude << (x.scale_exponent - scale) as usize;
        ExactAccumulator { magnitude: lift(self) + lift(other), scale_exponent: scale }
    }

    /// Integer count of `2^grid` units, rounded per `mode` (applied to the
    /// signed value).
    pub fn to_grid(&self, grid: i64, mode: Rounding) -> BigInt {
        if self.scale_exponent >= grid {
            return &self.magnitude << (self.scale_exponent - grid) as usize;
        }
        let shift = (grid - self.scale_exponent) as usize;
        let negative = self.magnitude.is_negative();
        let mag = self.magnitude.abs();
        let kept = &mag >> shift;
        let rem = &mag - (&kept << shift);
        let half = BigInt::one() << (shift - 1);
        let up = !rem.is_zero()
            && match mode {
                Rounding::TowardZero => false,
                Rounding::NearestEven => rem > half || (rem == half && (&kept % 2u32) == BigInt::one()),
                Rounding::NearestAway => rem >= half,
                Rounding::TowardPositive => !negative,
                Rounding::TowardNegative => negative,
            };
        let units = if up { kept + 1 } else { kept };
        if negative {
            -units
        } else {
            units
        }
    }

    /// Exponent of the leading bit; `None` for zero.
    pub fn leading_exponent(&self) -> Option<i64> {
        (!self.is_zero()).then(|| self.scale_exponent + self.magnitude.bits() as i64 - 1)
    }
}

#[derive(Debug, Clone)]
enum Input {
    Zero,
    Finite { value: ExactAccumulator, stored_exponent: i64, subnormal: bool },
    Infinite(bool),
    Nan,
}

fn read(bits: u32, fmt: FloatFormat) -> Input {
    let m = fmt.mantissa_bits;
    let e_bits = fmt.exponent_bits;
    let negative = (bits >> (m + e_bits)) & 1 == 1;
    let field = (bits >> m) & ((1 << e_bits) - 1);
    let frac = bits & ((1 << m) - 1);
    let all_ones = (1 << e_bits) - 1;
    let e4m3 = !fmt.has_infinity;
    if field == all_ones && !e4m3 {
        return if frac == 0 { Input::Infinite(negative) } else { Input::Nan };
    }
    if field == all_ones && e4m3 && frac == (1 << m) - 1 {
        return Input::Nan;
    }
    if field == 0 && frac == 0 {
        return Input::Zero;
    }
    let bias = (1i64 << (e_bits - 1)) - 1;
    let (stored, sig, subnormal) =
        if field == 0 { (1 - bias, frac, true) } else { (field as i64 - bias, frac | (1 << m), false) };
    let magnitude = BigInt::from(sig);
    let value = ExactAccumulator::new(if negative { -magnitude } else { magnitude }, stored - m as i64);
    Input::Finite { value, stored_exponent: stored, subnormal }
}

/// Encodes `units * 2^grid` as FP32, overflowing to infinity.
fn encode_fp32(units: &BigInt, grid: i64, mode: Rounding) -> u32 {
    if units.is_zero() {
        return 0;
    }
    let sign = if units.is_negative() { 0x8000_0000 } else { 0 };
    let acc = ExactAccumulator::new(units.clone(), grid);
    let top = acc.leading_exponent().expect("nonzero");
    let lsb = top.max(-126) - 23;
    let n = acc.to_grid(lsb, mode).abs();
    let (n, lsb) = if n == BigInt::one() << 24usize { (BigInt::one() << 23usize, lsb + 1) } else { (n, lsb) };
    if n.is_zero() {
        return sign;
    }
    if lsb + 23 > 127 {
        return sign | 0x7f80_0000;
    }
    let n: u32 = n.to_biguint().and_then(|u| u32::try_from(&u).ok()).expect("24-bit significand");
    if n < 1 << 23 {
        sign | n
    } else {
        sign | (((lsb + 23 + 127) as u32) << 23) | (n - (1 << 23))
    }
}

struct GroupOperand {
    value: ExactAccumulator,
    exponent: i64,
}

/// Evaluates one group. `specials` lists infinities (by sign) and NaN flags
/// among the FP32 operands.
fn group(operands: &[GroupOperand], specials: &[Option<bool>], profile: &PipelineProfile) -> u32 {
    let nan = specials.iter().any(|s| s.is_none());
    let pos = specials.contains(&Some(false));
    let neg = specials.contains(&Some(true));
    if nan || (pos && neg) {
        return 0x7fc0_0000;
    }
    if pos {
        return 0x7f80_0000;
    }
    if neg {
        return 0xff80_0000;
    }
    let live: Vec<&GroupOperand> = operands.iter().filter(|o| !o.value.is_zero()).collect();
    if live.is_empty() {
        return 0;
    }
    let e_max = live.iter().map(|o| o.exponent).max().unwrap().max(profile.exponent_floor);
    let grid = e_max - profile.internal_width as i64;
    let total: BigInt = live.iter().map(|o| o.value.to_grid(grid, profile.alignment_rounding)).sum();
    encode_fp32(&total, grid, profile.final_rounding)
}

fn fp32_operand(bits: u32) -> (Option<GroupOperand>, Option<Option<bool>>) {
    match read(bits, FloatFormat::FP32) {
        Input::Zero => (None, None),
        Input::Finite { value, stored_exponent, .. } => (Some(GroupOperand { value, exponent: stored_exponent }), None),
        Input::Infinite(neg) => (None, Some(Some(neg))),
        Input::Nan => (None, Some(None)),
    }
}

/// Independent evaluation of one MMA output element.
pub fn exact_mma_element(c: u32, a_row: &[u32], b_col: &[u32], profile: &PipelineProfile) -> Result<u32, OracleError> {
    profile.validate().map_err(|e| OracleError::Profile(e.to_string()))?;
    element(c, a_row, b_col, profile)
}

/// `exact_mma_element` for a profile that has already been validated.
pub(crate) fn element(c: u32, a_row: &[u32], b_col: &[u32], profile: &PipelineProfile) -> Result<u32, OracleError> {
    if a_row.len() != 16 || b_col.len() != 16 {
        return Err(OracleError::Shape(format!("need 16 factors, got {} and {}", a_row.len(), b_col.len())));
    }
    let fmt = profile.input_format;
    let mut products: Vec<Option<GroupOperand>> = Vec::with_capacity(16);
    for (k, (&x, &y)) in a_row.iter().zip(b_col).enumerate() {
        let (x, y) = (read(x, fmt), read(y, fmt));
        let product = match (x, y) {
            (Input::Infinite(_) | Input::Nan, _) | (_, Input::Infinite(_) | Input::Nan) => {
                return Err(OracleError::UnsupportedInput(format!("non-finite factor at k = {}", k + 1)));
            }
            (Input::Zero, _) | (_, Input::Zero) => None,
            (
                Input::Finite { value: va, stored_exponent: ea, subnormal: sa },
                Input::Finite { value: vb, stored_exponent: eb, subnormal: sb },
            ) => {
                let value = ExactAccumulator::new(
                    va.magnitude * vb.magnitude,
                    va.scale_exponent + vb.scale_exponent,
                );
                let raw_key = ea + eb;
                let normalize = profile.normalize_products || (profile.renormalize_subnormal_products && (sa || sb));
                let exponent = if normalize { value.leading_exponent().expect("nonzero") } else { raw_key };
                Some(GroupOperand { value, exponent })
            }
        };
        products.push(product);
    }
    let mut prev = 0u32;
    for slots in &profile.grouping {
        let mut operands = Vec::new();
        let mut specials = Vec::new();
        for slot in slots {
            match slot {
                Slot::Product(k) => {
                    if let Some(p) = products[*k as usize - 1].take() {
                        operands.push(p);
                    }
                }
                Slot::Acc | Slot::Prev => {
                    let bits = if *slot == Slot::Acc { c } else { prev };
                    let (op, special) = fp32_operand(bits);
                    operands.extend(op);
                    specials.extend(special);
                }
            }
        }
        prev = group(&operands, &specials, profile);
    }
    Ok(prev)
}

/// Exact value of a pattern as a wide integer times a power of two.
pub fn exact_value(bits: u32, fmt: FloatFormat) -> Option<ExactAccumulator> {
    match read(bits, fmt) {
        Input::Zero => Some(ExactAccumulator::zero()),
        Input::Finite { value, .. } => Some(value),
        _ => None,
    }
}

/// `value` as an `f64` when it fits exactly; used for diagnostics.
pub fn approx_f64(value: &ExactAccumulator) -> f64 {
    let (sign, mag) = value.magnitude.clone().into_parts();
    let bits = mag.bits();
    let (mag, scale) = if bits > 60 {
        let drop = bits - 60;
        (mag >> drop as usize, value.scale_exponent + drop as i64)
    } else {
        (mag, value.scale_exponent)
    };
    let m = u64::try_from(&mag).unwrap_or(0) as f64 * 2f64.powi(scale.clamp(-2000, 2000) as i32);
    if sign == Sign::Minus {
        -m
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::FloatFormat;

    const F16: FloatFormat = FloatFormat::FP16;

    fn h(x: f32) -> u32 {
        half::f16::from_f32(x).to_bits() as u32
    }

    fn row(entries: &[(usize, u32)]) -> [u32; 16] {
        let mut r = [0; 16];
        for &(k, v) in entries {
            r[k] = v;
        }
        r
    }

    #[test]
    fn grid_rounding_modes() {
        // -5 * 2^-2 = -1.25 onto the unit grid.
        let v = ExactAccumulator::new(BigInt::from(-5), -2);
        assert_eq!(v.to_grid(0, Rounding::TowardZero), BigInt::from(-1));
        assert_eq!(v.to_grid(0, Rounding::TowardNegative), BigInt::from(-2));
        assert_eq!(v.to_grid(0, Rounding::TowardPositive), BigInt::from(-1));
        assert_eq!(v.to_grid(0, Rounding::NearestEven), BigInt::from(-1));
        let tie = ExactAccumulator::new(BigInt::from(5), -1);
        assert_eq!(tie.to_grid(0, Rounding::NearestEven), BigInt::from(2));
        assert_eq!(tie.to_grid(0, Rounding::NearestAway), BigInt::from(3));
        assert_eq!(tie.to_grid(-3, Rounding::TowardZero), BigInt::from(20));
    }

    #[test]
    fn accumulator_addition_is_exact() {
        let a = ExactAccumulator::new(BigInt::from(3), 100);
        let b = ExactAccumulator::new(BigInt::from(-1), -100);
        let s = a.add(&b);
        assert_eq!(s.scale_exponent, -100);
        assert_eq!(s.magnitude, (BigInt::from(3) << 200usize) - 1);
        assert_eq!(s.add(&b.add(&a)).magnitude, s.magnitude.clone() * 2);
    }

    #[test]
    fn fp32_encoder_edges() {
        let enc = |units: i64, grid: i64| encode_fp32(&BigInt::from(units), grid, Rounding::TowardZero);
        assert_eq!(enc(1, -149), 1);
        assert_eq!(enc(1, -150), 0);
        assert_eq!(enc(-1, -150), 0x8000_0000);
        assert_eq!(enc(255, -156), 1);
        assert_eq!(enc(1, 0), 0x3f80_0000);
        assert_eq!(enc(1, 127), 0x7f00_0000);
        assert_eq!(enc(1, 128), 0x7f80_0000);
        assert_eq!(enc((1 << 25) - 1, 103), 0x7f7f_ffff);
        assert_eq!(enc(-3, 127), 0xff80_0000);
        assert_eq!(encode_fp32(&BigInt::from(7), -2, Rounding::NearestEven), (1.75f32).to_bits());
    }

    #[test]
    fn oracle_golden_values() {
        let amp = PipelineProfile::ampere(F16);
        let out = exact_mma_element(0, &row(&[(0, h(2047.0))]), &row(&[(0, h(2047.0))]), &amp).unwrap();
        assert_eq!(f32::from_bits(out), 4_190_209.0);

        assert_eq!(exact_mma_element(0, &[0; 16], &[0; 16], &amp).unwrap(), 0);

        let a = row(&[(0, h(6144.0)), (1, h(1.0))]);
        let b = row(&[(0, h(6144.0)), (1, h(-1.0))]);
        let out = exact_mma_element(0, &a, &b, &amp).unwrap();
        assert_eq!(f32::from_bits(out) as f64, 2.25 * 2f64.powi(24) - 4.0);

        let a = row(&[(0, h(6144.0)), (1, h(3.0))]);
        let b = row(&[(0, h(6144.0)), (1, h(1.0))]);
        let out = exact_mma_element(0, &a, &b, &amp).unwrap();
        assert_eq!(f32::from_bits(out) as f64, 2.25 * 2f64.powi(24));
    }

    #[test]
    fn oracle_rejects_non_finite_factors() {
        let amp = PipelineProfile::ampere(F16);
        let a = row(&[(3, 0x7c00)]);
        assert!(exact_mma_element(0, &a, &[0; 16], &amp).is_err());
        assert!(exact_mma_element(0, &[0; 15], &[0; 16], &amp).is_err());
    }
}
