//! The recovered tensor-core MMA model.
//!
//! Products are formed exactly and never normalized: a product keeps the sum
//! of its factors' stored exponents as its alignment key. Each accumulation
//! group finds its maximum exponent (clamped from below by the profile's
//! floor), truncates every operand onto the grid `2^(e_max - W)`, adds the
//! grid integers exactly and encodes the sum to FP32 toward zero. A group's
//! FP32 result enters the next group as `PREV`.

mod profile;
mod tile;

pub use profile::{Arch, PipelineProfile, Slot, EXPONENT_FLOOR_LIMIT, MAX_INTERNAL_WIDTH};
pub(crate) use profile::canonical_groups;
pub use tile::{Tile, TILE_DIM, TILE_LEN};

use thiserror::Error;

use crate::formats::{self, FloatClass, FloatFormat, Overflow, Rounding, UnpackedValue};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("format mismatch: expected {expected}, found {found}")]
    FormatMismatch { expected: FloatFormat, found: FloatFormat },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
}

const FP32_NAN: u32 = 0x7fc0_0000;

/// Exact, unnormalized product of two finite inputs.
///
/// `value = (-1)^sign * significand * 2^(exponent_key - scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawProduct {
    pub sign: bool,
    pub exponent_key: i64,
    pub significand: u128,
    pub scale: u32,
    pub is_zero: bool,
    /// At least one factor was subnormal.
    pub subnormal_factor: bool,
}

impl RawProduct {
    pub fn to_f64(&self) -> f64 {
        UnpackedValue::exact(self.sign, self.significand, self.exponent_key - self.scale as i64).to_f64()
    }
}

pub fn multiply_raw(a: &UnpackedValue, b: &UnpackedValue) -> Result<RawProduct, PipelineError> {
    for v in [a, b] {
        if !v.is_finite() {
            return Err(PipelineError::UnsupportedInput(format!("{:?} factor", v.class)));
        }
    }
    let significand = a
        .significand
        .checked_mul(b.significand)
        .ok_or_else(|| PipelineError::UnsupportedInput("factor significands too wide".into()))?;
    Ok(RawProduct {
        sign: a.sign ^ b.sign,
        exponent_key: a.exponent + b.exponent,
        significand,
        scale: a.scale + b.scale,
        is_zero: significand == 0,
        subnormal_factor: a.class == FloatClass::Subnormal || b.class == FloatClass::Subnormal,
    })
}

/// An operand of [`group_sum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Product(RawProduct),
    /// An FP32 value: the accumulator or the previous group's result.
    Value(UnpackedValue),
}

/// A nonzero finite operand: `(-1)^neg * sig * 2^lsb`, aligned by `eff`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Term {
    neg: bool,
    eff: i64,
    sig: u64,
    lsb: i64,
}

fn floor_log2(sig: u64, lsb: i64) -> i64 {
    lsb + 63 - sig.leading_zeros() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fp32Operand {
    Zero,
    Finite(Term),
    Infinite(bool),
    Nan,
}

fn fp32_operand(bits: u32) -> Fp32Operand {
    let neg = bits >> 31 == 1;
    let field = (bits >> 23) & 0xff;
    let frac = (bits & 0x7f_ffff) as u64;
    match field {
        0xff if frac == 0 => Fp32Operand::Infinite(neg),
        0xff => Fp32Operand::Nan,
        0 if frac == 0 => Fp32Operand::Zero,
        0 => Fp32Operand::Finite(Term { neg, eff: -126, sig: frac, lsb: -149 }),
        _ => {
            let e = field as i64 - 127;
            Fp32Operand::Finite(Term { neg, eff: e, sig: frac | 1 << 23, lsb: e - 23 })
        }
    }
}

/// A decoded input element, ready to be multiplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Factor {
    neg: bool,
    exp: i32,
    sig: u32,
    subnormal: bool,
}

pub(crate) fn factor(bits: u32, fmt: FloatFormat) -> Result<Factor, PipelineError> {
    let v = formats::decode(bits, fmt);
    if !v.is_finite() {
        return Err(PipelineError::UnsupportedInput(format!("{fmt} pattern {bits:#x} is {:?}", v.class)));
    }
    Ok(Factor {
        neg: v.sign,
        exp: v.exponent as i32,
        sig: v.significand as u32,
        subnormal: v.class == FloatClass::Subnormal,
    })
}

/// Per-profile constants for the hot loop.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Plan {
    product_scale: i64,
    width: i64,
    floor: i64,
    align: Rounding,
    finish: Rounding,
    normalize: bool,
    renormalize: bool,
}

impl Plan {
    pub(crate) fn new(profile: &PipelineProfile) -> Self {
        Plan {
            product_scale: 2 * profile.input_format.mantissa_bits as i64,
            width: profile.internal_width as i64,
            floor: profile.exponent_floor,
            align: profile.alignment_rounding,
            finish: profile.final_rounding,
            normalize: profile.normalize_products,
            renormalize: profile.renormalize_subnormal_products,
        }
    }

    fn product(&self, a: &Factor, b: &Factor) -> Option<Term> {
        let sig = a.sig as u64 * b.sig as u64;
        if sig == 0 {
            return None;
        }
        let key = (a.exp + b.exp) as i64;
        let lsb = key - self.product_scale;
        let eff = if self.normalize || (self.renormalize && (a.subnormal || b.subnormal)) {
            floor_log2(sig, lsb)
        } else {
            key
        };
        Some(Term { neg: a.neg ^ b.neg, eff, sig, lsb })
    }

    /// Truncating (or otherwise rounding) grouped sum of nonzero finite terms.
    fn sum(&self, terms: &[Term]) -> u32 {
        let Some(top) = terms.iter().map(|t| t.eff).max() else {
            return 0;
        };
        let unit = top.max(self.floor) - self.width;
        let mut acc: i64 = 0;
        for t in terms {
            let shift = t.lsb - unit;
            let mag = if shift >= 0 {
                (t.sig << shift) as i64
            } else {
                align_shift(t.sig, (-shift) as u64, t.neg, self.align)
            };
            acc += if t.neg { -mag } else { mag };
        }
        if acc == 0 {
            return 0;
        }
        let v = UnpackedValue::exact(acc < 0, acc.unsigned_abs() as u128, unit);
        formats::encode(&v, FloatFormat::FP32, self.finish, Overflow::Infinity).expect("fp32 has infinity") as u32
    }
}

/// `sig * 2^-shift` rounded to an integer according to `mode`, where `neg`
/// gives the sign of the value being rounded. Returns the magnitude.
fn align_shift(sig: u64, shift: u64, neg: bool, mode: Rounding) -> i64 {
    let (kept, rem) = if shift >= 64 { (0, sig) } else { (sig >> shift, sig & ((1 << shift) - 1)) };
    if rem == 0 || mode == Rounding::TowardZero {
        return kept as i64;
    }
    let vs_half = match shift {
        s if s > 64 => std::cmp::Ordering::Less,
        s => rem.cmp(&(1u64 << (s - 1))),
    };
    let bump = match mode {
        Rounding::TowardZero => false,
        Rounding::NearestEven => vs_half.is_gt() || (vs_half.is_eq() && kept & 1 == 1),
        Rounding::NearestAway => vs_half.is_ge(),
        Rounding::TowardPositive => !neg,
        Rounding::TowardNegative => neg,
    };
    (kept + bump as u64) as i64
}

fn value_term(v: &UnpackedValue) -> Result<Option<Term>, PipelineError> {
    if v.is_zero() {
        return Ok(None);
    }
    let tz = v.significand.trailing_zeros();
    let sig = u64::try_from(v.significand >> tz)
        .map_err(|_| PipelineError::UnsupportedInput("value significand too wide".into()))?;
    let lsb = v.lsb_exponent() + tz as i64;
    Ok(Some(Term { neg: v.sign, eff: floor_log2(sig, lsb).max(-126), sig, lsb }))
}

/// Non-finite FP32 operands short-circuit the group.
fn special_result(specials: impl Iterator<Item = Fp32Operand>) -> Option<u32> {
    let (mut pos, mut neg, mut nan) = (false, false, false);
    for s in specials {
        match s {
            Fp32Operand::Infinite(false) => pos = true,
            Fp32Operand::Infinite(true) => neg = true,
            Fp32Operand::Nan => nan = true,
            _ => {}
        }
    }
    match (nan || (pos && neg), pos, neg) {
        (true, _, _) => Some(FP32_NAN),
        (_, true, _) => Some(0x7f80_0000),
        (_, _, true) => Some(0xff80_0000),
        _ => None,
    }
}

/// Sums one accumulation group and returns FP32 bits.
///
/// Infinite or NaN FP32 operands propagate: any NaN or a mix of opposite
/// infinities gives NaN, otherwise the infinity is returned.
pub fn group_sum(operands: &[Operand], profile: &PipelineProfile) -> Result<u32, PipelineError> {
    if operands.len() > 17 {
        return Err(PipelineError::Shape(format!("{} operands in one group", operands.len())));
    }
    let plan = Plan::new(profile);
    let mut terms = Vec::with_capacity(operands.len());
    let mut specials = Vec::new();
    for op in operands {
        match op {
            Operand::Product(p) if p.is_zero => {}
            Operand::Product(p) => {
                let sig = u64::try_from(p.significand)
                    .map_err(|_| PipelineError::UnsupportedInput("product significand too wide".into()))?;
                let lsb = p.exponent_key - p.scale as i64;
                let eff = if plan.normalize || (plan.renormalize && p.subnormal_factor) {
                    floor_log2(sig, lsb)
                } else {
                    p.exponent_key
                };
                terms.push(Term { neg: p.sign, eff, sig, lsb });
            }
            Operand::Value(v) => match v.class {
                FloatClass::Nan => specials.push(Fp32Operand::Nan),
                FloatClass::Infinity => specials.push(Fp32Operand::Infinite(v.sign)),
                _ => terms.extend(value_term(v)?),
            },
        }
    }
    if let Some(bits) = special_result(specials.into_iter()) {
        return Ok(bits);
    }
    Ok(plan.sum(&terms))
}

/// One output element from pre-decoded factors; `profile` must be valid.
pub(crate) fn mma_prepared(c: u32, a: &[Factor], b: &[Factor], profile: &PipelineProfile, plan: &Plan) -> u32 {
    debug_assert!(a.len() == TILE_DIM && b.len() == TILE_DIM);
    let products: [Option<Term>; TILE_DIM] = std::array::from_fn(|k| plan.product(&a[k], &b[k]));
    let mut prev = 0u32;
    let mut terms = [Term { neg: false, eff: 0, sig: 0, lsb: 0 }; 17];
    for group in &profile.grouping {
        let mut n = 0;
        let mut special: [Fp32Operand; 2] = [Fp32Operand::Zero; 2];
        for slot in group {
            let fp32 = match slot {
                Slot::Product(k) => {
                    if let Some(t) = products[*k as usize - 1] {
                        terms[n] = t;
                        n += 1;
                    }
                    continue;
                }
                Slot::Acc => (fp32_operand(c), 0),
                Slot::Prev => (fp32_operand(prev), 1),
            };
            match fp32 {
                (Fp32Operand::Finite(t), _) => {
                    terms[n] = t;
                    n += 1;
                }
                (other, i) => special[i] = other,
            }
        }
        prev = special_result(special.into_iter()).unwrap_or_else(|| plan.sum(&terms[..n]));
    }
    prev
}

fn check_len(what: &str, len: usize) -> Result<(), PipelineError> {
    if len != TILE_DIM {
        return Err(PipelineError::Shape(format!("{what} needs {TILE_DIM} elements, got {len}")));
    }
    Ok(())
}

/// `D[i][j]` for one row of A and one column of B, all as bit patterns.
pub fn mma_element(c: u32, a_row: &[u32], b_col: &[u32], profile: &PipelineProfile) -> Result<u32, PipelineError> {
    profile.validate()?;
    check_len("a_row", a_row.len())?;
    check_len("b_col", b_col.len())?;
    let fmt = profile.input_format;
    let a: Vec<Factor> = a_row.iter().map(|&x| factor(x, fmt)).collect::<Result<_, _>>()?;
    let b: Vec<Factor> = b_col.iter().map(|&x| factor(x, fmt)).collect::<Result<_, _>>()?;
    Ok(mma_prepared(c, &a, &b, profile, &Plan::new(profile)))
}

fn expect_format(tile: &Tile, expected: FloatFormat) -> Result<(), PipelineError> {
    if tile.format() != expected {
        return Err(PipelineError::FormatMismatch { expected, found: tile.format() });
    }
    Ok(())
}

/// `D = C + A * B` for one 16x16 tile.
pub fn tile_mma(a: &Tile, b: &Tile, c: &Tile, profile: &PipelineProfile) -> Result<Tile, PipelineError> {
    profile.validate()?;
    expect_format(a, profile.input_format)?;
    expect_format(b, profile.input_format)?;
    expect_format(c, FloatFormat::FP32)?;
    let fmt = profile.input_format;
    let decode_all = |t: &Tile, by_row: bool| -> Result<Vec<Factor>, PipelineError> {
        let mut out = Vec::with_capacity(TILE_LEN);
        for i in 0..TILE_DIM {
            let line = if by_row { t.row(i) } else { t.col(i) };
            for x in line {
                out.push(factor(x, fmt)?);
            }
        }
        Ok(out)
    };
    let rows = decode_all(a, true)?;
    let cols = decode_all(b, false)?;
    let plan = Plan::new(profile);
    let mut out = Vec::with_capacity(TILE_LEN);
    for i in 0..TILE_DIM {
        for j in 0..TILE_DIM {
            out.push(mma_prepared(
                c.get(i, j),
                &rows[i * TILE_DIM..(i + 1) * TILE_DIM],
                &cols[j * TILE_DIM..(j + 1) * TILE_DIM],
                profile,
                &plan,
            ));
        }
    }
    Tile::from_bits(FloatFormat::FP32, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::{decode, exact_bits};
    use proptest::prelude::*;

    const F16: FloatFormat = FloatFormat::FP16;
    const BF16: FloatFormat = FloatFormat::BF16;

    fn bits(x: f64, fmt: FloatFormat) -> u32 {
        exact_bits(x, fmt).unwrap_or_else(|| panic!("{x} not exact in {fmt}"))
    }

    fn p2(e: i32) -> f64 {
        2f64.powi(e)
    }

    /// Builds a row/column pair from (slot index 0-based, a, b) entries.
    fn dot(entries: &[(usize, f64, f64)], fmt: FloatFormat) -> ([u32; 16], [u32; 16]) {
        let mut a = [0; 16];
        let mut b = [0; 16];
        for &(k, x, y) in entries {
            a[k] = bits(x, fmt);
            b[k] = bits(y, fmt);
        }
        (a, b)
    }

    fn run(entries: &[(usize, f64, f64)], c: f32, profile: &PipelineProfile) -> f64 {
        let (a, b) = dot(entries, profile.input_format);
        let out = mma_element(c.to_bits(), &a, &b, profile).unwrap();
        f32::from_bits(out) as f64
    }

    fn raw(x: f64, y: f64, fmt: FloatFormat) -> RawProduct {
        multiply_raw(&decode(bits(x, fmt), fmt), &decode(bits(y, fmt), fmt)).unwrap()
    }

    #[test]
    fn raw_products_keep_stored_exponents() {
        let p = raw(2047.0, 2047.0, F16);
        assert_eq!((p.sign, p.exponent_key, p.significand), (false, 20, 4_190_209));
        assert_eq!(p.to_f64(), 4_190_209.0);

        let p = raw(1.5 * p2(12), 1.5 * p2(12), F16);
        assert_eq!(p.exponent_key, 24);
        assert_eq!(p.to_f64() / p2(24), 2.25);

        let p = raw(p2(-15), p2(14), F16);
        assert_eq!(p.exponent_key, 0);
        assert!(p.subnormal_factor);
        assert_eq!(p.to_f64(), 0.5);
        assert_eq!(p.significand >> p.scale, 0);

        assert!(raw(0.0, 3.0, F16).is_zero);
        let inf = decode(0x7c00, F16);
        assert!(multiply_raw(&inf, &decode(0x3c00, F16)).is_err());
    }

    #[test]
    fn group_sum_window_examples() {
        let amp = PipelineProfile::ampere(F16);
        let ops = |small: RawProduct| {
            vec![Operand::Product(raw(1.0, 1.0, F16)), Operand::Product(raw(1.0, -1.0, F16)), Operand::Product(small)]
        };
        let v = |bits: u32| f32::from_bits(bits) as f64;
        assert_eq!(v(group_sum(&ops(raw(p2(-12), p2(-12), F16)), &amp).unwrap()), p2(-24));
        assert_eq!(group_sum(&ops(raw(p2(-13), p2(-12), F16)), &amp).unwrap(), 0);
        let half_bit = raw(p2(-12) + p2(-13), p2(-12), F16);
        assert_eq!(v(group_sum(&ops(half_bit), &amp).unwrap()), p2(-24));

        let amp_bf = PipelineProfile::ampere(BF16);
        let pair = |y: f64| {
            vec![Operand::Product(raw(p2(-74), p2(-74), BF16)), Operand::Product(raw(p2(-74), y, BF16))]
        };
        assert_eq!(group_sum(&pair(-p2(-82)), &amp_bf).unwrap(), 1);
        assert_eq!(group_sum(&pair(-p2(-83)), &amp_bf).unwrap(), 2);

        let no_norm = vec![
            Operand::Product(raw(1.5, 1.5, F16)),
            Operand::Product(raw(1.5, -1.5, F16)),
            Operand::Product(raw(p2(-12), p2(-12), F16)),
        ];
        assert_eq!(v(group_sum(&no_norm, &amp).unwrap()), p2(-24));
    }

    #[test]
    fn group_sum_specials_and_zero() {
        let amp = PipelineProfile::ampere(F16);
        assert_eq!(group_sum(&[], &amp).unwrap(), 0);
        let inf = Operand::Value(UnpackedValue::infinity(true));
        let one = Operand::Product(raw(1.0, 1.0, F16));
        assert_eq!(group_sum(&[inf, one], &amp).unwrap(), 0xff80_0000);
        let pinf = Operand::Value(UnpackedValue::infinity(false));
        assert_eq!(group_sum(&[inf, pinf], &amp).unwrap(), FP32_NAN);
        assert_eq!(group_sum(&[Operand::Value(UnpackedValue::nan())], &amp).unwrap(), FP32_NAN);
        assert!(group_sum(&[one; 18], &amp).is_err());
    }

    #[test]
    fn mma_golden_values() {
        let amp = PipelineProfile::ampere(F16);
        let hop = PipelineProfile::hopper(F16);
        assert_eq!(run(&[(0, 2047.0, 2047.0)], 0.0, &amp), 4_190_209.0);
        let cancel = [(0, 1.0, 1.0), (1, 1.0, -1.0)];
        let with = |extra: (usize, f64, f64)| {
            let mut v = cancel.to_vec();
            v.push(extra);
            v
        };
        assert_eq!(run(&with((2, p2(-12), p2(-13))), 0.0, &hop), p2(-25));
        assert_eq!(run(&with((2, p2(-12), p2(-13))), 0.0, &amp), 0.0);
        assert_eq!(run(&with((2, p2(-12), p2(-12))), 0.0, &amp), p2(-24));
        let dominant = (0, 1.5 * p2(12), 1.5 * p2(12));
        assert_eq!(run(&[dominant, (1, 3.0, 1.0)], 0.0, &amp), 2.25 * p2(24));
        assert_eq!(run(&[dominant, (1, 1.0, -1.0)], 0.0, &amp), 2.25 * p2(24) - 4.0);
        for x in [1.5f32, -3.0e-40, 7.0e30, -0.1] {
            assert_eq!(run(&[], x, &amp), x as f64);
        }
    }

    #[test]
    fn bf16_out_of_range() {
        let amp = PipelineProfile::ampere(BF16);
        let hop = PipelineProfile::hopper(BF16);
        let big = p2(127);
        let t1 = [(0, big, 2.0), (1, big, -2.0), (2, big, 1.0)];
        assert_eq!(run(&t1, 0.0, &amp), big);
        assert_eq!(run(&t1, 0.0, &hop), big);
        let t2 = [(0, big, 2.0), (8, big, -big)];
        // Ampere overflows the first group to +inf, which then dominates.
        assert_eq!(run(&t2, 0.0, &amp), f64::INFINITY);
        assert_eq!(run(&t2, 0.0, &hop), f64::NEG_INFINITY);
    }

    #[test]
    fn tile_mma_matches_elements_and_checks_formats() {
        let amp = PipelineProfile::ampere(F16);
        let mut a = Tile::zeros(F16);
        let mut b = Tile::zeros(F16);
        let mut c = Tile::zeros(FloatFormat::FP32);
        for i in 0..16 {
            for j in 0..16 {
                a.set(i, j, bits(((i * 16 + j) % 7) as f64 - 3.0, F16));
                b.set(i, j, bits(((i + 3 * j) % 5) as f64 * 0.25, F16));
                c.set(i, j, (i as f32 - j as f32).to_bits());
            }
        }
        let d = tile_mma(&a, &b, &c, &amp).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert_eq!(d.get(i, j), mma_element(c.get(i, j), &a.row(i), &b.col(j), &amp).unwrap());
            }
        }
        assert!(matches!(tile_mma(&a, &b, &a, &amp), Err(PipelineError::FormatMismatch { .. })));
        let mut bad = a.clone();
        bad.set(0, 0, 0x7e00);
        assert!(matches!(tile_mma(&bad, &b, &c, &amp), Err(PipelineError::UnsupportedInput(_))));
    }

    #[test]
    fn zero_inputs_preserve_accumulator() {
        let amp = PipelineProfile::ampere(F16);
        let z = Tile::zeros(F16);
        let mut c = Tile::zeros(FloatFormat::FP32);
        for (i, x) in [1.0f32, -2.5, f32::MIN_POSITIVE, 1e-45, f32::MAX, f32::INFINITY].iter().enumerate() {
            c.set(i, i, x.to_bits());
        }
        assert_eq!(tile_mma(&z, &z, &c, &amp).unwrap(), c);
    }

    #[test]
    fn alternative_roundings_change_alignment() {
        let mut p = PipelineProfile::ampere(F16);
        let case = [(0, 1.0, 1.0), (1, 1.0, -1.0), (2, p2(-12) + p2(-13), p2(-12))];
        assert_eq!(run(&case, 0.0, &p), p2(-24));
        p.alignment_rounding = Rounding::NearestEven;
        assert_eq!(run(&case, 0.0, &p), p2(-23));
        let case = [(0, 1.0, 1.0), (1, 1.0, -1.0), (2, -p2(-13), p2(-12))];
        p.alignment_rounding = Rounding::TowardNegative;
        assert_eq!(run(&case, 0.0, &p), -p2(-24));
        p.alignment_rounding = Rounding::NearestAway;
        assert_eq!(run(&case, 0.0, &p), -p2(-24));
    }

    #[test]
    fn normalization_variants_shift_the_window() {
        let mut p = PipelineProfile::ampere(F16);
        let case = [(0, 1.5, 1.5), (1, 1.5, -1.5), (2, p2(-12), p2(-12))];
        assert_eq!(run(&case, 0.0, &p), p2(-24));
        p.renormalize_subnormal_products = true;
        assert_eq!(run(&case, 0.0, &p), p2(-24));
        p.normalize_products = true;
        assert_eq!(run(&case, 0.0, &p), 0.0);

        // Subnormal 2^-17 times 2^14: raw key 0, normalized exponent -3.
        let mut p = PipelineProfile::ampere(F16);
        let case = [(0, p2(-17), p2(14)), (1, p2(-13), p2(-12))];
        assert_eq!(run(&case, 0.0, &p), p2(-3));
        p.renormalize_subnormal_products = true;
        assert_eq!(run(&case, 0.0, &p), p2(-3) + p2(-25));
    }

    fn finite_pattern(fmt: FloatFormat) -> impl Strategy<Value = u32> {
        (0u32..(1 << fmt.total_bits)).prop_filter("finite", move |b| fmt.is_finite_pattern(*b))
    }

    fn fp32_finite() -> impl Strategy<Value = u32> {
        any::<u32>().prop_filter("finite", |b| f32::from_bits(*b).is_finite())
    }

    proptest! {
        #[test]
        fn sign_symmetry(a in prop::array::uniform16(finite_pattern(F16)),
                         b in prop::array::uniform16(finite_pattern(F16)),
                         c in fp32_finite(), hopper in any::<bool>()) {
            let p = if hopper { PipelineProfile::hopper(F16) } else { PipelineProfile::ampere(F16) };
            let na: Vec<u32> = a.iter().map(|x| x ^ 0x8000).collect();
            let out = mma_element(c, &a, &b, &p).unwrap();
            let neg = mma_element(c ^ 0x8000_0000, &na, &b, &p).unwrap();
            if out == 0 {
                prop_assert_eq!(neg, 0);
            } else if f32::from_bits(out).is_nan() {
                prop_assert!(f32::from_bits(neg).is_nan());
            } else {
                prop_assert_eq!(neg, out ^ 0x8000_0000);
            }
        }

        #[test]
        fn products_commute(a in prop::array::uniform16(finite_pattern(BF16)),
                            b in prop::array::uniform16(finite_pattern(BF16)),
                            c in fp32_finite()) {
            let p = PipelineProfile::ampere(BF16);
            prop_assert_eq!(mma_element(c, &a, &b, &p).unwrap(), mma_element(c, &b, &a, &p).unwrap());
        }

        #[test]
        fn windowing_law(e in -40i64..=0, hopper in any::<bool>()) {
            // A cancel pair at 2^0 plus a lone power of two 2^e.
            let p = if hopper { PipelineProfile::hopper(F16) } else { PipelineProfile::ampere(F16) };
            let x = p2((e as i32).div_euclid(2) + (e as i32).rem_euclid(2));
            let y = p2((e as i32).div_euclid(2));
            prop_assume!(x * y == p2(e as i32));
            prop_assume!(exact_bits(x, F16).is_some() && exact_bits(y, F16).is_some());
            let got = run(&[(0, 1.0, 1.0), (1, 1.0, -1.0), (2, x, y)], 0.0, &p);
            let survives = e >= -(p.internal_width as i64);
            prop_assert_eq!(got, if survives { p2(e as i32) } else { 0.0 });
        }

        #[test]
        fn deterministic(a in prop::array::uniform16(finite_pattern(F16)),
                         b in prop::array::uniform16(finite_pattern(F16)), c in fp32_finite()) {
            let p = PipelineProfile::ampere(F16);
            prop_assert_eq!(mma_element(c, &a, &b, &p).unwrap(), mma_element(c, &a, &b, &p).unwrap());
        }
    }
}
