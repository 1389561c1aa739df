use std::ops::RangeInclusive;

use crate::formats::{exact_bits, FloatFormat};
use crate::pipeline::TILE_DIM;

use super::ProbeCase;

/// Bit mask with ACC (bit 0) and P1..P16 (bits 1..=16) all set.
pub const FULL_MASK: u32 = (1 << 17) - 1;

/// Per-format magnitudes. Exponents are base-2; `V = 2^v_*_exp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeConstants {
    pub v_large_exp: i32,
    pub v_small_exp: i32,
    /// Exponent of the cancel pair used by the width and alignment sweeps.
    pub width_base: i32,
    pub width_c: RangeInclusive<i32>,
    pub align_d: RangeInclusive<i32>,
    /// Dominant factor `1.5 * 2^final_x` of the final-rounding cases.
    pub final_x: i32,
    /// Raw exponent key of the `1.5 * 1.5` cancel pair.
    pub norm_base: i32,
    pub norm_d: RangeInclusive<i32>,
    pub subnorm_k: RangeInclusive<i32>,
    pub subnorm_d: RangeInclusive<i32>,
    /// Width candidates covered by the exponent-floor sweep (empty when the
    /// format cannot reach the floor).
    pub floor_widths: RangeInclusive<u32>,
    pub floor_e_min: i32,
}

pub fn constants(fmt: FloatFormat) -> ProbeConstants {
    let base = ProbeConstants {
        v_large_exp: 20,
        v_small_exp: -20,
        width_base: 0,
        width_c: 1..=28,
        align_d: 16..=27,
        final_x: 12,
        norm_base: 0,
        norm_d: 16..=27,
        subnorm_k: 1..=fmt.mantissa_bits as i32,
        subnorm_d: 16..=30,
        #[allow(clippy::reversed_empty_ranges)]
        floor_widths: 1..=0,
        floor_e_min: -149,
    };
    match fmt {
        f if f == FloatFormat::BF16 => ProbeConstants {
            width_c: 1..=40,
            align_d: 16..=40,
            norm_d: 16..=40,
            subnorm_d: 16..=40,
            floor_widths: 16..=32,
            ..base
        },
        f if f == FloatFormat::FP8_E4M3 => ProbeConstants {
            v_large_exp: 16,
            v_small_exp: -12,
            width_base: 16,
            final_x: 8,
            norm_base: 8,
            ..base
        },
        _ => base,
    }
}

fn p2(e: i32) -> f64 {
    2f64.powi(e)
}

struct Builder {
    fmt: FloatFormat,
    a: [u32; TILE_DIM],
    b: [u32; TILE_DIM],
    c: u32,
    c_used: bool,
}

impl Builder {
    fn new(fmt: FloatFormat) -> Self {
        Builder { fmt, a: [0; TILE_DIM], b: [0; TILE_DIM], c: 0, c_used: false }
    }

    fn set(&mut self, slot: usize, x: f64, y: f64) -> Option<&mut Self> {
        self.a[slot - 1] = exact_bits(x, self.fmt)?;
        self.b[slot - 1] = exact_bits(y, self.fmt)?;
        Some(self)
    }

    /// Product `(ma * 2^p) * (mb * 2^(e - p))`, trying the balanced split
    /// `p = ceil(e / 2)` first and then moving outward.
    fn scaled(&mut self, slot: usize, ma: f64, mb: f64, e: i32) -> Option<&mut Self> {
        let mid = e.div_euclid(2) + e.rem_euclid(2);
        for step in 0..200 {
            for p in [mid + step, mid - step] {
                let x = exact_bits(ma * p2(p), self.fmt);
                let y = exact_bits(mb * p2(e - p), self.fmt);
                if let (Some(x), Some(y)) = (x, y) {
                    self.a[slot - 1] = x;
                    self.b[slot - 1] = y;
                    return Some(self);
                }
            }
        }
        None
    }

    fn pow2(&mut self, slot: usize, e: i32, negative: bool) -> Option<&mut Self> {
        self.scaled(slot, 1.0, if negative { -1.0 } else { 1.0 }, e)
    }

    fn acc(&mut self, x: f64) -> Option<&mut Self> {
        self.c = exact_bits(x, FloatFormat::FP32)?;
        self.c_used = true;
        Some(self)
    }

    /// `±2^e` as a product in `slot`, or in the accumulator when no product
    /// of two inputs can reach it.
    fn term(&mut self, slot: usize, e: i32, negative: bool) -> Option<&mut Self> {
        if self.pow2(slot, e, negative).is_some() {
            return Some(self);
        }
        if self.c_used {
            return None;
        }
        self.acc(if negative { -p2(e) } else { p2(e) })
    }

    fn case(&self, id: String, semantics: impl Into<String>) -> ProbeCase {
        ProbeCase {
            id,
            format: self.fmt,
            a_row: self.a,
            b_col: self.b,
            c: self.c,
            expected_semantics: semantics.into(),
        }
    }
}

fn bits(x: f64, fmt: FloatFormat) -> u32 {
    exact_bits(x, fmt).unwrap_or_else(|| panic!("probe constant {x} is not exact in {fmt}"))
}

/// Cancellation / zeroed-baseline pairs for every slot subset with at least
/// two members.
///
/// In the cancellation case the members of S carry `sqrt(V_large)` factors
/// and the others `sqrt(V_small)`. If ACC is in S (holding `V_large`) the
/// first product of S is negated to cancel it; remaining products of S are
/// negated in alternate positions, and an unpaired last product is zeroed.
pub fn gen_neutrality_cases(fmt: FloatFormat) -> Vec<(ProbeCase, ProbeCase)> {
    let k = constants(fmt);
    let large = bits(p2(k.v_large_exp / 2), fmt);
    let small = bits(p2(k.v_small_exp / 2), fmt);
    let sign = fmt.sign_mask();
    let c_large = bits(p2(k.v_large_exp), FloatFormat::FP32);
    let c_small = bits(p2(k.v_small_exp), FloatFormat::FP32);
    let mut out = Vec::with_capacity(1 << 17);
    for mask in 0..=FULL_MASK {
        if mask.count_ones() < 2 {
            continue;
        }
        let acc_in = mask & 1 == 1;
        let members: Vec<usize> = (1..=16).filter(|k| mask >> k & 1 == 1).collect();
        let mut cancel_a = [small; TILE_DIM];
        let mut cancel_b = [small; TILE_DIM];
        let mut zero_a = [small; TILE_DIM];
        let mut zero_b = [small; TILE_DIM];
        for &k in &members {
            cancel_a[k - 1] = large;
            cancel_b[k - 1] = large;
            zero_a[k - 1] = 0;
            zero_b[k - 1] = 0;
        }
        let mut rest = &members[..];
        if acc_in {
            cancel_b[rest[0] - 1] ^= sign;
            rest = &rest[1..];
        }
        for pair in rest.chunks(2) {
            match pair {
                [_, second] => cancel_b[second - 1] ^= sign,
                [lone] => {
                    cancel_a[lone - 1] = 0;
                    cancel_b[lone - 1] = 0;
                }
                _ => unreachable!(),
            }
        }
        let base = format!("neutrality/{mask:05x}");
        let cancel = ProbeCase {
            id: format!("{base}/cancel"),
            format: fmt,
            a_row: cancel_a,
            b_col: cancel_b,
            c: if acc_in { c_large } else { c_small },
            expected_semantics: "members of S cancel exactly".into(),
        };
        let zero = ProbeCase {
            id: format!("{base}/zero"),
            format: fmt,
            a_row: zero_a,
            b_col: zero_b,
            c: if acc_in { 0 } else { c_small },
            expected_semantics: "members of S zeroed".into(),
        };
        out.push((cancel, zero));
    }
    out
}

/// Cancel pair at `2^b` plus one product `2^(b - c)` for each `c`, and the
/// exact square of the largest odd integer significand.
pub fn gen_width_cases(fmt: FloatFormat) -> Vec<ProbeCase> {
    let k = constants(fmt);
    let mut out = Vec::new();
    let top = p2(fmt.mantissa_bits as i32 + 1) - 1.0;
    let mut exact = Builder::new(fmt);
    exact.set(1, top, top).expect("largest integer significand is exact");
    out.push(exact.case("width/exact".into(), format!("{top}^2 = {} exactly", top * top)));
    let half = k.width_base / 2;
    for c in k.width_c.clone() {
        let mut bld = Builder::new(fmt);
        bld.set(1, p2(half), p2(k.width_base - half)).unwrap();
        bld.set(2, p2(half), -p2(k.width_base - half)).unwrap();
        if bld.pow2(3, k.width_base - c, false).is_none() {
            continue;
        }
        out.push(bld.case(format!("width/c={c}"), format!("2^{} survives iff c <= W", k.width_base - c)));
    }
    out
}

fn cancel_pair(bld: &mut Builder, e: i32, ma: f64) -> Option<()> {
    bld.scaled(1, ma, ma, e)?;
    let (x, y) = (bld.a[0], bld.b[0]);
    bld.a[1] = x;
    bld.b[1] = y ^ bld.fmt.sign_mask();
    Some(())
}

/// Alignment cases `align/d={d}/t1..t4` (residues of 1/2, -1/2, 3/2 and 3/4
/// units at `d = W`) and final-rounding cases `final/t1..t3` (corrections of
/// +3, -1 and +2 FP32 quarter-ulps, the last a tie) with negated mirrors.
pub fn gen_rounding_cases(fmt: FloatFormat) -> Vec<ProbeCase> {
    let k = constants(fmt);
    let mut out = Vec::new();
    for d in k.align_d.clone() {
        let e = k.width_base - d - 1;
        let variants: [(&str, f64, f64, i32); 4] =
            [("t1", 1.0, 1.0, e), ("t2", -1.0, 1.0, e), ("t3", 1.5, 1.0, e + 1), ("t4", 1.0, 1.5, e)];
        for (name, ma, mb, pe) in variants {
            let mut bld = Builder::new(fmt);
            cancel_pair(&mut bld, k.width_base, 1.0).unwrap();
            if bld.scaled(3, ma, mb, pe).is_none() {
                continue;
            }
            out.push(bld.case(format!("align/d={d}/{name}"), format!("{} * 2^{pe} against cancel pair", ma * mb)));
        }
    }
    let s = 2 * k.final_x - 24;
    let dominant = 1.5 * p2(k.final_x);
    for (name, neg) in [("", false), ("neg", true)] {
        let sign = if neg { -1.0 } else { 1.0 };
        for (test, corr) in [("t1", 3.0), ("t2", -1.0), ("t3", 2.0)] {
            let mut bld = Builder::new(fmt);
            bld.set(1, sign * dominant, dominant).unwrap();
            bld.scaled(2, sign * corr, 1.0, s).expect("correction term is exact");
            out.push(bld.case(
                format!("final/{test}{name}"),
                format!("{}2.25 * 2^{} {:+} * 2^{s}", if neg { "-" } else { "" }, 2 * k.final_x, sign * corr),
            ));
        }
    }
    out
}

/// `norm/*`: a `1.5 * 1.5` cancel pair plus a small product. `subnorm/*/lit`:
/// a subnormal-times-normal product plus `2^-24`; `subnorm/*/d=*`: a cancel
/// pair of such products plus `2^-d`.
pub fn gen_normalization_cases(fmt: FloatFormat) -> Vec<ProbeCase> {
    let k = constants(fmt);
    let mut out = Vec::new();
    let nb = k.norm_base;
    let norm = |d: i32| {
        let mut bld = Builder::new(fmt);
        cancel_pair(&mut bld, nb, 1.5).unwrap();
        bld.term(3, nb - d, false).map(|b| b.case(String::new(), format!("2^{} beside a 2.25 * 2^{nb} pair", nb - d)))
    };
    if let Some(mut case) = norm(24) {
        case.id = "norm/lit".into();
        out.push(case);
    }
    for d in k.norm_d.clone() {
        if let Some(mut case) = norm(d) {
            case.id = format!("norm/d={d}");
            out.push(case);
        }
    }
    let emin = fmt.min_exponent();
    for sk in k.subnorm_k.clone() {
        let lead = |bld: &mut Builder| bld.set(1, p2(emin - sk), p2(-emin)).map(|_| ());
        let mut lit = Builder::new(fmt);
        lead(&mut lit).expect("subnormal factor is exact");
        if lit.set(2, p2(-24), 1.0).is_some() || lit.term(2, -24, false).is_some() {
            out.push(lit.case(format!("subnorm/k={sk}/lit"), format!("2^-{sk} from a subnormal factor, plus 2^-24")));
        }
        for d in k.subnorm_d.clone() {
            let mut bld = Builder::new(fmt);
            bld.set(1, p2(emin - sk), p2(-emin)).unwrap().set(2, p2(emin - sk), -p2(-emin)).unwrap();
            if bld.term(3, -d, false).is_some() {
                let what = format!("cancelling 2^-{sk} pair with subnormal factors, plus 2^-{d}");
                out.push(bld.case(format!("subnorm/k={sk}/d={d}"), what));
            }
        }
    }
    out
}

/// Out-of-range accumulation, the smallest-contribution pair and the
/// exponent-floor sweep. Empty for formats whose products cannot leave the
/// FP32 range.
pub fn gen_range_cases(fmt: FloatFormat) -> Vec<ProbeCase> {
    let k = constants(fmt);
    let mut out = Vec::new();
    if k.floor_widths.is_empty() {
        return out;
    }
    let big = p2(127);
    let mut t1 = Builder::new(fmt);
    t1.set(1, big, 2.0).unwrap().set(2, big, -2.0).unwrap().set(3, big, 1.0).unwrap();
    out.push(t1.case("range/oor1".into(), "2^128 - 2^128 + 2^127 stays finite"));
    let mut t2 = Builder::new(fmt);
    t2.set(1, big, 2.0).unwrap().set(9, big, -big).unwrap();
    out.push(t2.case("range/oor2".into(), "2^128 - 2^254 overflows"));
    for e in [82, 83] {
        let mut bld = Builder::new(fmt);
        bld.set(1, p2(-74), p2(-74)).unwrap().set(2, p2(-74), -p2(-e)).unwrap();
        out.push(bld.case(format!("range/pair/{e}"), format!("2^-148 - 2^-{}", 74 + e)));
    }
    for w in k.floor_widths.clone() {
        for e in (k.floor_e_min..=0).rev() {
            let mut bld = Builder::new(fmt);
            if bld.pow2(1, e, false).is_none() || bld.pow2(2, e - w as i32, true).is_none() {
                continue;
            }
            out.push(bld.case(format!("range/floor/w={w}/e={e}"), format!("2^{e} - 2^{}", e - w as i32)));
        }
    }
    out
}
