//! Plain IEEE-754 left-to-right dot products, for contrast with the grouped
//! truncating model.

use crate::formats::{self, decode, encode, FloatFormat, Overflow, Rounding, UnpackedValue};

/// `c + a[0]*b[0] + a[1]*b[1] + ...`, folded left to right, every multiply
/// and add rounded to nearest-even in `acc_fmt`. Inputs are converted to
/// `acc_fmt` first (exact whenever `acc_fmt` is wider). `c` is an `acc_fmt`
/// pattern; the result is too.
pub fn ieee_sequential_dot(a_row: &[u32], b_col: &[u32], c: u32, input_fmt: FloatFormat, acc_fmt: FloatFormat) -> u32 {
    assert_eq!(a_row.len(), b_col.len(), "row and column lengths differ");
    let widen = |bits: u32| formats::convert(&decode(bits, input_fmt), acc_fmt);
    let mut acc: UnpackedValue = decode(c, acc_fmt);
    for (&x, &y) in a_row.iter().zip(b_col) {
        let product = formats::ieee_mul(&widen(x), &widen(y), acc_fmt);
        acc = formats::ieee_add(&acc, &product, acc_fmt);
    }
    encode(&acc, acc_fmt, Rounding::NearestEven, Overflow::Infinity).unwrap_or_else(|_| acc_fmt.canonical_nan())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::exact_bits;

    const F16: FloatFormat = FloatFormat::FP16;

    fn h(x: f64) -> u32 {
        exact_bits(x, F16).unwrap()
    }

    #[test]
    fn order_changes_the_result() {
        let ones = [h(1.0); 3];
        let first = [h(65504.0), h(-65504.0), h(1.0)];
        let second = [h(-65504.0), h(1.0), h(65504.0)];
        assert_eq!(ieee_sequential_dot(&first, &ones, 0, F16, F16), h(1.0));
        assert_eq!(ieee_sequential_dot(&second, &ones, 0, F16, F16), 0);
    }

    #[test]
    fn single_term_is_the_rounded_product() {
        for (x, y) in [(3.0, 5.0), (2047.0, 2047.0), (0.1, 0.3), (-6.0e-5, 7.0)] {
            let bx = half::f16::from_f32(x as f32).to_bits() as u32;
            let by = half::f16::from_f32(y as f32).to_bits() as u32;
            let expect = formats::ieee_mul(&decode(bx, F16), &decode(by, F16), F16);
            let expect = encode(&expect, F16, Rounding::NearestEven, Overflow::Infinity).unwrap();
            assert_eq!(ieee_sequential_dot(&[bx], &[by], 0, F16, F16), expect);
        }
    }

    #[test]
    fn fp32_accumulation_of_fp16_inputs() {
        let a = [h(1.0), h(1.0), h(2f64.powi(-12))];
        let b = [h(1.0), h(-1.0), h(2f64.powi(-13))];
        let out = ieee_sequential_dot(&a, &b, 0, F16, FloatFormat::FP32);
        assert_eq!(f32::from_bits(out), 2f32.powi(-25));
    }
}
