use rayon::prelude::*;

use crate::formats::FloatFormat;
use crate::pipeline::{factor, mma_prepared, Factor, PipelineProfile, Plan, Tile, TILE_DIM};

use super::EngineError;

/// Row-major matrix of raw bit patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    format: FloatFormat,
    data: Vec<u32>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, format: FloatFormat, data: Vec<u32>) -> Result<Self, EngineError> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(EngineError::Shape(format!("{rows}x{cols} matrix needs {} elements, got {}", rows * cols, data.len())));
        }
        if let Some(index) = data.iter().position(|&x| !format.is_valid_pattern(x)) {
            return Err(EngineError::InvalidPattern { index, bits: data[index], format });
        }
        Ok(Matrix { rows, cols, format, data })
    }

    pub fn zeros(rows: usize, cols: usize, format: FloatFormat) -> Self {
        Matrix { rows, cols, format, data: vec![0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn bits(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        assert!(row < self.rows && col < self.cols, "({row}, {col}) outside {}x{}", self.rows, self.cols);
        self.data[row * self.cols + col]
    }

    /// Panics on an out-of-range cell or a pattern invalid in the format.
    pub fn set(&mut self, row: usize, col: usize, bits: u32) {
        assert!(row < self.rows && col < self.cols, "({row}, {col}) outside {}x{}", self.rows, self.cols);
        assert!(self.format.is_valid_pattern(bits), "{bits:#x} is not a {} pattern", self.format);
        self.data[row * self.cols + col] = bits;
    }

    /// Copies `other` into this matrix with its top-left corner at `(row, col)`.
    pub fn embed(&mut self, other: &Matrix, row: usize, col: usize) {
        assert_eq!(self.format, other.format);
        assert!(row + other.rows <= self.rows && col + other.cols <= self.cols, "embedding out of bounds");
        for i in 0..other.rows {
            let dst = (row + i) * self.cols + col;
            self.data[dst..dst + other.cols].copy_from_slice(&other.data[i * other.cols..(i + 1) * other.cols]);
        }
    }

    pub fn submatrix(&self, row: usize, col: usize, rows: usize, cols: usize) -> Matrix {
        assert!(row + rows <= self.rows && col + cols <= self.cols, "submatrix out of bounds");
        let mut data = Vec::with_capacity(rows * cols);
        for i in row..row + rows {
            data.extend_from_slice(&self.data[i * self.cols + col..i * self.cols + col + cols]);
        }
        Matrix { rows, cols, format: self.format, data }
    }
}

impl From<Tile> for Matrix {
    fn from(tile: Tile) -> Self {
        let format = tile.format();
        Matrix { rows: TILE_DIM, cols: TILE_DIM, format, data: tile.into_bits() }
    }
}

impl TryFrom<Matrix> for Tile {
    type Error = EngineError;

    fn try_from(m: Matrix) -> Result<Self, Self::Error> {
        if m.rows != TILE_DIM || m.cols != TILE_DIM {
            return Err(EngineError::Shape(format!("a tile is {TILE_DIM}x{TILE_DIM}, got {}x{}", m.rows, m.cols)));
        }
        Ok(Tile::from_bits(m.format, m.data)?)
    }
}

fn expect_format(m: &Matrix, what: &str, expected: FloatFormat) -> Result<(), EngineError> {
    if m.format != expected {
        return Err(EngineError::FormatMismatch { what: what.into(), expected, found: m.format });
    }
    Ok(())
}

/// Decoded factors with K padded to a multiple of 16; `by_row` selects rows
/// of `m`, otherwise columns.
fn padded_factors(m: &Matrix, by_row: bool, k_padded: usize) -> Result<Vec<Factor>, EngineError> {
    let (lines, k) = if by_row { (m.rows, m.cols) } else { (m.cols, m.rows) };
    let zero = factor(0, m.format)?;
    let mut out = vec![zero; lines * k_padded];
    for line in 0..lines {
        for kk in 0..k {
            let bits = if by_row { m.data[line * m.cols + kk] } else { m.data[kk * m.cols + line] };
            out[line * k_padded + kk] = factor(bits, m.format)?;
        }
    }
    Ok(out)
}

/// `D = C + A * B` for any conforming shapes.
///
/// K is consumed in ascending 16-wide steps, each one a tile MMA whose
/// result becomes the next step's accumulator; zero padding fills the last
/// step. Rows are distributed over `workers` threads (0 means one per
/// core); every cell is folded sequentially, so the output does not depend
/// on the thread count.
pub fn matmul(a: &Matrix, b: &Matrix, c: &Matrix, profile: &PipelineProfile, workers: usize) -> Result<Matrix, EngineError> {
    profile.validate()?;
    expect_format(a, "A", profile.input_format)?;
    expect_format(b, "B", profile.input_format)?;
    expect_format(c, "C", FloatFormat::FP32)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if b.rows != k || c.rows != m || c.cols != n {
        return Err(EngineError::Shape(format!(
            "cannot multiply {}x{} by {}x{} into {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let kp = k.div_ceil(TILE_DIM).max(1) * TILE_DIM;
    let af = padded_factors(a, true, kp)?;
    let bf = padded_factors(b, false, kp)?;
    let plan = Plan::new(profile);
    let mut out = c.data.clone();
    let row_job = |(i, row): (usize, &mut [u32])| {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = *cell;
            for s in (0..kp).step_by(TILE_DIM) {
                let ar = &af[i * kp + s..i * kp + s + TILE_DIM];
                let bc = &bf[j * kp + s..j * kp + s + TILE_DIM];
                acc = mma_prepared(acc, ar, bc, profile, &plan);
            }
            *cell = acc;
        }
    };
    if n > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| EngineError::Shape(format!("cannot start {workers} workers: {e}")))?;
        pool.install(|| out.par_chunks_mut(n).enumerate().for_each(row_job));
    }
    Ok(Matrix { rows: m, cols: n, format: FloatFormat::FP32, data: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formats::exact_bits;
    use crate::oracle::random::{finite_pattern, stream};
    use crate::pipeline::tile_mma;
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, fmt: FloatFormat, seed: u64) -> Matrix {
        let mut rng = stream(seed, rows as u64 * 1000 + cols as u64);
        let data = (0..rows * cols).map(|_| finite_pattern(&mut rng, fmt)).collect();
        Matrix::new(rows, cols, fmt, data).unwrap()
    }

    #[test]
    fn single_tile_equals_tile_mma() {
        let p = PipelineProfile::ampere(FloatFormat::FP16);
        let (a, b, c) = (random(16, 16, p.input_format, 1), random(16, 16, p.input_format, 2), random(16, 16, FloatFormat::FP32, 3));
        let d = matmul(&a, &b, &c, &p, 1).unwrap();
        let t = tile_mma(&a.clone().try_into().unwrap(), &b.clone().try_into().unwrap(), &c.clone().try_into().unwrap(), &p).unwrap();
        assert_eq!(d, Matrix::from(t));
    }

    #[test]
    fn k_steps_fold_in_ascending_order() {
        let p = PipelineProfile::hopper(FloatFormat::BF16);
        let (a, b, c) = (random(16, 32, p.input_format, 4), random(32, 16, p.input_format, 5), random(16, 16, FloatFormat::FP32, 6));
        let tile = |m: Matrix| -> Tile { m.try_into().unwrap() };
        let first = tile_mma(&tile(a.submatrix(0, 0, 16, 16)), &tile(b.submatrix(0, 0, 16, 16)), &tile(c.clone()), &p).unwrap();
        let second = tile_mma(&tile(a.submatrix(0, 16, 16, 16)), &tile(b.submatrix(16, 0, 16, 16)), &first, &p).unwrap();
        assert_eq!(matmul(&a, &b, &c, &p, 2).unwrap(), Matrix::from(second));
    }

    #[test]
    fn one_by_one_goes_through_padding() {
        let p = PipelineProfile::ampere(FloatFormat::FP16);
        let x = exact_bits(2047.0, FloatFormat::FP16).unwrap();
        let a = Matrix::new(1, 1, FloatFormat::FP16, vec![x]).unwrap();
        let d = matmul(&a, &a, &Matrix::zeros(1, 1, FloatFormat::FP32), &p, 1).unwrap();
        assert_eq!(f32::from_bits(d.get(0, 0)), 4_190_209.0);
    }

    #[test]
    fn shape_and_format_errors() {
        let p = PipelineProfile::ampere(FloatFormat::FP16);
        let a = Matrix::zeros(2, 3, FloatFormat::FP16);
        let c = Matrix::zeros(2, 2, FloatFormat::FP32);
        assert!(matches!(matmul(&a, &Matrix::zeros(2, 2, FloatFormat::FP16), &c, &p, 1), Err(EngineError::Shape(_))));
        assert!(matches!(
            matmul(&a, &Matrix::zeros(3, 2, FloatFormat::BF16), &c, &p, 1),
            Err(EngineError::FormatMismatch { .. })
        ));
        assert!(Matrix::new(1, 2, FloatFormat::FP16, vec![0]).is_err());
        assert!(matches!(Matrix::new(1, 1, FloatFormat::FP16, vec![0x1_0000]), Err(EngineError::InvalidPattern { .. })));
    }

    #[test]
    fn empty_k_returns_c() {
        let p = PipelineProfile::hopper(FloatFormat::FP8_E4M3);
        let c = random(3, 5, FloatFormat::FP32, 9);
        let d = matmul(&Matrix::zeros(3, 0, p.input_format), &Matrix::zeros(0, 5, p.input_format), &c, &p, 1).unwrap();
        // a zero-product group re-encodes C exactly, except that -0 becomes +0
        for (x, y) in d.bits().iter().zip(c.bits()) {
            assert!(x == y || (*y == 0x8000_0000 && *x == 0), "{x:#x} vs {y:#x}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn thread_count_does_not_change_bits(m in 1usize..40, k in 0usize..40, n in 1usize..40, seed in 0u64..1000) {
            let p = PipelineProfile::ampere(FloatFormat::BF16);
            let (a, b, c) = (random(m, k, p.input_format, seed), random(k, n, p.input_format, seed + 1), random(m, n, FloatFormat::FP32, seed + 2));
            let one = matmul(&a, &b, &c, &p, 1).unwrap();
            prop_assert_eq!(&one, &matmul(&a, &b, &c, &p, 3).unwrap());
        }

        #[test]
        fn zero_padding_is_neutral(m in 1usize..20, k in 1usize..20, n in 1usize..20, pad in 1usize..20, seed in 0u64..1000) {
            let p = PipelineProfile::hopper(FloatFormat::FP16);
            let (a, b, c) = (random(m, k, p.input_format, seed), random(k, n, p.input_format, seed + 1), random(m, n, FloatFormat::FP32, seed + 2));
            let mut big_a = Matrix::zeros(m + pad, k + pad, p.input_format);
            let mut big_b = Matrix::zeros(k + pad, n + pad, p.input_format);
            let mut big_c = Matrix::zeros(m + pad, n + pad, FloatFormat::FP32);
            big_a.embed(&a, pad, 0);
            big_b.embed(&b, 0, pad);
            big_c.embed(&c, pad, pad);
            let small = matmul(&a, &b, &c, &p, 1).unwrap();
            let big = matmul(&big_a, &big_b, &big_c, &p, 1).unwrap();
            prop_assert_eq!(big.submatrix(pad, pad, m, n), small);
        }
    }
}
