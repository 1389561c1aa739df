use crate::formats::FloatFormat;
use crate::pipeline::PipelineError;

pub const TILE_DIM: usize = 16;
pub const TILE_LEN: usize = TILE_DIM * TILE_DIM;

/// A 16x16 grid of bit patterns, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    format: FloatFormat,
    data: Vec<u32>,
}

impl Tile {
    pub fn zeros(format: FloatFormat) -> Self {
        Tile { format, data: vec![0; TILE_LEN] }
    }

    pub fn from_bits(format: FloatFormat, data: Vec<u32>) -> Result<Self, PipelineError> {
        if data.len() != TILE_LEN {
            return Err(PipelineError::Shape(format!("tile needs {TILE_LEN} elements, got {}", data.len())));
        }
        if let Some(bad) = data.iter().find(|b| !format.is_valid_pattern(**b)) {
            return Err(PipelineError::Shape(format!("pattern {bad:#x} does not fit {format}")));
        }
        Ok(Tile { format, data })
    }

    pub fn format(&self) -> FloatFormat {
        self.format
    }

    pub fn bits(&self) -> &[u32] {
        &self.data
    }

    pub fn into_bits(self) -> Vec<u32> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * TILE_DIM + col]
    }

    /// Panics if `bits` does not fit the tile's format.
    pub fn set(&mut self, row: usize, col: usize, bits: u32) {
        assert!(self.format.is_valid_pattern(bits), "pattern {bits:#x} does not fit {}", self.format);
        self.data[row * TILE_DIM + col] = bits;
    }

    pub fn row(&self, row: usize) -> [u32; TILE_DIM] {
        let mut out = [0; TILE_DIM];
        out.copy_from_slice(&self.data[row * TILE_DIM..(row + 1) * TILE_DIM]);
        out
    }

    pub fn col(&self, col: usize) -> [u32; TILE_DIM] {
        std::array::from_fn(|r| self.data[r * TILE_DIM + col])
    }
}
