//! Reference evaluators used to check the fast model.

mod exact;
mod ieee;
pub mod random;

use exact::element;
pub use exact::{approx_f64, exact_mma_element, exact_value, ExactAccumulator};
pub use ieee::ieee_sequential_dot;

use thiserror::Error;

use crate::pipeline::{PipelineProfile, Tile, TILE_DIM};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OracleError {
    #[error("unsupported input: {0}")]
    UnsupportedInput(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid profile: {0}")]
    Profile(String),
}

/// Oracle evaluation of a whole tile.
pub fn exact_tile_mma(a: &Tile, b: &Tile, c: &Tile, profile: &PipelineProfile) -> Result<Tile, OracleError> {
    if a.format() != profile.input_format || b.format() != profile.input_format {
        return Err(OracleError::Shape("input tiles are not in the profile's format".into()));
    }
    profile.validate().map_err(|e| OracleError::Profile(e.to_string()))?;
    let mut out = Vec::with_capacity(TILE_DIM * TILE_DIM);
    for i in 0..TILE_DIM {
        for j in 0..TILE_DIM {
            out.push(element(c.get(i, j), &a.row(i), &b.col(j), profile)?);
        }
    }
    Tile::from_bits(crate::formats::FloatFormat::FP32, out).map_err(|e| OracleError::Shape(e.to_string()))
}
