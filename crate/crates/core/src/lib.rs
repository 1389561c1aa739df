//! Bit-exact emulation of tensor-core matrix multiply-accumulate.
//!
//! * [`formats`]: FP32/FP16/BF16/FP8-E4M3 encodings and reference IEEE ops.
//! * [`pipeline`]: the grouped, truncating MMA model and architecture profiles.
//! * [`oracle`]: an independent wide-integer evaluator and IEEE-ordered dots.
//! * [`probes`]: characterization probes and profile inference.
//! * [`engine`]: matrices of any shape, file formats and comparison reports.

pub mod engine;
pub mod formats;
pub mod oracle;
pub mod pipeline;
pub mod probes;
