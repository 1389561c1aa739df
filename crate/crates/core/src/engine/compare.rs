use serde::{Deserialize, Serialize};

use crate::formats::FloatFormat;

use super::{EngineError, Matrix};

/// Mismatching cells kept in a report.
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchSample {
    pub row: usize,
    pub col: usize,
    pub lhs_hex: String,
    pub rhs_hex: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub total: u64,
    pub mismatches: u64,
    pub samples: Vec<MismatchSample>,
    /// Largest distance, in units in the last place, over all mismatches.
    pub max_ulp: u64,
}

impl ComparisonReport {
    pub fn is_match(&self) -> bool {
        self.mismatches == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Position of a pattern on the number line: negative patterns map below
/// zero so adjacent values differ by one. NaNs order past infinity.
fn ordinal(bits: u32, fmt: FloatFormat) -> i64 {
    let mag = (bits & fmt.magnitude_mask()) as i64;
    if bits & fmt.sign_mask() != 0 {
        -mag
    } else {
        mag
    }
}

pub fn ulp_distance(lhs: u32, rhs: u32, fmt: FloatFormat) -> u64 {
    ordinal(lhs, fmt).abs_diff(ordinal(rhs, fmt))
}

/// Bitwise comparison; NaNs compare by their exact patterns.
pub fn compare(lhs: &Matrix, rhs: &Matrix) -> Result<ComparisonReport, EngineError> {
    compare_with_samples(lhs, rhs, DEFAULT_SAMPLES)
}

pub fn compare_with_samples(lhs: &Matrix, rhs: &Matrix, samples: usize) -> Result<ComparisonReport, EngineError> {
    if lhs.format() != rhs.format() {
        return Err(EngineError::FormatMismatch { what: "rhs".into(), expected: lhs.format(), found: rhs.format() });
    }
    if (lhs.rows(), lhs.cols()) != (rhs.rows(), rhs.cols()) {
        return Err(EngineError::Shape(format!(
            "cannot compare {}x{} with {}x{}",
            lhs.rows(),
            lhs.cols(),
            rhs.rows(),
            rhs.cols()
        )));
    }
    let fmt = lhs.format();
    let digits = fmt.storage_bytes() * 2;
    let mut report = ComparisonReport { total: lhs.bits().len() as u64, mismatches: 0, samples: Vec::new(), max_ulp: 0 };
    for (i, (&x, &y)) in lhs.bits().iter().zip(rhs.bits()).enumerate() {
        if x == y {
            continue;
        }
        report.mismatches += 1;
        report.max_ulp = report.max_ulp.max(ulp_distance(x, y, fmt));
        if report.samples.len() < samples {
            report.samples.push(MismatchSample {
                row: i / lhs.cols(),
                col: i % lhs.cols(),
                lhs_hex: format!("{x:0digits$x}"),
                rhs_hex: format!("{y:0digits$x}"),
            });
        }
    }
    Ok(report)
}
