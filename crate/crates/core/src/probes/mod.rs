//! Characterization probes: generation, device execution and inference of a
//! [`PipelineProfile`](crate::pipeline::PipelineProfile) from the responses.
//!
//! A probe case is one dot product: a row of A, a column of B and an
//! accumulator value. Cases are packed sixteen to a tile along the diagonal
//! (case `i` uses row `i` of A, column `i` of B and `C[i][i]`), which is sound
//! because every output element depends only on its own row and column.

mod device;
mod generate;
mod infer;

pub use device::{run_probes, Device, DeviceError, IeeeSequentialDevice, OracleDevice, SimulatorDevice};
pub use generate::{
    constants, gen_neutrality_cases, gen_normalization_cases, gen_range_cases, gen_rounding_cases, gen_width_cases,
    ProbeConstants, FULL_MASK,
};
pub use infer::{infer_profile, InferenceError, InferredProfile};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::formats::FloatFormat;
use crate::pipeline::{Tile, TILE_DIM, TILE_LEN};

/// Bumped whenever generated probes change.
pub const SUITE_VERSION: u32 = 1;

/// A single dot-product experiment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeCase {
    pub id: String,
    pub format: FloatFormat,
    pub a_row: [u32; TILE_DIM],
    pub b_col: [u32; TILE_DIM],
    /// FP32 accumulator pattern.
    pub c: u32,
    pub expected_semantics: String,
}

impl ProbeCase {
    /// The cell of a stand-alone case's tiles that holds the result.
    pub const TARGET_CELL: (usize, usize) = (0, 0);

    pub fn a_tile(&self) -> Tile {
        let mut t = Tile::zeros(self.format);
        for (k, &x) in self.a_row.iter().enumerate() {
            t.set(0, k, x);
        }
        t
    }

    pub fn b_tile(&self) -> Tile {
        let mut t = Tile::zeros(self.format);
        for (k, &x) in self.b_col.iter().enumerate() {
            t.set(k, 0, x);
        }
        t
    }

    pub fn c_tile(&self) -> Tile {
        let mut t = Tile::zeros(FloatFormat::FP32);
        t.set(0, 0, self.c);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Suite {
    Neutrality,
    Width,
    Rounding,
    Normalization,
    Range,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Neutrality, Suite::Width, Suite::Rounding, Suite::Normalization, Suite::Range];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Neutrality => "neutrality",
            Suite::Width => "width",
            Suite::Rounding => "rounding",
            Suite::Normalization => "normalization",
            Suite::Range => "range",
        }
    }

    pub fn cases(self, fmt: FloatFormat) -> Vec<ProbeCase> {
        match self {
            Suite::Neutrality => gen_neutrality_cases(fmt).into_iter().flat_map(|(x, y)| [x, y]).collect(),
            Suite::Width => gen_width_cases(fmt),
            Suite::Rounding => gen_rounding_cases(fmt),
            Suite::Normalization => gen_normalization_cases(fmt),
            Suite::Range => gen_range_cases(fmt),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

/// Sixteen cases sharing one set of tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedProbe {
    pub id: String,
    pub a: Tile,
    pub b: Tile,
    pub c: Tile,
    /// `(case id, diagonal index)`; the case's result is `D[i][i]`.
    pub members: Vec<(String, usize)>,
}

impl PackedProbe {
    pub fn format(&self) -> FloatFormat {
        self.a.format()
    }
}

/// Packs cases onto tile diagonals; probe ids are `{prefix}/{n:05}`.
pub fn pack(prefix: &str, cases: &[ProbeCase]) -> Vec<PackedProbe> {
    cases
        .chunks(TILE_DIM)
        .enumerate()
        .map(|(n, chunk)| {
            let fmt = chunk[0].format;
            let mut a = Tile::zeros(fmt);
            let mut b = Tile::zeros(fmt);
            let mut c = Tile::zeros(FloatFormat::FP32);
            let mut members = Vec::with_capacity(chunk.len());
            for (i, case) in chunk.iter().enumerate() {
                for k in 0..TILE_DIM {
                    a.set(i, k, case.a_row[k]);
                    b.set(k, i, case.b_col[k]);
                }
                c.set(i, i, case.c);
                members.push((case.id.clone(), i));
            }
            PackedProbe { id: format!("{prefix}/{n:05}"), a, b, c, members }
        })
        .collect()
}

/// Every packed probe of the selected suites, in suite order.
pub fn generate_suite(fmt: FloatFormat, suites: &[Suite]) -> Vec<PackedProbe> {
    let mut out = Vec::new();
    for suite in Suite::ALL.iter().filter(|s| suites.contains(s)) {
        out.extend(pack(suite.name(), &suite.cases(fmt)));
    }
    out
}

/// A device's output tile for one packed probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeResponse {
    pub probe_id: String,
    pub output: Tile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRecord {
    probe_id: String,
    output_tile_hex: String,
}

impl ProbeResponse {
    /// One JSONL record: 256 FP32 patterns as lowercase hex, row-major.
    pub fn to_json_line(&self) -> String {
        let hex: String = self.output.bits().iter().map(|b| format!("{b:08x}")).collect();
        serde_json::to_string(&ResponseRecord { probe_id: self.probe_id.clone(), output_tile_hex: hex })
            .expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let rec: ResponseRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let hex = rec.output_tile_hex;
        if hex.len() != TILE_LEN * 8 || !hex.bytes().all(|c| c.is_ascii_digit() || (b'a'..=b'f').contains(&c)) {
            return Err(format!("probe {}: output_tile_hex must be {} lowercase hex digits", rec.probe_id, TILE_LEN * 8));
        }
        let bits = (0..TILE_LEN)
            .map(|i| u32::from_str_radix(&hex[8 * i..8 * i + 8], 16).expect("validated hex"))
            .collect();
        let output = Tile::from_bits(FloatFormat::FP32, bits).map_err(|e| e.to_string())?;
        Ok(ProbeResponse { probe_id: rec.probe_id, output })
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<Self>, String> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| Self::from_json_line(l).map_err(|e| format!("line {}: {e}", n + 1)))
            .collect()
    }
}
