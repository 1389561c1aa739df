use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::formats::{FloatFormat, Rounding};
use crate::pipeline::PipelineError;

/// One operand position inside an accumulation group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    /// The incoming accumulator element `C[i][j]`.
    Acc,
    /// Result of the previous group.
    Prev,
    /// Product `A[i][k] * B[k][j]`, numbered 1..=16.
    Product(u8),
}

impl Slot {
    /// All slots that carry tile data, in canonical order: ACC, P1..P16.
    pub fn data_slots() -> impl Iterator<Item = Slot> {
        std::iter::once(Slot::Acc).chain((1..=16).map(Slot::Product))
    }

    /// Bit index used by neutrality masks: ACC is bit 0, Pk is bit k.
    pub fn mask_bit(self) -> Option<u32> {
        match self {
            Slot::Acc => Some(0),
            Slot::Product(k) => Some(k as u32),
            Slot::Prev => None,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Slot::Acc => f.write_str("ACC"),
            Slot::Prev => f.write_str("PREV"),
            Slot::Product(k) => write!(f, "P{k}"),
        }
    }
}

impl FromStr for Slot {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ACC" => Ok(Slot::Acc),
            "PREV" => Ok(Slot::Prev),
            _ => s
                .strip_prefix('P')
                .and_then(|k| k.parse::<u8>().ok())
                .filter(|k| (1..=16).contains(k) && !s[1..].starts_with('0'))
                .map(Slot::Product)
                .ok_or_else(|| format!("unknown slot `{s}`")),
        }
    }
}

impl Serialize for Slot {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Shipped architecture families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arch {
    Ampere,
    Lovelace,
    Hopper,
}

impl Arch {
    pub const ALL: [Arch; 3] = [Arch::Ampere, Arch::Lovelace, Arch::Hopper];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Ampere => "ampere",
            Arch::Lovelace => "lovelace",
            Arch::Hopper => "hopper",
        }
    }

    pub fn profile(self, input_format: FloatFormat) -> PipelineProfile {
        match self {
            Arch::Ampere => PipelineProfile::ampere(input_format),
            Arch::Lovelace => PipelineProfile::lovelace(input_format),
            Arch::Hopper => PipelineProfile::hopper(input_format),
        }
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ampere" => Ok(Arch::Ampere),
            "lovelace" => Ok(Arch::Lovelace),
            "hopper" => Ok(Arch::Hopper),
            _ => Err(format!("unknown architecture `{s}`")),
        }
    }
}

/// Accumulation semantics of one architecture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineProfile {
    pub name: String,
    pub input_format: FloatFormat,
    pub accumulator_format: FloatFormat,
    /// Groups in evaluation order. Every group after the first contains PREV.
    pub grouping: Vec<Vec<Slot>>,
    /// Bits kept below the group's maximum exponent during alignment.
    pub internal_width: u32,
    /// Lower clamp on the group's maximum exponent.
    pub exponent_floor: i64,
    pub alignment_rounding: Rounding,
    pub final_rounding: Rounding,
    /// Align every product by its normalized exponent instead of the raw
    /// exponent sum.
    pub normalize_products: bool,
    /// Align products with a subnormal factor by their normalized exponent.
    pub renormalize_subnormal_products: bool,
}

pub const MAX_INTERNAL_WIDTH: u32 = 48;
pub const EXPONENT_FLOOR_LIMIT: i64 = 100_000;

fn products(range: std::ops::RangeInclusive<u8>) -> impl Iterator<Item = Slot> {
    range.map(Slot::Product)
}

impl PipelineProfile {
    /// Two groups: `{ACC, P1..P8}` then `{PREV, P9..P16}`; W = 24, floor -132.
    pub fn ampere(input_format: FloatFormat) -> Self {
        PipelineProfile {
            name: "ampere".into(),
            input_format,
            accumulator_format: FloatFormat::FP32,
            grouping: vec![
                std::iter::once(Slot::Acc).chain(products(1..=8)).collect(),
                std::iter::once(Slot::Prev).chain(products(9..=16)).collect(),
            ],
            internal_width: 24,
            exponent_floor: -132,
            alignment_rounding: Rounding::TowardZero,
            final_rounding: Rounding::TowardZero,
            normalize_products: false,
            renormalize_subnormal_products: false,
        }
    }

    pub fn lovelace(input_format: FloatFormat) -> Self {
        PipelineProfile { name: "lovelace".into(), ..Self::ampere(input_format) }
    }

    /// One group `{ACC, P1..P16}`; W = 25, floor -133.
    pub fn hopper(input_format: FloatFormat) -> Self {
        PipelineProfile {
            name: "hopper".into(),
            grouping: vec![std::iter::once(Slot::Acc).chain(products(1..=16)).collect()],
            internal_width: 25,
            exponent_floor: -133,
            ..Self::ampere(input_format)
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::InvalidProfile(msg));
        if !matches!(self.input_format, f if f == FloatFormat::FP16 || f == FloatFormat::BF16 || f == FloatFormat::FP8_E4M3)
        {
            return bad(format!("unsupported input format {}", self.input_format));
        }
        if self.accumulator_format != FloatFormat::FP32 {
            return bad(format!("accumulator format must be fp32, got {}", self.accumulator_format));
        }
        if self.grouping.is_empty() {
            return bad("grouping is empty".into());
        }
        let mut seen = BTreeSet::new();
        for (g, group) in self.grouping.iter().enumerate() {
            let prevs = group.iter().filter(|s| **s == Slot::Prev).count();
            match (g, prevs) {
                (0, 0) => {}
                (0, _) => return bad("PREV cannot appear in the first group".into()),
                (_, 1) => {}
                (_, _) => return bad(format!("group {} must contain PREV exactly once", g + 1)),
            }
            for slot in group.iter().filter(|s| **s != Slot::Prev) {
                if let Slot::Product(k) = slot {
                    if !(1..=16).contains(k) {
                        return bad(format!("product slot P{k} out of range"));
                    }
                }
                if !seen.insert(*slot) {
                    return bad(format!("slot {slot} appears more than once"));
                }
            }
        }
        if seen.len() != 17 {
            let missing: Vec<String> =
                Slot::data_slots().filter(|s| !seen.contains(s)).map(|s| s.to_string()).collect();
            return bad(format!("missing slots: {}", missing.join(", ")));
        }
        if !(1..=MAX_INTERNAL_WIDTH).contains(&self.internal_width) {
            return bad(format!("internal width {} outside 1..={MAX_INTERNAL_WIDTH}", self.internal_width));
        }
        if self.exponent_floor.abs() > EXPONENT_FLOOR_LIMIT {
            return bad(format!("exponent floor {} out of range", self.exponent_floor));
        }
        if self.normalize_products && !self.renormalize_subnormal_products {
            return bad("normalize_products requires renormalize_subnormal_products".into());
        }
        Ok(())
    }

    /// Equality on everything that affects results (ignores the name, group
    /// member order and PREV position).
    pub fn semantics_eq(&self, other: &PipelineProfile) -> bool {
        self.input_format == other.input_format
            && self.accumulator_format == other.accumulator_format
            && canonical_groups(&self.grouping) == canonical_groups(&other.grouping)
            && self.internal_width == other.internal_width
            && self.exponent_floor == other.exponent_floor
            && self.alignment_rounding == other.alignment_rounding
            && self.final_rounding == other.final_rounding
            && self.normalize_products == other.normalize_products
            && self.renormalize_subnormal_products == other.renormalize_subnormal_products
    }

    /// Index of the group holding each data slot (ACC at 0, Pk at k).
    pub fn group_of(&self) -> [usize; 17] {
        let mut out = [0; 17];
        for (g, group) in self.grouping.iter().enumerate() {
            for slot in group {
                if let Some(bit) = slot.mask_bit() {
                    out[bit as usize] = g;
                }
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let profile: PipelineProfile =
            serde_json::from_str(text).map_err(|e| PipelineError::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::InvalidProfile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

pub(crate) fn canonical_groups(grouping: &[Vec<Slot>]) -> Vec<BTreeSet<Slot>> {
    grouping
        .iter()
        .map(|g| g.iter().copied().filter(|s| *s != Slot::Prev).collect())
        .collect()
}
