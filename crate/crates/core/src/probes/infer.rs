use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::formats::{exact_bits, FloatFormat, Rounding};
use crate::pipeline::{factor, mma_prepared, Factor, PipelineProfile, Plan, Slot, EXPONENT_FLOOR_LIMIT, TILE_DIM};

use super::generate::{constants, ProbeConstants, FULL_MASK};
use super::{pack, ProbeCase, ProbeResponse, Suite};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InferenceError {
    #[error("no response for probe {probe_id}")]
    MissingResponse { probe_id: String },
    #[error("inconsistent {field}: {reason} (probes: {})", probe_ids.join(", "))]
    Inconsistent { field: String, reason: String, probe_ids: Vec<String> },
    #[error("bad response: {0}")]
    BadResponse(String),
}

/// A recovered profile plus the case ids that determined each field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InferredProfile {
    pub name: String,
    pub input_format: FloatFormat,
    pub accumulator_format: FloatFormat,
    pub grouping: Vec<Vec<Slot>>,
    pub internal_width: u32,
    /// `None` when no probe can see the floor (FP16 and FP8 products never
    /// come near it).
    pub exponent_floor: Option<i64>,
    pub alignment_rounding: Rounding,
    pub final_rounding: Rounding,
    pub normalize_products: bool,
    pub renormalize_subnormal_products: bool,
    pub evidence: BTreeMap<String, Vec<String>>,
}

impl InferredProfile {
    /// A usable profile; `fallback_floor` stands in for an unobserved floor.
    pub fn to_profile(&self, fallback_floor: i64) -> PipelineProfile {
        PipelineProfile {
            name: self.name.clone(),
            input_format: self.input_format,
            accumulator_format: self.accumulator_format,
            grouping: self.grouping.clone(),
            internal_width: self.internal_width,
            exponent_floor: self.exponent_floor.unwrap_or(fallback_floor),
            alignment_rounding: self.alignment_rounding,
            final_rounding: self.final_rounding,
            normalize_products: self.normalize_products,
            renormalize_subnormal_products: self.renormalize_subnormal_products,
        }
    }

    /// Semantic fields that differ from `profile`. An unobserved floor is
    /// not compared.
    pub fn mismatches(&self, profile: &PipelineProfile) -> Vec<&'static str> {
        let mut out = Vec::new();
        let reference = self.to_profile(profile.exponent_floor);
        if reference.input_format != profile.input_format {
            out.push("input_format");
        }
        if crate::pipeline::canonical_groups(&reference.grouping) != crate::pipeline::canonical_groups(&profile.grouping)
        {
            out.push("grouping");
        }
        if reference.internal_width != profile.internal_width {
            out.push("internal_width");
        }
        if reference.exponent_floor != profile.exponent_floor {
            out.push("exponent_floor");
        }
        if reference.alignment_rounding != profile.alignment_rounding {
            out.push("alignment_rounding");
        }
        if reference.final_rounding != profile.final_rounding {
            out.push("final_rounding");
        }
        if reference.normalize_products != profile.normalize_products {
            out.push("normalize_products");
        }
        if reference.renormalize_subnormal_products != profile.renormalize_subnormal_products {
            out.push("renormalize_subnormal_products");
        }
        out
    }

    pub fn matches(&self, profile: &PipelineProfile) -> bool {
        self.mismatches(profile).is_empty()
    }
}

/// Every case of the suite with its observed result.
struct Observations {
    fmt: FloatFormat,
    cases: Vec<ProbeCase>,
    results: Vec<u32>,
    index: HashMap<String, usize>,
}

impl Observations {
    fn collect(responses: &[ProbeResponse], fmt: FloatFormat) -> Result<Self, InferenceError> {
        let mut by_probe: HashMap<&str, &ProbeResponse> = HashMap::new();
        for r in responses {
            if let Some(prev) = by_probe.insert(&r.probe_id, r) {
                if prev.output != r.output {
                    return Err(InferenceError::BadResponse(format!("conflicting responses for {}", r.probe_id)));
                }
            }
        }
        let mut obs = Observations { fmt, cases: Vec::new(), results: Vec::new(), index: HashMap::new() };
        let mut known = std::collections::HashSet::new();
        for suite in Suite::ALL {
            let cases = suite.cases(fmt);
            for probe in pack(suite.name(), &cases) {
                let r = by_probe
                    .get(probe.id.as_str())
                    .ok_or_else(|| InferenceError::MissingResponse { probe_id: probe.id.clone() })?;
                known.insert(probe.id.clone());
                for (_, i) in &probe.members {
                    obs.results.push(r.output.get(*i, *i));
                }
            }
            for case in cases {
                obs.index.insert(case.id.clone(), obs.cases.len());
                obs.cases.push(case);
            }
        }
        if known.len() != by_probe.len() {
            let stray: Vec<&str> = by_probe.keys().copied().filter(|id| !known.contains(*id)).take(5).collect();
            return Err(InferenceError::BadResponse(format!("responses for unknown probes: {}", stray.join(", "))));
        }
        Ok(obs)
    }

    fn get(&self, id: &str) -> Option<(usize, u32)> {
        self.index.get(id).map(|&i| (i, self.results[i]))
    }

    fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = usize> + 'a {
        self.cases.iter().enumerate().filter(move |(_, c)| c.id.starts_with(prefix)).map(|(i, _)| i)
    }
}

/// Pipeline evaluation of single cases under a fixed profile.
struct Evaluator {
    profile: PipelineProfile,
    plan: Plan,
}

impl Evaluator {
    fn new(profile: PipelineProfile) -> Self {
        let plan = Plan::new(&profile);
        Evaluator { profile, plan }
    }

    fn run(&self, case: &ProbeCase) -> u32 {
        let decode = |row: &[u32; TILE_DIM]| -> [Factor; TILE_DIM] {
            std::array::from_fn(|k| factor(row[k], case.format).expect("probe inputs are finite"))
        };
        mma_prepared(case.c, &decode(&case.a_row), &decode(&case.b_col), &self.profile, &self.plan)
    }
}

fn inconsistent(field: &str, reason: impl Into<String>, probe_ids: Vec<String>) -> InferenceError {
    InferenceError::Inconsistent { field: field.into(), reason: reason.into(), probe_ids }
}

fn fp32(x: f64) -> u32 {
    exact_bits(x, FloatFormat::FP32).expect("expected value is exact in fp32")
}

fn mask_slots(mask: u32) -> Vec<Slot> {
    (0..17u32)
        .filter(|b| mask >> b & 1 == 1)
        .map(|b| if b == 0 { Slot::Acc } else { Slot::Product(b as u8) })
        .collect()
}

fn infer_grouping(obs: &Observations) -> Result<(Vec<Vec<Slot>>, Vec<String>), InferenceError> {
    let mut neutral = Vec::new();
    for i in obs.ids_with_prefix("neutrality/").step_by(2) {
        let id = &obs.cases[i].id;
        debug_assert!(id.ends_with("/cancel") && obs.cases[i + 1].id.ends_with("/zero"));
        if obs.results[i] == obs.results[i + 1] {
            neutral.push(u32::from_str_radix(&id["neutrality/".len()..][..5], 16).expect("mask in id"));
        }
    }
    neutral.sort_by_key(|m| (m.count_ones(), *m));
    let cases_of = |m: u32| vec![format!("neutrality/{m:05x}/cancel"), format!("neutrality/{m:05x}/zero")];
    if neutral.last() != Some(&FULL_MASK) {
        return Err(inconsistent("grouping", "the full slot set is not neutral", cases_of(FULL_MASK)));
    }
    for w in neutral.windows(2) {
        if w[0] & !w[1] != 0 || w[0] == w[1] {
            let mut ids = cases_of(w[0]);
            ids.extend(cases_of(w[1]));
            return Err(inconsistent("grouping", "neutral slot sets do not form a nested chain", ids));
        }
    }
    let first = neutral[0];
    if first & 0b1111 != 0b1111 {
        return Err(inconsistent("grouping", "ACC, P1, P2 and P3 are not in the first group", cases_of(first)));
    }
    let mut grouping = vec![mask_slots(first)];
    for w in neutral.windows(2) {
        let mut g = vec![Slot::Prev];
        g.extend(mask_slots(w[1] & !w[0]));
        grouping.push(g);
    }
    Ok((grouping, neutral.into_iter().flat_map(cases_of).collect()))
}

fn infer_width(obs: &Observations, k: &ProbeConstants) -> Result<(u32, Vec<String>), InferenceError> {
    let mut survived = Vec::new();
    for c in k.width_c.clone() {
        let id = format!("width/c={c}");
        let (_, got) = obs.get(&id).expect("width case present");
        survived.push((c, got == fp32(2f64.powi(k.width_base - c)), id));
    }
    let last = survived.iter().rposition(|s| s.1);
    let Some(last) = last else {
        return Err(inconsistent("internal_width", "no width case survived", vec![survived[0].2.clone()]));
    };
    if last + 1 == survived.len() {
        let ids = vec![survived[last].2.clone()];
        return Err(inconsistent("internal_width", "no width boundary inside the sweep", ids));
    }
    if let Some(gap) = survived[..last].iter().find(|s| !s.1) {
        let ids = vec![gap.2.clone(), survived[last].2.clone()];
        return Err(inconsistent("internal_width", "surviving widths are not contiguous", ids));
    }
    let w = survived[last].0;
    Ok((w as u32, vec![survived[last].2.clone(), survived[last + 1].2.clone()]))
}

/// Results of `align/d=W/t1..t4`, in units of `2^(b - W)`, for each mode.
const ALIGNMENT_TABLE: [(Rounding, [i64; 4]); 5] = [
    (Rounding::TowardZero, [0, 0, 1, 0]),
    (Rounding::NearestEven, [0, 0, 2, 1]),
    (Rounding::NearestAway, [1, -1, 2, 1]),
    (Rounding::TowardPositive, [1, 0, 2, 1]),
    (Rounding::TowardNegative, [0, -1, 1, 0]),
];

fn infer_alignment(obs: &Observations, k: &ProbeConstants, w: u32) -> Result<(Rounding, Vec<String>), InferenceError> {
    let ids: Vec<String> = (1..=4).map(|t| format!("align/d={w}/t{t}")).collect();
    let unit = 2f64.powi(k.width_base - w as i32);
    let mut units = [0i64; 4];
    for (slot, id) in units.iter_mut().zip(&ids) {
        let Some((_, got)) = obs.get(id) else {
            return Err(inconsistent("alignment_rounding", "inferred width lies outside the alignment sweep", vec![]));
        };
        let q = f32::from_bits(got) as f64 / unit;
        if q.fract() != 0.0 || q.abs() > 4.0 {
            return Err(inconsistent("alignment_rounding", "residue is not a whole number of units", vec![id.clone()]));
        }
        *slot = q as i64;
    }
    ALIGNMENT_TABLE
        .iter()
        .find(|(_, row)| *row == units)
        .map(|(mode, _)| (*mode, ids.clone()))
        .ok_or_else(|| inconsistent("alignment_rounding", format!("unrecognized residues {units:?}"), ids))
}

/// Exhaustively matches the normalization flags, the final rounding and the
/// floor against the cases that depend on them.
#[allow(clippy::type_complexity)]
fn infer_finish(
    obs: &Observations,
    k: &ProbeConstants,
    base: &PipelineProfile,
) -> Result<((bool, bool), Rounding, Option<i64>, [Vec<String>; 3]), InferenceError> {
    let norm: Vec<usize> = obs.ids_with_prefix("norm/").chain(obs.ids_with_prefix("subnorm/")).collect();
    let fin: Vec<usize> = obs.ids_with_prefix("final/").collect();
    let sweep: Vec<usize> = obs.ids_with_prefix(&format!("range/floor/w={}/", base.internal_width)).collect();
    let sentinel = -EXPONENT_FLOOR_LIMIT;
    let mut floors = vec![sentinel];
    if !sweep.is_empty() {
        floors.extend((k.floor_e_min as i64 + 1)..=0);
    }
    let flags = [(false, false), (false, true), (true, true)];
    let checked: Vec<usize> = norm.iter().chain(&fin).chain(&sweep).copied().collect();
    let mut hits = Vec::new();
    for &(normalize, renormalize) in &flags {
        for fin_mode in Rounding::ALL {
            for &floor in &floors {
                let ev = Evaluator::new(PipelineProfile {
                    normalize_products: normalize,
                    renormalize_subnormal_products: renormalize,
                    final_rounding: fin_mode,
                    exponent_floor: floor,
                    ..base.clone()
                });
                if checked.iter().all(|&i| ev.run(&obs.cases[i]) == obs.results[i]) {
                    hits.push(((normalize, renormalize), fin_mode, floor));
                }
            }
        }
    }
    let ids = |v: &[usize]| v.iter().map(|&i| obs.cases[i].id.clone()).collect::<Vec<_>>();
    let mut modes: Vec<((bool, bool), Rounding)> = hits.iter().map(|h| (h.0, h.1)).collect();
    modes.dedup();
    match modes.len() {
        1 => {}
        0 => {
            // Report the mismatches of the closest candidate.
            let mut best: Option<Vec<String>> = None;
            for &(n, r) in &flags {
                for fin_mode in Rounding::ALL {
                    let ev = Evaluator::new(PipelineProfile {
                        normalize_products: n,
                        renormalize_subnormal_products: r,
                        final_rounding: fin_mode,
                        ..base.clone()
                    });
                    let bad: Vec<String> = norm
                        .iter()
                        .chain(&fin)
                        .filter(|&&i| ev.run(&obs.cases[i]) != obs.results[i])
                        .map(|&i| obs.cases[i].id.clone())
                        .collect();
                    if best.as_ref().is_none_or(|b| bad.len() < b.len()) {
                        best = Some(bad);
                    }
                }
            }
            let mut bad = best.unwrap_or_default();
            if bad.is_empty() {
                bad = ids(&sweep);
            }
            bad.truncate(16);
            return Err(inconsistent("normalization/final_rounding", "no candidate explains the responses", bad));
        }
        _ => {
            let mut all = ids(&norm);
            all.extend(ids(&fin));
            return Err(inconsistent("normalization/final_rounding", "responses fit several candidates", all));
        }
    }
    let (flag, fin_mode) = modes[0];
    let floors: Vec<i64> = hits.iter().map(|h| h.2).collect();
    let floor = match floors.as_slice() {
        [f] if *f != sentinel => Some(*f),
        _ => None,
    };
    let floor_ids = match floor {
        Some(f) => vec![
            format!("range/floor/w={}/e={}", base.internal_width, f),
            format!("range/floor/w={}/e={}", base.internal_width, f - 1),
        ],
        None => ids(&sweep),
    };
    Ok((flag, fin_mode, floor, [ids(&norm), ids(&fin), floor_ids]))
}

/// Recovers the accumulation profile behind a complete set of responses to
/// the probe suite for `fmt`.
///
/// Every field is read off its dedicated cases and the resulting profile is
/// then replayed against every case; a single disagreement is an error.
pub fn infer_profile(responses: &[ProbeResponse], fmt: FloatFormat) -> Result<InferredProfile, InferenceError> {
    let obs = Observations::collect(responses, fmt)?;
    let k = constants(fmt);
    let mut evidence = BTreeMap::new();

    let (grouping, ids) = infer_grouping(&obs)?;
    evidence.insert("grouping".to_string(), ids);
    let (internal_width, ids) = infer_width(&obs, &k)?;
    evidence.insert("internal_width".to_string(), ids);
    let (alignment_rounding, ids) = infer_alignment(&obs, &k, internal_width)?;
    evidence.insert("alignment_rounding".to_string(), ids);

    let base = PipelineProfile {
        name: "inferred".into(),
        input_format: fmt,
        accumulator_format: FloatFormat::FP32,
        grouping: grouping.clone(),
        internal_width,
        exponent_floor: -EXPONENT_FLOOR_LIMIT,
        alignment_rounding,
        final_rounding: Rounding::TowardZero,
        normalize_products: false,
        renormalize_subnormal_products: false,
    };
    base.validate().map_err(|e| inconsistent("grouping", e.to_string(), vec![]))?;
    let ((normalize, renormalize), final_rounding, exponent_floor, [norm_ids, fin_ids, floor_ids]) =
        infer_finish(&obs, &k, &base)?;
    evidence.insert("normalize_products".to_string(), norm_ids.clone());
    evidence.insert("renormalize_subnormal_products".to_string(), norm_ids);
    evidence.insert("final_rounding".to_string(), fin_ids);
    evidence.insert("exponent_floor".to_string(), floor_ids);

    let inferred = InferredProfile {
        name: "inferred".into(),
        input_format: fmt,
        accumulator_format: FloatFormat::FP32,
        grouping,
        internal_width,
        exponent_floor,
        alignment_rounding,
        final_rounding,
        normalize_products: normalize,
        renormalize_subnormal_products: renormalize,
        evidence,
    };
    let ev = Evaluator::new(inferred.to_profile(-EXPONENT_FLOOR_LIMIT));
    let bad: Vec<String> = (0..obs.cases.len())
        .filter(|&i| ev.run(&obs.cases[i]) != obs.results[i])
        .map(|i| obs.cases[i].id.clone())
        .take(16)
        .collect();
    if !bad.is_empty() {
        return Err(inconsistent("profile", "the inferred profile does not reproduce every response", bad));
    }
    debug_assert_eq!(obs.fmt, fmt);
    Ok(inferred)
}
