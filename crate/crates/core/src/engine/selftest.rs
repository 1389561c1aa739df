use rayon::prelude::*;

use crate::formats::FloatFormat;
use crate::oracle::exact_tile_mma;
use crate::oracle::random::{random_triple, Stratum};
use crate::pipeline::{tile_mma, PipelineProfile};
use crate::probes::{generate_suite, infer_profile, run_probes, SimulatorDevice, Suite};

/// The (profile, input format) pairs with published behavior.
pub fn shipped_pairs() -> Vec<PipelineProfile> {
    vec![
        PipelineProfile::ampere(FloatFormat::FP16),
        PipelineProfile::ampere(FloatFormat::BF16),
        PipelineProfile::hopper(FloatFormat::FP16),
        PipelineProfile::hopper(FloatFormat::BF16),
        PipelineProfile::hopper(FloatFormat::FP8_E4M3),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalenceRun {
    pub tiles: u64,
    pub mismatched_tiles: u64,
    /// `(stratum, index)` of the first few failing tiles.
    pub failures: Vec<(Stratum, u64)>,
}

/// Compares the pipeline with the exact oracle on `tiles` random tiles,
/// cycling through the strata. Tile `t` is a pure function of `seed` and `t`.
pub fn oracle_equivalence(profile: &PipelineProfile, tiles: u64, seed: u64) -> EquivalenceRun {
    let fmt = profile.input_format;
    let mut failures: Vec<(Stratum, u64)> = (0..tiles)
        .into_par_iter()
        .filter_map(|t| {
            let stratum = Stratum::ALL[(t % 3) as usize];
            let index = t / 3;
            let x = random_triple(fmt, stratum, seed, index);
            let fast = tile_mma(&x.a, &x.b, &x.c, profile).ok();
            let slow = exact_tile_mma(&x.a, &x.b, &x.c, profile).ok();
            (fast.is_none() || fast != slow).then_some((stratum, index))
        })
        .collect();
    let mismatched_tiles = failures.len() as u64;
    failures.truncate(8);
    EquivalenceRun { tiles, mismatched_tiles, failures }
}

/// Runs the whole probe suite against the simulator and checks that
/// inference recovers `profile`. The floor is required wherever the
/// probes can observe it.
pub fn probe_round_trip(profile: &PipelineProfile) -> CheckResult {
    let fmt = profile.input_format;
    let name = format!("probe round-trip {} {}", profile.name, fmt);
    let probes = generate_suite(fmt, &Suite::ALL);
    let responses = match run_probes(&SimulatorDevice(profile.clone()), &probes) {
        Ok(r) => r,
        Err(e) => return CheckResult { name, passed: false, detail: e.to_string() },
    };
    match infer_profile(&responses, fmt) {
        Err(e) => CheckResult { name, passed: false, detail: e.to_string() },
        Ok(got) => {
            let mut bad = got.mismatches(profile);
            if fmt == FloatFormat::BF16 && got.exponent_floor != Some(profile.exponent_floor) {
                bad.push("exponent_floor");
            }
            let floor = got.exponent_floor.map_or("unobserved".to_string(), |f| f.to_string());
            let detail = if bad.is_empty() {
                format!("{} groups, W={}, floor {floor}", got.grouping.len(), got.internal_width)
            } else {
                format!("mismatched fields: {}", bad.join(", "))
            };
            CheckResult { name, passed: bad.is_empty(), detail }
        }
    }
}

pub fn selftest(trials: u64, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for p in shipped_pairs() {
        let run = oracle_equivalence(&p, trials, seed);
        out.push(CheckResult {
            name: format!("oracle equivalence {} {}", p.name, p.input_format),
            passed: run.mismatched_tiles == 0,
            detail: format!("{} tiles, {} mismatched {:?}", run.tiles, run.mismatched_tiles, run.failures),
        });
        out.push(probe_round_trip(&p));
    }
    out
}
