use tcsim::formats::{FloatFormat, Rounding};
use tcsim::oracle::random::{random_triple, Stratum};
use tcsim::oracle::{exact_mma_element, exact_tile_mma};
use tcsim::pipeline::{mma_element, tile_mma, PipelineProfile};

fn pairs() -> Vec<PipelineProfile> {
    vec![
        PipelineProfile::ampere(FloatFormat::FP16),
        PipelineProfile::ampere(FloatFormat::BF16),
        PipelineProfile::hopper(FloatFormat::FP16),
        PipelineProfile::hopper(FloatFormat::BF16),
        PipelineProfile::hopper(FloatFormat::FP8_E4M3),
    ]
}

fn check(profile: &PipelineProfile, tiles: u64, seed: u64) {
    for stratum in Stratum::ALL {
        for idx in 0..tiles {
            let t = random_triple(profile.input_format, stratum, seed, idx);
            let fast = tile_mma(&t.a, &t.b, &t.c, profile).unwrap();
            let slow = exact_tile_mma(&t.a, &t.b, &t.c, profile).unwrap();
            assert_eq!(fast, slow, "{} {} {stratum:?} tile {idx}", profile.name, profile.input_format);
        }
    }
}

#[test]
fn shipped_profiles_match_oracle() {
    for p in pairs() {
        check(&p, 40, 11);
    }
}

#[test]
fn variant_profiles_match_oracle() {
    for base in pairs() {
        for mode in Rounding::ALL {
            let mut p = base.clone();
            p.alignment_rounding = mode;
            p.final_rounding = Rounding::ALL[(mode as usize + 2) % 5];
            check(&p, 4, 5);
        }
        let mut p = base.clone();
        p.renormalize_subnormal_products = true;
        check(&p, 6, 6);
        p.normalize_products = true;
        check(&p, 6, 6);
        let mut p = base.clone();
        p.internal_width = 40;
        p.exponent_floor = -20;
        check(&p, 6, 7);
        p.internal_width = 3;
        check(&p, 6, 8);
    }
}

#[test]
fn special_accumulators_match_oracle() {
    let p = PipelineProfile::ampere(FloatFormat::FP16);
    let t = random_triple(FloatFormat::FP16, Stratum::Uniform, 2, 0);
    for c in [0x7f80_0000u32, 0xff80_0000, 0x7fc0_0000, 0x8000_0000, 1, 0x8000_0001, 0x7f7f_ffff] {
        for i in 0..16 {
            let fast = mma_element(c, &t.a.row(i), &t.b.col(i), &p).unwrap();
            let slow = exact_mma_element(c, &t.a.row(i), &t.b.col(i), &p).unwrap();
            assert_eq!(fast, slow, "c = {c:#x}");
        }
    }
}
