use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcsim::engine::selftest::selftest;
use tcsim::engine::suite::{read_responses, read_suite, write_responses, write_suite};
use tcsim::engine::{compare, matmul, read_matrix, write_matrix, EngineError, Matrix};
use tcsim::formats::FloatFormat;
use tcsim::oracle::random::{finite_pattern, random_triple, stream, Stratum};
use tcsim::pipeline::{tile_mma, Arch, PipelineProfile, Tile, EXPONENT_FLOOR_LIMIT};
use tcsim::probes::{
    generate_suite, infer_profile, run_probes, Device, IeeeSequentialDevice, OracleDevice, SimulatorDevice, Suite,
};

#[derive(Parser)]
#[command(name = "tcsim", version, about = "Bit-exact tensor-core MMA emulation and characterization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// D = C + A*B for one 16x16 tile.
    Simulate(MmaArgs),
    /// D = C + A*B for any conforming shapes.
    Matmul {
        #[command(flatten)]
        mma: MmaArgs,
        /// Worker threads (0 = one per core).
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Characterization probes.
    #[command(subcommand)]
    Probe(ProbeCommand),
    /// Bitwise comparison of two matrix files.
    Compare {
        #[arg(long)]
        lhs: PathBuf,
        #[arg(long)]
        rhs: PathBuf,
        /// Where to write the JSON report.
        #[arg(long)]
        report: PathBuf,
    },
    /// Oracle equivalence and probe round-trip on every shipped profile.
    Selftest {
        /// Random tiles per profile.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes a random matrix.
    GenMatrix {
        #[arg(long)]
        dtype: String,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Writes random A, B and C tiles (`a.hwkt`, `b.hwkt`, `c.hwkt`).
    GenTiles {
        #[arg(long)]
        dtype: Dtype,
        #[arg(long, value_enum, default_value_t = StratumArg::Uniform)]
        stratum: StratumArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct MmaArgs {
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    #[arg(long)]
    dtype: Dtype,
    /// Profile JSON; replaces --arch.
    #[arg(long, conflicts_with = "arch")]
    profile: Option<PathBuf>,
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    c: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum ProbeCommand {
    /// Writes a probe suite directory (tile triples plus manifest.json).
    Gen {
        #[arg(long)]
        dtype: Dtype,
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs a suite directory on a software device and writes JSONL responses.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, value_enum, default_value_t = DeviceArg::Simulator)]
        device: DeviceArg,
        #[arg(long, value_enum)]
        arch: Option<ArchArg>,
        #[arg(long, conflicts_with = "arch")]
        profile: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recovers a profile from a complete set of responses.
    Infer {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        dtype: Dtype,
        /// Profile JSON. An unobserved exponent floor is written as the
        /// lowest allowed value, which disables the clamp.
        #[arg(long)]
        out: PathBuf,
        /// Also write the inferred fields with their evidence.
        #[arg(long)]
        evidence: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dtype {
    Fp16,
    Bf16,
    Fp8,
}

impl Dtype {
    fn format(self) -> FloatFormat {
        match self {
            Dtype::Fp16 => FloatFormat::FP16,
            Dtype::Bf16 => FloatFormat::BF16,
            Dtype::Fp8 => FloatFormat::FP8_E4M3,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Ampere,
    Lovelace,
    Hopper,
}

impl ArchArg {
    fn arch(self) -> Arch {
        match self {
            ArchArg::Ampere => Arch::Ampere,
            ArchArg::Lovelace => Arch::Lovelace,
            ArchArg::Hopper => Arch::Hopper,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SuiteArg {
    All,
    Neutrality,
    Width,
    Rounding,
    Normalization,
    Range,
}

#[derive(Clone, Copy, ValueEnum)]
enum DeviceArg {
    Simulator,
    Oracle,
    Ieee,
}

#[derive(Clone, Copy, ValueEnum)]
enum StratumArg {
    Uniform,
    Boundary,
    Cancellation,
}

/// Exit 1 for a mismatch or failed inference, 2 for bad input or I/O.
enum Failure {
    Mismatch(String),
    Usage(String),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve_profile(arch: Option<ArchArg>, profile: Option<&Path>, fmt: FloatFormat) -> Result<PipelineProfile, Failure> {
    let p = match (arch, profile) {
        (_, Some(path)) => PipelineProfile::read(path).map_err(|e| usage(e.to_string()))?,
        (Some(a), None) => a.arch().profile(fmt),
        (None, None) => return Err(usage("one of --arch or --profile is required")),
    };
    if p.input_format != fmt {
        return Err(usage(format!("profile takes {} inputs, --dtype is {fmt}", p.input_format)));
    }
    Ok(p)
}

fn read_as(path: &Path, fmt: FloatFormat) -> Result<Matrix, Failure> {
    let m = read_matrix(path)?;
    if m.format() != fmt {
        return Err(usage(format!("{} holds {} data, expected {fmt}", path.display(), m.format())));
    }
    Ok(m)
}

fn mma(args: &MmaArgs, tile_only: bool, workers: usize) -> Outcome {
    let fmt = args.dtype.format();
    let profile = resolve_profile(args.arch, args.profile.as_deref(), fmt)?;
    let a = read_as(&args.a, fmt)?;
    let b = read_as(&args.b, fmt)?;
    let c = read_as(&args.c, FloatFormat::FP32)?;
    let d = if tile_only {
        let tile = |m: Matrix, name: &str| -> Result<Tile, Failure> {
            Tile::try_from(m).map_err(|e| usage(format!("{name}: {e}")))
        };
        let d = tile_mma(&tile(a, "A")?, &tile(b, "B")?, &tile(c, "C")?, &profile).map_err(|e| usage(e.to_string()))?;
        Matrix::from(d)
    } else {
        matmul(&a, &b, &c, &profile, workers)?
    };
    write_matrix(&d, &args.out)?;
    Ok(())
}

fn suites(arg: SuiteArg) -> Vec<Suite> {
    match arg {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Neutrality => vec![Suite::Neutrality],
        SuiteArg::Width => vec![Suite::Width],
        SuiteArg::Rounding => vec![Suite::Rounding],
        SuiteArg::Normalization => vec![Suite::Normalization],
        SuiteArg::Range => vec![Suite::Range],
    }
}

fn probe(cmd: ProbeCommand) -> Outcome {
    match cmd {
        ProbeCommand::Gen { dtype, suite, out } => {
            let fmt = dtype.format();
            let probes = generate_suite(fmt, &suites(suite));
            let manifest = write_suite(&out, fmt, &probes)?;
            eprintln!("wrote {} probes to {}", manifest.probes.len(), out.display());
            Ok(())
        }
        ProbeCommand::Run { suite, device, arch, profile, out } => {
            let (manifest, probes) = read_suite(&suite)?;
            let fmt = manifest.format;
            let dev: Box<dyn Device> = match device {
                DeviceArg::Ieee => Box::new(IeeeSequentialDevice { input_format: fmt }),
                DeviceArg::Simulator => Box::new(SimulatorDevice(resolve_profile(arch, profile.as_deref(), fmt)?)),
                DeviceArg::Oracle => Box::new(OracleDevice(resolve_profile(arch, profile.as_deref(), fmt)?)),
            };
            let responses = run_probes(dev.as_ref(), &probes).map_err(|e| usage(e.to_string()))?;
            write_responses(&out, &responses)?;
            eprintln!("{}: {} responses", dev.describe(), responses.len());
            Ok(())
        }
        ProbeCommand::Infer { responses, dtype, out, evidence } => {
            let responses = read_responses(&responses)?;
            let inferred = infer_profile(&responses, dtype.format()).map_err(|e| Failure::Mismatch(e.to_string()))?;
            let profile = inferred.to_profile(-EXPONENT_FLOOR_LIMIT);
            std::fs::write(&out, profile.to_json()).map_err(|e| usage(format!("{}: {e}", out.display())))?;
            if let Some(path) = evidence {
                let text = serde_json::to_string_pretty(&inferred).expect("inferred profile serializes");
                std::fs::write(&path, text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            }
            let floor = inferred.exponent_floor.map_or("unobserved".to_string(), |f| f.to_string());
            let shipped = [Arch::Ampere, Arch::Hopper]
                .into_iter()
                .map(|a| a.profile(dtype.format()))
                .find(|p| inferred.matches(p))
                .map_or("none".to_string(), |p| p.name);
            println!(
                "groups={} W={} floor={floor} alignment={} final={} normalize={} renormalize_subnormal={} matches={shipped}",
                inferred.grouping.len(),
                inferred.internal_width,
                inferred.alignment_rounding,
                inferred.final_rounding,
                inferred.normalize_products,
                inferred.renormalize_subnormal_products,
            );
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate(args) => mma(&args, true, 1),
        Command::Matmul { mma: args, workers } => mma(&args, false, workers),
        Command::Probe(cmd) => probe(cmd),
        Command::Compare { lhs, rhs, report } => {
            let r = compare(&read_matrix(&lhs)?, &read_matrix(&rhs)?)?;
            std::fs::write(&report, r.to_json()).map_err(|e| usage(format!("{}: {e}", report.display())))?;
            println!("{} of {} cells differ (max {} ulp)", r.mismatches, r.total, r.max_ulp);
            if r.is_match() {
                Ok(())
            } else {
                Err(Failure::Mismatch(format!("{} mismatches", r.mismatches)))
            }
        }
        Command::Selftest { trials, seed } => {
            let results = selftest(trials, seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure::Mismatch(format!("{failed} checks failed")))
            }
        }
        Command::GenMatrix { dtype, rows, cols, seed, out } => {
            let fmt: FloatFormat = dtype.parse().map_err(|e: tcsim::formats::FormatError| usage(e.to_string()))?;
            if fmt.code().is_none() {
                return Err(usage(format!("no file format for {fmt}")));
            }
            let mut rng = stream(seed, 0);
            let data = (0..rows * cols).map(|_| finite_pattern(&mut rng, fmt)).collect();
            write_matrix(&Matrix::new(rows, cols, fmt, data)?, &out)?;
            Ok(())
        }
        Command::GenTiles { dtype, stratum, seed, index, out } => {
            let stratum = match stratum {
                StratumArg::Uniform => Stratum::Uniform,
                StratumArg::Boundary => Stratum::Boundary,
                StratumArg::Cancellation => Stratum::Cancellation,
            };
            let t = random_triple(dtype.format(), stratum, seed, index);
            std::fs::create_dir_all(&out).map_err(|e| usage(format!("{}: {e}", out.display())))?;
            for (tile, name) in [(t.a, "a"), (t.b, "b"), (t.c, "c")] {
                write_matrix(&Matrix::from(tile), &out.join(format!("{name}.hwkt")))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch(msg)) => {
            eprintln!("tcsim: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("tcsim: {msg}");
            ExitCode::from(2)
        }
    }
}

