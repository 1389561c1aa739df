use rayon::prelude::*;
use thiserror::Error;

use crate::formats::{self, FloatFormat};
use crate::oracle::{exact_tile_mma, OracleError};
use crate::pipeline::{tile_mma, PipelineError, PipelineProfile, Tile, TILE_DIM};

use super::{PackedProbe, ProbeResponse};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeviceError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("probe {probe_id}: {reason}")]
    Rejected { probe_id: String, reason: String },
}

/// Anything that can execute one `D = C + A * B` tile.
pub trait Device: Sync {
    fn describe(&self) -> String;

    fn run(&self, probe: &PackedProbe) -> Result<Tile, DeviceError>;

    fn run_batch(&self, probes: &[PackedProbe]) -> Result<Vec<Tile>, DeviceError> {
        probes.iter().map(|p| self.run(p)).collect()
    }
}

/// Probes per device invocation.
const BATCH: usize = 16;

/// Runs every probe, batching invocations and spreading batches over the
/// rayon pool. Responses come back in probe order.
pub fn run_probes(device: &dyn Device, probes: &[PackedProbe]) -> Result<Vec<ProbeResponse>, DeviceError> {
    let tiles: Vec<Vec<Tile>> = probes.par_chunks(BATCH).map(|chunk| device.run_batch(chunk)).collect::<Result<_, _>>()?;
    Ok(probes
        .iter()
        .zip(tiles.into_iter().flatten())
        .map(|(p, output)| ProbeResponse { probe_id: p.id.clone(), output })
        .collect())
}

fn check_format(probe: &PackedProbe, fmt: FloatFormat) -> Result<(), DeviceError> {
    if probe.format() != fmt {
        return Err(DeviceError::Rejected {
            probe_id: probe.id.clone(),
            reason: format!("device takes {fmt} inputs, probe is {}", probe.format()),
        });
    }
    Ok(())
}

/// The fast pipeline model.
#[derive(Debug, Clone)]
pub struct SimulatorDevice(pub PipelineProfile);

impl Device for SimulatorDevice {
    fn describe(&self) -> String {
        format!("simulator ({}, {})", self.0.name, self.0.input_format)
    }

    fn run(&self, probe: &PackedProbe) -> Result<Tile, DeviceError> {
        Ok(tile_mma(&probe.a, &probe.b, &probe.c, &self.0)?)
    }
}

/// The wide-integer reference evaluator. Much slower than the simulator.
#[derive(Debug, Clone)]
pub struct OracleDevice(pub PipelineProfile);

impl Device for OracleDevice {
    fn describe(&self) -> String {
        format!("oracle ({}, {})", self.0.name, self.0.input_format)
    }

    fn run(&self, probe: &PackedProbe) -> Result<Tile, DeviceError> {
        Ok(exact_tile_mma(&probe.a, &probe.b, &probe.c, &self.0)?)
    }
}

/// A conventional FP32 unit: every product and every addition rounded to
/// nearest-even, accumulated left to right starting from C.
#[derive(Debug, Clone, Copy)]
pub struct IeeeSequentialDevice {
    pub input_format: FloatFormat,
}

const FP32_NAN: u32 = 0x7fc0_0000;

impl Device for IeeeSequentialDevice {
    fn describe(&self) -> String {
        format!("ieee sequential fp32 ({})", self.input_format)
    }

    fn run(&self, probe: &PackedProbe) -> Result<Tile, DeviceError> {
        check_format(probe, self.input_format)?;
        // Every input format widens exactly to f32, and native f32 arithmetic
        // is correctly rounded to nearest-even including subnormals.
        let widen = |bits: u32| formats::to_f64(bits, self.input_format) as f32;
        let a: Vec<f32> = probe.a.bits().iter().map(|&x| widen(x)).collect();
        let b: Vec<f32> = probe.b.bits().iter().map(|&x| widen(x)).collect();
        let mut out = Vec::with_capacity(TILE_DIM * TILE_DIM);
        for i in 0..TILE_DIM {
            for j in 0..TILE_DIM {
                let mut acc = f32::from_bits(probe.c.get(i, j));
                for k in 0..TILE_DIM {
                    let p = a[i * TILE_DIM + k] * b[k * TILE_DIM + j];
                    acc += p;
                }
                out.push(if acc.is_nan() { FP32_NAN } else { acc.to_bits() });
            }
        }
        Ok(Tile::from_bits(FloatFormat::FP32, out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ieee_sequential_dot;
    use crate::oracle::random::{random_triple, Stratum};
    use crate::probes::{generate_suite, Suite};

    fn as_probe(a: Tile, b: Tile, c: Tile) -> PackedProbe {
        PackedProbe { id: "t".into(), a, b, c, members: vec![] }
    }

    #[test]
    fn native_ieee_device_matches_reference_dot() {
        for fmt in [FloatFormat::FP16, FloatFormat::BF16, FloatFormat::FP8_E4M3] {
            let dev = IeeeSequentialDevice { input_format: fmt };
            for s in Stratum::ALL {
                for idx in 0..6 {
                    let t = random_triple(fmt, s, 21, idx);
                    let d = dev.run(&as_probe(t.a.clone(), t.b.clone(), t.c.clone())).unwrap();
                    for i in 0..TILE_DIM {
                        for j in 0..TILE_DIM {
                            let want = ieee_sequential_dot(&t.a.row(i), &t.b.col(j), t.c.get(i, j), fmt, FloatFormat::FP32);
                            assert_eq!(d.get(i, j), want, "{fmt} {s:?} {idx} ({i},{j})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn run_probes_preserves_order_and_agrees_with_oracle() {
        let profile = PipelineProfile::hopper(FloatFormat::BF16);
        let probes = generate_suite(FloatFormat::BF16, &[Suite::Rounding, Suite::Normalization]);
        let sim = run_probes(&SimulatorDevice(profile.clone()), &probes).unwrap();
        let ora = run_probes(&OracleDevice(profile), &probes[..20]).unwrap();
        assert_eq!(sim.len(), probes.len());
        for (r, p) in sim.iter().zip(&probes) {
            assert_eq!(r.probe_id, p.id);
        }
        assert_eq!(&sim[..20], &ora[..]);
    }

    #[test]
    fn devices_reject_foreign_formats() {
        let probes = generate_suite(FloatFormat::FP16, &[Suite::Width]);
        let dev = IeeeSequentialDevice { input_format: FloatFormat::BF16 };
        assert!(matches!(dev.run(&probes[0]), Err(DeviceError::Rejected { .. })));
        let sim = SimulatorDevice(PipelineProfile::ampere(FloatFormat::BF16));
        assert!(matches!(sim.run(&probes[0]), Err(DeviceError::Pipeline(_))));
    }
}
