//! Probe suites on disk: one tile-binary triple per packed probe plus a
//! `manifest.json`, and device responses as JSONL.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::formats::FloatFormat;
use crate::pipeline::Tile;
use crate::probes::{PackedProbe, ProbeResponse, SUITE_VERSION};

use super::io::{read_matrix, write_matrix};
use super::{EngineError, Matrix};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    pub case_id: String,
    /// Output cell `[row, col]` holding the case's result.
    pub cell: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestProbe {
    pub id: String,
    pub a: String,
    pub b: String,
    pub c: String,
    pub members: Vec<ManifestMember>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub suite_version: u32,
    pub format: FloatFormat,
    pub probes: Vec<ManifestProbe>,
}

fn stem(id: &str) -> String {
    id.replace('/', "_")
}

pub fn write_suite(dir: &Path, format: FloatFormat, probes: &[PackedProbe]) -> Result<Manifest, EngineError> {
    std::fs::create_dir_all(dir).map_err(|e| EngineError::io(dir, e))?;
    let mut manifest = Manifest { suite_version: SUITE_VERSION, format, probes: Vec::with_capacity(probes.len()) };
    for p in probes {
        let s = stem(&p.id);
        let names = [format!("{s}.a.hwkt"), format!("{s}.b.hwkt"), format!("{s}.c.hwkt")];
        for (tile, name) in [&p.a, &p.b, &p.c].into_iter().zip(&names) {
            write_matrix(&Matrix::from(tile.clone()), &dir.join(name))?;
        }
        let [a, b, c] = names;
        manifest.probes.push(ManifestProbe {
            id: p.id.clone(),
            a,
            b,
            c,
            members: p.members.iter().map(|(id, i)| ManifestMember { case_id: id.clone(), cell: [*i, *i] }).collect(),
        });
    }
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| EngineError::io(&path, e))?;
    Ok(manifest)
}

pub fn read_suite(dir: &Path) -> Result<(Manifest, Vec<PackedProbe>), EngineError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| EngineError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))?;
    if manifest.suite_version != SUITE_VERSION {
        return Err(EngineError::Manifest(format!(
            "suite version {} (this build reads {SUITE_VERSION})",
            manifest.suite_version
        )));
    }
    let tile = |name: &str| -> Result<Tile, EngineError> { read_matrix(&dir.join(name))?.try_into() };
    let mut probes = Vec::with_capacity(manifest.probes.len());
    for p in &manifest.probes {
        let members = p
            .members
            .iter()
            .map(|m| match m.cell {
                [i, j] if i == j && i < crate::pipeline::TILE_DIM => Ok((m.case_id.clone(), i)),
                cell => Err(EngineError::Manifest(format!("probe {}: cell {cell:?} is not on the diagonal", p.id))),
            })
            .collect::<Result<_, _>>()?;
        let probe = PackedProbe { id: p.id.clone(), a: tile(&p.a)?, b: tile(&p.b)?, c: tile(&p.c)?, members };
        if probe.format() != manifest.format || probe.b.format() != manifest.format {
            return Err(EngineError::Manifest(format!("probe {} is not in {}", p.id, manifest.format)));
        }
        probes.push(probe);
    }
    Ok((manifest, probes))
}

pub fn write_responses(path: &Path, responses: &[ProbeResponse]) -> Result<(), EngineError> {
    let mut text = String::with_capacity(responses.len() * 2100);
    for r in responses {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| EngineError::io(path, e))
}

pub fn read_responses(path: &Path) -> Result<Vec<ProbeResponse>, EngineError> {
    let text = std::fs::read_to_string(path).map_err(|e| EngineError::io(path, e))?;
    ProbeResponse::parse_jsonl(&text).map_err(|e| EngineError::Manifest(format!("{}: {e}", path.display())))
}
