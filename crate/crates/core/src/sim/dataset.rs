//! Dataset files: a JSON manifest, a JSON-lines record file and a raw
//! little-endian `f32` sidecar holding the feature tokens.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Settings;
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::labeler::ActionVocabulary;
use crate::sim::config::SimConfig;
use crate::sim::degrade::DegradationSpec;
use crate::sim::render::ModalityFeatureSet;
use crate::sim::scene::SceneState;
use crate::sim::DatasetRecord;
use crate::vocab::Branch;

pub const FORMAT: &str = "wilddrive-dataset";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.jsonl";
pub const FEATURES: &str = "features.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub tokens: usize,
    /// Resolved simulator settings.
    pub config: BTreeMap<String, String>,
    pub vocabulary: ActionVocabulary,
    /// SHA-256 over the record file followed by the feature file.
    pub checksum: String,
}

impl Manifest {
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<DatasetRecord>,
}

#[derive(Serialize, Deserialize)]
struct RecordHeader {
    id: u64,
    seed: u64,
    scene: SceneState,
    degradation: DegradationSpec,
    routing_label: Branch,
    lidar_present: bool,
    camera_present: bool,
    /// Offset and length in `f32` values within the feature file.
    offset: u64,
    length: u64,
}

fn digest(records: &[u8], features: &[u8]) -> String {
    sha256_hex(&[records, features])
}

/// Writes `records` under `dir` (created if needed) and returns the manifest.
pub fn write_dataset(
    dir: &Path,
    records: &[DatasetRecord],
    seed: u64,
    cfg: &SimConfig,
    vocabulary: &ActionVocabulary,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut lines = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0u64;
    let tokens = cfg.geometry.fused_tokens();
    for r in records {
        r.features.check()?;
        if r.features.fused_tokens() != tokens || r.features.dim != cfg.feature_dim {
            return Err(Error::Data(format!("record {} does not match the configured layout", r.id)));
        }
        let length = r.features.tokens.len() as u64;
        let header = RecordHeader {
            id: r.id,
            seed: r.seed,
            scene: r.scene.clone(),
            degradation: r.degradation,
            routing_label: r.routing_label,
            lidar_present: r.features.lidar_present,
            camera_present: r.features.camera_present,
            offset,
            length,
        };
        serde_json::to_writer(&mut lines, &header)?;
        lines.push(b'\n');
        for v in &r.features.tokens {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        offset += length;
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        count: records.len(),
        seed,
        feature_dim: cfg.feature_dim,
        tokens,
        config: cfg.entries().into_iter().collect(),
        vocabulary: vocabulary.clone(),
        checksum: digest(&lines, &blob),
    };
    fs::write(dir.join(RECORDS), &lines)?;
    fs::write(dir.join(FEATURES), &blob)?;
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.join(MANIFEST).display())))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Data(format!("{} is not a dataset manifest", dir.display())));
    }
    if m.version != VERSION {
        return Err(Error::Version {
            what: "dataset",
            expected: VERSION,
            found: m.version.to_string(),
        });
    }
    Ok(m)
}

/// Reads and verifies a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let lines = fs::read(dir.join(RECORDS))?;
    let blob = fs::read(dir.join(FEATURES))?;
    let found = digest(&lines, &blob);
    if found != manifest.checksum {
        return Err(Error::Checksum {
            expected: manifest.checksum.clone(),
            found,
        });
    }
    let cfg = manifest.sim_config()?;
    let text = std::str::from_utf8(&lines).map_err(|e| Error::Data(e.to_string()))?;
    let mut records = Vec::with_capacity(manifest.count);
    for line in text.lines() {
        let h: RecordHeader = serde_json::from_str(line)?;
        let (start, len) = (h.offset as usize * 4, h.length as usize * 4);
        let bytes = blob
            .get(start..start + len)
            .ok_or_else(|| Error::Data(format!("record {} points past the feature file", h.id)))?;
        let mut features = ModalityFeatureSet::zeros(&cfg.geometry, cfg.feature_dim);
        features.tokens = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        features.lidar_present = h.lidar_present;
        features.camera_present = h.camera_present;
        features.check()?;
        records.push(DatasetRecord {
            id: h.id,
            seed: h.seed,
            scene: h.scene,
            degradation: h.degradation,
            routing_label: h.routing_label,
            features,
        });
    }
    if records.len() != manifest.count {
        return Err(Error::Data(format!(
            "manifest lists {} records, found {}",
            manifest.count,
            records.len()
        )));
    }
    Ok(Dataset { manifest, records })
}
