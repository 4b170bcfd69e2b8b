//! Shared data model: image records, stage reports and dataset manifests.
//!
//! Manifests are written as pretty-printed JSON with a fixed key order
//! (struct fields in declaration order, maps sorted by key) so that equal
//! manifests always produce identical bytes. Floats use the shortest
//! representation that parses back to the same `f64`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// One candidate image and everything the pipeline learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: String,
    pub source_uri: String,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width_px: u32, height_px: u32) -> Self {
        let image_id = image_id.into();
        ImageRecord {
            source_uri: format!("mem://{image_id}"),
            image_id,
            width_px,
            height_px,
            scores: BTreeMap::new(),
            flags: BTreeSet::new(),
            caption: None,
        }
    }

    pub fn with_score(mut self, key: impl Into<String>, value: f64) -> Self {
        self.scores.insert(key.into(), value);
        self
    }

    pub fn score(&self, key: &str) -> Option<f64> {
        self.scores.get(key).copied()
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width_px) * u64::from(self.height_px)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::Invariant("empty image_id".into()));
        }
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::Invariant(format!(
                "record {}: dimensions must be positive, got {}x{}",
                self.image_id, self.width_px, self.height_px
            )));
        }
        for (key, value) in &self.scores {
            if !value.is_finite() {
                return Err(Error::Invariant(format!(
                    "record {}: score {key:?} is not finite",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

/// Audit entry for one executed stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageReport {
    pub stage_name: String,
    pub input_count: usize,
    pub output_count: usize,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
}

impl StageReport {
    pub fn new(stage_name: impl Into<String>, input_count: usize, output_count: usize) -> Self {
        StageReport {
            stage_name: stage_name.into(),
            input_count,
            output_count,
            parameters: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub pipeline_config_hash: String,
    pub stage_log: Vec<StageReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: u32,
    pipeline_config_hash: String,
    stage_log: Vec<StageReport>,
    records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        DatasetManifest {
            records,
            ..Default::default()
        }
    }

    /// Checks record validity and id uniqueness.
    pub fn validate(&self) -> Result<()> {
        validate_records(&self.records)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.image_id.as_str()).collect()
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            pipeline_config_hash: self.pipeline_config_hash.clone(),
            stage_log: self.stage_log.clone(),
            records: self.records.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&file)
            .map_err(|e| Error::Invariant(format!("manifest not serializable: {e}")))?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let file: ManifestFile =
            serde_json::from_slice(bytes).map_err(|e| Error::parse("manifest", e))?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::parse(
                "manifest",
                format!("unsupported version {}", file.version),
            ));
        }
        let manifest = DatasetManifest {
            records: file.records,
            pipeline_config_hash: file.pipeline_config_hash,
            stage_log: file.stage_log,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn validate_records(records: &[ImageRecord]) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for record in records {
        record.validate()?;
        if !seen.insert(record.image_id.as_str()) {
            return Err(Error::Invariant(format!(
                "duplicate image_id {:?}",
                record.image_id
            )));
        }
    }
    Ok(())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_json_bytes(&bytes)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = manifest.to_json_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_ndjson<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_ndjson(BufReader::new(file), &path.display().to_string())
}

pub fn parse_ndjson<T: DeserializeOwned>(reader: impl BufRead, context: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{context}:{}", lineno + 1), e))?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_ndjson<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut writer, item)
            .map_err(|e| Error::Invariant(format!("not serializable: {e}")))?;
        writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Loads an NDJSON record stream and checks every record invariant.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let records: Vec<ImageRecord> = read_ndjson(path)?;
    validate_records(&records)?;
    Ok(records)
}
