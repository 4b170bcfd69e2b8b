//! Read-only sources of externally computed data: classifier scores,
//! activation norms and local descriptors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dedup::DescriptorSet;
use crate::error::{Error, Result};
use crate::estimator::{compute_norms_grouped, ActivationNormMatrix, AttentionMap, Extraction};
use crate::model::read_ndjson;

/// Per-image scores computed outside this crate (classifiers, IQA models).
pub trait ScoreProvider: Send + Sync {
    fn score(&self, image_id: &str, key: &str) -> Option<f64>;

    /// Every score key this provider can answer for.
    fn keys(&self) -> BTreeSet<String>;

    /// All scores known for one image.
    fn scores_for(&self, image_id: &str) -> BTreeMap<String, f64>;
}

/// Activation norms for images, already reduced from attention maps.
pub trait ActivationProvider: Send + Sync {
    fn activations(&self, image_id: &str) -> Option<ActivationNormMatrix>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreLine {
    pub image_id: String,
    pub scores: BTreeMap<String, f64>,
}

/// In-memory score table, usually loaded from NDJSON.
#[derive(Debug, Clone, Default)]
pub struct ScoreTable {
    by_image: HashMap<String, BTreeMap<String, f64>>,
    keys: BTreeSet<String>,
}

impl ScoreTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: &str, key: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Invariant(format!(
                "score {key:?} for {image_id} is not finite"
            )));
        }
        let slot = self.by_image.entry(image_id.to_string()).or_default();
        if let Some(prev) = slot.insert(key.to_string(), value) {
            if prev != value {
                return Err(Error::Invariant(format!(
                    "conflicting values for score {key:?} of {image_id}: {prev} vs {value}"
                )));
            }
        }
        self.keys.insert(key.to_string());
        Ok(())
    }

    pub fn extend_lines(&mut self, lines: impl IntoIterator<Item = ScoreLine>) -> Result<()> {
        for line in lines {
            for (k, v) in &line.scores {
                self.insert(&line.image_id, k, *v)?;
            }
        }
        Ok(())
    }

    /// Loads and merges several NDJSON score files.
    pub fn load(paths: &[impl AsRef<Path>]) -> Result<Self> {
        let mut table = ScoreTable::new();
        for p in paths {
            table.extend_lines(read_ndjson::<ScoreLine>(p)?)?;
        }
        Ok(table)
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }
}

impl ScoreProvider for ScoreTable {
    fn score(&self, image_id: &str, key: &str) -> Option<f64> {
        self.by_image.get(image_id)?.get(key).copied()
    }

    fn keys(&self) -> BTreeSet<String> {
        self.keys.clone()
    }

    fn scores_for(&self, image_id: &str) -> BTreeMap<String, f64> {
        self.by_image.get(image_id).cloned().unwrap_or_default()
    }
}

/// Activation norms keyed by image id.
#[derive(Debug, Clone, Default)]
pub struct ActivationTable {
    by_image: HashMap<String, ActivationNormMatrix>,
}

impl ActivationTable {
    pub fn new(matrices: impl IntoIterator<Item = ActivationNormMatrix>) -> Result<Self> {
        let mut by_image = HashMap::new();
        for m in matrices {
            let id = m.image_id.clone();
            if by_image.insert(id.clone(), m).is_some() {
                return Err(Error::Invariant(format!("duplicate activations for {id}")));
            }
        }
        Ok(ActivationTable { by_image })
    }

    /// Loads pre-reduced norm matrices from NDJSON.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_ndjson::<ActivationNormMatrix>(path)?)
    }

    /// Loads raw attention maps from NDJSON and reduces them to norms.
    pub fn load_attention_maps(
        path: impl AsRef<Path>,
        layers: usize,
        tokens: usize,
        extraction: &Extraction,
    ) -> Result<Self> {
        let maps: Vec<AttentionMap> = read_ndjson(path)?;
        Self::new(compute_norms_grouped(&maps, layers, tokens, extraction)?)
    }

    pub fn len(&self) -> usize {
        self.by_image.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }
}

impl ActivationProvider for ActivationTable {
    fn activations(&self, image_id: &str) -> Option<ActivationNormMatrix> {
        self.by_image.get(image_id).cloned()
    }
}

/// Loads descriptor sets from NDJSON, rejecting repeated ids.
pub fn load_descriptors(path: impl AsRef<Path>) -> Result<Vec<DescriptorSet>> {
    let sets: Vec<DescriptorSet> = read_ndjson(path)?;
    let mut seen = BTreeSet::new();
    for s in &sets {
        if !seen.insert(s.image_id.as_str()) {
            return Err(Error::Invariant(format!(
                "duplicate descriptor set for {}",
                s.image_id
            )));
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_table_merges_and_detects_conflicts() {
        let mut t = ScoreTable::new();
        t.extend_lines([ScoreLine {
            image_id: "a".into(),
            scores: [("nsfw".to_string(), 0.1)].into(),
        }])
        .unwrap();
        t.insert("a", "topiq", 0.8).unwrap();
        t.insert("a", "topiq", 0.8).unwrap();
        assert_eq!(t.score("a", "topiq"), Some(0.8));
        assert_eq!(t.keys().len(), 2);
        assert!(t.insert("a", "topiq", 0.7).is_err());
        assert!(t.insert("b", "x", f64::INFINITY).is_err());
        assert_eq!(t.score("zz", "topiq"), None);
    }

    #[test]
    fn score_ndjson_lines() {
        let line: ScoreLine = serde_json::from_str(r#"{"image_id":"x","scores":{"topiq":0.72}}"#).unwrap();
        assert_eq!(line.scores["topiq"], 0.72);
    }
}
