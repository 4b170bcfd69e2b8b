//! Final top-n selection, nested size variants and seeded control sampling.

use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::DEFAULT_SCORE_KEY;
use crate::model::{DatasetManifest, ImageRecord, StageReport};

pub const DEFAULT_N: usize = 3350;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_score_key")]
    pub score_key: String,
}

fn default_n() -> usize {
    DEFAULT_N
}
fn default_score_key() -> String {
    DEFAULT_SCORE_KEY.to_string()
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            n: DEFAULT_N,
            score_key: default_score_key(),
        }
    }
}

impl SelectionConfig {
    pub fn new(n: usize, score_key: impl Into<String>) -> Self {
        SelectionConfig {
            n,
            score_key: score_key.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("selection size n must be at least 1".into()));
        }
        Ok(())
    }
}

/// How a size-matched control subset is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Uniform,
    TopScore,
}

/// Canonical selection order: score descending, then image_id ascending.
fn canonical(a: &(f64, &ImageRecord), b: &(f64, &ImageRecord)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.image_id.cmp(&b.1.image_id))
}

fn ranked<'a>(records: &'a [ImageRecord], score_key: &str) -> Result<Vec<(f64, &'a ImageRecord)>> {
    records
        .iter()
        .map(|r| {
            r.score(score_key)
                .map(|s| (s, r))
                .ok_or_else(|| Error::MissingScore {
                    image_id: r.image_id.clone(),
                    key: score_key.to_string(),
                })
        })
        .collect()
}

/// The `n` best records (all of them if fewer), in canonical order.
fn top_prefix(records: &[ImageRecord], score_key: &str, n: usize) -> Result<Vec<ImageRecord>> {
    let mut scored = ranked(records, score_key)?;
    if n < scored.len() {
        scored.select_nth_unstable_by(n, canonical);
        scored.truncate(n);
    }
    scored.sort_unstable_by(canonical);
    Ok(scored.into_iter().map(|(_, r)| r.clone()).collect())
}

pub fn select_top_n(records: &[ImageRecord], cfg: &SelectionConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let selected = top_prefix(records, &cfg.score_key, cfg.n)?;
    let report = StageReport::new("select_top_n", records.len(), selected.len())
        .param("n", cfg.n)
        .param("score_key", &cfg.score_key);
    Ok(DatasetManifest {
        pipeline_config_hash: crate::pipeline::config_hash(cfg)?,
        records: selected,
        stage_log: vec![report],
    })
}

/// One manifest per requested size, each a prefix of the next larger one.
pub fn nested_variants(
    records: &[ImageRecord],
    score_key: &str,
    sizes: &[usize],
) -> Result<Vec<DatasetManifest>> {
    let largest = sizes.iter().copied().max().unwrap_or(0);
    if sizes.contains(&0) {
        return Err(Error::Config("variant sizes must be positive".into()));
    }
    let ordered = top_prefix(records, score_key, largest)?;
    sizes
        .iter()
        .map(|&n| {
            let cfg = SelectionConfig::new(n, score_key);
            let take = n.min(ordered.len());
            Ok(DatasetManifest {
                pipeline_config_hash: crate::pipeline::config_hash(&cfg)?,
                records: ordered[..take].to_vec(),
                stage_log: vec![StageReport::new("select_top_n", records.len(), take)
                    .param("n", n)
                    .param("score_key", score_key)],
            })
        })
        .collect()
}

/// Seeded uniform sample of `n` records without replacement (all records if
/// fewer), kept in input order.
pub fn sample_uniform(records: &[ImageRecord], n: usize, seed: u64) -> Vec<ImageRecord> {
    if n >= records.len() {
        return records.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, records.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| records[i].clone()).collect()
}

/// Size-matched control subset, drawn per `mode`.
pub fn sample_control(
    records: &[ImageRecord],
    n: usize,
    mode: SamplingMode,
    score_key: &str,
    seed: u64,
) -> Result<DatasetManifest> {
    let selected = match mode {
        SamplingMode::Uniform => sample_uniform(records, n, seed),
        SamplingMode::TopScore => top_prefix(records, score_key, n)?,
    };
    let mut report = StageReport::new("sample_control", records.len(), selected.len())
        .param("n", n)
        .param(
            "mode",
            match mode {
                SamplingMode::Uniform => "uniform",
                SamplingMode::TopScore => "top_score",
            },
        );
    report = match mode {
        SamplingMode::Uniform => report.param("seed", seed),
        SamplingMode::TopScore => report.param("score_key", score_key),
    };
    Ok(DatasetManifest {
        pipeline_config_hash: String::new(),
        records: selected,
        stage_log: vec![report],
    })
}
