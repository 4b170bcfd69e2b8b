//! Configurable multi-stage filtering pipeline.
//!
//! A pipeline is an ordered list of stages read from TOML `[[stage]]` tables
//! plus an optional final `[selection]`. Stage kinds:
//!
//! * `threshold` (the default when `kind` is omitted): keep records whose
//!   `score_key` compares true against `threshold`.
//! * `resolution`: keep records with area strictly above 1024 x 1024.
//! * `dedup`: near-duplicate clustering over ingested descriptors.
//! * `estimator`: score records with a fitted separation table and store the
//!   result under `output_key`.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dedup::{deduplicate_named, DedupConfig, DescriptorSet};
use crate::error::{Error, Result};
use crate::estimator::{
    fit, prompt_hash, score_image, CalibrationSet, EstimatorConfig, SeparationTable,
    DEFAULT_PROMPT, DEFAULT_SCORE_KEY, DEFAULT_TIMESTEP,
};
use crate::model::{validate_records, DatasetManifest, ImageRecord, StageReport};
use crate::provider::{ActivationProvider, ScoreProvider};
use crate::selector::{select_top_n, SelectionConfig};
use crate::stage::{apply_stage, resolution_stage_with, ResolutionConfig, StageConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupStage {
    #[serde(default = "default_dedup_name")]
    pub name: String,
    #[serde(default = "default_ratio")]
    pub ratio_threshold: f64,
    #[serde(default = "default_min_matches")]
    pub min_matches: usize,
    #[serde(default = "default_quality_key")]
    pub quality_key: String,
}

impl DedupStage {
    pub fn config(&self) -> DedupConfig {
        DedupConfig {
            ratio_threshold: self.ratio_threshold,
            min_matches: self.min_matches,
            quality_key: self.quality_key.clone(),
        }
    }
}

fn default_ratio() -> f64 {
    DedupConfig::default().ratio_threshold
}
fn default_min_matches() -> usize {
    DedupConfig::default().min_matches
}
fn default_quality_key() -> String {
    DedupConfig::default().quality_key
}

fn default_dedup_name() -> String {
    "dedup".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorStage {
    #[serde(default = "default_estimator_name")]
    pub name: String,
    #[serde(default = "default_output_key")]
    pub output_key: String,
    #[serde(rename = "K", alias = "k", default = "default_k")]
    pub k: usize,
    #[serde(default = "default_timestep")]
    pub timestep: f64,
    #[serde(default = "default_prompt")]
    pub prompt: String,
}

fn default_estimator_name() -> String {
    "estimator".into()
}
fn default_output_key() -> String {
    DEFAULT_SCORE_KEY.into()
}
fn default_k() -> usize {
    crate::estimator::DEFAULT_K
}
fn default_timestep() -> f64 {
    DEFAULT_TIMESTEP
}
fn default_prompt() -> String {
    DEFAULT_PROMPT.into()
}

impl EstimatorStage {
    pub fn config(&self) -> EstimatorConfig {
        EstimatorConfig {
            k: self.k,
            timestep: self.timestep,
            prompt: self.prompt.clone(),
        }
    }
}

impl Default for EstimatorStage {
    fn default() -> Self {
        EstimatorStage {
            name: default_estimator_name(),
            output_key: default_output_key(),
            k: default_k(),
            timestep: default_timestep(),
            prompt: default_prompt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    Threshold(StageConfig),
    Resolution(ResolutionConfig),
    Dedup(DedupStage),
    Estimator(EstimatorStage),
}

impl<'de> Deserialize<'de> for StageSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error as _;
        let mut table: serde_json::Map<String, serde_json::Value> =
            serde_json::Map::deserialize(deserializer)?;
        let kind = match table.remove("kind") {
            None => "threshold".to_string(),
            Some(serde_json::Value::String(k)) => k,
            Some(other) => return Err(D::Error::custom(format!("stage kind must be a string, got {other}"))),
        };
        let rest = serde_json::Value::Object(table);
        let spec = match kind.as_str() {
            "threshold" => serde_json::from_value(rest).map(StageSpec::Threshold),
            "resolution" => serde_json::from_value(rest).map(StageSpec::Resolution),
            "dedup" => serde_json::from_value(rest).map(StageSpec::Dedup),
            "estimator" => serde_json::from_value(rest).map(StageSpec::Estimator),
            other => return Err(D::Error::custom(format!("unknown stage kind {other:?}"))),
        };
        spec.map_err(D::Error::custom)
    }
}

impl StageSpec {
    pub fn name(&self) -> &str {
        match self {
            StageSpec::Threshold(c) => &c.stage_name,
            StageSpec::Resolution(c) => &c.stage_name,
            StageSpec::Dedup(c) => &c.name,
            StageSpec::Estimator(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, rename = "stage")]
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub seed: u64,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("pipeline config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for stage in &self.stages {
            if !names.insert(stage.name()) {
                return Err(Error::Config(format!(
                    "stage name {:?} used more than once",
                    stage.name()
                )));
            }
            match stage {
                StageSpec::Threshold(c) => c.validate()?,
                StageSpec::Resolution(_) => {}
                StageSpec::Dedup(d) => d.config().validate()?,
                StageSpec::Estimator(e) => {
                    if e.k == 0 {
                        return Err(Error::Config("estimator K must be positive".into()));
                    }
                    if !(0.0..=1.0).contains(&e.timestep) {
                        return Err(Error::Config("estimator timestep must lie in [0, 1]".into()));
                    }
                }
            }
        }
        if let Some(sel) = &self.selection {
            sel.validate()?;
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Hex SHA-256 of the canonical JSON serialization of a config value.
pub fn config_hash<T: Serialize>(cfg: &T) -> Result<String> {
    let canonical = serde_json::to_value(cfg)
        .and_then(|v| serde_json::to_vec(&v))
        .map_err(|e| Error::Config(format!("config not serializable: {e}")))?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

/// External data available to a pipeline run.
#[derive(Default)]
pub struct Providers<'a> {
    pub scores: Vec<&'a dyn ScoreProvider>,
    pub descriptors: Vec<DescriptorSet>,
    pub activations: Option<&'a dyn ActivationProvider>,
    /// Fitted table for the estimator stage.
    pub separation: Option<SeparationTable>,
    /// Used to fit a table when `separation` is absent.
    pub calibration: Option<CalibrationSet>,
}

impl<'a> Providers<'a> {
    fn score_keys(&self) -> BTreeSet<String> {
        self.scores.iter().flat_map(|p| p.keys()).collect()
    }
}

fn attach_provider_scores(records: &mut [ImageRecord], providers: &Providers<'_>) -> Result<()> {
    for record in records.iter_mut() {
        for p in &providers.scores {
            for (key, value) in p.scores_for(&record.image_id) {
                match record.scores.get(&key) {
                    Some(&existing) if existing != value => {
                        return Err(Error::Invariant(format!(
                            "record {} has {key:?} = {existing} but a provider reports {value}",
                            record.image_id
                        )))
                    }
                    _ => {
                        record.scores.insert(key, value);
                    }
                }
            }
        }
    }
    Ok(())
}

fn check_resolvable(
    cfg: &PipelineConfig,
    records: &[ImageRecord],
    providers: &Providers<'_>,
) -> Result<()> {
    let mut known: BTreeSet<String> = providers.score_keys();
    known.extend(records.iter().flat_map(|r| r.scores.keys().cloned()));
    let need = |key: &str, known: &BTreeSet<String>, what: &str| {
        if known.contains(key) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{what} refers to score {key:?}, which no record or provider supplies"
            )))
        }
    };
    for stage in &cfg.stages {
        match stage {
            StageSpec::Threshold(c) => need(&c.score_key, &known, &format!("stage {}", c.stage_name))?,
            StageSpec::Resolution(_) => {}
            StageSpec::Dedup(d) => need(&d.quality_key, &known, &format!("stage {}", d.name))?,
            StageSpec::Estimator(e) => {
                if providers.activations.is_none() {
                    return Err(Error::Config(format!(
                        "stage {} needs an activation provider",
                        e.name
                    )));
                }
                if providers.separation.is_none() && providers.calibration.is_none() {
                    return Err(Error::Config(format!(
                        "stage {} needs a separation table or a calibration set",
                        e.name
                    )));
                }
                known.insert(e.output_key.clone());
            }
        }
    }
    if let Some(sel) = &cfg.selection {
        need(&sel.score_key, &known, "selection")?;
    }
    Ok(())
}

fn estimator_table(stage: &EstimatorStage, providers: &Providers<'_>) -> Result<SeparationTable> {
    let expected_hash = prompt_hash(&stage.prompt);
    let table = match (&providers.separation, &providers.calibration) {
        (Some(t), _) => {
            t.validate()?;
            if t.top_k.is_none() {
                return Err(Error::Unfitted);
            }
            t.clone()
        }
        (None, Some(cal)) => fit(cal, stage.k)?,
        (None, None) => unreachable!("checked before the run"),
    };
    if table.timestep.is_some_and(|t| t != stage.timestep)
        || table.prompt_hash.as_ref().is_some_and(|h| *h != expected_hash)
    {
        return Err(Error::Config(format!(
            "stage {}: separation table was fitted with a different timestep or prompt",
            stage.name
        )));
    }
    Ok(table)
}

fn run_estimator(
    mut records: Vec<ImageRecord>,
    stage: &EstimatorStage,
    providers: &Providers<'_>,
) -> Result<(Vec<ImageRecord>, StageReport)> {
    use rayon::prelude::*;
    let table = estimator_table(stage, providers)?;
    let activations = providers.activations.expect("checked before the run");
    let scores: Vec<f64> = records
        .par_iter()
        .map(|r| {
            let x = activations
                .activations(&r.image_id)
                .ok_or_else(|| Error::MissingActivation(r.image_id.clone()))?;
            score_image(&x, &table)
        })
        .collect::<Result<_>>()?;
    for (r, s) in records.iter_mut().zip(scores) {
        r.scores.insert(stage.output_key.clone(), s);
    }
    let top_k = table.top_k.as_ref().map_or(0, Vec::len);
    let report = StageReport::new(&stage.name, records.len(), records.len())
        .param("output_key", &stage.output_key)
        .param("K", top_k)
        .param("timestep", stage.timestep)
        .param("prompt_hash", expected_hash_short(&stage.prompt))
        .param("pair_count", table.pair_count);
    Ok((records, report))
}

fn expected_hash_short(prompt: &str) -> String {
    prompt_hash(prompt)[..16].to_string()
}

/// Runs every stage in order and the final selection, if configured.
pub fn run_pipeline(
    mut records: Vec<ImageRecord>,
    cfg: &PipelineConfig,
    providers: &Providers<'_>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    validate_records(&records)?;
    check_resolvable(cfg, &records, providers)?;
    attach_provider_scores(&mut records, providers)?;

    let mut stage_log = Vec::with_capacity(cfg.stages.len() + 1);
    for stage in &cfg.stages {
        let (survivors, report) = match stage {
            StageSpec::Threshold(c) => apply_stage(records, c)?,
            StageSpec::Resolution(c) => resolution_stage_with(records, c),
            StageSpec::Dedup(d) => {
                let alive: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
                let sets: Vec<DescriptorSet> = providers
                    .descriptors
                    .iter()
                    .filter(|s| alive.contains(s.image_id.as_str()))
                    .cloned()
                    .collect();
                let out = deduplicate_named(records, &sets, &d.config(), &d.name)?;
                (out.survivors, out.report)
            }
            StageSpec::Estimator(e) => run_estimator(records, e, providers)?,
        };
        records = survivors;
        stage_log.push(report);
    }

    if let Some(sel) = &cfg.selection {
        let selected = select_top_n(&records, sel)?;
        records = selected.records;
        stage_log.extend(selected.stage_log);
    }

    Ok(DatasetManifest {
        records,
        pipeline_config_hash: cfg.hash()?,
        stage_log,
    })
}

/// Runs the pipeline on a dedicated pool of `workers` threads.
pub fn run_pipeline_with_workers(
    records: Vec<ImageRecord>,
    cfg: &PipelineConfig,
    providers: &Providers<'_>,
    workers: usize,
) -> Result<DatasetManifest> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| run_pipeline(records, cfg, providers))
}

/// Funnel view of a stage log: one line per stage with input and output counts.
pub fn format_funnel(stage_log: &[StageReport]) -> String {
    let width = stage_log
        .iter()
        .map(|r| r.stage_name.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = format!("{:<width$}  {:>10}  {:>10}  {:>7}\n", "stage", "in", "out", "kept");
    for r in stage_log {
        let kept = if r.input_count == 0 {
            100.0
        } else {
            100.0 * r.output_count as f64 / r.input_count as f64
        };
        out.push_str(&format!(
            "{:<width$}  {:>10}  {:>10}  {:>6.1}%\n",
            r.stage_name, r.input_count, r.output_count, kept
        ));
    }
    out
}
