//! Threshold and resolution filter stages.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, StageReport};

/// Area a record must strictly exceed to pass the resolution stage (1024 x 1024).
pub const MIN_AREA_EXCLUSIVE: u64 = 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=", alias = "≥")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=", alias = "≤")]
    Le,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
            Comparator::Lt => "<",
            Comparator::Le => "<=",
        }
    }

    /// True when a larger threshold admits fewer records.
    pub fn is_lower_bound(self) -> bool {
        matches!(self, Comparator::Gt | Comparator::Ge)
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// What a threshold stage does with a record lacking its score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnMissing {
    Reject,
    Pass,
    #[default]
    Error,
}

impl fmt::Display for OnMissing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OnMissing::Reject => "reject",
            OnMissing::Pass => "pass",
            OnMissing::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    #[serde(rename = "name")]
    pub stage_name: String,
    pub score_key: String,
    pub comparator: Comparator,
    pub threshold: f64,
    #[serde(default)]
    pub on_missing: OnMissing,
}

impl StageConfig {
    pub fn new(
        stage_name: impl Into<String>,
        score_key: impl Into<String>,
        comparator: Comparator,
        threshold: f64,
    ) -> Self {
        StageConfig {
            stage_name: stage_name.into(),
            score_key: score_key.into(),
            comparator,
            threshold,
            on_missing: OnMissing::Error,
        }
    }

    pub fn on_missing(mut self, on_missing: OnMissing) -> Self {
        self.on_missing = on_missing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold.is_nan() {
            return Err(Error::Config(format!(
                "stage {}: threshold is NaN",
                self.stage_name
            )));
        }
        Ok(())
    }

    fn report(&self, input: usize, output: usize) -> StageReport {
        StageReport::new(&self.stage_name, input, output)
            .param("score_key", &self.score_key)
            .param("comparator", self.comparator)
            .param("threshold", self.threshold)
            .param("on_missing", self.on_missing)
    }
}

/// Keeps the records whose `score_key` satisfies the stage comparison.
/// Survivors keep their input order.
pub fn apply_stage(
    records: Vec<ImageRecord>,
    cfg: &StageConfig,
) -> Result<(Vec<ImageRecord>, StageReport)> {
    cfg.validate()?;
    let input = records.len();
    let kept: Vec<Option<ImageRecord>> = records
        .into_par_iter()
        .map(|record| {
            let keep = match record.score(&cfg.score_key) {
                Some(v) => cfg.comparator.holds(v, cfg.threshold),
                None => match cfg.on_missing {
                    OnMissing::Pass => true,
                    OnMissing::Reject => false,
                    OnMissing::Error => {
                        return Err(Error::MissingScore {
                            image_id: record.image_id,
                            key: cfg.score_key.clone(),
                        })
                    }
                },
            };
            Ok(keep.then_some(record))
        })
        .collect::<Result<_>>()?;
    let survivors: Vec<ImageRecord> = kept.into_iter().flatten().collect();
    let report = cfg.report(input, survivors.len());
    Ok((survivors, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionConfig {
    #[serde(rename = "name", default = "default_resolution_name")]
    pub stage_name: String,
    /// Records must have an area strictly greater than this.
    #[serde(default = "default_min_area")]
    pub min_area_exclusive: u64,
    /// Optional per-side minimum (inclusive), off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_side: Option<u32>,
}

fn default_resolution_name() -> String {
    "resolution".into()
}

fn default_min_area() -> u64 {
    MIN_AREA_EXCLUSIVE
}

impl Default for ResolutionConfig {
    fn default() -> Self {
        ResolutionConfig {
            stage_name: default_resolution_name(),
            min_area_exclusive: MIN_AREA_EXCLUSIVE,
            min_side: None,
        }
    }
}

impl ResolutionConfig {
    pub fn accepts(&self, record: &ImageRecord) -> bool {
        let side_ok = self
            .min_side
            .is_none_or(|s| record.width_px >= s && record.height_px >= s);
        side_ok && record.area() > self.min_area_exclusive
    }
}

/// Area filter with the default 1024 x 1024 strict bound.
pub fn resolution_stage(records: Vec<ImageRecord>) -> (Vec<ImageRecord>, StageReport) {
    resolution_stage_with(records, &ResolutionConfig::default())
}

pub fn resolution_stage_with(
    records: Vec<ImageRecord>,
    cfg: &ResolutionConfig,
) -> (Vec<ImageRecord>, StageReport) {
    let input = records.len();
    let survivors: Vec<ImageRecord> = records.into_iter().filter(|r| cfg.accepts(r)).collect();
    let mut report = StageReport::new(&cfg.stage_name, input, survivors.len())
        .param("min_area_exclusive", cfg.min_area_exclusive);
    if let Some(side) = cfg.min_side {
        report = report.param("min_side", side);
    }
    (survivors, report)
}
