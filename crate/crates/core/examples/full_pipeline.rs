//! End-to-end run on a generated corpus: resolution, classifier thresholds,
//! near-duplicate removal, estimator scoring and top-n selection.

use curate::estimator::CalibrationSet;
use curate::pipeline::{format_funnel, run_pipeline, PipelineConfig, Providers};
use curate::provider::{ActivationTable, ScoreTable};
use curate::synth::{synthetic_corpus, CorpusSpec};

const CONFIG: &str = r#"
[[stage]]
kind = "resolution"
name = "resolution"

[[stage]]
name = "nsfw"
score_key = "nsfw"
comparator = "<"
threshold = 0.5

[[stage]]
name = "topiq"
score_key = "topiq"
comparator = ">"
threshold = 0.71

[[stage]]
kind = "dedup"
name = "dedup"
min_matches = 5
quality_key = "coarse_quality"

[[stage]]
kind = "estimator"
name = "estimator"
K = 6

[selection]
n = 20
"#;

pub fn run() -> curate::Result<()> {
    let spec = CorpusSpec { records: 1500, duplicate_groups: 20, ..CorpusSpec::default() };
    let corpus = synthetic_corpus(&spec, 1)?;
    let mut scores = ScoreTable::new();
    scores.extend_lines(corpus.scores)?;
    let activations = ActivationTable::new(corpus.activations)?;
    let providers = Providers {
        scores: vec![&scores],
        descriptors: corpus.descriptors,
        activations: Some(&activations),
        separation: None,
        calibration: Some(CalibrationSet::new(corpus.hq, corpus.lq)?),
    };
    let cfg = PipelineConfig::from_toml_str(CONFIG)?;
    let manifest = run_pipeline(corpus.records, &cfg, &providers)?;
    print!("{}", format_funnel(&manifest.stage_log));
    for r in manifest.records.iter().take(5) {
        println!("  {}  {:.4}", r.image_id, r.scores["diffusion_estimator"]);
    }
    println!("config hash {}", &manifest.pipeline_config_hash[..16]);
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
