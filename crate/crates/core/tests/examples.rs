//! Runs every example end to end.

#[allow(dead_code)]
#[path = "../examples/quality_estimator.rs"]
mod quality_estimator;

#[test]
fn quality_estimator_runs() {
    quality_estimator::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/stage_filters.rs"]
mod stage_filters;

#[test]
fn stage_filters_runs() {
    stage_filters::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/near_duplicates.rs"]
mod near_duplicates;

#[test]
fn near_duplicates_runs() {
    near_duplicates::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/top_n_variants.rs"]
mod top_n_variants;

#[test]
fn top_n_variants_runs() {
    top_n_variants::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/sbs_significance.rs"]
mod sbs_significance;

#[test]
fn sbs_significance_runs() {
    sbs_significance::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/frechet_distance.rs"]
mod frechet_distance;

#[test]
fn frechet_distance_runs() {
    frechet_distance::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/annotation_server.rs"]
mod annotation_server;

#[test]
fn annotation_server_runs() {
    annotation_server::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/recaption.rs"]
mod recaption;

#[test]
fn recaption_runs() {
    recaption::run().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/full_pipeline.rs"]
mod full_pipeline;

#[test]
fn full_pipeline_runs() {
    full_pipeline::run().unwrap();
}
