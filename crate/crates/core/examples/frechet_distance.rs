//! Fréchet distance between Gaussian fits of two feature sets, reported next
//! to mean per-image metric scores.

use curate::metrics::{fit_gaussian, format_metric_table, frechet_distance, FeatureSet, MetricRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn features(label: &str, shift: f64, spread: f64, seed: u64) -> curate::Result<FeatureSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let rows: Vec<Vec<f64>> = (0..500).map(|_| (0..8).map(|_| shift + noise.sample(&mut rng)).collect()).collect();
    FeatureSet::new(label, &rows)
}

pub fn run() -> curate::Result<()> {
    let reference = fit_gaussian(&features("reference", 0.0, 1.0, 1)?)?;
    let mut rows = Vec::new();
    for (model, shift, spread, clip) in [("close", 0.05, 1.0, 0.31), ("shifted", 0.5, 1.0, 0.29), ("wide", 0.0, 1.6, 0.27)] {
        let stats = fit_gaussian(&features(model, shift, spread, 2)?)?;
        rows.push(MetricRow {
            model: model.into(),
            fd: Some(frechet_distance(&stats, &reference)?),
            clip: Some(clip),
            ..MetricRow::default()
        });
    }
    print!("{}", format_metric_table(&rows));
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
