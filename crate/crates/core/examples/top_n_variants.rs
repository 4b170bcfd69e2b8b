//! Nested top-n subsets by estimator score, plus a size-matched uniform control.

use curate::selector::{nested_variants, sample_control, SamplingMode};
use curate::ImageRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> curate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let records: Vec<ImageRecord> = (0..400)
        .map(|i| ImageRecord::new(format!("img-{i:04}"), 2048, 2048).with_score("diffusion_estimator", rng.random_range(0.0..100.0)))
        .collect();
    let variants = nested_variants(&records, "diffusion_estimator", &[10, 50, 200])?;
    for v in &variants {
        let worst = v.records.last().and_then(|r| r.score("diffusion_estimator")).unwrap_or(f64::NAN);
        println!("top-{:<3} lowest kept score {:.2}", v.records.len(), worst);
    }
    let small: Vec<&str> = variants[0].ids();
    assert!(small.iter().all(|id| variants[1].ids().contains(id)));

    let control = sample_control(&records, 50, SamplingMode::Uniform, "diffusion_estimator", 1)?;
    let mean = |rs: &[ImageRecord]| rs.iter().filter_map(|r| r.score("diffusion_estimator")).sum::<f64>() / rs.len() as f64;
    println!("mean score: top-50 {:.2}, uniform control {:.2}", mean(&variants[1].records), mean(&control.records));
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
