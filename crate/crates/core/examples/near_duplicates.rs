//! Near-duplicate clustering on local descriptors: jittered copies of an
//! image collapse onto the copy with the best quality score.

use curate::dedup::{deduplicate, DedupConfig, DescriptorSet};
use curate::ImageRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> curate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sets = Vec::new();
    let mut records = Vec::new();
    for original in 0..4 {
        let base: Vec<Vec<f32>> = (0..10).map(|_| (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
        // Copy 0 is the original; the rest are re-encodes with small noise.
        for copy in 0..=original {
            let id = format!("img-{original}-{copy}");
            let descs = base
                .iter()
                .map(|d| d.iter().map(|x| x + rng.random_range(-0.01f32..0.01)).collect())
                .collect();
            sets.push(DescriptorSet::new(id.clone(), 16, descs)?);
            records.push(ImageRecord::new(id, 2048, 2048).with_score("coarse_quality", rng.random_range(0.0..5.0)));
        }
    }
    let cfg = DedupConfig {
        ratio_threshold: 0.8,
        min_matches: 8,
        quality_key: "coarse_quality".into(),
    };
    let out = deduplicate(records, &sets, &cfg)?;
    for c in &out.assignment.clusters {
        println!("{:?} -> keep {}", c.members, c.representative);
    }
    println!("{} of {} records survive", out.survivors.len(), out.survivors.len() + out.dropped.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
