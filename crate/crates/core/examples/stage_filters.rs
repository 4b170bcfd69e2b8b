//! Resolution and classifier-threshold stages on a handful of records.

use curate::pipeline::format_funnel;
use curate::stage::{apply_stage, resolution_stage, Comparator, OnMissing, StageConfig};
use curate::ImageRecord;

pub fn run() -> curate::Result<()> {
    let records = vec![
        ImageRecord::new("square-1k", 1024, 1024).with_score("nsfw", 0.01).with_score("topiq", 0.90),
        ImageRecord::new("hd", 1920, 1080).with_score("nsfw", 0.02).with_score("topiq", 0.71),
        ImageRecord::new("wide", 3000, 2000).with_score("nsfw", 0.80).with_score("topiq", 0.95),
        ImageRecord::new("tall", 1536, 2048).with_score("nsfw", 0.10).with_score("topiq", 0.83),
        ImageRecord::new("unscored", 2048, 2048),
    ];
    let mut log = Vec::new();
    let (kept, report) = resolution_stage(records);
    log.push(report);
    let nsfw = StageConfig::new("nsfw", "nsfw", Comparator::Lt, 0.5).on_missing(OnMissing::Reject);
    let (kept, report) = apply_stage(kept, &nsfw)?;
    log.push(report);
    let topiq = StageConfig::new("topiq", "topiq", Comparator::Gt, 0.71);
    let (kept, report) = apply_stage(kept, &topiq)?;
    log.push(report);

    print!("{}", format_funnel(&log));
    let ids: Vec<&str> = kept.iter().map(|r| r.image_id.as_str()).collect();
    println!("survivors: {ids:?}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
