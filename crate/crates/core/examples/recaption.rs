//! Re-captioning through the batch client with a file-backed stub and an
//! on-disk cache: a second run sends nothing new.

use std::collections::HashMap;

use curate::caption::{caption_batch_with, CaptionCache, CaptionRequest, FileBackend, RetryPolicy};

pub fn run() -> anyhow::Result<()> {
    let captions: HashMap<String, String> = [
        ("img-1", "a red fox curled up in fresh snow"),
        ("img-2", "two cyclists on a wet cobblestone street at night"),
        ("img-3", "a bowl of ramen with a soft-boiled egg, top-down view"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let backend = FileBackend::new(captions, "file-stub");
    let requests: Vec<CaptionRequest> = ["img-1", "img-2", "img-3", "img-4", "img-2"]
        .iter()
        .map(|id| CaptionRequest::new(*id, format!("s3://corpus/{id}.jpg")))
        .collect();
    let policy = RetryPolicy { max_attempts: 1, ..RetryPolicy::default() };

    let dir = tempfile::tempdir()?;
    let rt = tokio::runtime::Runtime::new()?;
    for pass in 1..=2 {
        let mut cache = CaptionCache::open(dir.path().join("captions.ndjson"))?;
        let cached = cache.entries().len();
        let outcomes = rt.block_on(caption_batch_with(&requests, &backend, &policy, cache.entries()));
        cache.record(&outcomes)?;
        println!("pass {pass}: {cached} cached before the run");
        for o in &outcomes {
            match o {
                Ok(r) => println!("  {:<6} {}", r.image_id, r.caption),
                Err(f) => println!("  {:<6} failed: {} ({})", f.image_id, f.kind, f.message),
            }
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
