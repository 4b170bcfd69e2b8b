//! Starts the annotation service on a free local port, lets three simulated
//! annotators work through every task over HTTP, then reads the results.

use std::sync::Arc;

use curate::eval::{ExperimentFile, ImagePair, SbSExperiment};
use curate::service::{router, AnnotationService, ResultsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn run() -> anyhow::Result<()> {
    let file = ExperimentFile {
        experiment: SbSExperiment {
            experiment_id: "demo".into(),
            model_a: "curated".into(),
            model_b: "baseline".into(),
            prompts: (0..5).map(|i| format!("a lighthouse at dusk, take {i}")).collect(),
        },
        image_pairs: (0..5)
            .map(|i| ImagePair { a: format!("/img/curated/{i}.png"), b: format!("/img/baseline/{i}.png") })
            .collect(),
        seed: 42,
    };
    let logs = tempfile::tempdir()?;
    let service = Arc::new(AnnotationService::open(&file, logs.path())?);

    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
        let base = format!("http://{}", listener.local_addr()?);
        let app = router(service.clone(), None);
        tokio::spawn(async move { axum::serve(listener, app).await });

        let client = reqwest::Client::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut votes = 0;
        for annotator in ["ann-1", "ann-2", "ann-3"] {
            loop {
                let resp = client.get(format!("{base}/tasks/next?annotator={annotator}")).send().await?;
                if resp.status() == reqwest::StatusCode::NO_CONTENT {
                    break;
                }
                let task: Value = resp.json().await?;
                let choice = ["left", "right", "tie"][rng.random_range(0..3)];
                let body = json!({"task_id": task["task_id"], "annotator_id": annotator, "choice": choice});
                let status = client.post(format!("{base}/annotations")).json(&body).send().await?.status();
                anyhow::ensure!(status == reqwest::StatusCode::CREATED, "vote rejected: {status}");
                votes += 1;
            }
        }
        let report: ResultsReport = client.get(format!("{base}/results/demo")).send().await?.json().await?;
        println!("{votes} votes recorded in {}", service.log_path().display());
        println!("completion {:.0}% of {} tasks", 100.0 * report.completion, report.total_tasks);
        for o in &report.outcomes {
            println!("  {:<11} A {:>2}  B {:>2}  tie {:>2}  p = {:.3}", o.criterion.as_str(), o.wins_a, o.wins_b, o.ties, o.p_value);
        }
        Ok(())
    })
}

#[allow(dead_code)]
fn main() -> anyhow::Result<()> {
    run()
}
