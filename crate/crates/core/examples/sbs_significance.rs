//! Side-by-side outcomes: three votes per item, majority, win rate and the
//! exact binomial test.

use curate::eval::{aggregate, binomial_p, Annotation, Choice, Criterion, ExperimentReport, SbSExperiment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run() -> curate::Result<()> {
    let exp = SbSExperiment {
        experiment_id: "demo".into(),
        model_a: "curated-3k".into(),
        model_b: "baseline".into(),
        prompts: (0..60).map(|i| format!("prompt {i}")).collect(),
    };
    // Annotators lean toward A on aesthetics and are indifferent elsewhere.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut annotations = Vec::new();
    for p in 0..exp.prompts.len() {
        for criterion in Criterion::ALL {
            let lean = if criterion == Criterion::Aesthetics { 0.7 } else { 0.4 };
            for annotator in ["a1", "a2", "a3"] {
                let u: f64 = rng.random();
                let choice = if u < lean { Choice::A } else if u < 0.8 { Choice::B } else { Choice::Tie };
                annotations.push(Annotation {
                    experiment_id: exp.experiment_id.clone(),
                    prompt_index: p,
                    criterion,
                    annotator_id: annotator.into(),
                    choice,
                });
            }
        }
    }
    let report = ExperimentReport::new(&exp, aggregate(&exp, &annotations)?);
    print!("{}", report.to_table());
    println!("p(8 of 10) = {}", binomial_p(8.0, 10)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> curate::Result<()> {
    run()
}
