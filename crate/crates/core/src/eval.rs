//! Side-by-side human evaluation: task construction, 3-annotator majority
//! voting, win rates and the exact two-sided binomial test.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const VOTES_PER_ITEM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Relevance,
    Aesthetics,
    Complexity,
    Fidelity,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::Relevance,
        Criterion::Aesthetics,
        Criterion::Complexity,
        Criterion::Fidelity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::Relevance => "relevance",
            Criterion::Aesthetics => "aesthetics",
            Criterion::Complexity => "complexity",
            Criterion::Fidelity => "fidelity",
        }
    }

    /// Column heading used in the text report.
    pub fn title(self) -> &'static str {
        match self {
            Criterion::Relevance => "Image-Text Relevance",
            Criterion::Aesthetics => "Aesthetic Quality",
            Criterion::Complexity => "Image Complexity",
            Criterion::Fidelity => "Fidelity",
        }
    }

    /// What annotators judge under this criterion.
    pub fn instruction(self) -> &'static str {
        match self {
            Criterion::Relevance => "Accuracy of the image content relative to the text prompt.",
            Criterion::Aesthetics => "Overall visual appeal, including composition and style.",
            Criterion::Complexity => "Richness of detail and content within the scene.",
            Criterion::Fidelity => {
                "Presence and severity of defects, artifacts, distortions, or undesirable elements."
            }
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A vote in model terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

impl Choice {
    pub const ALL: [Choice; 3] = [Choice::A, Choice::B, Choice::Tie];

    pub fn swapped(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
            Choice::Tie => Choice::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbSExperiment {
    pub experiment_id: String,
    pub model_a: String,
    pub model_b: String,
    pub prompts: Vec<String>,
}

impl SbSExperiment {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::Invariant(format!(
                "experiment {} has no prompts",
                self.experiment_id
            )));
        }
        if self.model_a == self.model_b {
            return Err(Error::Invariant(format!(
                "experiment {} compares {} with itself",
                self.experiment_id, self.model_a
            )));
        }
        Ok(())
    }

    pub fn criteria(&self) -> [Criterion; 4] {
        Criterion::ALL
    }

    /// The same experiment with the model labels exchanged.
    pub fn swapped(&self) -> SbSExperiment {
        SbSExperiment {
            model_a: self.model_b.clone(),
            model_b: self.model_a.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub experiment_id: String,
    pub prompt_index: usize,
    pub criterion: Criterion,
    pub annotator_id: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    ABetter,
    BBetter,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub criterion: Criterion,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    pub win_rate_a: f64,
    pub p_value: f64,
    pub significant: bool,
    pub direction: Direction,
}

/// Majority over three votes; a three-way split resolves to a tie.
pub fn majority_vote(votes: &[Choice]) -> Result<Choice> {
    if votes.len() != VOTES_PER_ITEM {
        return Err(Error::IncompleteVotes(format!(
            "expected {VOTES_PER_ITEM} votes, got {}",
            votes.len()
        )));
    }
    for c in Choice::ALL {
        if votes.iter().filter(|&&v| v == c).count() * 2 > votes.len() {
            return Ok(c);
        }
    }
    Ok(Choice::Tie)
}

/// Maps a possibly half-integer success count to an integer. Integers pass
/// through; half-integers move toward `n / 2`, so `k` and `n - k` always land
/// on mirrored counts.
pub fn round_successes(k: f64, n: u64) -> Result<u64> {
    if !k.is_finite() || k < 0.0 || k > n as f64 {
        return Err(Error::Domain(format!("success count {k} outside [0, {n}]")));
    }
    let floor = k.floor();
    let frac = k - floor;
    let (lo, hi) = (floor as u64, k.ceil() as u64);
    let center = n as f64 / 2.0;
    Ok(if frac == 0.0 {
        lo
    } else if frac == 0.5 {
        if (lo as f64 - center).abs() <= (hi as f64 - center).abs() {
            lo
        } else {
            hi
        }
    } else if frac < 0.5 {
        lo
    } else {
        hi
    })
}

fn biguint_ratio_to_f64(num: &BigUint, shift: u64) -> f64 {
    // num / 2^shift, with num <= 2^shift.
    let bits = num.bits();
    if bits == 0 {
        return 0.0;
    }
    let drop = bits.saturating_sub(64);
    let top = (num >> drop).iter_u64_digits().next().unwrap_or(0);
    let exp = drop as i64 - shift as i64;
    (top as f64) * 2f64.powi(exp as i32)
}

/// Exact two-sided binomial p-value at success probability 1/2: the total
/// probability of all outcomes no more likely than the observed one.
pub fn binomial_p(k_half_wins: f64, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("binomial test needs n >= 1".into()));
    }
    let k = round_successes(k_half_wins, n)?;
    let mut coeffs = Vec::with_capacity(n as usize + 1);
    let mut c = BigUint::from(1u32);
    for i in 0..=n {
        coeffs.push(c.clone());
        if i < n {
            c = c * BigUint::from(n - i) / BigUint::from(i + 1);
        }
    }
    let observed = &coeffs[k as usize];
    let tail: BigUint = coeffs.iter().filter(|c| *c <= observed).sum();
    if tail.bits() > n {
        return Ok(1.0);
    }
    Ok(biguint_ratio_to_f64(&tail, n).min(1.0))
}

/// Tallies majority outcomes for one criterion into win rate and significance.
pub fn tally(criterion: Criterion, outcomes: impl IntoIterator<Item = Choice>) -> Result<CriterionOutcome> {
    let (mut wins_a, mut wins_b, mut ties) = (0usize, 0usize, 0usize);
    for c in outcomes {
        match c {
            Choice::A => wins_a += 1,
            Choice::B => wins_b += 1,
            Choice::Tie => ties += 1,
        }
    }
    let total = wins_a + wins_b + ties;
    if total == 0 {
        return Err(Error::EmptyInput(format!("no outcomes for {criterion}")));
    }
    let k = wins_a as f64 + ties as f64 / 2.0;
    let win_rate_a = k / total as f64;
    let p_value = binomial_p(k, total as u64)?;
    let significant = p_value < SIGNIFICANCE_LEVEL;
    let direction = if !significant {
        Direction::None
    } else if win_rate_a > 0.5 {
        Direction::ABetter
    } else if win_rate_a < 0.5 {
        Direction::BBetter
    } else {
        Direction::None
    };
    Ok(CriterionOutcome {
        criterion,
        wins_a,
        wins_b,
        ties,
        win_rate_a,
        p_value,
        significant,
        direction,
    })
}

/// Per-criterion outcomes of a fully annotated experiment.
pub fn aggregate(experiment: &SbSExperiment, annotations: &[Annotation]) -> Result<Vec<CriterionOutcome>> {
    experiment.validate()?;
    let mut votes: HashMap<(usize, Criterion), Vec<(&str, Choice)>> = HashMap::new();
    for a in annotations {
        if a.experiment_id != experiment.experiment_id {
            return Err(Error::Invariant(format!(
                "annotation for experiment {} in {}",
                a.experiment_id, experiment.experiment_id
            )));
        }
        if a.prompt_index >= experiment.prompts.len() {
            return Err(Error::Invariant(format!(
                "prompt_index {} out of range",
                a.prompt_index
            )));
        }
        votes
            .entry((a.prompt_index, a.criterion))
            .or_default()
            .push((a.annotator_id.as_str(), a.choice));
    }
    Criterion::ALL
        .iter()
        .map(|&criterion| {
            let mut majorities = Vec::with_capacity(experiment.prompts.len());
            for p in 0..experiment.prompts.len() {
                let v = votes.get(&(p, criterion)).map(Vec::as_slice).unwrap_or(&[]);
                let annotators: BTreeSet<&str> = v.iter().map(|(a, _)| *a).collect();
                if annotators.len() != v.len() {
                    return Err(Error::IncompleteVotes(format!(
                        "prompt {p}, {criterion}: an annotator voted twice"
                    )));
                }
                let choices: Vec<Choice> = v.iter().map(|(_, c)| *c).collect();
                let m = majority_vote(&choices).map_err(|_| {
                    Error::IncompleteVotes(format!(
                        "prompt {p}, {criterion}: {} of {VOTES_PER_ITEM} votes",
                        v.len()
                    ))
                })?;
                majorities.push(m);
            }
            tally(criterion, majorities)
        })
        .collect()
}

/// Which model is shown on the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Placement {
    #[serde(rename = "A")]
    ALeft,
    #[serde(rename = "B")]
    BLeft,
}

/// A vote in screen terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScreenChoice {
    Left,
    Right,
    Tie,
}

impl Placement {
    pub fn to_model_choice(self, choice: ScreenChoice) -> Choice {
        match (self, choice) {
            (_, ScreenChoice::Tie) => Choice::Tie,
            (Placement::ALeft, ScreenChoice::Left) | (Placement::BLeft, ScreenChoice::Right) => Choice::A,
            _ => Choice::B,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbSTask {
    pub task_id: String,
    pub experiment_id: String,
    pub prompt_index: usize,
    pub prompt: String,
    pub criterion: Criterion,
    pub left_image_uri: String,
    pub right_image_uri: String,
    pub placement: Placement,
}

/// One task per (prompt, criterion), left/right placement drawn from `seed`.
pub fn build_tasks(experiment: &SbSExperiment, pairs: &[ImagePair], seed: u64) -> Result<Vec<SbSTask>> {
    experiment.validate()?;
    if pairs.len() != experiment.prompts.len() {
        return Err(Error::Invariant(format!(
            "{} image pairs for {} prompts",
            pairs.len(),
            experiment.prompts.len()
        )));
    }
    if let Some(p) = pairs.iter().find(|p| p.a == p.b) {
        return Err(Error::Invariant(format!("image pair shows {} twice", p.a)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(pairs.len() * Criterion::ALL.len());
    for (i, (prompt, pair)) in experiment.prompts.iter().zip(pairs).enumerate() {
        for criterion in Criterion::ALL {
            let placement = if rng.random_bool(0.5) {
                Placement::ALeft
            } else {
                Placement::BLeft
            };
            let (left, right) = match placement {
                Placement::ALeft => (&pair.a, &pair.b),
                Placement::BLeft => (&pair.b, &pair.a),
            };
            tasks.push(SbSTask {
                task_id: format!("{}-{i:05}-{criterion}", experiment.experiment_id),
                experiment_id: experiment.experiment_id.clone(),
                prompt_index: i,
                prompt: prompt.clone(),
                criterion,
                left_image_uri: left.clone(),
                right_image_uri: right.clone(),
                placement,
            });
        }
    }
    Ok(tasks)
}

/// Experiment definition file: the experiment, its image pairs and the
/// placement seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentFile {
    #[serde(flatten)]
    pub experiment: SbSExperiment,
    #[serde(default)]
    pub image_pairs: Vec<ImagePair>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ExperimentFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
        file.experiment.validate()?;
        Ok(file)
    }

    pub fn tasks(&self) -> Result<Vec<SbSTask>> {
        build_tasks(&self.experiment, &self.image_pairs, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub model_a: String,
    pub model_b: String,
    pub outcomes: Vec<CriterionOutcome>,
}

impl ExperimentReport {
    pub fn new(experiment: &SbSExperiment, outcomes: Vec<CriterionOutcome>) -> Self {
        ExperimentReport {
            experiment_id: experiment.experiment_id.clone(),
            model_a: experiment.model_a.clone(),
            model_b: experiment.model_b.clone(),
            outcomes,
        }
    }

    /// Plain-text table: one row, win rate of model A per criterion; `*` marks
    /// a significant win for A, `-` a significant loss, no marker otherwise.
    pub fn to_table(&self) -> String {
        let by: BTreeMap<Criterion, &CriterionOutcome> =
            self.outcomes.iter().map(|o| (o.criterion, o)).collect();
        let label = format!("{} vs {}", self.model_a, self.model_b);
        let width = label.len().max(10);
        let mut out = format!("{:<width$}", "comparison");
        for c in Criterion::ALL {
            out.push_str(&format!("  {:>20}", c.title()));
        }
        out.push('\n');
        out.push_str(&format!("{label:<width$}"));
        for c in Criterion::ALL {
            let cell = match by.get(&c) {
                Some(o) => {
                    let mark = match o.direction {
                        Direction::ABetter => "*",
                        Direction::BBetter => "-",
                        Direction::None => " ",
                    };
                    format!("{:.2}{mark}", o.win_rate_a)
                }
                None => "n/a ".to_string(),
            };
            out.push_str(&format!("  {cell:>20}"));
        }
        out.push('\n');
        out.push_str(&format!("{:<width$}", "p-value"));
        for c in Criterion::ALL {
            let cell = by.get(&c).map_or("n/a".to_string(), |o| format!("{:.3e}", o.p_value));
            out.push_str(&format!("  {cell:>19} "));
        }
        out.push('\n');
        out
    }
}
