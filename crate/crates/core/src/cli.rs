//! Command-line front end. Every subcommand is deterministic given its inputs
//! and seed. Failures print a JSON object `{"error", "message"}` on stderr and
//! exit with 1 (runtime) or 2 (usage or configuration).

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::caption::{caption_batch_with, CaptionBackend, CaptionCache, CaptionRequest, FileBackend, HttpBackend, RetryPolicy};
use crate::dedup::{deduplicate, DedupConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    fit, score_corpus, ActivationNormMatrix, CalibrationSet, EstimatorConfig, SeparationTable, DEFAULT_PROMPT,
    DEFAULT_SCORE_KEY, DEFAULT_TIMESTEP,
};
use crate::eval::{aggregate, Annotation, ExperimentFile, ExperimentReport};
use crate::metrics::{aggregate_scores, fit_gaussian, format_metric_table, frechet_distance, load_scores, FeatureSet, MetricRow};
use crate::model::{load_manifest, load_records, read_ndjson, save_manifest, write_ndjson, DatasetManifest, ImageRecord};
use crate::pipeline::{format_funnel, run_pipeline, PipelineConfig, Providers};
use crate::provider::{load_descriptors, ActivationTable, ScoreLine, ScoreProvider, ScoreTable};
use crate::selector::{nested_variants, sample_control, select_top_n, SamplingMode, SelectionConfig, DEFAULT_N};
use crate::service::{bind_address, AnnotationService};
use crate::synth::{planted_corpus, synthetic_corpus, CorpusSpec, PlantedSpec};

#[derive(Debug, Parser)]
#[command(name = "curate", version, about = "Score-driven image dataset curation")]
pub struct Cli {
    /// Worker threads for parallel stages (outputs do not depend on it).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full staged run.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    /// Fit or apply the cross-attention quality estimator.
    #[command(subcommand)]
    Estimator(EstimatorCmd),
    /// Near-duplicate clustering; keeps one representative per cluster.
    Dedup(DedupArgs),
    /// Top-n selection, nested size variants, or a control sample.
    Select(SelectArgs),
    /// Side-by-side evaluation statistics.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Fréchet distance and score aggregation.
    #[command(subcommand)]
    Metrics(MetricsCmd),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Seeded synthetic data.
    #[command(subcommand)]
    Synth(SynthCmd),
    /// Re-caption images through an external service or a file stub.
    Caption(CaptionArgs),
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Filter, deduplicate, score and select as configured
    Run(PipelineRunArgs),
}

#[derive(Debug, Args)]
pub struct PipelineRunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub records: PathBuf,
    /// Score files (NDJSON `{"image_id", "scores"}`).
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Activation norm matrices (NDJSON).
    #[arg(long)]
    pub activations: Option<PathBuf>,
    /// Fitted separation table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Calibration groups, used when no table is given.
    #[arg(long, requires = "lq")]
    pub hq: Option<PathBuf>,
    #[arg(long, requires = "hq")]
    pub lq: Option<PathBuf>,
    /// Overrides the selection size from the config.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EstimatorCmd {
    /// Fit a separation table on HQ/LQ calibration activations.
    Fit(FitArgs),
    /// Score activations with a fitted table.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub hq: PathBuf,
    #[arg(long)]
    pub lq: PathBuf,
    #[arg(short = 'K', long = "k", default_value_t = crate::estimator::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_TIMESTEP)]
    pub timestep: f64,
    #[arg(long, default_value = DEFAULT_PROMPT)]
    pub prompt: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = DEFAULT_SCORE_KEY)]
    pub key: String,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub ratio: f64,
    #[arg(long, default_value_t = 8)]
    pub min_matches: usize,
    #[arg(long, default_value = "coarse_quality")]
    pub quality_key: String,
    /// Extra score files merged into the records first.
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Manifest of surviving records.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cluster assignment as JSON.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Records as NDJSON.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub records: Option<PathBuf>,
    /// Records taken from an existing manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_N)]
    pub n: usize,
    /// Comma-separated nested sizes, e.g. 3350,7000,19000.
    #[arg(long, value_delimiter = ',', conflicts_with = "control")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value = DEFAULT_SCORE_KEY)]
    pub score_key: String,
    /// Draw a size-matched control subset instead of the top n.
    #[arg(long, value_enum)]
    pub control: Option<ControlMode>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output manifest, or output directory with --sizes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ControlMode {
    Uniform,
    TopScore,
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Majority vote and binomial test per criterion.
    Aggregate(EvalArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub experiment: PathBuf,
    /// Annotations or a service vote log (NDJSON).
    #[arg(long)]
    pub annotations: PathBuf,
    /// Print JSON instead of the table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCmd {
    /// Fréchet distance between two feature sets.
    Fd(FdArgs),
    /// Mean of per-image metric scores.
    Aggregate(MetricAggArgs),
}

#[derive(Debug, Args)]
pub struct FdArgs {
    #[arg(long)]
    pub features_a: PathBuf,
    #[arg(long)]
    pub features_b: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricAggArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Generated-image features; with --reference adds an FD column.
    #[arg(long, requires = "reference")]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "features")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub experiment: PathBuf,
    #[arg(long)]
    pub log_dir: PathBuf,
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SynthCmd {
    /// Planted-signal activations: hq, lq and test NDJSON plus planted cells.
    Activations(SynthActArgs),
    /// End-to-end corpus: records, scores, descriptors, activations, calibration.
    Corpus(SynthCorpusArgs),
}

#[derive(Debug, Args)]
pub struct SynthActArgs {
    #[arg(long)]
    pub seed: u64,
    /// e.g. `L=16,M=24,K=16,hq=500,lq=500,test=200`.
    #[arg(long, default_value = "")]
    pub planted: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthCorpusArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub records: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CaptionArgs {
    /// NDJSON `{"image_id", "image_uri", "style"}`.
    #[arg(long)]
    pub requests: PathBuf,
    #[arg(long, conflicts_with = "stub", required_unless_present = "stub")]
    pub endpoint: Option<String>,
    /// NDJSON `{"image_id", "caption"}` answered locally.
    #[arg(long)]
    pub stub: Option<PathBuf>,
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    #[arg(long, default_value_t = 5)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 1000)]
    pub base_delay_ms: u64,
    /// One line per request: a result or `{"failure": ...}`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct ErrorJson<'a> {
    error: &'a str,
    message: String,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let body = ErrorJson {
                error: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&body).expect("error JSON serializes"));
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pipeline(PipelineCmd::Run(a)) => pipeline_run(a),
        Command::Estimator(EstimatorCmd::Fit(a)) => estimator_fit(a),
        Command::Estimator(EstimatorCmd::Score(a)) => estimator_score(a),
        Command::Dedup(a) => dedup(a),
        Command::Select(a) => select(a),
        Command::Eval(EvalCmd::Aggregate(a)) => eval_aggregate(a),
        Command::Metrics(MetricsCmd::Fd(a)) => metrics_fd(a),
        Command::Metrics(MetricsCmd::Aggregate(a)) => metrics_aggregate(a),
        Command::Serve(a) => serve(a),
        Command::Synth(SynthCmd::Activations(a)) => synth_activations(a),
        Command::Synth(SynthCmd::Corpus(a)) => synth_corpus(a),
        Command::Caption(a) => caption(a),
    }
}

fn merged_records(records: Vec<ImageRecord>, scores: &[PathBuf]) -> Result<Vec<ImageRecord>> {
    if scores.is_empty() {
        return Ok(records);
    }
    let table = ScoreTable::load(scores)?;
    records
        .into_iter()
        .map(|mut r| {
            for (k, v) in table.scores_for(&r.image_id) {
                if let Some(&old) = r.scores.get(&k) {
                    if old != v {
                        return Err(Error::Invariant(format!(
                            "record {} has {k:?} = {old} but a score file says {v}",
                            r.image_id
                        )));
                    }
                }
                r.scores.insert(k, v);
            }
            Ok(r)
        })
        .collect()
}

fn pipeline_run(a: PipelineRunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(n) = a.n {
        cfg.selection.get_or_insert_with(SelectionConfig::default).n = n;
        cfg.validate()?;
    }
    let records = load_records(&a.records)?;
    let scores = ScoreTable::load(&a.scores)?;
    let activations = a.activations.as_ref().map(ActivationTable::load).transpose()?;
    let calibration = match (&a.hq, &a.lq) {
        (Some(hq), Some(lq)) if a.table.is_none() => Some(CalibrationSet::new(read_ndjson(hq)?, read_ndjson(lq)?)?),
        _ => None,
    };
    let providers = Providers {
        scores: vec![&scores],
        descriptors: a.descriptors.as_ref().map(load_descriptors).transpose()?.unwrap_or_default(),
        activations: activations.as_ref().map(|t| t as _),
        separation: a.table.as_ref().map(SeparationTable::load).transpose()?,
        calibration,
    };
    let manifest = run_pipeline(records, &cfg, &providers)?;
    save_manifest(&manifest, &a.out)?;
    print!("{}", format_funnel(&manifest.stage_log));
    Ok(())
}

fn estimator_fit(a: FitArgs) -> Result<()> {
    let cfg = EstimatorConfig {
        k: a.k,
        timestep: a.timestep,
        prompt: a.prompt,
    };
    let cal = CalibrationSet::new(read_ndjson(&a.hq)?, read_ndjson(&a.lq)?)?;
    let extraction = cfg.extraction();
    if cal.hq.iter().chain(&cal.lq).any(|m| m.extraction() != extraction) {
        return Err(Error::Config(
            "calibration activations were extracted with a different timestep or prompt".into(),
        ));
    }
    let mut table = fit(&cal, cfg.k)?;
    table.timestep = Some(extraction.timestep);
    table.prompt_hash = Some(extraction.prompt_hash);
    table.save(&a.out)?;
    let cells: Vec<String> = table.top_k.iter().flatten().map(ToString::to_string).collect();
    println!("fitted K={} over {} pairs: {}", cells.len(), table.pair_count, cells.join(" "));
    Ok(())
}

fn estimator_score(a: ScoreArgs) -> Result<()> {
    let table = SeparationTable::load(&a.table)?;
    let xs: Vec<ActivationNormMatrix> = read_ndjson(&a.input)?;
    let scores = score_corpus(&xs, &table)?;
    let lines: Vec<ScoreLine> = scores
        .into_iter()
        .map(|(image_id, s)| ScoreLine {
            image_id,
            scores: [(a.key.clone(), s)].into(),
        })
        .collect();
    write_ndjson(&a.out, &lines)?;
    println!("scored {} images", lines.len());
    Ok(())
}

fn dedup(a: DedupArgs) -> Result<()> {
    let cfg = DedupConfig {
        ratio_threshold: a.ratio,
        min_matches: a.min_matches,
        quality_key: a.quality_key,
    };
    let records = merged_records(load_records(&a.records)?, &a.scores)?;
    let sets = load_descriptors(&a.descriptors)?;
    let out = deduplicate(records, &sets, &cfg)?;
    if let Some(path) = &a.clusters {
        let bytes = serde_json::to_vec_pretty(&out.assignment).expect("assignment serializes");
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    }
    let multi = out.assignment.clusters.iter().filter(|c| c.members.len() > 1).count();
    if let Some(path) = &a.out {
        let manifest = DatasetManifest {
            records: out.survivors,
            pipeline_config_hash: crate::pipeline::config_hash(&cfg)?,
            stage_log: vec![out.report.clone()],
        };
        save_manifest(&manifest, path)?;
    }
    println!(
        "dedup: {} -> {} records, {} clusters with duplicates",
        out.report.input_count, out.report.output_count, multi
    );
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let records = match (&a.records, &a.manifest) {
        (Some(p), _) => load_records(p)?,
        (None, Some(m)) => load_manifest(m)?.records,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let records = merged_records(records, &a.scores)?;
    if !a.sizes.is_empty() {
        std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        for m in nested_variants(&records, &a.score_key, &a.sizes)? {
            let n = &m.stage_log[0].parameters["n"];
            let path = a.out.join(format!("top-{n}.json"));
            save_manifest(&m, &path)?;
            println!("{}: {} records", path.display(), m.records.len());
        }
        return Ok(());
    }
    let manifest = match a.control {
        Some(mode) => {
            let mode = match mode {
                ControlMode::Uniform => SamplingMode::Uniform,
                ControlMode::TopScore => SamplingMode::TopScore,
            };
            sample_control(&records, a.n, mode, &a.score_key, a.seed)?
        }
        None => select_top_n(&records, &SelectionConfig::new(a.n, &a.score_key))?,
    };
    save_manifest(&manifest, &a.out)?;
    println!("selected {} of {} records", manifest.records.len(), records.len());
    Ok(())
}

/// Either an annotation or a line of the service vote log.
#[derive(Deserialize)]
#[serde(untagged)]
enum VoteLine {
    Annotation(Annotation),
    Logged(crate::service::VoteRecord),
}

fn eval_aggregate(a: EvalArgs) -> Result<()> {
    let file = ExperimentFile::load(&a.experiment)?;
    let lines: Vec<VoteLine> = read_ndjson(&a.annotations)?;
    let tasks: HashMap<String, crate::eval::SbSTask> = if lines.iter().any(|l| matches!(l, VoteLine::Logged(_))) {
        file.tasks()?.into_iter().map(|t| (t.task_id.clone(), t)).collect()
    } else {
        HashMap::new()
    };
    let annotations = lines
        .into_iter()
        .map(|l| match l {
            VoteLine::Annotation(a) => Ok(a),
            VoteLine::Logged(v) => {
                let t = tasks
                    .get(&v.task_id)
                    .ok_or_else(|| Error::Invariant(format!("vote for unknown task {}", v.task_id)))?;
                Ok(Annotation {
                    experiment_id: t.experiment_id.clone(),
                    prompt_index: t.prompt_index,
                    criterion: t.criterion,
                    annotator_id: v.annotator_id,
                    choice: v.model_choice,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let report = ExperimentReport::new(&file.experiment, aggregate(&file.experiment, &annotations)?);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn metrics_fd(a: FdArgs) -> Result<()> {
    let fa = fit_gaussian(&FeatureSet::load(&a.features_a)?)?;
    let fb = fit_gaussian(&FeatureSet::load(&a.features_b)?)?;
    println!("{}", frechet_distance(&fa, &fb)?);
    Ok(())
}

fn metrics_aggregate(a: MetricAggArgs) -> Result<()> {
    let mut row = MetricRow {
        model: a.model,
        ..MetricRow::default()
    };
    for set in load_scores(&a.scores)? {
        row.set(set.metric, aggregate_scores(&set)?.0);
    }
    if let (Some(f), Some(r)) = (&a.features, &a.reference) {
        let g = fit_gaussian(&FeatureSet::load(f)?)?;
        let reference = fit_gaussian(&FeatureSet::load(r)?)?;
        row.fd = Some(frechet_distance(&g, &reference)?);
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&row).expect("row serializes"));
    } else {
        print!("{}", format_metric_table(&[row]));
    }
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let experiment = ExperimentFile::load(&a.experiment)?;
    let service = Arc::new(AnnotationService::open(&experiment, &a.log_dir)?);
    let addr = bind_address()?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Transport(e.to_string()))?;
    eprintln!(
        "serving {} ({} tasks) on http://{addr}",
        experiment.experiment.experiment_id,
        service.tasks().len()
    );
    runtime.block_on(crate::service::serve(service, a.static_dir, addr))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn synth_activations(a: SynthActArgs) -> Result<()> {
    let spec: PlantedSpec = a.planted.parse()?;
    let corpus = planted_corpus(&spec, a.seed)?;
    create_dir(&a.out_dir)?;
    write_ndjson(a.out_dir.join("hq.ndjson"), &corpus.calibration.hq)?;
    write_ndjson(a.out_dir.join("lq.ndjson"), &corpus.calibration.lq)?;
    let test: Vec<&ActivationNormMatrix> = corpus.test.iter().map(|(m, _)| m).collect();
    write_ndjson(a.out_dir.join("test.ndjson"), &test)?;
    let labels: Vec<ScoreLine> = corpus
        .test
        .iter()
        .map(|(m, hq)| ScoreLine {
            image_id: m.image_id.clone(),
            scores: [("hq_like".to_string(), if *hq { 1.0 } else { 0.0 })].into(),
        })
        .collect();
    write_ndjson(a.out_dir.join("labels.ndjson"), &labels)?;
    let planted = serde_json::to_vec(&corpus.planted).expect("cells serialize");
    let path = a.out_dir.join("planted.json");
    std::fs::write(&path, planted).map_err(|e| Error::io(&path, e))?;
    println!(
        "wrote {} hq, {} lq, {} test matrices ({}x{}, {} planted cells) to {}",
        spec.hq,
        spec.lq,
        spec.test,
        spec.layers,
        spec.tokens,
        spec.planted,
        a.out_dir.display()
    );
    Ok(())
}

fn synth_corpus(a: SynthCorpusArgs) -> Result<()> {
    let spec = CorpusSpec {
        records: a.records,
        ..CorpusSpec::default()
    };
    let c = synthetic_corpus(&spec, a.seed)?;
    create_dir(&a.out_dir)?;
    write_ndjson(a.out_dir.join("records.ndjson"), &c.records)?;
    write_ndjson(a.out_dir.join("scores.ndjson"), &c.scores)?;
    write_ndjson(a.out_dir.join("descriptors.ndjson"), &c.descriptors)?;
    write_ndjson(a.out_dir.join("activations.ndjson"), &c.activations)?;
    write_ndjson(a.out_dir.join("hq.ndjson"), &c.hq)?;
    write_ndjson(a.out_dir.join("lq.ndjson"), &c.lq)?;
    println!(
        "wrote {} records, {} descriptor sets, {} activation matrices to {}",
        c.records.len(),
        c.descriptors.len(),
        c.activations.len(),
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum CaptionLine<'a> {
    Ok(&'a crate::caption::CaptionResult),
    Failed { failure: &'a crate::caption::CaptionFailure },
}

fn caption(a: CaptionArgs) -> Result<()> {
    let requests: Vec<CaptionRequest> = read_ndjson(&a.requests)?;
    let policy = RetryPolicy {
        max_attempts: a.max_attempts,
        base_delay: Duration::from_millis(a.base_delay_ms),
        max_in_flight: a.max_in_flight,
        ..RetryPolicy::default()
    };
    let backend: Box<dyn CaptionBackend> = match (&a.endpoint, &a.stub) {
        (Some(url), _) => Box::new(HttpBackend::new(url.clone())?),
        (None, Some(stub)) => Box::new(FileBackend::load(stub)?),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let mut cache = a.cache.as_ref().map(CaptionCache::open).transpose()?;
    let cached = cache.as_ref().map(|c| c.entries().clone()).unwrap_or_default();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Transport(e.to_string()))?;
    let outcomes = runtime.block_on(caption_batch_with(&requests, backend.as_ref(), &policy, &cached));
    if let Some(cache) = cache.as_mut() {
        cache.record(&outcomes)?;
    }
    let lines: Vec<CaptionLine> = outcomes
        .iter()
        .map(|o| match o {
            Ok(r) => CaptionLine::Ok(r),
            Err(f) => CaptionLine::Failed { failure: f },
        })
        .collect();
    write_ndjson(&a.out, &lines)?;
    let failed = outcomes.iter().filter(|o| o.is_err()).count();
    println!("captioned {} of {} requests", outcomes.len() - failed, outcomes.len());
    Ok(())
}
