//! Automated metric harness: Fréchet distance between Gaussian fits of
//! ingested feature sets, and mean aggregation of ingested per-image scores.

use std::collections::BTreeMap;
use std::fmt;
use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::parse_ndjson;

/// Symmetry tolerance for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Relative jitter below which negative eigenvalues are clamped to zero.
pub const PSD_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub label: String,
    dim: usize,
    rows: Vec<f64>,
}

impl FeatureSet {
    pub fn new(label: impl Into<String>, vectors: &[Vec<f64>]) -> Result<Self> {
        let label = label.into();
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::DegenerateInput(format!(
                "feature set {label} has no dimensions"
            )));
        }
        let mut rows = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!(
                    "feature set {label}: non-finite component"
                )));
            }
            rows.extend_from_slice(v);
        }
        Ok(FeatureSet { label, dim, rows })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.rows.chunks_exact(self.dim)
    }

    /// Reads the NDJSON feature format: a `{"label": ...}` header line then
    /// one `{"image_id", "dim", "vector"}` object per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn from_reader(reader: impl BufRead, context: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Line {
            Header { label: String },
            Vector {
                #[allow(dead_code)]
                image_id: String,
                dim: usize,
                vector: Vec<f32>,
            },
        }
        let lines: Vec<Line> = parse_ndjson(reader, context)?;
        let mut iter = lines.into_iter();
        let label = match iter.next() {
            Some(Line::Header { label }) => label,
            _ => return Err(Error::parse(context, "first line must be a {\"label\": ...} header")),
        };
        let mut vectors = Vec::new();
        for line in iter {
            match line {
                Line::Vector { dim, vector, .. } => {
                    if vector.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            actual: vector.len(),
                        });
                    }
                    vectors.push(vector.into_iter().map(f64::from).collect());
                }
                Line::Header { .. } => return Err(Error::parse(context, "repeated header line")),
            }
        }
        Self::new(label, &vectors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: cov.nrows(),
            });
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and unbiased (n - 1) sample covariance, two-pass.
pub fn fit_gaussian(f: &FeatureSet) -> Result<GaussianStats> {
    let n = f.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "feature set {} has {n} vectors; covariance needs at least 2",
            f.label
        )));
    }
    let d = f.dim;
    let mut mean = DVector::zeros(d);
    for v in f.vectors() {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for v in f.vectors() {
        let c = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    // Exact symmetry regardless of rounding in the rank-1 updates.
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok(GaussianStats { mean, cov })
}

fn check_psd(name: &str, cov: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let asym = (cov - cov.transpose()).abs().max();
    let scale = cov.abs().max().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NonPsd(format!("{name} is not symmetric (max asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let tol = PSD_JITTER * cov.trace().abs().max(1.0);
    if let Some(&worst) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(Error::NonPsd(format!("{name} has eigenvalue {worst:e}")));
    }
    Ok(eig)
}

fn psd_sqrt(eig: &SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2})`, with the trace of the
/// cross term taken from the eigenvalues of `S_a^{1/2} S_b S_a^{1/2}`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let eig_a = check_psd("first covariance", &a.cov)?;
    check_psd("second covariance", &b.cov)?;
    let sqrt_a = psd_sqrt(&eig_a);
    let inner = &sqrt_a * &b.cov * &sqrt_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum::<f64>();
    let diff = &a.mean - &b.mean;
    let fd = diff.norm_squared() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    Ok(fd.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Clip,
    ImageReward,
    HpsV2,
}

impl MetricName {
    pub fn title(self) -> &'static str {
        match self {
            MetricName::Clip => "CLIP",
            MetricName::ImageReward => "IR",
            MetricName::HpsV2 => "HPS-v2",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarScoreSet {
    pub metric: MetricName,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub image_id: String,
    pub metric: MetricName,
    pub value: f64,
}

/// Groups score lines by metric, rejecting duplicate (metric, image) pairs.
pub fn group_scores(lines: Vec<ScoreLine>) -> Result<Vec<ScalarScoreSet>> {
    let mut by: BTreeMap<MetricName, BTreeMap<String, f64>> = BTreeMap::new();
    for l in lines {
        if !l.value.is_finite() {
            return Err(Error::Invariant(format!("{} score for {} is not finite", l.metric, l.image_id)));
        }
        if by.entry(l.metric).or_default().insert(l.image_id.clone(), l.value).is_some() {
            return Err(Error::Invariant(format!("duplicate {} score for {}", l.metric, l.image_id)));
        }
    }
    Ok(by
        .into_iter()
        .map(|(metric, scores)| ScalarScoreSet { metric, scores })
        .collect())
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<Vec<ScalarScoreSet>> {
    group_scores(crate::model::read_ndjson(path)?)
}

/// Mean over images, summed in image_id order.
pub fn aggregate_scores(s: &ScalarScoreSet) -> Result<(f64, usize)> {
    if s.scores.is_empty() {
        return Err(Error::EmptyInput(format!("no {} scores", s.metric)));
    }
    let sum: f64 = s.scores.values().sum();
    Ok((sum / s.scores.len() as f64, s.scores.len()))
}

/// One row of the automated-metric report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hps_v2: Option<f64>,
}

impl MetricRow {
    pub fn set(&mut self, metric: MetricName, value: f64) {
        match metric {
            MetricName::Clip => self.clip = Some(value),
            MetricName::ImageReward => self.image_reward = Some(value),
            MetricName::HpsV2 => self.hps_v2 = Some(value),
        }
    }
}

/// Plain-text table: FD with one decimal, CLIP and HPS-v2 with three, IR with two.
pub fn format_metric_table(rows: &[MetricRow]) -> String {
    let width = rows.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let cell = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |x| format!("{x:.prec$}"));
    let mut out = format!(
        "{:<width$}  {:>9}  {:>6}  {:>5}  {:>6}\n",
        "model", "FD-DINOv2", "CLIP", "IR", "HPS-v2"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>6}  {:>5}  {:>6}\n",
            r.model,
            cell(r.fd, 1),
            cell(r.clip, 3),
            cell(r.image_reward, 2),
            cell(r.hps_v2, 3),
        ));
    }
    out
}
