//! Seeded synthetic data: planted-signal activation corpora for estimator
//! recovery checks, and a full record corpus for end-to-end pipeline runs.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dedup::DescriptorSet;
use crate::error::{Error, Result};
use crate::estimator::{ActivationNormMatrix, CalibrationSet, Cell, Extraction};
use crate::model::ImageRecord;
use crate::provider::ScoreLine;
use crate::stage::MIN_AREA_EXCLUSIVE;

/// Parameters of a planted-signal activation corpus.
///
/// HQ images draw norms from `Normal(hq_mean, sigma)` at the planted cells and
/// `Normal(base_mean, sigma)` elsewhere; LQ images use `base_mean` everywhere.
/// Negative draws are clamped to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub layers: usize,
    pub tokens: usize,
    pub planted: usize,
    pub hq: usize,
    pub lq: usize,
    pub test: usize,
    pub hq_mean: f64,
    pub base_mean: f64,
    pub sigma: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            layers: 16,
            tokens: 24,
            planted: 16,
            hq: 500,
            lq: 500,
            test: 200,
            hq_mean: 2.0,
            base_mean: 1.0,
            sigma: 0.5,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        let cells = self.layers * self.tokens;
        if cells == 0 {
            return Err(Error::Config("planted spec needs L and M of at least 1".into()));
        }
        if self.planted == 0 || self.planted > cells {
            return Err(Error::Config(format!(
                "planted cell count {} must lie in 1..={cells}",
                self.planted
            )));
        }
        if self.hq == 0 || self.lq == 0 {
            return Err(Error::Config("calibration groups must be non-empty".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite())
            || !self.hq_mean.is_finite()
            || !self.base_mean.is_finite()
        {
            return Err(Error::Config("planted means must be finite and sigma positive".into()));
        }
        Ok(())
    }
}

/// Parses `key=value` pairs separated by commas, e.g. `L=16,M=24,K=16,hq=500`.
/// Keys: `L`, `M`, `K`, `hq`, `lq`, `test`, `mu_hq`, `mu`, `sigma`. Missing keys
/// keep their defaults; an empty string is the default spec.
impl FromStr for PlantedSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = PlantedSpec::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("planted spec entry {part:?} is not key=value")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("planted spec {key}: {e}"));
            let int = || value.trim().parse::<usize>().map_err(|e| bad(&e));
            let real = || value.trim().parse::<f64>().map_err(|e| bad(&e));
            match key.trim() {
                "L" => spec.layers = int()?,
                "M" => spec.tokens = int()?,
                "K" => spec.planted = int()?,
                "hq" => spec.hq = int()?,
                "lq" => spec.lq = int()?,
                "test" => spec.test = int()?,
                "mu_hq" => spec.hq_mean = real()?,
                "mu" => spec.base_mean = real()?,
                "sigma" => spec.sigma = real()?,
                other => return Err(Error::Config(format!("unknown planted spec key {other:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub spec: PlantedSpec,
    /// Ground-truth discriminative cells, sorted.
    pub planted: Vec<Cell>,
    pub calibration: CalibrationSet,
    /// Held-out images; the flag is true for HQ-like draws.
    pub test: Vec<(ActivationNormMatrix, bool)>,
}

impl PlantedCorpus {
    /// Fraction of planted cells present in `cells`.
    pub fn recovery(&self, cells: &[Cell]) -> f64 {
        let hits = cells.iter().filter(|c| self.planted.binary_search(c).is_ok()).count();
        hits as f64 / self.planted.len() as f64
    }
}

struct NormSampler {
    planted: Vec<bool>,
    hq: Normal<f64>,
    base: Normal<f64>,
}

impl NormSampler {
    fn draw(&self, rng: &mut ChaCha8Rng, high_quality: bool) -> Vec<f64> {
        self.planted
            .iter()
            .map(|&p| {
                let d = if high_quality && p { &self.hq } else { &self.base };
                d.sample(rng).max(0.0)
            })
            .collect()
    }
}

/// Generates a planted-signal corpus. Test images alternate HQ-like and LQ-like.
pub fn planted_corpus(spec: &PlantedSpec, seed: u64) -> Result<PlantedCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = spec.layers * spec.tokens;
    let mut planted_idx = index::sample(&mut rng, cells, spec.planted).into_vec();
    planted_idx.sort_unstable();
    let mut mask = vec![false; cells];
    for &i in &planted_idx {
        mask[i] = true;
    }
    let sampler = NormSampler {
        planted: mask,
        hq: Normal::new(spec.hq_mean, spec.sigma).map_err(|e| Error::Config(e.to_string()))?,
        base: Normal::new(spec.base_mean, spec.sigma).map_err(|e| Error::Config(e.to_string()))?,
    };
    let extraction = Extraction::default();
    let mut make = |prefix: &str, i: usize, hq: bool| {
        let flat = sampler.draw(&mut rng, hq);
        ActivationNormMatrix::from_flat(format!("{prefix}-{i:05}"), spec.layers, spec.tokens, flat, &extraction)
    };
    let hq = (0..spec.hq).map(|i| make("hq", i, true)).collect::<Result<Vec<_>>>()?;
    let lq = (0..spec.lq).map(|i| make("lq", i, false)).collect::<Result<Vec<_>>>()?;
    let test = (0..spec.test)
        .map(|i| {
            let label = i % 2 == 0;
            make("test", i, label).map(|m| (m, label))
        })
        .collect::<Result<Vec<_>>>()?;
    let planted = planted_idx
        .into_iter()
        .map(|i| Cell::new(i / spec.tokens + 1, i % spec.tokens + 1))
        .collect();
    Ok(PlantedCorpus {
        spec: spec.clone(),
        planted,
        calibration: CalibrationSet::new(hq, lq)?,
        test,
    })
}

/// Parameters of the synthetic end-to-end corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub records: usize,
    pub layers: usize,
    pub tokens: usize,
    pub planted: usize,
    pub calibration: usize,
    pub descriptors_per_image: usize,
    pub descriptor_dim: usize,
    pub duplicate_groups: usize,
    pub nsfw_threshold: f64,
    pub topiq_threshold: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            records: 10_000,
            layers: 6,
            tokens: 8,
            planted: 6,
            calibration: 100,
            descriptors_per_image: 6,
            descriptor_dim: 12,
            duplicate_groups: 120,
            nsfw_threshold: 0.5,
            topiq_threshold: 0.71,
        }
    }
}

/// Everything the end-to-end pipeline consumes.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    /// Records carrying only the dedup quality score inline.
    pub records: Vec<ImageRecord>,
    /// Classifier scores supplied through a score provider.
    pub scores: Vec<ScoreLine>,
    pub descriptors: Vec<DescriptorSet>,
    pub activations: Vec<ActivationNormMatrix>,
    pub hq: Vec<ActivationNormMatrix>,
    pub lq: Vec<ActivationNormMatrix>,
}

const SIZES: &[(u32, u32)] = &[
    (512, 512),
    (800, 600),
    (1024, 768),
    (1024, 1024),
    (1024, 1025),
    (1280, 960),
    (1536, 1024),
    (1920, 1080),
    (2048, 2048),
    (3000, 2000),
];

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn round3_f32(x: f64) -> f32 {
    ((x * 1e3).round() / 1e3) as f32
}

/// Generates the end-to-end corpus. Descriptors and activations are emitted
/// only for records that pass the resolution and classifier thresholds.
pub fn synthetic_corpus(spec: &CorpusSpec, seed: u64) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = spec.layers * spec.tokens;
    if spec.planted == 0 || spec.planted > cells {
        return Err(Error::Config("planted cell count out of range".into()));
    }
    let mut planted = vec![false; cells];
    for i in index::sample(&mut rng, cells, spec.planted) {
        planted[i] = true;
    }

    let mut records = Vec::with_capacity(spec.records);
    let mut scores = Vec::with_capacity(spec.records);
    let mut passing = Vec::new();
    for i in 0..spec.records {
        let id = format!("img-{i:05}");
        let (w, h) = SIZES[rng.random_range(0..SIZES.len())];
        // Exact boundary values show up now and then.
        let nsfw = if rng.random_bool(0.01) {
            spec.nsfw_threshold
        } else {
            round4(rng.random::<f64>().powi(3))
        };
        let topiq = if rng.random_bool(0.01) {
            spec.topiq_threshold
        } else {
            round4(rng.random_range(0.40..0.95))
        };
        let quality = round4(rng.random_range(3.0..8.0));
        records.push(ImageRecord::new(&id, w, h).with_score("coarse_quality", quality));
        scores.push(ScoreLine {
            image_id: id.clone(),
            scores: BTreeMap::from([("nsfw".to_string(), nsfw), ("topiq".to_string(), topiq)]),
        });
        let area = u64::from(w) * u64::from(h);
        if area > MIN_AREA_EXCLUSIVE && nsfw < spec.nsfw_threshold && topiq > spec.topiq_threshold {
            passing.push(i);
        }
    }

    let descriptors = synthetic_descriptors(&mut rng, spec, &records, &passing)?;

    let base = Normal::new(1.0, 0.5).map_err(|e| Error::Config(e.to_string()))?;
    let extraction = Extraction::default();
    let draw = |rng: &mut ChaCha8Rng, id: String, q: f64| {
        let flat: Vec<f64> = planted
            .iter()
            .map(|&p| round4((base.sample(rng) + if p { q } else { 0.0 }).max(0.0)))
            .collect();
        ActivationNormMatrix::from_flat(id, spec.layers, spec.tokens, flat, &extraction)
    };
    let activations = passing
        .iter()
        .map(|&i| {
            let q = rng.random::<f64>();
            draw(&mut rng, records[i].image_id.clone(), q)
        })
        .collect::<Result<Vec<_>>>()?;
    let hq = (0..spec.calibration)
        .map(|i| draw(&mut rng, format!("hq-{i:04}"), 1.0))
        .collect::<Result<Vec<_>>>()?;
    let lq = (0..spec.calibration)
        .map(|i| draw(&mut rng, format!("lq-{i:04}"), 0.0))
        .collect::<Result<Vec<_>>>()?;

    Ok(SyntheticCorpus {
        records,
        scores,
        descriptors,
        activations,
        hq,
        lq,
    })
}

fn synthetic_descriptors(
    rng: &mut ChaCha8Rng,
    spec: &CorpusSpec,
    records: &[ImageRecord],
    passing: &[usize],
) -> Result<Vec<DescriptorSet>> {
    let noise = Normal::new(0.0, 0.01).map_err(|e| Error::Config(e.to_string()))?;
    let fresh = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..spec.descriptors_per_image)
            .map(|_| (0..spec.descriptor_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    };
    let mut order = passing.to_vec();
    order.shuffle(rng);
    let mut base_of: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut cursor = 0;
    for _ in 0..spec.duplicate_groups {
        let size = rng.random_range(2..=4);
        if cursor + size > order.len() {
            break;
        }
        let base = fresh(rng);
        for &member in &order[cursor..cursor + size] {
            base_of.insert(member, base.clone());
        }
        cursor += size;
    }
    passing
        .iter()
        .map(|&i| {
            let raw = match base_of.get(&i) {
                Some(base) => base
                    .iter()
                    .map(|d| d.iter().map(|x| x + noise.sample(rng)).collect())
                    .collect(),
                None => fresh(rng),
            };
            let rows: Vec<Vec<f32>> = raw
                .iter()
                .map(|d: &Vec<f64>| d.iter().map(|&x| round3_f32(x)).collect())
                .collect();
            DescriptorSet::new(records[i].image_id.clone(), spec.descriptor_dim, rows)
        })
        .collect()
}
