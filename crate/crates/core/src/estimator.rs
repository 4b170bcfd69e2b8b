//! Cross-attention quality estimator.
//!
//! Every image is summarised by an `L x M` matrix of activation norms, one per
//! (cross-attention layer, prompt token) cell. A calibration set of higher- and
//! lower-quality images ranks the cells by how often the higher-quality image
//! has the larger norm over all HQ x LQ pairs; the K best cells form the
//! feature mask, and an image's score is the sum of its norms over that mask.
//!
//! Layer and token indices are 1-based everywhere in the public surface.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Keyword prompt fed to the diffusion model during activation extraction.
pub const DEFAULT_PROMPT: &str = "complex. detailed. simple. bokeh effect. abstract. \
photorealistic. artistic. stylized. aesthetic. cinematic. instagram filters. color correction. \
midjourney. ugly. distorted. blurry. rendering. AI-generated. synthetic. high quality. \
low quality. pixelated. low illumination.";

pub const DEFAULT_TIMESTEP: f64 = 0.25;
pub const DEFAULT_K: usize = 32;
pub const DEFAULT_SCORE_KEY: &str = "diffusion_estimator";

/// Hex SHA-256 of the extraction prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(rename = "K", alias = "k", default = "default_k")]
    pub k: usize,
    #[serde(default = "default_timestep")]
    pub timestep: f64,
    #[serde(default = "default_prompt")]
    pub prompt: String,
}

fn default_k() -> usize {
    DEFAULT_K
}
fn default_timestep() -> f64 {
    DEFAULT_TIMESTEP
}
fn default_prompt() -> String {
    DEFAULT_PROMPT.to_string()
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            k: DEFAULT_K,
            timestep: DEFAULT_TIMESTEP,
            prompt: default_prompt(),
        }
    }
}

impl EstimatorConfig {
    pub fn extraction(&self) -> Extraction {
        Extraction {
            timestep: self.timestep,
            prompt_hash: prompt_hash(&self.prompt),
        }
    }
}

/// Identifies the extraction run an activation came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub timestep: f64,
    pub prompt_hash: String,
}

impl Default for Extraction {
    fn default() -> Self {
        EstimatorConfig::default().extraction()
    }
}

/// A (layer, token) cell, both 1-based. Serialized as `[layer, token]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Cell {
    pub layer: usize,
    pub token: usize,
}

impl Cell {
    pub fn new(layer: usize, token: usize) -> Self {
        Cell { layer, token }
    }
}

impl From<(usize, usize)> for Cell {
    fn from((layer, token): (usize, usize)) -> Self {
        Cell { layer, token }
    }
}

impl From<Cell> for (usize, usize) {
    fn from(c: Cell) -> Self {
        (c.layer, c.token)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.layer, self.token)
    }
}

/// One raw cross-attention map, `values` row-major `h x w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionMap {
    pub image_id: String,
    pub layer: usize,
    pub token: usize,
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub values: Vec<f32>,
}

impl AttentionMap {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Invariant(format!(
                "attention map {} {}: empty spatial extent",
                self.image_id,
                Cell::new(self.layer, self.token)
            )));
        }
        if self.values.len() != self.height * self.width {
            return Err(Error::ShapeMismatch(format!(
                "attention map {} {}: {} values for {}x{}",
                self.image_id,
                Cell::new(self.layer, self.token),
                self.values.len(),
                self.height,
                self.width
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "attention map {}: non-finite value",
                self.image_id
            )));
        }
        Ok(())
    }

    /// Frobenius norm of the spatial map.
    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-image activation norms over all (layer, token) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationNormMatrix {
    pub image_id: String,
    layers: usize,
    tokens: usize,
    norms: Vec<f64>,
    pub timestep: f64,
    pub prompt_hash: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormLine {
    image_id: String,
    #[serde(rename = "L")]
    layers: usize,
    #[serde(rename = "M")]
    tokens: usize,
    timestep: f64,
    prompt_hash: String,
    norms: Vec<Vec<f64>>,
}

impl ActivationNormMatrix {
    pub fn new(image_id: impl Into<String>, rows: Vec<Vec<f64>>, extraction: &Extraction) -> Result<Self> {
        let image_id = image_id.into();
        let layers = rows.len();
        let tokens = rows.first().map_or(0, Vec::len);
        if layers == 0 || tokens == 0 {
            return Err(Error::Invariant(format!(
                "activation matrix {image_id}: L and M must be positive"
            )));
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != tokens) {
            return Err(Error::ShapeMismatch(format!(
                "activation matrix {image_id}: row of length {} where M = {tokens}",
                bad.len()
            )));
        }
        let norms: Vec<f64> = rows.into_iter().flatten().collect();
        Self::from_flat(image_id, layers, tokens, norms, extraction)
    }

    pub fn from_flat(
        image_id: impl Into<String>,
        layers: usize,
        tokens: usize,
        norms: Vec<f64>,
        extraction: &Extraction,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if layers == 0 || tokens == 0 || norms.len() != layers * tokens {
            return Err(Error::ShapeMismatch(format!(
                "activation matrix {image_id}: {} norms for {layers}x{tokens}",
                norms.len()
            )));
        }
        if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(format!(
                "activation matrix {image_id}: norms must be finite and non-negative"
            )));
        }
        if !(0.0..=1.0).contains(&extraction.timestep) {
            return Err(Error::Invariant(format!(
                "activation matrix {image_id}: timestep {} outside [0, 1]",
                extraction.timestep
            )));
        }
        Ok(ActivationNormMatrix {
            image_id,
            layers,
            tokens,
            norms,
            timestep: extraction.timestep,
            prompt_hash: extraction.prompt_hash.clone(),
        })
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.norms[self.offset(cell)]
    }

    pub fn set(&mut self, cell: Cell, value: f64) {
        assert!(value.is_finite() && value >= 0.0, "norms are finite and non-negative");
        let i = self.offset(cell);
        self.norms[i] = value;
    }

    /// Row-major flat view.
    pub fn as_slice(&self) -> &[f64] {
        &self.norms
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.norms.chunks(self.tokens).map(<[f64]>::to_vec).collect()
    }

    pub fn extraction(&self) -> Extraction {
        Extraction {
            timestep: self.timestep,
            prompt_hash: self.prompt_hash.clone(),
        }
    }

    /// Multiplies every norm by `factor` (must be positive and finite).
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor.is_finite() && factor > 0.0);
        let mut out = self.clone();
        out.norms.iter_mut().for_each(|v| *v *= factor);
        out
    }

    fn offset(&self, cell: Cell) -> usize {
        assert!(
            (1..=self.layers).contains(&cell.layer) && (1..=self.tokens).contains(&cell.token),
            "cell {cell} outside {}x{}",
            self.layers,
            self.tokens
        );
        (cell.layer - 1) * self.tokens + (cell.token - 1)
    }

    fn same_extraction(&self, other: &Extraction) -> bool {
        self.timestep == other.timestep && self.prompt_hash == other.prompt_hash
    }
}

impl Serialize for ActivationNormMatrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        NormLine {
            image_id: self.image_id.clone(),
            layers: self.layers,
            tokens: self.tokens,
            timestep: self.timestep,
            prompt_hash: self.prompt_hash.clone(),
            norms: self.rows(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ActivationNormMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = NormLine::deserialize(deserializer)?;
        if line.norms.len() != line.layers || line.norms.iter().any(|r| r.len() != line.tokens) {
            return Err(serde::de::Error::custom(format!(
                "activation matrix {}: norms do not have shape {}x{}",
                line.image_id, line.layers, line.tokens
            )));
        }
        let extraction = Extraction {
            timestep: line.timestep,
            prompt_hash: line.prompt_hash,
        };
        ActivationNormMatrix::new(line.image_id, line.norms, &extraction)
            .map_err(serde::de::Error::custom)
    }
}

/// Reduces one image's attention maps to its norm matrix. Requires exactly
/// one map per cell of `[1, layers] x [1, tokens]`.
pub fn compute_norms(
    maps: &[AttentionMap],
    layers: usize,
    tokens: usize,
    extraction: &Extraction,
) -> Result<ActivationNormMatrix> {
    let image_id = maps
        .first()
        .map(|m| m.image_id.clone())
        .ok_or_else(|| Error::MissingMap {
            image_id: String::new(),
            layer: 1,
            token: 1,
        })?;
    let mut norms: Vec<Option<f64>> = vec![None; layers * tokens];
    for map in maps {
        map.validate()?;
        if map.image_id != image_id {
            return Err(Error::Invariant(format!(
                "maps for {image_id} and {} mixed in one reduction",
                map.image_id
            )));
        }
        if !(1..=layers).contains(&map.layer) || !(1..=tokens).contains(&map.token) {
            return Err(Error::ShapeMismatch(format!(
                "map {} outside {layers}x{tokens}",
                Cell::new(map.layer, map.token)
            )));
        }
        let slot = &mut norms[(map.layer - 1) * tokens + map.token - 1];
        if slot.is_some() {
            return Err(Error::DuplicateMap {
                image_id,
                layer: map.layer,
                token: map.token,
            });
        }
        *slot = Some(map.norm());
    }
    let mut flat = Vec::with_capacity(norms.len());
    for (i, n) in norms.into_iter().enumerate() {
        flat.push(n.ok_or_else(|| Error::MissingMap {
            image_id: image_id.clone(),
            layer: i / tokens + 1,
            token: i % tokens + 1,
        })?);
    }
    ActivationNormMatrix::from_flat(image_id, layers, tokens, flat, extraction)
}

/// Reduces a stream of attention maps spanning many images, one matrix per
/// image in order of first appearance.
pub fn compute_norms_grouped(
    maps: &[AttentionMap],
    layers: usize,
    tokens: usize,
    extraction: &Extraction,
) -> Result<Vec<ActivationNormMatrix>> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<AttentionMap>> = HashMap::new();
    for m in maps {
        let entry = groups.entry(m.image_id.as_str()).or_insert_with(|| {
            order.push(m.image_id.as_str());
            Vec::new()
        });
        entry.push(m.clone());
    }
    order
        .into_iter()
        .map(|id| compute_norms(&groups[id], layers, tokens, extraction))
        .collect()
}

/// Higher- and lower-quality calibration groups.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub hq: Vec<ActivationNormMatrix>,
    pub lq: Vec<ActivationNormMatrix>,
}

impl CalibrationSet {
    pub fn new(hq: Vec<ActivationNormMatrix>, lq: Vec<ActivationNormMatrix>) -> Result<Self> {
        let cal = CalibrationSet { hq, lq };
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        let first = match (self.hq.first(), self.lq.first()) {
            (Some(f), Some(_)) => f,
            _ => {
                return Err(Error::EmptyInput(
                    "calibration needs at least one HQ and one LQ image".into(),
                ))
            }
        };
        let extraction = first.extraction();
        for m in self.hq.iter().chain(&self.lq) {
            if m.layers != first.layers || m.tokens != first.tokens {
                return Err(Error::ShapeMismatch(format!(
                    "{} is {}x{}, calibration is {}x{}",
                    m.image_id, m.layers, m.tokens, first.layers, first.tokens
                )));
            }
            if !m.same_extraction(&extraction) {
                return Err(Error::ShapeMismatch(format!(
                    "{} was extracted with a different timestep or prompt",
                    m.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.hq[0].layers
    }

    pub fn tokens(&self) -> usize {
        self.hq[0].tokens
    }
}

/// Per-cell separation counts and, once selected, the top-K cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationTable {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "M")]
    pub tokens: usize,
    pub pair_count: u64,
    pub s: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestep: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

impl SeparationTable {
    pub fn count(&self, cell: Cell) -> u64 {
        self.s[cell.layer - 1][cell.token - 1]
    }

    pub fn cells(&self) -> usize {
        self.layers * self.tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.s.len() != self.layers || self.s.iter().any(|r| r.len() != self.tokens) {
            return Err(Error::ShapeMismatch(format!(
                "separation counts do not have shape {}x{}",
                self.layers, self.tokens
            )));
        }
        if self.s.iter().flatten().any(|&c| c > self.pair_count) {
            return Err(Error::Invariant("separation count exceeds pair_count".into()));
        }
        if let Some(top) = &self.top_k {
            let mut seen = std::collections::HashSet::new();
            for c in top {
                if !(1..=self.layers).contains(&c.layer) || !(1..=self.tokens).contains(&c.token) {
                    return Err(Error::ShapeMismatch(format!("top-K cell {c} out of range")));
                }
                if !seen.insert(*c) {
                    return Err(Error::Invariant(format!("top-K cell {c} repeated")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let table: SeparationTable =
            serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec(self)
            .map_err(|e| Error::Invariant(format!("table not serializable: {e}")))?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    fn check_matrix(&self, x: &ActivationNormMatrix) -> Result<()> {
        if x.layers != self.layers || x.tokens != self.tokens {
            return Err(Error::ShapeMismatch(format!(
                "{} is {}x{}, table is {}x{}",
                x.image_id, x.layers, x.tokens, self.layers, self.tokens
            )));
        }
        if self.timestep.is_some_and(|t| t != x.timestep)
            || self.prompt_hash.as_ref().is_some_and(|h| *h != x.prompt_hash)
        {
            return Err(Error::ShapeMismatch(format!(
                "{} was extracted with a different timestep or prompt than the table",
                x.image_id
            )));
        }
        Ok(())
    }
}

/// Counts, per cell, the HQ x LQ pairs where the HQ norm is strictly larger.
pub fn fit_separation(cal: &CalibrationSet) -> Result<SeparationTable> {
    cal.validate()?;
    let (layers, tokens) = (cal.layers(), cal.tokens());
    let counts: Vec<u64> = (0..layers * tokens)
        .into_par_iter()
        .map(|cell| {
            let mut lq: Vec<f64> = cal.lq.iter().map(|m| m.norms[cell]).collect();
            lq.sort_unstable_by(f64::total_cmp);
            cal.hq
                .iter()
                .map(|m| {
                    let v = m.norms[cell];
                    lq.partition_point(|&x| x < v) as u64
                })
                .sum()
        })
        .collect();
    let extraction = cal.hq[0].extraction();
    Ok(SeparationTable {
        layers,
        tokens,
        pair_count: (cal.hq.len() as u64) * (cal.lq.len() as u64),
        s: counts.chunks(tokens).map(<[u64]>::to_vec).collect(),
        top_k: None,
        timestep: Some(extraction.timestep),
        prompt_hash: Some(extraction.prompt_hash),
    })
}

/// Picks the K cells with the highest counts, ties by (layer, token) ascending.
pub fn select_top_k(mut table: SeparationTable, k: usize) -> Result<SeparationTable> {
    table.validate()?;
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    if k > table.cells() {
        return Err(Error::KTooLarge {
            k,
            cells: table.cells(),
        });
    }
    let mut cells: Vec<(u64, Cell)> = table
        .s
        .iter()
        .enumerate()
        .flat_map(|(l, row)| {
            row.iter()
                .enumerate()
                .map(move |(m, &c)| (c, Cell::new(l + 1, m + 1)))
        })
        .collect();
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    table.top_k = Some(cells.into_iter().take(k).map(|(_, c)| c).collect());
    Ok(table)
}

/// Fits counts and selects the top-K cells in one step.
pub fn fit(cal: &CalibrationSet, k: usize) -> Result<SeparationTable> {
    select_top_k(fit_separation(cal)?, k)
}

/// Sum of the image's norms over the table's top-K cells, in top-K order.
pub fn score_image(x: &ActivationNormMatrix, table: &SeparationTable) -> Result<f64> {
    let top = table.top_k.as_ref().ok_or(Error::Unfitted)?;
    table.check_matrix(x)?;
    Ok(top.iter().map(|&c| x.get(c)).sum())
}

pub fn score_corpus(
    xs: &[ActivationNormMatrix],
    table: &SeparationTable,
) -> Result<Vec<(String, f64)>> {
    xs.par_iter()
        .map(|x| Ok((x.image_id.clone(), score_image(x, table)?)))
        .collect()
}

/// Area under the ROC curve from the Mann-Whitney rank sum, ties counted half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput("AUC needs both classes".into()));
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        rank_sum += mean_rank * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex() -> Extraction {
        Extraction::default()
    }

    fn single(id: &str, v: f64) -> ActivationNormMatrix {
        ActivationNormMatrix::new(id, vec![vec![v]], &ex()).unwrap()
    }

    fn map(l: usize, m: usize, h: usize, w: usize, values: Vec<f32>) -> AttentionMap {
        AttentionMap {
            image_id: "img".into(),
            layer: l,
            token: m,
            height: h,
            width: w,
            values,
        }
    }

    #[test]
    fn three_four_five() {
        let n = compute_norms(&[map(1, 1, 2, 2, vec![3.0, 4.0, 0.0, 0.0])], 1, 1, &ex()).unwrap();
        assert_eq!(n.get(Cell::new(1, 1)), 5.0);
        let z = compute_norms(&[map(1, 1, 1, 3, vec![0.0; 3])], 1, 1, &ex()).unwrap();
        assert_eq!(z.get(Cell::new(1, 1)), 0.0);
    }

    #[test]
    fn missing_and_duplicate_maps() {
        let one = map(1, 1, 1, 1, vec![1.0]);
        let err = compute_norms(std::slice::from_ref(&one), 1, 2, &ex()).unwrap_err();
        assert!(matches!(err, Error::MissingMap { layer: 1, token: 2, .. }));
        let err = compute_norms(&[one.clone(), one], 1, 1, &ex()).unwrap_err();
        assert!(matches!(err, Error::DuplicateMap { .. }));
    }

    #[test]
    fn hand_enumerated_separation() {
        let cal = CalibrationSet::new(
            vec![single("h1", 2.0), single("h2", 3.0)],
            vec![single("l1", 1.0), single("l2", 2.5)],
        )
        .unwrap();
        let t = fit_separation(&cal).unwrap();
        assert_eq!(t.s, vec![vec![3]]);
        assert_eq!(t.pair_count, 4);
    }

    #[test]
    fn identical_groups_separate_nothing() {
        let m = ActivationNormMatrix::new("x", vec![vec![1.0, 2.0], vec![3.0, 4.0]], &ex()).unwrap();
        let cal = CalibrationSet::new(vec![m.clone()], vec![m]).unwrap();
        let t = fit_separation(&cal).unwrap();
        assert!(t.s.iter().flatten().all(|&c| c == 0));
    }

    #[test]
    fn calibration_rejects_mixed_extraction() {
        let a = single("a", 1.0);
        let other = Extraction {
            timestep: 0.5,
            prompt_hash: a.prompt_hash.clone(),
        };
        let b = ActivationNormMatrix::new("b", vec![vec![1.0]], &other).unwrap();
        assert!(matches!(
            CalibrationSet::new(vec![a.clone()], vec![b]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(CalibrationSet::new(vec![a], vec![]).is_err());
    }

    fn table(s: Vec<Vec<u64>>) -> SeparationTable {
        SeparationTable {
            layers: s.len(),
            tokens: s[0].len(),
            pair_count: 10,
            s,
            top_k: None,
            timestep: None,
            prompt_hash: None,
        }
    }

    #[test]
    fn tie_broken_by_layer() {
        let t = select_top_k(table(vec![vec![5, 2], vec![5, 1]]), 2).unwrap();
        assert_eq!(t.top_k.unwrap(), vec![Cell::new(1, 1), Cell::new(2, 1)]);
    }

    #[test]
    fn k_equals_all_cells() {
        let t = select_top_k(table(vec![vec![1, 3], vec![2, 3]]), 4).unwrap();
        assert_eq!(
            t.top_k.unwrap(),
            vec![Cell::new(1, 2), Cell::new(2, 2), Cell::new(2, 1), Cell::new(1, 1)]
        );
    }

    #[test]
    fn k_too_large() {
        assert!(matches!(
            select_top_k(table(vec![vec![1, 2]]), 3),
            Err(Error::KTooLarge { k: 3, cells: 2 })
        ));
    }

    #[test]
    fn scoring() {
        let mut t = table(vec![vec![1, 0], vec![0, 0]]);
        let x = ActivationNormMatrix::new("x", vec![vec![4.2, 1.0], vec![7.0, 9.0]], &ex()).unwrap();
        assert!(matches!(score_image(&x, &t), Err(Error::Unfitted)));
        t = select_top_k(t, 1).unwrap();
        assert_eq!(score_image(&x, &t).unwrap(), 4.2);
        let zero = ActivationNormMatrix::new("z", vec![vec![0.0; 2]; 2], &ex()).unwrap();
        assert_eq!(score_image(&zero, &t).unwrap(), 0.0);
        let wrong = single("w", 1.0);
        assert!(matches!(score_image(&wrong, &t), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn table_extraction_guard() {
        let cal = CalibrationSet::new(vec![single("h", 2.0)], vec![single("l", 1.0)]).unwrap();
        let t = fit(&cal, 1).unwrap();
        let other = Extraction {
            timestep: 0.75,
            prompt_hash: prompt_hash(DEFAULT_PROMPT),
        };
        let x = ActivationNormMatrix::new("x", vec![vec![1.0]], &other).unwrap();
        assert!(matches!(score_image(&x, &t), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn empty_and_singleton_corpus() {
        let cal = CalibrationSet::new(vec![single("h", 2.0)], vec![single("l", 1.0)]).unwrap();
        let t = fit(&cal, 1).unwrap();
        assert!(score_corpus(&[], &t).unwrap().is_empty());
        let x = single("x", 0.5);
        assert_eq!(
            score_corpus(std::slice::from_ref(&x), &t).unwrap(),
            vec![("x".to_string(), score_image(&x, &t).unwrap())]
        );
    }

    #[test]
    fn norm_matrix_json_shape() {
        let m = ActivationNormMatrix::new("x", vec![vec![1.0, 2.0]], &ex()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["L"], 1);
        assert_eq!(v["M"], 2);
        assert_eq!(v["norms"], serde_json::json!([[1.0, 2.0]]));
        let back: ActivationNormMatrix = serde_json::from_value(v).unwrap();
        assert_eq!(back, m);
        let bad = serde_json::json!({"image_id":"x","L":1,"M":2,"timestep":0.25,"prompt_hash":"h","norms":[[-1.0,1.0]]});
        assert!(serde_json::from_value::<ActivationNormMatrix>(bad).is_err());
    }

    #[test]
    fn table_json_uses_pairs() {
        let t = select_top_k(table(vec![vec![5, 2]]), 1).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["top_k"], serde_json::json!([[1, 1]]));
        assert_eq!(v["s"], serde_json::json!([[5, 2]]));
    }

    #[test]
    fn auc_edges() {
        assert_eq!(roc_auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.0], &[1.0]).unwrap(), 0.0);
        assert_eq!(roc_auc(&[1.0], &[1.0]).unwrap(), 0.5);
    }

    #[test]
    fn prompt_hash_is_stable() {
        assert_eq!(prompt_hash(DEFAULT_PROMPT).len(), 64);
        assert_ne!(prompt_hash("a"), prompt_hash("b"));
    }
}
