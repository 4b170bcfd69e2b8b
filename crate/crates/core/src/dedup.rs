//! Near-duplicate removal from ingested local descriptors.
//!
//! Two images are linked when enough of their descriptors are mutual nearest
//! neighbours that also pass a Lowe-style ratio test in both directions.
//! Linked images are grouped by connected components and each component
//! keeps the member with the highest quality score.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageRecord, StageReport};

pub const DUPLICATE_FLAG: &str = "duplicate";

/// Local descriptors of one image, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    pub image_id: String,
    dim: usize,
    data: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct DescriptorLine {
    image_id: String,
    dim: usize,
    descriptors: Vec<Vec<f32>>,
}

impl DescriptorSet {
    pub fn new(image_id: impl Into<String>, dim: usize, descriptors: Vec<Vec<f32>>) -> Result<Self> {
        let image_id = image_id.into();
        if dim == 0 {
            return Err(Error::Invariant(format!(
                "descriptor set {image_id}: dimension must be positive"
            )));
        }
        let mut data = Vec::with_capacity(dim * descriptors.len());
        for d in &descriptors {
            if d.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: d.len(),
                });
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invariant(format!(
                    "descriptor set {image_id}: non-finite component"
                )));
            }
            data.extend_from_slice(d);
        }
        Ok(DescriptorSet {
            image_id,
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }
}

impl Serialize for DescriptorSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        DescriptorLine {
            image_id: self.image_id.clone(),
            dim: self.dim,
            descriptors: self.iter().map(<[f32]>::to_vec).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DescriptorSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let line = DescriptorLine::deserialize(deserializer)?;
        DescriptorSet::new(line.image_id, line.dim, line.descriptors).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DedupConfig {
    #[serde(default = "default_ratio")]
    pub ratio_threshold: f64,
    #[serde(default = "default_min_matches")]
    pub min_matches: usize,
    #[serde(default = "default_quality_key")]
    pub quality_key: String,
}

fn default_ratio() -> f64 {
    0.8
}
fn default_min_matches() -> usize {
    8
}
fn default_quality_key() -> String {
    "coarse_quality".into()
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            ratio_threshold: default_ratio(),
            min_matches: default_min_matches(),
            quality_key: default_quality_key(),
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        check_ratio(self.ratio_threshold)?;
        if self.min_matches == 0 {
            return Err(Error::Config("min_matches must be positive".into()));
        }
        Ok(())
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!(
            "ratio_threshold must lie in (0, 1], got {ratio}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub members: BTreeSet<String>,
    pub representative: String,
}

/// Partition of the input ids, clusters ordered by their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub clusters: Vec<Cluster>,
}

impl ClusterAssignment {
    pub fn representatives(&self) -> BTreeSet<&str> {
        self.clusters
            .iter()
            .map(|c| c.representative.as_str())
            .collect()
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Nearest neighbour of `q` among `set` (lowest index on ties) and whether
/// it passes the ratio test against the second-nearest distance.
fn nearest(q: &[f32], set: &DescriptorSet, ratio_sq: f64) -> Option<(usize, bool)> {
    let mut best = (usize::MAX, f64::INFINITY);
    let mut second = f64::INFINITY;
    for (j, d) in set.iter().enumerate() {
        let dist = sq_dist(q, d);
        if dist < best.1 {
            second = best.1;
            best = (j, dist);
        } else if dist < second {
            second = dist;
        }
    }
    if best.0 == usize::MAX {
        return None;
    }
    let passes = if second == 0.0 {
        // Only reachable with best == 0 as well: exact duplicates match.
        true
    } else {
        best.1 < ratio_sq * second
    };
    Some((best.0, passes))
}

/// Counts mutual nearest-neighbour descriptor pairs passing the ratio test
/// from both sides. Symmetric in `a` and `b`.
pub fn match_count(a: &DescriptorSet, b: &DescriptorSet, ratio: f64) -> Result<usize> {
    check_ratio(ratio)?;
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim,
            actual: b.dim,
        });
    }
    if a.is_empty() || b.is_empty() {
        return Ok(0);
    }
    let ratio_sq = ratio * ratio;
    let back: Vec<(usize, bool)> = b
        .iter()
        .map(|d| nearest(d, a, ratio_sq).expect("a is non-empty"))
        .collect();
    let mut count = 0;
    for (i, d) in a.iter().enumerate() {
        let (j, forward_ok) = nearest(d, b, ratio_sq).expect("b is non-empty");
        let (i_back, back_ok) = back[j];
        if forward_ok && back_ok && i_back == i {
            count += 1;
        }
    }
    Ok(count)
}

/// Disjoint-set forest with union by rank and path halving.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }

    /// Groups of indices; each group sorted, groups ordered by first index.
    pub fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..self.parent.len() {
            let root = self.find(i);
            by_root.entry(root).or_default().push(i);
        }
        let mut groups: Vec<Vec<usize>> = by_root.into_values().collect();
        groups.sort_unstable_by_key(|g| g[0]);
        groups
    }
}

/// Edge list of the similarity graph over `sets`, as index pairs `i < j`.
pub fn similarity_edges(sets: &[&DescriptorSet], cfg: &DedupConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    if let Some(first) = sets.iter().find(|s| !s.is_empty()) {
        if let Some(bad) = sets.iter().find(|s| s.dim != first.dim) {
            return Err(Error::DimensionMismatch {
                expected: first.dim,
                actual: bad.dim,
            });
        }
    }
    let n = sets.len();
    let per_row: Vec<Vec<(usize, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            if sets[i].len() < cfg.min_matches {
                return Ok(row);
            }
            for j in i + 1..n {
                if sets[j].len() < cfg.min_matches {
                    continue;
                }
                if match_count(sets[i], sets[j], cfg.ratio_threshold)? >= cfg.min_matches {
                    row.push((i, j));
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok(per_row.into_iter().flatten().collect())
}

fn quality(record: &ImageRecord, key: &str) -> Result<f64> {
    record.score(key).ok_or_else(|| Error::MissingScore {
        image_id: record.image_id.clone(),
        key: key.to_string(),
    })
}

/// Best member of a group: highest quality, smallest id on ties.
fn pick_representative<'a>(members: impl Iterator<Item = (&'a str, f64)>) -> &'a str {
    members
        .reduce(|best, cand| {
            let better = cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0);
            if better {
                cand
            } else {
                best
            }
        })
        .expect("clusters are non-empty")
        .0
}

/// Clusters the images described by `sets`. Every set must have a record.
pub fn cluster(
    sets: &[DescriptorSet],
    records: &[ImageRecord],
    cfg: &DedupConfig,
) -> Result<ClusterAssignment> {
    let by_id: HashMap<&str, &ImageRecord> =
        records.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut recs = Vec::with_capacity(sets.len());
    for s in sets {
        let r = by_id
            .get(s.image_id.as_str())
            .ok_or_else(|| Error::MissingRecord(s.image_id.clone()))?;
        recs.push(*r);
    }
    let set_refs: Vec<&DescriptorSet> = sets.iter().collect();
    cluster_indexed(&set_refs, &recs, cfg)
}

fn cluster_indexed(
    sets: &[&DescriptorSet],
    records: &[&ImageRecord],
    cfg: &DedupConfig,
) -> Result<ClusterAssignment> {
    debug_assert_eq!(sets.len(), records.len());
    let qualities: Vec<f64> = records
        .iter()
        .map(|r| quality(r, &cfg.quality_key))
        .collect::<Result<_>>()?;
    let edges = similarity_edges(sets, cfg)?;
    let mut uf = UnionFind::new(sets.len());
    for (i, j) in edges {
        uf.union(i, j);
    }
    let mut clusters: Vec<Cluster> = uf
        .groups()
        .into_iter()
        .map(|group| {
            let representative = pick_representative(
                group
                    .iter()
                    .map(|&i| (records[i].image_id.as_str(), qualities[i])),
            )
            .to_string();
            Cluster {
                members: group
                    .iter()
                    .map(|&i| records[i].image_id.clone())
                    .collect(),
                representative,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.members.first().cmp(&b.members.first()));
    Ok(ClusterAssignment { clusters })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub survivors: Vec<ImageRecord>,
    /// Removed records, each carrying the `duplicate` flag.
    pub dropped: Vec<ImageRecord>,
    pub assignment: ClusterAssignment,
    pub report: StageReport,
}

/// Keeps one representative per near-duplicate cluster, in input order.
/// Records without a descriptor set form singleton clusters.
pub fn deduplicate(
    records: Vec<ImageRecord>,
    sets: &[DescriptorSet],
    cfg: &DedupConfig,
) -> Result<DedupOutcome> {
    deduplicate_named(records, sets, cfg, "dedup")
}

pub fn deduplicate_named(
    records: Vec<ImageRecord>,
    sets: &[DescriptorSet],
    cfg: &DedupConfig,
    stage_name: &str,
) -> Result<DedupOutcome> {
    let by_id: HashMap<&str, &DescriptorSet> =
        sets.iter().map(|s| (s.image_id.as_str(), s)).collect();
    let known: std::collections::HashSet<&str> =
        records.iter().map(|r| r.image_id.as_str()).collect();
    if let Some(orphan) = sets.iter().find(|s| !known.contains(s.image_id.as_str())) {
        return Err(Error::MissingRecord(orphan.image_id.clone()));
    }
    let dim = sets.first().map_or(1, |s| s.dim);
    let empties: Vec<DescriptorSet> = records
        .iter()
        .map(|r| DescriptorSet {
            image_id: r.image_id.clone(),
            dim,
            data: Vec::new(),
        })
        .collect();
    let aligned: Vec<&DescriptorSet> = records
        .iter()
        .zip(&empties)
        .map(|(r, empty)| by_id.get(r.image_id.as_str()).copied().unwrap_or(empty))
        .collect();
    let rec_refs: Vec<&ImageRecord> = records.iter().collect();
    let assignment = cluster_indexed(&aligned, &rec_refs, cfg)?;

    let keep = assignment.representatives();
    let input = records.len();
    let mut survivors = Vec::with_capacity(keep.len());
    let mut dropped = Vec::new();
    for mut r in records {
        if keep.contains(r.image_id.as_str()) {
            survivors.push(r);
        } else {
            r.flags.insert(DUPLICATE_FLAG.to_string());
            dropped.push(r);
        }
    }
    let report = StageReport::new(stage_name, input, survivors.len())
        .param("ratio_threshold", cfg.ratio_threshold)
        .param("min_matches", cfg.min_matches)
        .param("quality_key", &cfg.quality_key)
        .param("clusters", assignment.clusters.len());
    Ok(DedupOutcome {
        survivors,
        dropped,
        assignment,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(id: &str, rows: &[&[f32]]) -> DescriptorSet {
        DescriptorSet::new(id, rows[0].len(), rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn grid(id: &str, n: usize, offset: f32) -> DescriptorSet {
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|i| vec![i as f32 * 10.0 + offset, (i * i) as f32 + offset])
            .collect();
        DescriptorSet::new(id, 2, rows).unwrap()
    }

    #[test]
    fn self_match_counts_every_descriptor() {
        let a = grid("a", 10, 0.0);
        assert_eq!(match_count(&a, &a, 0.8).unwrap(), 10);
    }

    #[test]
    fn empty_side_matches_nothing() {
        let a = grid("a", 5, 0.0);
        let empty = DescriptorSet::new("e", 2, vec![]).unwrap();
        assert_eq!(match_count(&a, &empty, 0.8).unwrap(), 0);
        assert_eq!(match_count(&empty, &a, 0.8).unwrap(), 0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = set("a", &[&[0.0, 1.0]]);
        let b = set("b", &[&[0.0, 1.0, 2.0]]);
        assert!(matches!(
            match_count(&a, &b, 0.8),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ratio_out_of_range() {
        let a = grid("a", 2, 0.0);
        assert!(match_count(&a, &a, 0.0).is_err());
        assert!(match_count(&a, &a, 1.5).is_err());
        assert!(match_count(&a, &a, 1.0).is_ok());
    }

    #[test]
    fn duplicate_descriptors_in_b_match_at_zero_distance() {
        let a = set("a", &[&[1.0, 1.0]]);
        let b = set("b", &[&[1.0, 1.0], &[1.0, 1.0]]);
        // a -> b[0] (tie on zero distance, lowest index); b[0] -> a[0].
        assert_eq!(match_count(&a, &b, 0.8).unwrap(), 1);
    }

    #[test]
    fn ambiguous_match_fails_ratio_test() {
        let a = set("a", &[&[0.0, 0.0]]);
        let b = set("b", &[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert_eq!(match_count(&a, &b, 1.0).unwrap(), 0);
    }

    fn rec(id: &str, q: f64) -> ImageRecord {
        ImageRecord::new(id, 2000, 2000).with_score("q", q)
    }

    fn cfg(min_matches: usize) -> DedupConfig {
        DedupConfig {
            ratio_threshold: 0.8,
            min_matches,
            quality_key: "q".into(),
        }
    }

    #[test]
    fn pair_and_isolate() {
        let a = grid("A", 6, 0.0);
        let b = grid("B", 6, 0.01);
        let c = grid("C", 6, 500.0);
        let records = vec![rec("A", 0.3), rec("B", 0.9), rec("C", 0.1)];
        let assignment = cluster(&[a, b, c], &records, &cfg(4)).unwrap();
        assert_eq!(assignment.clusters.len(), 2);
        let ab = &assignment.clusters[0];
        assert_eq!(ab.members.iter().collect::<Vec<_>>(), ["A", "B"]);
        assert_eq!(ab.representative, "B");
        assert_eq!(assignment.clusters[1].representative, "C");
    }

    #[test]
    fn equal_quality_prefers_smaller_id() {
        let records = vec![rec("z", 0.5), rec("m", 0.5)];
        let sets = [grid("z", 6, 0.0), grid("m", 6, 0.0)];
        let a = cluster(&sets, &records, &cfg(4)).unwrap();
        assert_eq!(a.clusters[0].representative, "m");
    }

    #[test]
    fn missing_record_and_score() {
        let sets = [grid("x", 3, 0.0)];
        assert!(matches!(
            cluster(&sets, &[], &cfg(1)),
            Err(Error::MissingRecord(_))
        ));
        let no_score = ImageRecord::new("x", 2000, 2000);
        assert!(matches!(
            cluster(&sets, &[no_score], &cfg(1)),
            Err(Error::MissingScore { .. })
        ));
    }

    #[test]
    fn exact_copies_collapse() {
        let base = grid("base", 6, 0.0);
        let mut records = Vec::new();
        let mut sets = Vec::new();
        for i in 0..4 {
            let id = format!("copy{i}");
            records.push(rec(&id, i as f64));
            sets.push(DescriptorSet::new(&id, 2, base.iter().map(<[f32]>::to_vec).collect()).unwrap());
        }
        for i in 0..5 {
            let id = format!("other{i}");
            records.push(rec(&id, 0.0));
            sets.push(grid(&id, 6, 1000.0 * (i + 1) as f32));
        }
        let out = deduplicate(records, &sets, &cfg(4)).unwrap();
        assert_eq!(out.survivors.len(), 9 - 4 + 1);
        assert!(out.survivors.iter().any(|r| r.image_id == "copy3"));
        assert_eq!(out.dropped.len(), 3);
        assert!(out.dropped.iter().all(|r| r.flags.contains(DUPLICATE_FLAG)));
        assert_eq!(out.report.output_count, 6);
    }

    #[test]
    fn records_without_descriptors_survive() {
        let records = vec![rec("a", 1.0), rec("b", 2.0)];
        let out = deduplicate(records.clone(), &[], &cfg(1)).unwrap();
        assert_eq!(out.survivors, records);
    }

    #[test]
    fn union_find_groups() {
        let mut uf = UnionFind::new(5);
        uf.union(3, 1);
        uf.union(4, 3);
        assert!(!uf.union(1, 4));
        assert_eq!(uf.groups(), vec![vec![0], vec![1, 3, 4], vec![2]]);
    }
}
