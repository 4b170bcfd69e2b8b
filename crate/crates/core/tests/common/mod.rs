//! Brute-force reference implementations used as test oracles. Each one is
//! written independently of the library code it checks.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use curate::dedup::{cluster, ClusterAssignment, DedupConfig, DescriptorSet};
use curate::estimator::{ActivationNormMatrix, CalibrationSet, Cell, Extraction};
use curate::eval::{aggregate, Annotation, Choice, Direction, SbSExperiment};
use curate::stage::{apply_stage, Comparator, StageConfig};
use curate::ImageRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

// ---------------------------------------------------------------- estimator

/// `s[l][m]` by looping over every HQ x LQ pair.
pub fn separation_oracle(hq: &[Vec<Vec<f64>>], lq: &[Vec<Vec<f64>>]) -> Vec<Vec<u64>> {
    let (layers, tokens) = (hq[0].len(), hq[0][0].len());
    let mut s = vec![vec![0u64; tokens]; layers];
    for l in 0..layers {
        for m in 0..tokens {
            for h in hq {
                for q in lq {
                    if h[l][m] > q[l][m] {
                        s[l][m] += 1;
                    }
                }
            }
        }
    }
    s
}

/// Top-k by repeated linear scans: each round takes the unpicked cell with the
/// largest count, breaking ties by smaller (layer, token).
pub fn top_k_oracle(s: &[Vec<u64>], k: usize) -> Vec<Cell> {
    let mut picked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::new();
    for _ in 0..k {
        let mut best: Option<(u64, usize, usize)> = None;
        for (l, row) in s.iter().enumerate() {
            for (m, &c) in row.iter().enumerate() {
                if picked.contains(&(l, m)) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bc, _, _)) => c > bc,
                };
                if better {
                    best = Some((c, l, m));
                }
            }
        }
        let (_, l, m) = best.expect("k within range");
        picked.insert((l, m));
        out.push(Cell::new(l + 1, m + 1));
    }
    out
}

pub fn score_oracle(x: &[Vec<f64>], cells: &[Cell]) -> f64 {
    let mut total = 0.0;
    for c in cells {
        total += x[c.layer - 1][c.token - 1];
    }
    total
}

pub fn random_matrix(rng: &mut ChaCha8Rng, layers: usize, tokens: usize, discrete: bool) -> Vec<Vec<f64>> {
    (0..layers)
        .map(|_| {
            (0..tokens)
                .map(|_| {
                    if discrete {
                        // Few distinct values so equal norms and tied counts are common.
                        f64::from(rng.random_range(0..4u8))
                    } else {
                        rng.random::<f64>() * 3.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn to_matrix(id: &str, rows: &[Vec<f64>]) -> ActivationNormMatrix {
    ActivationNormMatrix::new(id, rows.to_vec(), &Extraction::default()).unwrap()
}

pub fn calibration(hq: &[Vec<Vec<f64>>], lq: &[Vec<Vec<f64>>]) -> CalibrationSet {
    CalibrationSet::new(
        hq.iter().enumerate().map(|(i, r)| to_matrix(&format!("hq{i}"), r)).collect(),
        lq.iter().enumerate().map(|(i, r)| to_matrix(&format!("lq{i}"), r)).collect(),
    )
    .unwrap()
}

/// Mann-Whitney AUC by comparing every positive with every negative.
pub fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

// -------------------------------------------------------------------- dedup

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    let mut t = 0.0;
    for k in 0..a.len() {
        let d = a[k] as f64 - b[k] as f64;
        t += d * d;
    }
    t
}

/// Full distance matrix, then per-row and per-column sorting for the
/// nearest/second-nearest distances; argmins take the first index.
pub fn match_count_oracle(a: &[Vec<f32>], b: &[Vec<f32>], ratio: f64) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let d: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| dist2(x, y)).collect()).collect();
    let r2 = ratio * ratio;
    let passes = |mut v: Vec<f64>| {
        v.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let d1 = v[0];
        let d2 = v.get(1).copied().unwrap_or(f64::INFINITY);
        d2 == 0.0 || d1 < r2 * d2
    };
    let argmin = |v: &[f64]| {
        let mut best = 0;
        for (i, &x) in v.iter().enumerate() {
            if x < v[best] {
                best = i;
            }
        }
        best
    };
    let mut count = 0;
    for i in 0..a.len() {
        let row = d[i].clone();
        let j = argmin(&row);
        let col: Vec<f64> = d.iter().map(|r| r[j]).collect();
        if argmin(&col) == i && passes(row) && passes(col) {
            count += 1;
        }
    }
    count
}

/// Connected components via boolean transitive closure (Floyd-Warshall).
pub fn closure_components(n: usize, edges: &[(usize, usize)]) -> BTreeSet<BTreeSet<usize>> {
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    for &(a, b) in edges {
        reach[a][b] = true;
        reach[b][a] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if reach[i][k] && reach[k][j] {
                    reach[i][j] = true;
                }
            }
        }
    }
    (0..n)
        .map(|i| (0..n).filter(|&j| reach[i][j]).collect())
        .collect()
}


/// Random near-duplicate instance: some images copy an earlier image's
/// descriptors with small noise, others are fresh; qualities come from a small
/// set so ties are common.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize) -> (Vec<DescriptorSet>, Vec<ImageRecord>) {
    let dim = 3;
    let mut raw: Vec<Vec<Vec<f32>>> = Vec::new();
    for i in 0..n {
        let count = r.random_range(0..6);
        let descs = if i > 0 && r.random_bool(0.5) {
            let src = &raw[r.random_range(0..i)];
            src.iter()
                .map(|d| d.iter().map(|x| x + r.random_range(-0.02f32..0.02)).collect())
                .collect()
        } else {
            (0..count)
                .map(|_| (0..dim).map(|_| f32::from(r.random_range(0u8..5)) * 0.25).collect())
                .collect()
        };
        raw.push(descs);
    }
    let sets = raw
        .iter()
        .enumerate()
        .map(|(i, d)| DescriptorSet::new(format!("i{i:02}"), dim, d.clone()).unwrap())
        .collect();
    let records = (0..n)
        .map(|i| ImageRecord::new(format!("i{i:02}"), 2000, 2000).with_score("q", f64::from(r.random_range(0u8..3))))
        .collect();
    (sets, records)
}

pub fn rows(s: &DescriptorSet) -> Vec<Vec<f32>> {
    s.iter().map(<[f32]>::to_vec).collect()
}

pub fn dedup_cfg(min_matches: usize) -> DedupConfig {
    DedupConfig {
        ratio_threshold: 0.8,
        min_matches,
        quality_key: "q".into(),
    }
}

/// Assignment predicted from oracle edges, closure and the representative rule.
pub fn oracle_assignment(sets: &[DescriptorSet], records: &[ImageRecord], cfg: &DedupConfig) -> BTreeMap<BTreeSet<String>, String> {
    let n = sets.len();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let m = match_count_oracle(&rows(&sets[i]), &rows(&sets[j]), cfg.ratio_threshold);
            if m >= cfg.min_matches {
                edges.push((i, j));
            }
        }
    }
    closure_components(n, &edges)
        .into_iter()
        .map(|comp| {
            let members: BTreeSet<String> = comp.iter().map(|&i| sets[i].image_id.clone()).collect();
            let mut best: Option<(f64, &str)> = None;
            for &i in &comp {
                let q = records[i].scores["q"];
                let id = records[i].image_id.as_str();
                best = match best {
                    Some((bq, bid)) if bq > q || (bq == q && bid < id) => Some((bq, bid)),
                    _ => Some((q, id)),
                };
            }
            (members, best.unwrap().1.to_string())
        })
        .collect()
}

pub fn as_map(a: &ClusterAssignment) -> BTreeMap<BTreeSet<String>, String> {
    a.clusters.iter().map(|c| (c.members.clone(), c.representative.clone())).collect()
}

/// Cluster assignment on a seeded random instance equals the oracle's.
pub fn assignment_matches_oracle(seed: u64) -> bool {
    let mut r = rng(seed);
    let n = r.random_range(1..=12);
    let mm = r.random_range(1..4);
    let (sets, records) = random_instance(&mut r, n);
    let got = cluster(&sets, &records, &dedup_cfg(mm)).unwrap();
    as_map(&got) == oracle_assignment(&sets, &records, &dedup_cfg(mm))
}


// --------------------------------------------------------------------- eval

/// Two-sided p-value by enumerating all 2^n outcome sequences.
pub fn binomial_enumeration(k: u64, n: u64) -> f64 {
    assert!(n <= 22, "enumeration is exponential");
    let mut counts = vec![0u64; n as usize + 1];
    for bits in 0u64..(1u64 << n) {
        counts[bits.count_ones() as usize] += 1;
    }
    let observed = counts[k as usize];
    let tail: u64 = counts.iter().filter(|&&c| c <= observed).sum();
    tail as f64 / (1u64 << n) as f64
}

/// Outcome counts for every n up to `max_n` from a single walk over all
/// 2^max_n bit strings: a string whose highest set bit is below n is also an
/// n-bit string, so bucketing by bit length and summing prefixes gives
/// `counts[n][successes]`.
pub fn enumerate_sequences(max_n: u32) -> Vec<Vec<u64>> {
    let width = max_n as usize + 1;
    let mut by_len = vec![vec![0u64; width]; width];
    for bits in 0u64..(1u64 << max_n) {
        let len = (64 - bits.leading_zeros()) as usize;
        by_len[len][bits.count_ones() as usize] += 1;
    }
    let mut counts = vec![vec![0u64; width]; width];
    for n in 0..width {
        for len in 0..=n {
            for k in 0..width {
                counts[n][k] += by_len[len][k];
            }
        }
    }
    counts
}

/// Two-sided p-value from full outcome counts of length-n sequences.
pub fn p_from_counts(counts: &[u64], k: usize, n: u32) -> f64 {
    let observed = counts[k];
    let tail: u64 = counts.iter().filter(|&&c| c > 0 && c <= observed).sum();
    tail as f64 / (1u64 << n) as f64
}

/// Two-sided p-value from a Pascal triangle of exact integers.
pub fn binomial_pascal(k: u64, n: u64) -> f64 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let observed = row[k as usize];
    let tail: u128 = row.iter().filter(|&&c| c <= observed).sum();
    tail as f64 / 2f64.powi(n as i32)
}

// ------------------------------------------------------------------ metrics

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let m = b[0].len();
    (0..n)
        .map(|i| (0..m).map(|j| (0..b.len()).map(|k| a[i][k] * b[k][j]).sum()).collect())
        .collect()
}

fn sqrt_psd(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (vals, vecs) = jacobi_eigen(a.to_vec());
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| vecs[i][k] * vals[k].max(0.0).sqrt() * vecs[j][k]).sum())
                .collect()
        })
        .collect()
}

/// Mean and (n - 1) covariance from raw sums.
pub fn moments_oracle(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = xs.len() as f64;
    let d = xs[0].len();
    let mean: Vec<f64> = (0..d).map(|k| xs.iter().map(|x| x[k]).sum::<f64>() / n).collect();
    let cov = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| xs.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Fréchet distance with the cross term taken as tr sqrt(S_b^1/2 S_a S_b^1/2),
/// i.e. with the roles of the two covariances swapped.
pub fn frechet_oracle(xa: &[Vec<f64>], xb: &[Vec<f64>]) -> f64 {
    let (ma, ca) = moments_oracle(xa);
    let (mb, cb) = moments_oracle(xb);
    let sb = sqrt_psd(&cb);
    let inner = matmul(&matmul(&sb, &ca), &sb);
    let sym: Vec<Vec<f64>> = (0..inner.len())
        .map(|i| (0..inner.len()).map(|j| 0.5 * (inner[i][j] + inner[j][i])).collect())
        .collect();
    let (vals, _) = jacobi_eigen(sym);
    let cross: f64 = vals.iter().map(|v| v.max(0.0).sqrt()).sum();
    let mean_term: f64 = ma.iter().zip(&mb).map(|(a, b)| (a - b) * (a - b)).sum();
    let tr = |c: &[Vec<f64>]| (0..c.len()).map(|i| c[i][i]).sum::<f64>();
    mean_term + tr(&ca) + tr(&cb) - 2.0 * cross
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian-ish columns.
pub fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(c) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    (0..d).map(|i| (0..d).map(|j| cols[j][i]).collect()).collect()
}

pub fn transform(q: &[Vec<f64>], xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|x| q.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

pub fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize, shift: f64) -> Vec<Vec<f64>> {
    // Correlated components: each vector mixes a few shared latent draws.
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            (0..d)
                .map(|k| z[k] + 0.5 * z[(k + 1) % d] + shift * (k as f64 + 1.0))
                .collect()
        })
        .collect()
}

// -------------------------------------------------------------------- stage

/// Random corpus with scores on a coarse grid, so threshold ties happen.
pub fn random_corpus(r: &mut ChaCha8Rng, n: usize) -> Vec<ImageRecord> {
    (0..n)
        .map(|i| {
            let w = [512u32, 1024, 1025, 2048][r.random_range(0..4)];
            let h = [512u32, 1024, 1025, 2048][r.random_range(0..4)];
            ImageRecord::new(format!("r{i:04}"), w, h)
                .with_score("a", f64::from(r.random_range(0u8..=20)) / 20.0)
                .with_score("b", f64::from(r.random_range(0u8..=20)) / 20.0)
        })
        .collect()
}

pub fn ids(records: &[ImageRecord]) -> BTreeSet<String> {
    records.iter().map(|r| r.image_id.clone()).collect()
}

/// Raising a lower-bound threshold (or lowering an upper bound) never adds survivors.
pub fn monotone_on_random_corpus(seed: u64) -> bool {
    let mut r = rng(seed);
    let n = r.random_range(0..80);
    let records = random_corpus(&mut r, n);
    let (t1, t2) = {
        let a = f64::from(r.random_range(0u8..=20)) / 20.0;
        let b = f64::from(r.random_range(0u8..=20)) / 20.0;
        (a.min(b), a.max(b))
    };
    let bounds = [Comparator::Gt, Comparator::Ge, Comparator::Lt, Comparator::Le];
    bounds.iter().all(|&cmp| {
        let run = |t| ids(&apply_stage(records.clone(), &StageConfig::new("s", "a", cmp, t)).unwrap().0);
        let (loose, tight) = if cmp.is_lower_bound() { (run(t1), run(t2)) } else { (run(t2), run(t1)) };
        tight.is_subset(&loose)
    })
}

// ------------------------------------------------------------- experiments

/// Majority rule written out directly: a choice with at least two votes wins,
/// otherwise the item is a tie.
pub fn rule(votes: [Choice; 3]) -> Choice {
    for c in [Choice::A, Choice::B, Choice::Tie] {
        if votes.iter().filter(|&&v| v == c).count() >= 2 {
            return c;
        }
    }
    Choice::Tie
}

/// Swapping the model labels swaps win counts and direction and leaves p unchanged.
pub fn label_swap_holds(seed: u64) -> bool {
    let mut r = rng(seed);
    let prompts = r.random_range(1..25);
    let bias = r.random::<f64>();
    let (exp, anns) = random_experiment(&mut r, prompts, bias);
    let swapped: Vec<Annotation> = anns
        .iter()
        .map(|a| Annotation {
            choice: a.choice.swapped(),
            ..a.clone()
        })
        .collect();
    let x = aggregate(&exp, &anns).unwrap();
    let y = aggregate(&exp.swapped(), &swapped).unwrap();
    x.iter().zip(&y).all(|(a, b)| {
        let flipped = match a.direction {
            Direction::ABetter => Direction::BBetter,
            Direction::BBetter => Direction::ABetter,
            Direction::None => Direction::None,
        };
        a.wins_a == b.wins_b
            && a.wins_b == b.wins_a
            && a.ties == b.ties
            && a.p_value == b.p_value
            && a.significant == b.significant
            && b.direction == flipped
            && (a.win_rate_a + b.win_rate_a - 1.0).abs() < 1e-12
    })
}

/// A fully annotated random experiment: three distinct annotators per
/// (prompt, criterion), choices skewed by `bias` toward model A.
pub fn random_experiment(
    r: &mut ChaCha8Rng,
    prompts: usize,
    bias: f64,
) -> (SbSExperiment, Vec<Annotation>) {
    use curate::eval::Criterion;
    let exp = SbSExperiment {
        experiment_id: "exp".into(),
        model_a: "tuned".into(),
        model_b: "base".into(),
        prompts: (0..prompts).map(|i| format!("prompt {i}")).collect(),
    };
    let mut annotations = Vec::new();
    for p in 0..prompts {
        for criterion in Criterion::ALL {
            for annotator in ["ann-1", "ann-2", "ann-3"] {
                let u: f64 = r.random();
                let choice = if u < 0.2 {
                    Choice::Tie
                } else if u < 0.2 + 0.8 * bias {
                    Choice::A
                } else {
                    Choice::B
                };
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
    (exp, annotations)
}
