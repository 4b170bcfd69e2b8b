mod common;

use std::collections::BTreeSet;

use common::*;
use curate::dedup::*;
use curate::ImageRecord;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn match_count_equals_brute_force(seed in any::<u64>(), na in 0usize..7, nb in 0usize..7) {
        let mut r = rng(seed);
        let gen = |r: &mut ChaCha8Rng, n| -> Vec<Vec<f32>> {
            (0..n).map(|_| (0..2).map(|_| f32::from(r.random_range(0u8..4))).collect()).collect()
        };
        let (a, b) = (gen(&mut r, na), gen(&mut r, nb));
        let sa = DescriptorSet::new("a", 2, a.clone()).unwrap();
        let sb = DescriptorSet::new("b", 2, b.clone()).unwrap();
        let got = match_count(&sa, &sb, 0.8).unwrap();
        prop_assert_eq!(got, match_count_oracle(&a, &b, 0.8));
        prop_assert_eq!(got, match_count(&sb, &sa, 0.8).unwrap());
    }

    #[test]
    fn union_find_equals_closure(n in 1usize..=12, raw in prop::collection::vec((0usize..12, 0usize..12), 0..20)) {
        let edges: Vec<(usize, usize)> = raw.into_iter().filter(|&(a, b)| a < n && b < n).collect();
        let mut uf = UnionFind::new(n);
        for &(a, b) in &edges {
            uf.union(a, b);
        }
        let got: BTreeSet<BTreeSet<usize>> = uf.groups().into_iter().map(|g| g.into_iter().collect()).collect();
        prop_assert_eq!(got, closure_components(n, &edges));
    }

    #[test]
    fn idempotent(seed in any::<u64>(), n in 1usize..=12, mm in 1usize..4) {
        let (sets, records) = random_instance(&mut rng(seed), n);
        let once = deduplicate(records, &sets, &dedup_cfg(mm)).unwrap();
        let twice = deduplicate(once.survivors.clone(), &sets.iter().filter(|s| once.survivors.iter().any(|r| r.image_id == s.image_id)).cloned().collect::<Vec<_>>(), &dedup_cfg(mm)).unwrap();
        prop_assert_eq!(once.survivors, twice.survivors);
        prop_assert!(twice.dropped.is_empty());
    }

    #[test]
    fn permutation_invariant(seed in any::<u64>(), n in 1usize..=12, mm in 1usize..4) {
        let mut r = rng(seed);
        let (sets, records) = random_instance(&mut r, n);
        let base = deduplicate(records.clone(), &sets, &dedup_cfg(mm)).unwrap();
        let (mut s2, mut r2) = (sets.clone(), records.clone());
        s2.shuffle(&mut r);
        r2.shuffle(&mut r);
        let shuffled = deduplicate(r2, &s2, &dedup_cfg(mm)).unwrap();
        prop_assert_eq!(&base.assignment, &shuffled.assignment);
        let ids = |v: &[ImageRecord]| v.iter().map(|r| r.image_id.clone()).collect::<BTreeSet<_>>();
        prop_assert_eq!(ids(&base.survivors), ids(&shuffled.survivors));
    }
}

#[test]
fn assignments_match_closure_oracle() {
    for seed in 0..200 {
        assert!(assignment_matches_oracle(seed), "seed {seed}");
    }
    // The generator must actually produce merges for the check to mean much.
    let merged = (0..200)
        .filter(|&seed| {
            let mut r = rng(seed);
            let n = r.random_range(1..=12);
            let mm = r.random_range(1..4);
            let (sets, records) = random_instance(&mut r, n);
            cluster(&sets, &records, &dedup_cfg(mm)).unwrap().clusters.iter().any(|c| c.members.len() > 2)
        })
        .count();
    assert!(merged >= 40, "only {merged} instances with a 3+ cluster");
}

#[test]
fn survivors_are_representatives_in_input_order() {
    let (sets, records) = random_instance(&mut rng(99), 12);
    let out = deduplicate(records.clone(), &sets, &dedup_cfg(1)).unwrap();
    let reps = out.assignment.representatives();
    let expected: Vec<String> = records
        .iter()
        .filter(|r| reps.contains(r.image_id.as_str()))
        .map(|r| r.image_id.clone())
        .collect();
    let got: Vec<String> = out.survivors.iter().map(|r| r.image_id.clone()).collect();
    assert_eq!(got, expected);
    assert_eq!(out.survivors.len() + out.dropped.len(), records.len());
    assert!(out.dropped.iter().all(|r| r.flags.contains("duplicate")));
}
