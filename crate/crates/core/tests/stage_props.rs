mod common;

use common::*;
use curate::model::{DatasetManifest, ImageRecord, StageReport};
use curate::stage::*;
use proptest::prelude::*;
use rand::Rng;

fn comparator() -> impl Strategy<Value = Comparator> {
    prop_oneof![Just(Comparator::Gt), Just(Comparator::Ge), Just(Comparator::Lt), Just(Comparator::Le)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn survivors_are_the_predicate_subset(seed in any::<u64>(), n in 0usize..60, cmp in comparator(), t in 0u8..=20) {
        let records = random_corpus(&mut rng(seed), n);
        let t = f64::from(t) / 20.0;
        let (kept, report) = apply_stage(records.clone(), &StageConfig::new("s", "a", cmp, t)).unwrap();
        let expected: Vec<ImageRecord> = records.iter().filter(|r| {
            let v = r.scores["a"];
            match cmp {
                Comparator::Gt => v > t,
                Comparator::Ge => v >= t,
                Comparator::Lt => v < t,
                Comparator::Le => v <= t,
            }
        }).cloned().collect();
        prop_assert_eq!(&kept, &expected);
        prop_assert_eq!((report.input_count, report.output_count), (n, expected.len()));
    }

    #[test]
    fn stage_order_does_not_change_the_survivor_set(seed in any::<u64>(), n in 0usize..60, ta in 0u8..=20, tb in 0u8..=20) {
        let records = random_corpus(&mut rng(seed), n);
        let sa = StageConfig::new("a", "a", Comparator::Gt, f64::from(ta) / 20.0);
        let sb = StageConfig::new("b", "b", Comparator::Le, f64::from(tb) / 20.0);
        let ab = apply_stage(apply_stage(records.clone(), &sa).unwrap().0, &sb).unwrap().0;
        let ba = apply_stage(apply_stage(records.clone(), &sb).unwrap().0, &sa).unwrap().0;
        let (res_first, _) = resolution_stage(ab.clone());
        let (res_last, _) = resolution_stage(records);
        let res_then = apply_stage(apply_stage(res_last, &sb).unwrap().0, &sa).unwrap().0;
        prop_assert_eq!(ids(&ab), ids(&ba));
        prop_assert_eq!(ids(&res_first), ids(&res_then));
    }

    #[test]
    fn resolution_is_strict_area(seed in any::<u64>(), n in 0usize..60) {
        let records = random_corpus(&mut rng(seed), n);
        let (kept, _) = resolution_stage(records.clone());
        let expected: Vec<_> = records.into_iter().filter(|r| u64::from(r.width_px) * u64::from(r.height_px) > 1_048_576).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn manifest_round_trip(seed in any::<u64>(), n in 0usize..30) {
        let mut r = rng(seed);
        let mut records = random_corpus(&mut r, n);
        for rec in records.iter_mut() {
            if r.random_bool(0.3) {
                rec.flags.insert("duplicate".into());
            }
            if r.random_bool(0.3) {
                rec.caption = Some(format!("a photo \"quoted\" of {}", rec.image_id));
            }
            rec.scores.insert("x".into(), r.random::<f64>() * 1e6 - 5e5);
        }
        let m = DatasetManifest {
            records,
            pipeline_config_hash: "ab".repeat(32),
            stage_log: vec![StageReport::new("s", n + 1, n).param("threshold", 0.71)],
        };
        let bytes = m.to_json_bytes().unwrap();
        let back = DatasetManifest::from_json_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_json_bytes().unwrap(), bytes);
    }
}

#[test]
fn threshold_monotonicity() {
    for seed in 0..1000 {
        assert!(monotone_on_random_corpus(seed), "seed {seed}");
    }
}

#[test]
fn boundary_constants() {
    let square = ImageRecord::new("sq", 1024, 1024);
    let wider = ImageRecord::new("w", 1025, 1024);
    let (kept, report) = resolution_stage(vec![square, wider]);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].image_id, "w");
    assert_eq!(report.output_count, 1);

    let at = ImageRecord::new("at", 2000, 2000).with_score("topiq", 0.71);
    let above = ImageRecord::new("above", 2000, 2000).with_score("topiq", 0.7101);
    let (kept, _) = apply_stage(vec![at, above], &StageConfig::new("topiq", "topiq", Comparator::Gt, 0.71)).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].image_id, "above");
}

#[test]
fn missing_score_policies() {
    let records = vec![ImageRecord::new("x", 2000, 2000), ImageRecord::new("y", 2000, 2000).with_score("a", 1.0)];
    let base = StageConfig::new("s", "a", Comparator::Ge, 0.5);
    assert!(apply_stage(records.clone(), &base).is_err());
    let (kept, _) = apply_stage(records.clone(), &base.clone().on_missing(OnMissing::Pass)).unwrap();
    assert_eq!(kept.len(), 2);
    let (kept, _) = apply_stage(records, &base.on_missing(OnMissing::Reject)).unwrap();
    assert_eq!(kept.len(), 1);
}
