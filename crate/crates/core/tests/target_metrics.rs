mod oracle;

use hse_core::target::{
    counts_at_threshold, false_positive_pixels, hse_t, match_targets, pd_fa, TargetCounts,
};
use hse_core::{binarize, label_components, BinaryMask, Connectivity, ProbMap, ThresholdSet};
use oracle::{hand_target_corpus, random_8bit_image, target_counts, RawImage, TestRng};
use proptest::prelude::*;

#[test]
fn hand_corpus_integrates_to_three_quarters() {
    let (h, w, values, gt) = hand_target_corpus();
    let corpus = vec![(
        ProbMap::new(h, w, values).unwrap(),
        BinaryMask::new(h, w, gt).unwrap(),
    )];
    let ts = ThresholdSet::new(vec![0.2, 0.5, 0.8]).unwrap();
    let v = hse_t(&corpus, &ts, 3.0, Connectivity::Eight).unwrap();
    assert!((v - 0.75).abs() <= 1e-12, "{v}");
}

#[test]
fn pooled_counts_match_naive_oracle() {
    let mut rng = TestRng(31337);
    let imgs: Vec<_> = (0..6).map(|_| random_8bit_image(&mut rng, 24, 24)).collect();
    let corpus: Vec<_> = imgs
        .iter()
        .map(|(l, g)| {
            (
                ProbMap::from_u8(24, 24, l).unwrap(),
                BinaryMask::new(24, 24, g.clone()).unwrap(),
            )
        })
        .collect();
    let raws: Vec<_> = corpus
        .iter()
        .map(|(m, g)| RawImage {
            h: 24,
            w: 24,
            values: m.values().to_vec(),
            gt: g.bits().to_vec(),
        })
        .collect();
    for &t in ThresholdSet::default().values() {
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let got = counts_at_threshold(&corpus, t, 3.0, conn).unwrap();
            let mut want = (0, 0, 0);
            for r in &raws {
                let c = target_counts(r, t, 3.0, eight);
                want = (want.0 + c.0, want.1 + c.1, want.2 + c.2);
            }
            assert_eq!((got.n_match, got.n_pred, got.n_gt), want, "t={t} {conn:?}");
        }
    }
}

#[test]
fn false_alarm_pixels_match_direct_count() {
    let mut rng = TestRng(5);
    for _ in 0..20 {
        let (l, g) = random_8bit_image(&mut rng, 17, 23);
        let map = ProbMap::from_u8(17, 23, &l).unwrap();
        let pred = binarize(&map, 0.5);
        let gt = BinaryMask::new(17, 23, g.clone()).unwrap();
        let direct = l
            .iter()
            .zip(&g)
            .filter(|(&v, &gg)| v as f64 / 255.0 > 0.5 && !gg)
            .count() as u64;
        assert_eq!(false_positive_pixels(&pred, &gt).unwrap(), direct);
    }
}

#[test]
fn fa_validity_flips_between_one_and_two_pixels() {
    let gt = BinaryMask::from_fn(100, 100, |r, c| (40..43).contains(&r) && (40..43).contains(&c)).unwrap();
    let mut one = gt.clone();
    one.set(0, 0, true);
    let mut two = one.clone();
    two.set(99, 99, true);
    let a = pd_fa(&[(one, gt.clone())], 3.0, Connectivity::Eight).unwrap();
    let b = pd_fa(&[(two, gt)], 3.0, Connectivity::Eight).unwrap();
    assert!(a.is_valid());
    assert!((a.fa_e6() - 100.0).abs() < 1e-9);
    assert!(!b.is_valid());
}

#[test]
fn zero_predictions_give_zero_precision() {
    let gt = BinaryMask::from_fn(8, 8, |r, c| r == 3 && c == 3).unwrap();
    let corpus = vec![(ProbMap::new(8, 8, vec![0.0; 64]).unwrap(), gt)];
    let c = counts_at_threshold(&corpus, 0.5, 3.0, Connectivity::Eight).unwrap();
    assert_eq!(c, TargetCounts { n_match: 0, n_pred: 0, n_gt: 1 });
    assert_eq!(c.precision(), 0.0);
    assert_eq!(c.recall().unwrap(), 0.0);
}

fn pair_strategy() -> impl Strategy<Value = (Vec<bool>, Vec<bool>)> {
    (
        proptest::collection::vec(proptest::bool::weighted(0.3), 400),
        proptest::collection::vec(proptest::bool::weighted(0.3), 400),
    )
}

proptest! {
    #[test]
    fn matching_is_one_to_one((p, g) in pair_strategy(), tau in 0.5f64..8.0) {
        let pm = BinaryMask::new(20, 20, p).unwrap();
        let gm = BinaryMask::new(20, 20, g).unwrap();
        let (_, pt) = label_components(&pm, Connectivity::Eight);
        let (_, gt) = label_components(&gm, Connectivity::Eight);
        let m = match_targets(&pt, &gt, tau).unwrap();
        let mut preds: Vec<u32> = m.matches.iter().map(|x| x.pred_id).collect();
        let mut gts: Vec<u32> = m.matches.iter().map(|x| x.gt_id).collect();
        preds.sort_unstable();
        preds.dedup();
        gts.sort_unstable();
        gts.dedup();
        prop_assert_eq!(preds.len(), m.n_match());
        prop_assert_eq!(gts.len(), m.n_match());
        prop_assert!(m.n_match() <= pt.len().min(gt.len()));
        prop_assert!(m.matches.iter().all(|x| x.distance <= tau));
    }

    #[test]
    fn pd_equals_target_recall((p, g) in pair_strategy()) {
        let pm = BinaryMask::new(20, 20, p).unwrap();
        let gm = BinaryMask::new(20, 20, g).unwrap();
        prop_assume!(gm.count_ones() > 0);
        let r = pd_fa(&[(pm.clone(), gm.clone())], 3.0, Connectivity::Eight).unwrap();
        let (_, gt) = label_components(&gm, Connectivity::Eight);
        let (_, pt) = label_components(&pm, Connectivity::Eight);
        let c = TargetCounts::of(&match_targets(&pt, &gt, 3.0).unwrap());
        prop_assert_eq!(r.pd, c.recall().unwrap());
    }
}
