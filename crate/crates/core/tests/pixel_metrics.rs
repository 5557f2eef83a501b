mod oracle;

use hse_core::pixel::{
    accumulate, hse_p, iou, pixel_pr_curve, roc_auc, ScoreHistogram, DEFAULT_BINS,
};
use hse_core::{BinaryMask, ProbMap};
use oracle::{exhaustive_hse_p, pairwise_auc, random_8bit_image, RawImage, TestRng};
use proptest::prelude::*;

fn raw(h: usize, w: usize, levels: &[u8], gt: Vec<bool>) -> RawImage {
    RawImage {
        h,
        w,
        values: levels.iter().map(|&l| l as f64 / 255.0).collect(),
        gt,
    }
}

fn histogram(images: &[(Vec<u8>, Vec<bool>)], h: usize, w: usize) -> ScoreHistogram {
    let mut hist = ScoreHistogram::new(DEFAULT_BINS).unwrap();
    for (levels, gt) in images {
        let map = ProbMap::from_u8(h, w, levels).unwrap();
        hist = accumulate(&map, &BinaryMask::new(h, w, gt.clone()).unwrap(), hist).unwrap();
    }
    hist
}

#[test]
fn histogram_counts_match_direct_tally() {
    let mut rng = TestRng(11);
    let imgs: Vec<_> = (0..5).map(|_| random_8bit_image(&mut rng, 20, 24)).collect();
    let hist = histogram(&imgs, 20, 24);
    assert!(!hist.is_lossy());
    for level in 0..=255u32 {
        let bin = (level as usize) * 257;
        let (mut p, mut n) = (0u64, 0u64);
        for (lv, gt) in &imgs {
            for (&l, &g) in lv.iter().zip(gt) {
                if l as u32 == level {
                    if g {
                        p += 1
                    } else {
                        n += 1
                    }
                }
            }
        }
        assert_eq!(hist.pos_counts()[bin], p);
        assert_eq!(hist.neg_counts()[bin], n);
    }
    assert_eq!(hist.total(), 5 * 20 * 24);
}

#[test]
fn pr_integral_matches_exhaustive_thresholds() {
    let mut rng = TestRng(2024);
    for _ in 0..10 {
        let n = 1 + rng.below(4) as usize;
        let imgs: Vec<_> = (0..n).map(|_| random_8bit_image(&mut rng, 16, 16)).collect();
        let hist = histogram(&imgs, 16, 16);
        let fast = hse_p(&pixel_pr_curve(&hist).unwrap());
        let raws: Vec<_> = imgs.iter().map(|(l, g)| raw(16, 16, l, g.clone())).collect();
        let slow = exhaustive_hse_p(&raws, 255);
        assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn auc_matches_pairwise_count() {
    let mut rng = TestRng(9);
    for _ in 0..10 {
        let imgs: Vec<_> = (0..2).map(|_| random_8bit_image(&mut rng, 12, 12)).collect();
        let hist = histogram(&imgs, 12, 12);
        let raws: Vec<_> = imgs.iter().map(|(l, g)| raw(12, 12, l, g.clone())).collect();
        let a = roc_auc(&hist).unwrap();
        let b = pairwise_auc(&raws);
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn no_positives_has_undefined_recall() {
    let map = ProbMap::from_u8(2, 2, &[10, 20, 30, 40]).unwrap();
    let gt = BinaryMask::empty(2, 2).unwrap();
    let hist = accumulate(&map, &gt, ScoreHistogram::new(DEFAULT_BINS).unwrap()).unwrap();
    assert!(pixel_pr_curve(&hist).is_err());
    assert!(roc_auc(&hist).is_err());
}

fn image_strategy() -> impl Strategy<Value = (Vec<u8>, Vec<bool>)> {
    (
        proptest::collection::vec(any::<u8>(), 64),
        proptest::collection::vec(any::<bool>(), 64),
    )
        .prop_filter("needs a positive pixel", |(_, g)| g.iter().any(|&x| x))
}

proptest! {
    #[test]
    fn hse_p_lies_in_unit_interval((levels, gt) in image_strategy()) {
        let hist = histogram(&[(levels, gt)], 8, 8);
        let v = hse_p(&pixel_pr_curve(&hist).unwrap());
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn raising_false_positive_confidence_never_helps(
        (levels, gt) in image_strategy(),
        idx in 0usize..64,
        bump in 1u8..=255,
    ) {
        prop_assume!(!gt[idx]);
        let before = hse_p(&pixel_pr_curve(&histogram(&[(levels.clone(), gt.clone())], 8, 8)).unwrap());
        let mut raised = levels;
        raised[idx] = raised[idx].saturating_add(bump);
        let after = hse_p(&pixel_pr_curve(&histogram(&[(raised, gt)], 8, 8)).unwrap());
        prop_assert!(after <= before + 1e-12, "{} > {}", after, before);
    }

    #[test]
    fn auc_is_invariant_to_monotone_relabeling((levels, gt) in image_strategy()) {
        prop_assume!(gt.iter().any(|&g| !g));
        // Strictly increasing, non-affine map of 8-bit levels onto 16-bit levels.
        let squeezed: Vec<u16> = levels.iter().map(|&l| l as u16 * l as u16 + l as u16).collect();
        let mask = BinaryMask::new(8, 8, gt.clone()).unwrap();
        let wide = ProbMap::from_u16(8, 8, &squeezed).unwrap();
        let b = roc_auc(&accumulate(&wide, &mask, ScoreHistogram::new(DEFAULT_BINS).unwrap()).unwrap()).unwrap();
        let a = roc_auc(&histogram(&[(levels, gt)], 8, 8)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn iou_is_symmetric(
        a in proptest::collection::vec(any::<bool>(), 36),
        b in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let ma = BinaryMask::new(6, 6, a).unwrap();
        let mb = BinaryMask::new(6, 6, b).unwrap();
        prop_assert_eq!(iou(&ma, &mb).unwrap(), iou(&mb, &ma).unwrap());
    }
}
