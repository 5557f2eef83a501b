//! Target-level metrics: centroid matching, Pd/Fa, the multi-threshold target
//! PR sweep, HSE-T and the HSE product.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{binarize, label_components, BinaryMask, Connectivity, ProbMap, TargetSet};

pub const DEFAULT_TAU: f64 = 3.0;
pub const DEFAULT_THRESHOLD_COUNT: usize = 19;

/// Fa above this rate marks the model invalid.
pub const FA_VALIDITY_LIMIT: f64 = 1e-4;

/// Strictly increasing thresholds inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ThresholdSet(Vec<f64>);

impl ThresholdSet {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("threshold set is empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(Error::invalid(format!("threshold {v} is outside (0, 1)")));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        Ok(Self(values))
    }

    /// `count` evenly spaced thresholds `k / (count + 1)`.
    pub fn uniform(count: usize) -> Result<Self> {
        let n = count as f64 + 1.0;
        Self::new((1..=count).map(|k| k as f64 / n).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Default for ThresholdSet {
    fn default() -> Self {
        Self::uniform(DEFAULT_THRESHOLD_COUNT).expect("default thresholds are valid")
    }
}

impl TryFrom<Vec<f64>> for ThresholdSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ThresholdSet> for Vec<f64> {
    fn from(t: ThresholdSet) -> Self {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub gt_id: u32,
    pub pred_id: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matches: Vec<Match>,
    pub n_pred: usize,
    pub n_gt: usize,
}

impl MatchResult {
    pub fn n_match(&self) -> usize {
        self.matches.len()
    }
}

/// Greedy one-to-one centroid matching.
///
/// Ground-truth targets are visited in label order; each claims the first
/// still-unmatched prediction (in label order) whose centroid lies within
/// `tau` pixels.
pub fn match_targets(pred: &TargetSet, gt: &TargetSet, tau: f64) -> Result<MatchResult> {
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let mut taken = vec![false; pred.len()];
    let mut matches = Vec::new();
    for g in gt.targets() {
        for (p, used) in pred.targets().iter().zip(taken.iter_mut()) {
            if *used {
                continue;
            }
            let d = (g.centroid_row - p.centroid_row).hypot(g.centroid_col - p.centroid_col);
            if d <= tau {
                *used = true;
                matches.push(Match {
                    gt_id: g.id,
                    pred_id: p.id,
                    distance: d,
                });
                break;
            }
        }
    }
    Ok(MatchResult {
        matches,
        n_pred: pred.len(),
        n_gt: gt.len(),
    })
}

/// Pooled target counts; adding two of these is the corpus reduction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCounts {
    pub n_match: u64,
    pub n_pred: u64,
    pub n_gt: u64,
}

impl TargetCounts {
    pub fn of(m: &MatchResult) -> Self {
        Self {
            n_match: m.n_match() as u64,
            n_pred: m.n_pred as u64,
            n_gt: m.n_gt as u64,
        }
    }

    /// Precision with the zero-prediction guard (0 when nothing is predicted).
    pub fn precision(&self) -> f64 {
        if self.n_pred == 0 {
            0.0
        } else {
            self.n_match as f64 / self.n_pred as f64
        }
    }

    pub fn recall(&self) -> Result<f64> {
        if self.n_gt == 0 {
            return Err(Error::UndefinedRecall);
        }
        Ok(self.n_match as f64 / self.n_gt as f64)
    }
}

impl std::ops::Add for TargetCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            n_match: self.n_match + o.n_match,
            n_pred: self.n_pred + o.n_pred,
            n_gt: self.n_gt + o.n_gt,
        }
    }
}

impl std::iter::Sum for TargetCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Counts for one binarized prediction against an already-labeled ground truth.
pub fn image_counts(
    pred: &BinaryMask,
    gt_targets: &TargetSet,
    tau: f64,
    connectivity: Connectivity,
) -> Result<TargetCounts> {
    let (_, pred_targets) = label_components(pred, connectivity);
    Ok(TargetCounts::of(&match_targets(&pred_targets, gt_targets, tau)?))
}

/// Pixels predicted positive that fall outside the ground truth.
pub fn false_positive_pixels(pred: &BinaryMask, gt: &BinaryMask) -> Result<u64> {
    pred.same_shape(gt)?;
    Ok(pred
        .bits()
        .iter()
        .zip(gt.bits())
        .filter(|(&p, &g)| p && !g)
        .count() as u64)
}

/// Pd and Fa over a corpus of binary predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdFa {
    pub pd: f64,
    pub fa: f64,
    pub fp_pixels: u64,
    pub total_pixels: u64,
    pub counts: TargetCounts,
}

impl PdFa {
    pub fn from_counts(counts: TargetCounts, fp_pixels: u64, total_pixels: u64) -> Result<Self> {
        Ok(Self {
            pd: counts.recall()?,
            fa: fp_pixels as f64 / total_pixels as f64,
            fp_pixels,
            total_pixels,
            counts,
        })
    }

    /// Fa in units of 1e-6, the scale used in result tables.
    pub fn fa_e6(&self) -> f64 {
        self.fa * 1e6
    }

    /// `Fa <= 1e-4`, decided on the integer counts.
    pub fn is_valid(&self) -> bool {
        fa_is_valid(self.fp_pixels, self.total_pixels)
    }
}

pub fn fa_is_valid(fp_pixels: u64, total_pixels: u64) -> bool {
    u128::from(fp_pixels) * 10_000 <= u128::from(total_pixels)
}

pub fn pd_fa(corpus: &[(BinaryMask, BinaryMask)], tau: f64, connectivity: Connectivity) -> Result<PdFa> {
    if corpus.is_empty() {
        return Err(Error::invalid("Pd/Fa of an empty corpus"));
    }
    let mut counts = TargetCounts::default();
    let (mut fp, mut total) = (0u64, 0u64);
    for (pred, gt) in corpus {
        let (_, gt_targets) = label_components(gt, connectivity);
        counts = counts + image_counts(pred, &gt_targets, tau, connectivity)?;
        fp += false_positive_pixels(pred, gt)?;
        total += (pred.height() * pred.width()) as u64;
    }
    PdFa::from_counts(counts, fp, total)
}

/// Pooled counts at one threshold over `(map, gt)` pairs.
pub fn counts_at_threshold(
    corpus: &[(ProbMap, BinaryMask)],
    t: f64,
    tau: f64,
    connectivity: Connectivity,
) -> Result<TargetCounts> {
    corpus
        .par_iter()
        .map(|(map, gt)| {
            crate::mask::check_same(map.height(), map.width(), gt.height(), gt.width())?;
            let (_, gt_targets) = label_components(gt, connectivity);
            image_counts(&binarize(map, t), &gt_targets, tau, connectivity)
        })
        .try_reduce(TargetCounts::default, |a, b| Ok(a + b))
}

pub fn target_pr_at_threshold(
    corpus: &[(ProbMap, BinaryMask)],
    t: f64,
    tau: f64,
    connectivity: Connectivity,
) -> Result<TargetPrPoint> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold {t} is outside (0, 1)")));
    }
    let counts = counts_at_threshold(corpus, t, tau, connectivity)?;
    Ok(TargetPrPoint {
        threshold: t,
        precision: counts.precision(),
        recall: counts.recall()?,
    })
}

/// Discrete integral `sum_j P(t_j) * (R(t_j) - R(t_{j+1}))` with the recall
/// past the last threshold closed to 0.
///
/// Increments are used as-is; the flag reports whether any was negative.
pub fn integrate_target_pr(points: &[TargetPrPoint]) -> (f64, bool) {
    let mut negative = false;
    let score = points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let next = points.get(j + 1).map_or(0.0, |q| q.recall);
            let dr = p.recall - next;
            negative |= dr < 0.0;
            p.precision * dr
        })
        .sum();
    (score, negative)
}

pub fn hse_t(
    corpus: &[(ProbMap, BinaryMask)],
    thresholds: &ThresholdSet,
    tau: f64,
    connectivity: Connectivity,
) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::invalid("threshold set is empty"));
    }
    let points = thresholds
        .values()
        .iter()
        .map(|&t| target_pr_at_threshold(corpus, t, tau, connectivity))
        .collect::<Result<Vec<_>>>()?;
    Ok(integrate_target_pr(&points).0)
}

/// Product fusion of the two sub-metrics, both on the unit scale.
pub fn hse(hse_p: f64, hse_t: f64) -> f64 {
    hse_p * hse_t
}

/// [`hse`] for scores given on the 0-100 scale.
pub fn hse_percent(hse_p: f64, hse_t: f64) -> f64 {
    hse_p * hse_t / 100.0
}
