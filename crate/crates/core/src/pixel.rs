//! Pixel-level metrics.
//!
//! Confidences are tallied into a fixed-bin [`ScoreHistogram`]; the PR curve,
//! HSE-P and ROC-AUC are all derived from it with integer suffix sums, so the
//! result does not depend on the order in which images were accumulated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{check_same, BinaryMask, ProbMap};

pub const DEFAULT_BINS: usize = 65_536;

// Slack for deciding whether `value * (bins - 1)` already sits on a bin.
const QUANT_EPS: f64 = 1e-6;

/// Joint histogram of (confidence bin, ground-truth label) counts.
///
/// Bin `b` holds confidence `b / (bins - 1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreHistogram {
    pos: Vec<u64>,
    neg: Vec<u64>,
    lossy: bool,
}

impl ScoreHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::invalid(format!("histogram needs >= 2 bins, got {bins}")));
        }
        Ok(Self {
            pos: vec![0; bins],
            neg: vec![0; bins],
            lossy: false,
        })
    }

    pub fn bins(&self) -> usize {
        self.pos.len()
    }

    pub fn pos_counts(&self) -> &[u64] {
        &self.pos
    }

    pub fn neg_counts(&self) -> &[u64] {
        &self.neg
    }

    /// True once any accumulated confidence had to be rounded onto a bin.
    pub fn is_lossy(&self) -> bool {
        self.lossy
    }

    pub fn total_pos(&self) -> u64 {
        self.pos.iter().sum()
    }

    pub fn total_neg(&self) -> u64 {
        self.neg.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.total_pos() + self.total_neg()
    }

    /// Confidence represented by bin `b`.
    pub fn level_value(&self, b: usize) -> f64 {
        b as f64 / (self.bins() - 1) as f64
    }

    fn bin_of(&self, v: f64) -> (usize, bool) {
        let x = v * (self.bins() - 1) as f64;
        let b = x.round();
        (b as usize, (x - b).abs() <= QUANT_EPS)
    }

    /// Adds every pixel of `map` under its ground-truth label.
    pub fn add(&mut self, map: &ProbMap, gt: &BinaryMask) -> Result<()> {
        check_same(map.height(), map.width(), gt.height(), gt.width())?;
        let mut exact = true;
        for (&v, &g) in map.values().iter().zip(gt.bits()) {
            let (b, on_bin) = self.bin_of(v);
            exact &= on_bin;
            if g {
                self.pos[b] += 1;
            } else {
                self.neg[b] += 1;
            }
        }
        self.lossy |= !exact;
        Ok(())
    }

    /// Integer merge of two private histograms.
    pub fn merge(&mut self, other: &ScoreHistogram) -> Result<()> {
        if other.bins() != self.bins() {
            return Err(Error::invalid(format!(
                "cannot merge histograms with {} and {} bins",
                self.bins(),
                other.bins()
            )));
        }
        for (a, b) in self.pos.iter_mut().zip(&other.pos) {
            *a += b;
        }
        for (a, b) in self.neg.iter_mut().zip(&other.neg) {
            *a += b;
        }
        self.lossy |= other.lossy;
        Ok(())
    }

    /// Confusion counts for the prediction `value > t`.
    pub fn confusion_at(&self, t: f64) -> PixelConfusion {
        let mut c = PixelConfusion::default();
        for b in 0..self.bins() {
            let predicted = self.level_value(b) > t;
            match predicted {
                true => {
                    c.tp += self.pos[b];
                    c.fp += self.neg[b];
                }
                false => {
                    c.fn_ += self.pos[b];
                    c.tn += self.neg[b];
                }
            }
        }
        c
    }
}

/// Functional form of [`ScoreHistogram::add`].
pub fn accumulate(map: &ProbMap, gt: &BinaryMask, mut h: ScoreHistogram) -> Result<ScoreHistogram> {
    h.add(map, gt)?;
    Ok(h)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelConfusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl PixelConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// PR operating points in strictly increasing threshold order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

/// One point per distinct binarization reachable with a threshold in `[0, 1]`.
///
/// The operating point that predicts every pixel at bin `b` or above is
/// reported at threshold `(b - 1) / (bins - 1)`, the largest threshold that
/// produces it under `value > t`. Pixels in bin 0 can never be predicted
/// positive, so bin 0 contributes no point.
pub fn pixel_pr_curve(h: &ScoreHistogram) -> Result<PrCurve> {
    let total_pos = h.total_pos();
    if total_pos == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for b in (1..h.bins()).rev() {
        let (p, n) = (h.pos[b], h.neg[b]);
        if p == 0 && n == 0 {
            continue;
        }
        tp += p;
        fp += n;
        points.push(PrPoint {
            threshold: h.level_value(b - 1),
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / total_pos as f64,
        });
    }
    points.reverse();
    Ok(PrCurve { points })
}

/// Step-rule area under precision-versus-recall.
///
/// Points are taken in ascending threshold order (non-increasing recall) and
/// each contributes `P_k * (R_k - R_{k+1})`, with the recall after the last
/// point closed to zero. An empty curve integrates to zero.
pub fn hse_p(curve: &PrCurve) -> f64 {
    let pts = &curve.points;
    pts.iter()
        .enumerate()
        .map(|(k, p)| {
            let next = pts.get(k + 1).map_or(0.0, |q| q.recall);
            p.precision * (p.recall - next)
        })
        .sum()
}

/// Mann-Whitney form of the ROC area with ties counted half.
pub fn roc_auc(h: &ScoreHistogram) -> Result<f64> {
    let (p, n) = (h.total_pos(), h.total_neg());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedAuc);
    }
    // Twice the number of correctly ordered (pos, neg) pairs.
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    for b in 0..h.bins() {
        let (pb, nb) = (h.pos[b] as u128, h.neg[b] as u128);
        twice += pb * (2 * neg_below + nb);
        neg_below += nb;
    }
    Ok(twice as f64 / (2 * p as u128 * n as u128) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC operating points, same threshold convention as [`pixel_pr_curve`],
/// preceded by the `(1, 1)` corner.
pub fn roc_curve(h: &ScoreHistogram) -> Result<Vec<RocPoint>> {
    let (p, n) = (h.total_pos(), h.total_neg());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    for b in (1..h.bins()).rev() {
        if h.pos[b] == 0 && h.neg[b] == 0 {
            continue;
        }
        tp += h.pos[b];
        fp += h.neg[b];
        out.push(RocPoint {
            threshold: h.level_value(b - 1),
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    out.push(RocPoint {
        threshold: -1.0 / (h.bins() - 1) as f64,
        fpr: 1.0,
        tpr: 1.0,
    });
    out.reverse();
    Ok(out)
}

/// Intersection and union pixel counts of one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
}

impl Overlap {
    pub fn of(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        pred.same_shape(gt)?;
        let mut o = Overlap::default();
        for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
            o.intersection += u64::from(a && b);
            o.union += u64::from(a || b);
        }
        Ok(o)
    }

    /// 1.0 when both masks are empty.
    pub fn ratio(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(Overlap::of(pred, gt)?.ratio())
}

/// Mean of per-image IoU.
pub fn niou(pairs: &[(BinaryMask, BinaryMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("nIoU of an empty corpus"));
    }
    let mut sum = 0.0;
    for (p, g) in pairs {
        sum += iou(p, g)?;
    }
    Ok(sum / pairs.len() as f64)
}
