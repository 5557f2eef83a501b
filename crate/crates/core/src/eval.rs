//! Corpus evaluation.
//!
//! Images are processed by a worker pool; each worker keeps a private score
//! histogram and per-image integer counts, and the reduction adds them up in
//! image-id order. Floating-point work only happens after the reduction, so
//! the report is identical for any worker count or manifest order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::mask::{binarize, check_same, label_components, targets_above, Connectivity};
use crate::pixel::{self, Overlap, PrCurve, ScoreHistogram, DEFAULT_BINS};
use crate::target::{
    self, false_positive_pixels, image_counts, integrate_target_pr, match_targets, TargetCounts,
    TargetPrPoint, ThresholdSet, DEFAULT_TAU,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportScale {
    Unit,
    #[default]
    Percent,
}

impl ReportScale {
    pub fn factor(self) -> f64 {
        match self {
            ReportScale::Unit => 1.0,
            ReportScale::Percent => 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub thresholds: ThresholdSet,
    pub tau: f64,
    pub connectivity: Connectivity,
    /// Threshold for IoU, nIoU, Pd and Fa.
    pub fixed_threshold: f64,
    pub histogram_bins: usize,
    pub workers: usize,
    pub report_scale: ReportScale,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: ThresholdSet::default(),
            tau: DEFAULT_TAU,
            connectivity: Connectivity::Eight,
            fixed_threshold: 0.5,
            histogram_bins: DEFAULT_BINS,
            workers: 1,
            report_scale: ReportScale::Percent,
        }
    }
}

impl EvalConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.fixed_threshold) {
            return Err(Error::invalid("fixed threshold must lie in [0, 1]"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("at least one worker is required"));
        }
        ScoreHistogram::new(self.histogram_bins).map(|_| ())
    }
}

/// Target counts at one sweep threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetSweepRow {
    pub threshold: f64,
    pub counts: TargetCounts,
}

impl TargetSweepRow {
    pub fn precision(&self) -> f64 {
        self.counts.precision()
    }

    pub fn recall(&self) -> Option<f64> {
        self.counts.recall().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub image_id: String,
    pub sha256: String,
}

/// All metrics of one corpus, on the unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub images: usize,
    pub total_pixels: u64,
    pub positive_pixels: u64,
    pub gt_targets: u64,
    /// Pooled intersection over pooled union at the fixed threshold.
    pub iou: f64,
    /// Mean of per-image IoU at the fixed threshold.
    pub niou: f64,
    pub pd: Option<f64>,
    pub fa: f64,
    pub fp_pixels: u64,
    pub fa_valid: bool,
    pub hse_p: Option<f64>,
    pub hse_t: Option<f64>,
    pub hse: Option<f64>,
    pub roc_auc: Option<f64>,
    pub target_sweep: Vec<TargetSweepRow>,
    pub pixel_pr: PrCurve,
    pub lossy_quantization: bool,
    pub negative_recall_increment: bool,
    pub config: EvalConfig,
    pub inputs: Vec<InputDigest>,
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn target_metrics_defined(&self) -> bool {
        self.gt_targets > 0
    }
}

struct ImageResult {
    index: usize,
    digest: String,
    overlap: Overlap,
    fixed_counts: TargetCounts,
    fp_pixels: u64,
    pixels: u64,
    sweep: Vec<TargetCounts>,
}

fn content_digest(s: &Sample) -> String {
    let mut h = Sha256::new();
    h.update((s.pred.height() as u64).to_le_bytes());
    h.update((s.pred.width() as u64).to_le_bytes());
    for v in s.pred.values() {
        h.update(v.to_bits().to_le_bytes());
    }
    let bits: Vec<u8> = s.gt.bits().iter().map(|&b| u8::from(b)).collect();
    h.update(&bits);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn evaluate_image(index: usize, s: &Sample, cfg: &EvalConfig) -> Result<ImageResult> {
    check_same(s.pred.height(), s.pred.width(), s.gt.height(), s.gt.width())?;
    let (_, gt_targets) = label_components(&s.gt, cfg.connectivity);
    let fixed = binarize(&s.pred, cfg.fixed_threshold);
    let sweep = cfg
        .thresholds
        .values()
        .par_iter()
        .map(|&t| {
            let pred = targets_above(&s.pred, t, cfg.connectivity);
            Ok(TargetCounts::of(&match_targets(&pred, &gt_targets, cfg.tau)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageResult {
        index,
        digest: content_digest(s),
        overlap: Overlap::of(&fixed, &s.gt)?,
        fixed_counts: image_counts(&fixed, &gt_targets, cfg.tau, cfg.connectivity)?,
        fp_pixels: false_positive_pixels(&fixed, &s.gt)?,
        pixels: (s.gt.height() * s.gt.width()) as u64,
        sweep,
    })
}

/// Pixel PR curve thinned to at most `max` points (endpoints kept).
pub fn sample_curve(curve: &PrCurve, max: usize) -> PrCurve {
    let n = curve.points.len();
    if n <= max || max < 2 {
        return curve.clone();
    }
    let points = (0..max)
        .map(|k| curve.points[k * (n - 1) / (max - 1)])
        .collect();
    PrCurve { points }
}

pub fn evaluate(corpus: &[Sample], cfg: &EvalConfig) -> Result<MetricReport> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty corpus"));
    }
    cfg.validate()?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus[a].id.cmp(&corpus[b].id));
    if let Some(w) = order.windows(2).find(|w| corpus[w[0]].id == corpus[w[1]].id) {
        return Err(Error::invalid(format!("duplicate image id {:?}", corpus[w[0]].id)));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let bins = cfg.histogram_bins;
    let (hist, mut results) = pool.install(|| {
        order
            .par_iter()
            .try_fold(
                || (ScoreHistogram::new(bins).expect("validated"), Vec::new()),
                |(mut acc, mut rs), &i| {
                    let s = &corpus[i];
                    acc.add(&s.pred, &s.gt)?;
                    rs.push(evaluate_image(i, s, cfg)?);
                    Ok::<_, Error>((acc, rs))
                },
            )
            .try_reduce(
                || (ScoreHistogram::new(bins).expect("validated"), Vec::new()),
                |(mut a, mut ra), (b, rb)| {
                    a.merge(&b)?;
                    ra.extend(rb);
                    Ok((a, ra))
                },
            )
    })?;
    results.sort_by(|a, b| corpus[a.index].id.cmp(&corpus[b.index].id));

    let mut overlap = Overlap::default();
    let mut niou_sum = 0.0;
    let mut fixed = TargetCounts::default();
    let (mut fp_pixels, mut total_pixels) = (0u64, 0u64);
    let mut sweep = vec![TargetCounts::default(); cfg.thresholds.len()];
    for r in &results {
        overlap.intersection += r.overlap.intersection;
        overlap.union += r.overlap.union;
        niou_sum += r.overlap.ratio();
        fixed = fixed + r.fixed_counts;
        fp_pixels += r.fp_pixels;
        total_pixels += r.pixels;
        for (acc, c) in sweep.iter_mut().zip(&r.sweep) {
            *acc = *acc + *c;
        }
    }
    let target_sweep: Vec<TargetSweepRow> = cfg
        .thresholds
        .values()
        .iter()
        .zip(&sweep)
        .map(|(&threshold, &counts)| TargetSweepRow { threshold, counts })
        .collect();

    let mut warnings = Vec::new();
    let gt_targets = fixed.n_gt;
    let pixel_pr = pixel::pixel_pr_curve(&hist).unwrap_or_default();
    let hse_p = (hist.total_pos() > 0).then(|| pixel::hse_p(&pixel_pr));
    let roc_auc = pixel::roc_auc(&hist).ok();
    let mut negative_recall_increment = false;
    let hse_t = if gt_targets > 0 {
        let points: Vec<TargetPrPoint> = target_sweep
            .iter()
            .map(|r| TargetPrPoint {
                threshold: r.threshold,
                precision: r.precision(),
                recall: r.recall().unwrap_or(0.0),
            })
            .collect();
        let (score, negative) = integrate_target_pr(&points);
        negative_recall_increment = negative;
        Some(score)
    } else {
        warnings.push("corpus has no ground-truth targets: target-level metrics are undefined".into());
        None
    };
    if negative_recall_increment {
        warnings.push("target recall increased with threshold: HSE-T includes negative increments".into());
    }
    if hist.is_lossy() {
        warnings.push(format!(
            "lossy quantization: confidences were rounded onto {bins} histogram bins"
        ));
    }
    let hse = match (hse_p, hse_t) {
        (Some(p), Some(t)) => Some(target::hse(p, t)),
        _ => None,
    };

    Ok(MetricReport {
        images: corpus.len(),
        total_pixels,
        positive_pixels: hist.total_pos(),
        gt_targets,
        iou: overlap.ratio(),
        niou: niou_sum / results.len() as f64,
        pd: fixed.recall().ok(),
        fa: fp_pixels as f64 / total_pixels as f64,
        fp_pixels,
        fa_valid: target::fa_is_valid(fp_pixels, total_pixels),
        hse_p,
        hse_t,
        hse,
        roc_auc,
        target_sweep,
        pixel_pr,
        lossy_quantization: hist.is_lossy(),
        negative_recall_increment,
        config: cfg.clone(),
        inputs: results
            .into_iter()
            .map(|r| InputDigest {
                image_id: corpus[r.index].id.clone(),
                sha256: r.digest,
            })
            .collect(),
        warnings,
    })
}

/// Merged score histogram of a corpus, for curve dumps.
pub fn corpus_histogram(corpus: &[Sample], bins: usize) -> Result<ScoreHistogram> {
    let mut h = ScoreHistogram::new(bins)?;
    for s in corpus {
        h.add(&s.pred, &s.gt)?;
    }
    Ok(h)
}
