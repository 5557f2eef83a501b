//! Report serialization.
//!
//! JSON and CSV renderings of a [`MetricReport`]. Field order is fixed by the
//! struct definitions below, and numbers are printed with the shortest
//! round-tripping representation, so equal reports give equal bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{sample_curve, InputDigest, MetricReport, ReportScale};
use crate::mask::Connectivity;
use crate::pixel::PrPoint;

pub const REPORT_FORMAT_VERSION: &str = "1";

/// Upper bound on pixel PR points written into a report.
pub const PIXEL_PR_SAMPLES: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iou: f64,
    pub niou: f64,
    pub pd: Option<f64>,
    /// Fa in units of 1e-6, independent of the report scale.
    pub fa_e6: f64,
    pub fa_valid: bool,
    pub hse_p: Option<f64>,
    pub hse_t: Option<f64>,
    pub hse: Option<f64>,
    pub roc_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub pixels: u64,
    pub positive_pixels: u64,
    pub gt_targets: u64,
    pub fp_pixels: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: Option<f64>,
    pub n_match: u64,
    pub n_pred: u64,
    pub n_gt: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub thresholds: Vec<f64>,
    pub tau: f64,
    pub connectivity: Connectivity,
    pub fixed_threshold: f64,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    pub iou: String,
    pub niou: String,
    pub fa: String,
    pub target_counts: String,
    pub pixel_pr: String,
    pub hse_t: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            iou: "pooled intersection / pooled union at the fixed threshold".into(),
            niou: "mean of per-image IoU at the fixed threshold; empty-vs-empty counts as 1".into(),
            fa: "predicted pixels outside ground truth / all pixels at the fixed threshold; valid iff Fa <= 1e-4".into(),
            target_counts: "pooled over the corpus; greedy centroid matching in label order".into(),
            pixel_pr: "step rule over occupied confidence levels, recall closed to 0".into(),
            hse_t: "sum_j P(t_j) * (R(t_j) - R(t_j+1)), R(t_M+1) = 0".into(),
        }
    }
}

/// On-disk report schema. Unknown fields are ignored when reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format_version: String,
    pub scale: ReportScale,
    pub summary: Summary,
    pub counts: Counts,
    pub target_pr: Vec<TargetPrRow>,
    pub pixel_pr_samples: Vec<PrPoint>,
    pub config: ConfigEcho,
    pub conventions: Conventions,
    pub inputs: Vec<InputDigest>,
    pub warnings: Vec<String>,
}

impl ReportDocument {
    pub fn from_report(r: &MetricReport) -> Self {
        let scale = r.config.report_scale;
        let k = scale.factor();
        let s = |x: f64| k * x;
        Self {
            format_version: REPORT_FORMAT_VERSION.into(),
            scale,
            summary: Summary {
                iou: s(r.iou),
                niou: s(r.niou),
                pd: r.pd.map(s),
                fa_e6: r.fa * 1e6,
                fa_valid: r.fa_valid,
                hse_p: r.hse_p.map(s),
                hse_t: r.hse_t.map(s),
                hse: r.hse.map(s),
                roc_auc: r.roc_auc.map(s),
            },
            counts: Counts {
                images: r.images,
                pixels: r.total_pixels,
                positive_pixels: r.positive_pixels,
                gt_targets: r.gt_targets,
                fp_pixels: r.fp_pixels,
            },
            target_pr: r
                .target_sweep
                .iter()
                .map(|row| TargetPrRow {
                    threshold: row.threshold,
                    precision: row.precision(),
                    recall: row.recall(),
                    n_match: row.counts.n_match,
                    n_pred: row.counts.n_pred,
                    n_gt: row.counts.n_gt,
                })
                .collect(),
            pixel_pr_samples: sample_curve(&r.pixel_pr, PIXEL_PR_SAMPLES).points,
            config: ConfigEcho {
                thresholds: r.config.thresholds.values().to_vec(),
                tau: r.config.tau,
                connectivity: r.config.connectivity,
                fixed_threshold: r.config.fixed_threshold,
                histogram_bins: r.config.histogram_bins,
            },
            conventions: Conventions::default(),
            inputs: r.inputs.clone(),
            warnings: r.warnings.clone(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

pub const CSV_HEADER: &str = "kind,threshold,precision,recall,n_match,n_pred,n_gt,iou,niou,pd,fa_e6,fa_valid,hse_p,hse_t,hse,roc_auc";

/// Header, one summary row, then one row per sweep threshold.
pub fn render_csv(doc: &ReportDocument) -> String {
    let s = &doc.summary;
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "summary,,,,,,,{},{},{},{},{},{},{},{},{}\n",
        s.iou,
        s.niou,
        opt(s.pd),
        s.fa_e6,
        s.fa_valid,
        opt(s.hse_p),
        opt(s.hse_t),
        opt(s.hse),
        opt(s.roc_auc)
    ));
    for row in &doc.target_pr {
        out.push_str(&format!(
            "threshold,{},{},{},{},{},{},,,,,,,,,\n",
            row.threshold,
            row.precision,
            opt(row.recall),
            row.n_match,
            row.n_pred,
            row.n_gt
        ));
    }
    out
}

pub fn render(report: &MetricReport, format: ReportFormat) -> Result<String> {
    let doc = ReportDocument::from_report(report);
    Ok(match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => render_csv(&doc),
    })
}

pub fn emit_report(report: &MetricReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = render(report, format)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
