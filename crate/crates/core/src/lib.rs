//! Holistic evaluation of single-frame infrared small target detection.
//!
//! The crate turns predicted probability maps and ground-truth masks into the
//! conventional pixel and target metrics (IoU, nIoU, Pd, Fa) and into the
//! HSE family: HSE-P, the area under the pooled pixel precision-recall curve;
//! HSE-T, a multi-threshold integral of target-level precision and recall; and
//! HSE, their product.
//!
//! * [`mask`] - probability maps, masks and connected components
//! * [`pixel`] - score histograms, pixel PR curve, HSE-P, ROC-AUC, IoU
//! * [`target`] - centroid matching, Pd/Fa, HSE-T, HSE
//! * [`synth`] - seeded synthetic scenes and degradations
//! * [`corpus`], [`eval`], [`report`] - file formats and corpus evaluation

pub mod corpus;
pub mod error;
pub mod eval;
pub mod mask;
pub mod pixel;
pub mod report;
pub mod rng;
pub mod synth;
pub mod target;

pub use corpus::{load_corpus, Sample};
pub use error::{Error, LoadError, Result};
pub use eval::{evaluate, EvalConfig, MetricReport, ReportScale};
pub use mask::{binarize, label_components, BinaryMask, BitDepth, Connectivity, ProbMap};
pub use report::{emit_report, ReportDocument, ReportFormat};
pub use target::{hse, hse_percent, ThresholdSet};
