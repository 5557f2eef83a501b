//! `hse`: evaluate small-target detection outputs, generate synthetic
//! corpora, and run the built-in property checks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use hse_core::eval::{corpus_histogram, sample_curve};
use hse_core::pixel::{pixel_pr_curve, roc_curve};
use hse_core::report::render;
use hse_core::synth::{build_roc_demo, gen_corpus, write_roc_demo, CorpusSpec, ErrorModeSpec, SceneSpec};
use hse_core::{
    evaluate, load_corpus, Connectivity, Error as CoreError, EvalConfig, ReportFormat, ReportScale,
    ThresholdSet,
};

const EXIT_LOAD: u8 = 1;
const EXIT_UNDEFINED: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser)]
#[command(name = "hse", version, about = "Holistic evaluation for infrared small target detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a corpus and write a report.
    Eval(EvalArgs),
    /// Dump pixel-level PR or ROC samples as CSV.
    Curve(CurveArgs),
    /// Generate a synthetic corpus of PGM pairs plus a manifest.
    Gen(GenArgs),
    /// Build two corpora where ROC-AUC and HSE-P disagree, and check it.
    DemoRoc(DemoRocArgs),
    /// Run the fusion-kernel gradient and invariant checks.
    NnCheck,
    /// Product fusion of a pixel-level and a target-level score.
    Fuse(FuseArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Unit,
    Percent,
}

impl From<Scale> for ReportScale {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Unit => ReportScale::Unit,
            Scale::Percent => ReportScale::Percent,
        }
    }
}

fn parse_thresholds(s: &str) -> std::result::Result<ThresholdSet, String> {
    if let Ok(n) = s.trim().parse::<usize>() {
        return ThresholdSet::uniform(n).map_err(|e| e.to_string());
    }
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ThresholdSet::new(values).map_err(|e| e.to_string())
}

fn parse_connectivity(s: &str) -> std::result::Result<Connectivity, String> {
    let n: u32 = s.parse().map_err(|_| format!("expected 4 or 8, got {s:?}"))?;
    Connectivity::from_neighbors(n).map_err(|e| e.to_string())
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Args)]
struct EvalArgs {
    /// Tab-separated manifest: image_id, prediction path, ground-truth path.
    #[arg(long)]
    manifest: PathBuf,
    /// Centroid matching tolerance in pixels.
    #[arg(long, default_value_t = 3.0)]
    tau: f64,
    /// Either a count of uniform thresholds or a comma-separated list.
    #[arg(long, default_value = "19", value_parser = parse_thresholds)]
    thresholds: ThresholdSet,
    #[arg(long, default_value = "8", value_parser = parse_connectivity)]
    connectivity: Connectivity,
    /// Threshold used for IoU, nIoU, Pd and Fa.
    #[arg(long, default_value_t = 0.5)]
    fixed_threshold: f64,
    #[arg(long, default_value_t = hse_core::pixel::DEFAULT_BINS)]
    bins: usize,
    /// Worker threads (defaults to the available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, value_enum, default_value_t = Scale::Percent)]
    scale: Scale,
    /// Output file; the report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CurveKind {
    Pr,
    Roc,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = CurveKind::Pr)]
    kind: CurveKind,
    #[arg(long, default_value_t = hse_core::pixel::DEFAULT_BINS)]
    bins: usize,
    /// Maximum number of points written (endpoints are always kept).
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    /// Output directory for images and manifest.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    images: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 4)]
    targets: usize,
    #[arg(long, default_value_t = 1)]
    radius_min: u32,
    #[arg(long, default_value_t = 4)]
    radius_max: u32,
    /// Background noise scale in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    miss_fraction: f64,
    #[arg(long, default_value_t = 0)]
    false_alarms: usize,
    #[arg(long, default_value_t = 0.8)]
    false_alarm_confidence: f64,
    #[arg(long, default_value_t = 0)]
    erosion: u32,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
}

#[derive(Args)]
struct DemoRocArgs {
    #[arg(long, default_value_t = 2025)]
    seed: u64,
    /// Also write both corpora under this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct FuseArgs {
    /// Pixel-level score.
    hse_p: f64,
    /// Target-level score.
    hse_t: f64,
    /// Scale of both inputs and of the output.
    #[arg(long, value_enum, default_value_t = Scale::Percent)]
    scale: Scale,
    #[arg(long, default_value_t = 2)]
    decimals: usize,
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load(manifest: &Path) -> Result<Vec<hse_core::Sample>> {
    match load_corpus(manifest) {
        Ok(c) => Ok(c),
        Err(CoreError::Load(items)) => {
            for item in &items {
                eprintln!("load error: {item}");
            }
            bail!("{} corpus entries failed to load", items.len())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_eval(a: EvalArgs) -> Result<u8> {
    let corpus = load(&a.manifest)?;
    let cfg = EvalConfig {
        thresholds: a.thresholds,
        tau: a.tau,
        connectivity: a.connectivity,
        fixed_threshold: a.fixed_threshold,
        histogram_bins: a.bins,
        workers: a.workers.unwrap_or_else(default_workers),
        report_scale: a.scale.into(),
    };
    let report = evaluate(&corpus, &cfg)?;
    let format = match a.format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    };
    write_output(a.out.as_deref(), &render(&report, format)?)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if report.target_metrics_defined() { 0 } else { EXIT_UNDEFINED })
}

fn thin<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    let n = points.len();
    if n <= max || max < 2 {
        return points.to_vec();
    }
    (0..max).map(|k| points[k * (n - 1) / (max - 1)]).collect()
}

fn run_curve(a: CurveArgs) -> Result<u8> {
    let corpus = load(&a.manifest)?;
    let hist = corpus_histogram(&corpus, a.bins)?;
    let mut text = String::new();
    match a.kind {
        CurveKind::Pr => {
            text.push_str("threshold,precision,recall\n");
            let curve = match pixel_pr_curve(&hist) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return Ok(EXIT_UNDEFINED);
                }
            };
            for p in sample_curve(&curve, a.samples).points {
                text.push_str(&format!("{},{},{}\n", p.threshold, p.precision, p.recall));
            }
        }
        CurveKind::Roc => {
            text.push_str("threshold,fpr,tpr\n");
            let curve = match roc_curve(&hist) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return Ok(EXIT_UNDEFINED);
                }
            };
            for p in thin(&curve, a.samples) {
                text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
            }
        }
    }
    write_output(a.out.as_deref(), &text)?;
    Ok(0)
}

fn run_gen(a: GenArgs) -> Result<u8> {
    let spec = CorpusSpec {
        images: a.images,
        scene: SceneSpec {
            height: a.height,
            width: a.width,
            n_targets: a.targets,
            radius_min: a.radius_min,
            radius_max: a.radius_max,
            noise_level: a.noise,
            seed: a.seed,
        },
        errors: ErrorModeSpec {
            miss_fraction: a.miss_fraction,
            false_alarm_count: a.false_alarms,
            false_alarm_confidence: a.false_alarm_confidence,
            erosion_pixels: a.erosion,
            confidence_jitter: a.jitter,
        },
    };
    let corpus = gen_corpus(&spec)?;
    let manifest = hse_core::corpus::write_corpus(&corpus, &a.out)?;
    println!("{}", manifest.display());
    Ok(0)
}

fn run_demo_roc(a: DemoRocArgs) -> Result<u8> {
    let demo = build_roc_demo(a.seed)?;
    if let Some(dir) = &a.out {
        write_roc_demo(&demo, dir)?;
    }
    let cfg = EvalConfig {
        workers: a.workers.unwrap_or_else(default_workers),
        ..EvalConfig::default()
    };
    let one = evaluate(&demo.case_i, &cfg)?;
    let two = evaluate(&demo.case_ii, &cfg)?;
    let (Some(auc1), Some(auc2), Some(p1), Some(p2)) = (one.roc_auc, two.roc_auc, one.hse_p, two.hse_p) else {
        bail!("demo corpora lack positives or negatives");
    };
    println!("case     roc_auc   hse_p     fp_pixels");
    println!("I        {auc1:.6}  {p1:.6}  {}", one.fp_pixels);
    println!("II       {auc2:.6}  {p2:.6}  {}", two.fp_pixels);
    let checks = [
        ("roc_auc(I) > roc_auc(II)", auc1 > auc2),
        ("roc_auc(II) > 0.97", auc2 > 0.97),
        ("hse_p(I) < hse_p(II)", p1 < p2),
        ("fp_pixels(I) >= 10 x fp_pixels(II)", one.fp_pixels >= 10 * two.fp_pixels),
    ];
    for (name, ok) in checks {
        println!("{} {name}", if ok { "PASS" } else { "FAIL" });
    }
    Ok(if checks.iter().all(|c| c.1) { 0 } else { EXIT_PROPERTY })
}

fn run_nn_check() -> Result<u8> {
    let outcomes = nn_micro::check::run_suite();
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(0);
    for o in &outcomes {
        println!(
            "{} {:width$}  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
    }
    Ok(if outcomes.iter().all(|o| o.passed) { 0 } else { EXIT_PROPERTY })
}

fn run_fuse(a: FuseArgs) -> Result<u8> {
    let top = match a.scale {
        Scale::Percent => 100.0,
        Scale::Unit => 1.0,
    };
    for v in [a.hse_p, a.hse_t] {
        if !(0.0..=top).contains(&v) {
            bail!("score {v} is outside [0, {top}]");
        }
    }
    let v = match a.scale {
        Scale::Percent => hse_core::hse_percent(a.hse_p, a.hse_t),
        Scale::Unit => hse_core::hse(a.hse_p, a.hse_t),
    };
    println!("{v:.prec$}", prec = a.decimals);
    Ok(0)
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Eval(a) => run_eval(a),
        Command::Curve(a) => run_curve(a),
        Command::Gen(a) => run_gen(a),
        Command::DemoRoc(a) => run_demo_roc(a),
        Command::NnCheck => run_nn_check(),
        Command::Fuse(a) => run_fuse(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_LOAD } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_LOAD)
        }
    }
}
