//! Corpus files: binary PGM images and the tab-separated manifest.
//!
//! Manifest lines are `image_id<TAB>pred_path<TAB>gt_path`; `#` starts a
//! comment and a `# format_version: N` comment records the schema version.
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, LoadError, Result};
use crate::mask::{BinaryMask, BitDepth, ProbMap};

pub const MANIFEST_VERSION: &str = "1";

/// One prediction / ground-truth pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub pred: ProbMap,
    pub gt: BinaryMask,
}

/// Decoded binary (P5) PGM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

fn header_token(data: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
    loop {
        match data.get(*pos) {
            Some(b'#') => {
                while data.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err("truncated header".into()),
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| "expected a decimal number in header".to_string())
}

pub fn decode_pgm(data: &[u8]) -> std::result::Result<Pgm, String> {
    if data.len() < 2 || &data[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let mut pos = 2;
    let width = header_token(data, &mut pos)?;
    let height = header_token(data, &mut pos)?;
    let maxval = header_token(data, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(format!("invalid extent {width}x{height}"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !data.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after maxval".into());
    }
    pos += 1;
    let n = width * height;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let raster = data
        .get(pos..pos + need)
        .ok_or_else(|| format!("raster truncated: need {need} bytes"))?;
    let samples: Vec<u16> = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(s) = samples.iter().find(|&&s| s > maxval as u16) {
        return Err(format!("sample {s} exceeds maxval {maxval}"));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pgm(img: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval > 255 {
        out.extend(img.samples.iter().flat_map(|s| s.to_be_bytes()));
    } else {
        out.extend(img.samples.iter().map(|&s| s as u8));
    }
    out
}

#[cfg(feature = "png")]
fn decode_png(data: &[u8]) -> std::result::Result<Pgm, String> {
    let decoder = png::Decoder::new(std::io::Cursor::new(data));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or("PNG too large")?];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(format!("unsupported PNG color type {:?}", info.color_type));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let buf = &buf[..info.buffer_size()];
    let (maxval, samples) = match info.bit_depth {
        png::BitDepth::Eight => (255, buf.iter().map(|&b| u16::from(b)).collect()),
        png::BitDepth::Sixteen => (
            65535,
            buf.chunks_exact(2)
                .map(|b| u16::from_be_bytes([b[0], b[1]]))
                .collect(),
        ),
        other => return Err(format!("unsupported PNG bit depth {other:?}")),
    };
    Ok(Pgm {
        width,
        height,
        maxval,
        samples,
    })
}

fn read_image(path: &Path) -> std::result::Result<Pgm, String> {
    let data = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let decoded = if is_png {
        #[cfg(feature = "png")]
        {
            decode_png(&data)
        }
        #[cfg(not(feature = "png"))]
        {
            Err("PNG input requires the `png` feature".to_string())
        }
    } else {
        decode_pgm(&data)
    };
    decoded.map_err(|e| format!("{}: {e}", path.display()))
}

/// Predictions must be 8-bit (maxval 255) or 16-bit (maxval 65535).
pub fn pred_from_image(img: &Pgm) -> std::result::Result<ProbMap, String> {
    let map = match img.maxval {
        255 => {
            let levels: Vec<u8> = img.samples.iter().map(|&s| s as u8).collect();
            ProbMap::from_u8(img.height, img.width, &levels)
        }
        65535 => ProbMap::from_u16(img.height, img.width, &img.samples),
        other => return Err(format!("unsupported prediction bit depth (maxval {other})")),
    };
    map.map_err(|e| e.to_string())
}

/// Ground truth is foreground wherever the sample is nonzero.
pub fn gt_from_image(img: &Pgm) -> std::result::Result<BinaryMask, String> {
    BinaryMask::new(
        img.height,
        img.width,
        img.samples.iter().map(|&s| s > 0).collect(),
    )
    .map_err(|e| e.to_string())
}

pub fn pred_to_image(map: &ProbMap) -> Pgm {
    let depth = match map.bit_depth() {
        BitDepth::Eight => BitDepth::Eight,
        _ => BitDepth::Sixteen,
    };
    let q = map.quantized(depth);
    Pgm {
        width: map.width(),
        height: map.height(),
        maxval: depth.max_level().unwrap_or(65535) as u16,
        samples: q.levels().unwrap_or_default(),
    }
}

pub fn gt_to_image(mask: &BinaryMask) -> Pgm {
    Pgm {
        width: mask.width(),
        height: mask.height(),
        maxval: 255,
        samples: mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub pred_path: PathBuf,
    pub gt_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub format_version: String,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn parse(text: &str, root: &Path, origin: &Path) -> Result<Self> {
        let mut format_version = MANIFEST_VERSION.to_string();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            let bad = |reason: String| Error::Manifest {
                path: origin.to_path_buf(),
                line: n + 1,
                reason,
            };
            if let Some(comment) = line.trim_start().strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("format_version:") {
                    format_version = v.trim().to_string();
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [id, pred, gt] = fields[..] else {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
            };
            let id = id.trim();
            if id.is_empty() {
                return Err(bad("empty image_id".into()));
            }
            if !seen.insert(id.to_string()) {
                return Err(bad(format!("duplicate image_id {id:?}")));
            }
            entries.push(ManifestEntry {
                image_id: id.to_string(),
                pred_path: root.join(pred.trim()),
                gt_path: root.join(gt.trim()),
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            format_version,
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, &root, path)
    }
}

fn load_entry(e: &ManifestEntry) -> std::result::Result<Sample, String> {
    let pred = pred_from_image(&read_image(&e.pred_path)?)?;
    let gt = gt_from_image(&read_image(&e.gt_path)?)?;
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(format!(
            "dimension mismatch: prediction {}x{}, ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        ));
    }
    Ok(Sample {
        id: e.image_id.clone(),
        pred,
        gt,
    })
}

/// Loads every pair of a manifest; failures are collected per image id.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<Sample>> {
    let manifest = CorpusManifest::read(manifest_path)?;
    let mut samples = Vec::with_capacity(manifest.entries.len());
    let mut failures = Vec::new();
    for e in &manifest.entries {
        match load_entry(e) {
            Ok(s) => samples.push(s),
            Err(reason) => failures.push(LoadError {
                image_id: e.image_id.clone(),
                reason,
            }),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Load(failures));
    }
    Ok(samples)
}

/// Writes `<id>_pred.pgm`, `<id>_gt.pgm` and `manifest.tsv` into `dir`.
pub fn write_corpus(samples: &[Sample], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("# format_version: {MANIFEST_VERSION}\n");
    for s in samples {
        let pred_name = format!("{}_pred.pgm", s.id);
        let gt_name = format!("{}_gt.pgm", s.id);
        for (name, img) in [(&pred_name, pred_to_image(&s.pred)), (&gt_name, gt_to_image(&s.gt))] {
            let p = dir.join(name);
            fs::write(&p, encode_pgm(&img)).map_err(|e| Error::io(&p, e))?;
        }
        manifest.push_str(&format!("{}\t{pred_name}\t{gt_name}\n", s.id));
    }
    let path = dir.join("manifest.tsv");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
