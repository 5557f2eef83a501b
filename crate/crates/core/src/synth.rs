//! Seeded synthetic scenes and controlled prediction degradations.
//!
//! Targets are hard integer disks placed with integer arithmetic; all
//! randomness comes from [`CounterRng`], one stream per purpose, so every
//! output is a pure function of `(spec, seed)`.

use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::mask::{label_components, BinaryMask, BitDepth, Connectivity, ProbMap};
use crate::rng::{philox4x32_10, CounterRng};

const PLACEMENT_TRIES: usize = 10_000;
const FALSE_ALARM_TRIES: usize = 1_000;
/// Every ground-truth pixel is farther than this from a false-alarm center.
const FALSE_ALARM_CLEARANCE: f64 = 6.0;
/// Boundary attenuation factor applied per erosion layer.
const EROSION_FACTOR: f64 = 0.5;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_MISS: u64 = 2;
const STREAM_FALSE_ALARM: u64 = 3;
const STREAM_JITTER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub n_targets: usize,
    pub radius_min: u32,
    pub radius_max: u32,
    /// Background noise scale; samples are `noise_level * z` clipped to
    /// `[0, noise_level]`.
    pub noise_level: f64,
    pub seed: u64,
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("scene extent must be at least 1x1"));
        }
        if self.radius_min < 1 || self.radius_min > self.radius_max {
            return Err(Error::invalid(format!(
                "radius range [{}, {}] is invalid",
                self.radius_min, self.radius_max
            )));
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return Err(Error::invalid("noise level must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disk {
    pub row: u32,
    pub col: u32,
    pub radius: u32,
}

impl Disk {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let dr = row as i64 - i64::from(self.row);
        let dc = col as i64 - i64::from(self.col);
        dr * dr + dc * dc <= i64::from(self.radius * self.radius)
    }

    /// Pixel count of a radius-`r` disk.
    pub fn area_of(radius: u32) -> usize {
        let r = i64::from(radius);
        (-r..=r)
            .flat_map(|dr| (-r..=r).map(move |dc| (dr, dc)))
            .filter(|(dr, dc)| dr * dr + dc * dc <= r * r)
            .count()
    }

    fn pixels(&self, height: usize, width: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let r = self.radius as usize;
        let (r0, c0) = (self.row as usize, self.col as usize);
        (r0.saturating_sub(r)..=(r0 + r).min(height - 1))
            .flat_map(move |row| (c0.saturating_sub(r)..=(c0 + r).min(width - 1)).map(move |col| (row, col)))
            .filter(move |&(row, col)| self.contains(row, col))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub gt: BinaryMask,
    /// 1.0 on targets, clipped noise elsewhere, 8-bit quantized.
    pub ideal: ProbMap,
    pub disks: Vec<Disk>,
}

fn place_disks(spec: &SceneSpec) -> Result<Vec<Disk>> {
    let mut rng = CounterRng::new(spec.seed, STREAM_PLACEMENT);
    let mut disks: Vec<Disk> = Vec::with_capacity(spec.n_targets);
    for k in 0..spec.n_targets {
        let mut placed = None;
        for _ in 0..PLACEMENT_TRIES {
            let radius = rng.range_inclusive(spec.radius_min, spec.radius_max);
            let span = 2 * radius as usize + 1;
            if span > spec.height || span > spec.width {
                continue;
            }
            let row = rng.range_inclusive(radius, spec.height as u32 - 1 - radius);
            let col = rng.range_inclusive(radius, spec.width as u32 - 1 - radius);
            // Centers farther apart than r1 + r2 + 2 keep disks non-adjacent
            // even under eight-connectivity.
            let clear = disks.iter().all(|d| {
                let dr = i64::from(d.row) - i64::from(row);
                let dc = i64::from(d.col) - i64::from(col);
                let gap = i64::from(d.radius + radius + 2);
                dr * dr + dc * dc > gap * gap
            });
            if clear {
                placed = Some(Disk { row, col, radius });
                break;
            }
        }
        match placed {
            Some(d) => disks.push(d),
            None => {
                return Err(Error::InfeasibleSpec(format!(
                    "could not place target {} of {} in a {}x{} scene",
                    k + 1,
                    spec.n_targets,
                    spec.height,
                    spec.width
                )))
            }
        }
    }
    Ok(disks)
}

pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let disks = place_disks(spec)?;
    let (h, w) = (spec.height, spec.width);
    let mut gt = BinaryMask::empty(h, w)?;
    for d in &disks {
        for (r, c) in d.pixels(h, w) {
            gt.set(r, c, true);
        }
    }
    let mut noise = CounterRng::new(spec.seed, STREAM_NOISE);
    let sigma = spec.noise_level;
    let values = gt
        .bits()
        .iter()
        .map(|&g| {
            // Draw for every pixel so the noise field does not shift with the targets.
            let n = (sigma * noise.normal()).clamp(0.0, sigma);
            if g {
                1.0
            } else {
                n
            }
        })
        .collect();
    let ideal = ProbMap::new(h, w, values)?.quantized(BitDepth::Eight);
    Ok(Scene { gt, ideal, disks })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorModeSpec {
    /// Fraction of ground-truth targets zeroed out.
    pub miss_fraction: f64,
    /// Number of spurious five-pixel blobs.
    pub false_alarm_count: usize,
    pub false_alarm_confidence: f64,
    /// Boundary layers of each target attenuated by half per layer.
    pub erosion_pixels: u32,
    /// Standard deviation of additive confidence noise.
    pub confidence_jitter: f64,
}

impl ErrorModeSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miss_fraction) {
            return Err(Error::invalid("miss_fraction must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.false_alarm_confidence) {
            return Err(Error::invalid("false_alarm_confidence must lie in [0, 1]"));
        }
        if !(self.confidence_jitter >= 0.0) {
            return Err(Error::invalid("confidence_jitter must be non-negative"));
        }
        Ok(())
    }
}

const PLUS: [(i64, i64); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];

/// Centers of up to `count` plus-shaped blobs that stay clear of the ground
/// truth and of each other. Placement gives up on a blob after a bounded
/// number of tries, so fewer centers may come back on crowded scenes.
pub fn place_false_alarms(gt: &BinaryMask, count: usize, rng: &mut CounterRng) -> Vec<(usize, usize)> {
    let (h, w) = (gt.height(), gt.width());
    if h < 3 || w < 3 {
        return Vec::new();
    }
    let gt_pixels: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| gt.get(r, c))
        .collect();
    let clearance2 = FALSE_ALARM_CLEARANCE * FALSE_ALARM_CLEARANCE;
    let mut centers: Vec<(usize, usize)> = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..FALSE_ALARM_TRIES {
            let r = rng.range_inclusive(1, h as u32 - 2) as usize;
            let c = rng.range_inclusive(1, w as u32 - 2) as usize;
            let d2 = |&(a, b): &(usize, usize)| {
                let dr = a as f64 - r as f64;
                let dc = b as f64 - c as f64;
                dr * dr + dc * dc
            };
            if gt_pixels.iter().all(|p| d2(p) > clearance2) && centers.iter().all(|p| d2(p) > 16.0) {
                centers.push((r, c));
                break;
            }
        }
    }
    centers
}

fn stamp_plus(values: &mut [f64], width: usize, (r, c): (usize, usize), v: f64) {
    for (dr, dc) in PLUS {
        let i = (r as i64 + dr) as usize * width + (c as i64 + dc) as usize;
        values[i] = values[i].max(v);
    }
}

/// Applies misses, erosion, false alarms and jitter, in that order.
pub fn perturb(ideal: &ProbMap, gt: &BinaryMask, e: &ErrorModeSpec, seed: u64) -> Result<ProbMap> {
    crate::mask::check_same(ideal.height(), ideal.width(), gt.height(), gt.width())?;
    e.validate()?;
    let (h, w) = (gt.height(), gt.width());
    let mut values = ideal.values().to_vec();

    // Misses: zero a seeded subset of whole components.
    let (labels, targets) = label_components(gt, Connectivity::Eight);
    let k = targets.len();
    let n_miss = ((e.miss_fraction * k as f64).round() as usize).min(k);
    let mut ids: Vec<u32> = (1..=k as u32).collect();
    let mut rng = CounterRng::new(seed, STREAM_MISS);
    for i in 0..n_miss {
        let j = i + rng.below((k - i) as u32) as usize;
        ids.swap(i, j);
    }
    let mut missed = vec![false; k + 1];
    for &id in &ids[..n_miss] {
        missed[id as usize] = true;
    }
    let mut remaining = vec![false; h * w];
    for (i, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        if missed[l as usize] {
            values[i] = 0.0;
        } else {
            remaining[i] = true;
        }
    }

    // Erosion: peel boundary layers of the surviving targets.
    for _ in 0..e.erosion_pixels {
        let boundary: Vec<usize> = (0..h * w)
            .filter(|&i| remaining[i])
            .filter(|&i| {
                let (r, c) = ((i / w) as i64, (i % w) as i64);
                (-1..=1).any(|dr| {
                    (-1..=1).any(|dc| {
                        let (nr, nc) = (r + dr, c + dc);
                        nr < 0
                            || nc < 0
                            || nr >= h as i64
                            || nc >= w as i64
                            || !remaining[nr as usize * w + nc as usize]
                    })
                })
            })
            .collect();
        if boundary.is_empty() {
            break;
        }
        for i in boundary {
            values[i] *= EROSION_FACTOR;
            remaining[i] = false;
        }
    }

    let mut rng = CounterRng::new(seed, STREAM_FALSE_ALARM);
    for center in place_false_alarms(gt, e.false_alarm_count, &mut rng) {
        stamp_plus(&mut values, w, center, e.false_alarm_confidence);
    }

    if e.confidence_jitter > 0.0 {
        let mut rng = CounterRng::new(seed, STREAM_JITTER);
        for v in values.iter_mut() {
            *v = (*v + e.confidence_jitter * rng.normal()).clamp(0.0, 1.0);
        }
    }

    Ok(ProbMap::new(h, w, values)?.quantized(ideal.bit_depth()))
}

/// Derives the seed of image `index` from a corpus seed.
pub fn image_seed(seed: u64, index: u64) -> u64 {
    let b = philox4x32_10(
        [index as u32, (index >> 32) as u32, 0x5eed, 0],
        [seed as u32, (seed >> 32) as u32],
    );
    u64::from(b[0]) | (u64::from(b[1]) << 32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub images: usize,
    pub scene: SceneSpec,
    pub errors: ErrorModeSpec,
}

/// `images` perturbed scenes with ids `img_00000`, `img_00001`, ...
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Vec<Sample>> {
    (0..spec.images)
        .map(|i| {
            let seed = image_seed(spec.scene.seed, i as u64);
            let scene = gen_scene(&SceneSpec {
                seed,
                ..spec.scene.clone()
            })?;
            let pred = perturb(&scene.ideal, &scene.gt, &spec.errors, seed)?;
            Ok(Sample {
                id: format!("img_{i:05}"),
                pred,
                gt: scene.gt,
            })
        })
        .collect()
}

/// Fixed construction parameters of the ROC-limitation demo.
pub mod roc_demo {
    pub const IMAGES: usize = 8;
    pub const SIZE: usize = 256;
    pub const TARGETS: usize = 4;
    pub const RADIUS_MIN: u32 = 2;
    pub const RADIUS_MAX: u32 = 3;
    pub const NOISE: f64 = 0.1;
    /// Case I: target cores, rims, and many confident false alarms.
    pub const CASE_I_CORE: f64 = 1.0;
    pub const CASE_I_RIM: f64 = 0.55;
    pub const CASE_I_FALSE_ALARMS: usize = 120;
    /// Case II: slightly lower target confidence, faded bottom tips, few
    /// false alarms.
    pub const CASE_II_TARGET: f64 = 0.9;
    pub const CASE_II_TIP: f64 = 0.06;
    pub const CASE_II_FALSE_ALARMS: usize = 10;
    pub const FALSE_ALARM_CONFIDENCE: f64 = 0.75;
}

#[derive(Debug, Clone)]
pub struct RocDemo {
    pub case_i: Vec<Sample>,
    pub case_ii: Vec<Sample>,
}

/// Two corpora over the same scenes.
///
/// Case I ranks a crowd of false-alarm pixels above the target rims: almost
/// every (positive, negative) pair is still ordered correctly, so ROC-AUC
/// stays near 1, while precision collapses for the rim pixels. Case II has
/// few false alarms but fades one tip pixel per target into the background
/// noise, costing some AUC while keeping precision high up to ~95% recall.
pub fn build_roc_demo(seed: u64) -> Result<RocDemo> {
    use roc_demo::*;
    let mut case_i = Vec::with_capacity(IMAGES);
    let mut case_ii = Vec::with_capacity(IMAGES);
    for i in 0..IMAGES {
        let s = image_seed(seed, i as u64);
        let scene = gen_scene(&SceneSpec {
            height: SIZE,
            width: SIZE,
            n_targets: TARGETS,
            radius_min: RADIUS_MIN,
            radius_max: RADIUS_MAX,
            noise_level: NOISE,
            seed: s,
        })?;
        let background = scene.ideal.values();
        let mut one = background.to_vec();
        let mut two = background.to_vec();
        for d in &scene.disks {
            let core = Disk {
                radius: d.radius - 1,
                ..*d
            };
            for (r, c) in d.pixels(SIZE, SIZE) {
                let i = r * SIZE + c;
                one[i] = if core.contains(r, c) { CASE_I_CORE } else { CASE_I_RIM };
                let tip = r == (d.row + d.radius) as usize && c == d.col as usize;
                two[i] = if tip { CASE_II_TIP } else { CASE_II_TARGET };
            }
        }
        let mut rng = CounterRng::new(s, STREAM_FALSE_ALARM);
        let centers = place_false_alarms(&scene.gt, CASE_I_FALSE_ALARMS, &mut rng);
        for &c in &centers {
            stamp_plus(&mut one, SIZE, c, FALSE_ALARM_CONFIDENCE);
        }
        // Case II reuses a prefix of the same false-alarm sites.
        for &c in centers.iter().take(CASE_II_FALSE_ALARMS) {
            stamp_plus(&mut two, SIZE, c, FALSE_ALARM_CONFIDENCE);
        }
        let id = format!("roc_{i:03}");
        case_i.push(Sample {
            id: id.clone(),
            pred: ProbMap::new(SIZE, SIZE, one)?.quantized(BitDepth::Eight),
            gt: scene.gt.clone(),
        });
        case_ii.push(Sample {
            id,
            pred: ProbMap::new(SIZE, SIZE, two)?.quantized(BitDepth::Eight),
            gt: scene.gt,
        });
    }
    Ok(RocDemo { case_i, case_ii })
}

/// Writes the two demo corpora to `dir/case_i` and `dir/case_ii`.
pub fn write_roc_demo(demo: &RocDemo, dir: &std::path::Path) -> Result<()> {
    crate::corpus::write_corpus(&demo.case_i, &dir.join("case_i"))?;
    crate::corpus::write_corpus(&demo.case_ii, &dir.join("case_ii"))?;
    Ok(())
}
