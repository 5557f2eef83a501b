//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks.
#![allow(dead_code)]

/// Recursive flood fill; labels are numbered in raster first-encounter order.
pub fn flood_fill_labels(bits: &[bool], h: usize, w: usize, eight: bool) -> Vec<u32> {
    fn fill(
        bits: &[bool],
        labels: &mut [u32],
        h: usize,
        w: usize,
        eight: bool,
        r: usize,
        c: usize,
        id: u32,
    ) {
        labels[r * w + c] = id;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if (dr == 0 && dc == 0) || (!eight && dr != 0 && dc != 0) {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if bits[nr * w + nc] && labels[nr * w + nc] == 0 {
                    fill(bits, labels, h, w, eight, nr, nc, id);
                }
            }
        }
    }
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    for r in 0..h {
        for c in 0..w {
            if bits[r * w + c] && labels[r * w + c] == 0 {
                next += 1;
                fill(bits, &mut labels, h, w, eight, r, c, next);
            }
        }
    }
    labels
}

/// Centroids of flood-fill components, indexed by `label - 1`.
pub fn centroids(labels: &[u32], w: usize) -> Vec<(f64, f64)> {
    let k = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut acc = vec![(0.0f64, 0.0f64, 0usize); k];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            let a = &mut acc[l as usize - 1];
            a.0 += (i / w) as f64;
            a.1 += (i % w) as f64;
            a.2 += 1;
        }
    }
    acc.into_iter()
        .map(|(r, c, n)| (r / n as f64, c / n as f64))
        .collect()
}

/// Greedy matching written out directly: returns the number of matches.
pub fn greedy_matches(pred: &[(f64, f64)], gt: &[(f64, f64)], tau: f64) -> usize {
    let mut used = vec![false; pred.len()];
    let mut n = 0;
    for g in gt {
        if let Some(j) = (0..pred.len()).find(|&j| {
            !used[j] && ((g.0 - pred[j].0).powi(2) + (g.1 - pred[j].1).powi(2)).sqrt() <= tau
        }) {
            used[j] = true;
            n += 1;
        }
    }
    n
}

/// One image as raw vectors.
pub struct RawImage {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
    pub gt: Vec<bool>,
}

/// (n_match, n_pred, n_gt) of one image at threshold `t`.
pub fn target_counts(img: &RawImage, t: f64, tau: f64, eight: bool) -> (u64, u64, u64) {
    let pred: Vec<bool> = img.values.iter().map(|&v| v > t).collect();
    let pl = flood_fill_labels(&pred, img.h, img.w, eight);
    let gl = flood_fill_labels(&img.gt, img.h, img.w, eight);
    let pc = centroids(&pl, img.w);
    let gc = centroids(&gl, img.w);
    (greedy_matches(&pc, &gc, tau) as u64, pc.len() as u64, gc.len() as u64)
}

/// Exhaustive-threshold pixel PR integral for maps quantized to `levels + 1`
/// levels (`value = k / levels`). Every threshold `j / levels` is evaluated
/// by a full pass over all pixels.
pub fn exhaustive_hse_p(images: &[RawImage], levels: u32) -> f64 {
    let total_pos: u64 = images
        .iter()
        .map(|im| im.gt.iter().filter(|&&g| g).count() as u64)
        .sum();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for j in 0..=levels {
        let t = j as f64 / levels as f64;
        let (mut tp, mut fp) = (0u64, 0u64);
        for im in images {
            for (&v, &g) in im.values.iter().zip(&im.gt) {
                if v > t {
                    if g {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        if tp + fp > 0 {
            pts.push((tp as f64 / (tp + fp) as f64, tp as f64 / total_pos as f64));
        }
    }
    let mut area = 0.0;
    for k in 0..pts.len() {
        let next = if k + 1 < pts.len() { pts[k + 1].1 } else { 0.0 };
        area += pts[k].0 * (pts[k].1 - next);
    }
    area
}

/// Pairwise Mann-Whitney AUC with ties counted half.
pub fn pairwise_auc(images: &[RawImage]) -> f64 {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for im in images {
        for (&v, &g) in im.values.iter().zip(&im.gt) {
            if g {
                pos.push(v)
            } else {
                neg.push(v)
            }
        }
    }
    let mut s = 0.0;
    for &p in &pos {
        for &n in &neg {
            s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    s / (pos.len() as f64 * neg.len() as f64)
}

/// Naive single-threaded evaluation of the whole metric set.
pub struct NaiveReport {
    pub iou: f64,
    pub niou: f64,
    pub pd: f64,
    pub fa: f64,
    pub hse_p: f64,
    pub hse_t: f64,
    pub hse: f64,
}

pub fn naive_report(
    images: &[RawImage],
    levels: u32,
    thresholds: &[f64],
    fixed: f64,
    tau: f64,
    eight: bool,
) -> NaiveReport {
    let (mut inter, mut union, mut niou) = (0u64, 0u64, 0.0);
    let (mut fp, mut total) = (0u64, 0u64);
    let (mut m, mut g) = (0u64, 0u64);
    for im in images {
        let (mut i1, mut u1) = (0u64, 0u64);
        for (&v, &gt) in im.values.iter().zip(&im.gt) {
            let p = v > fixed;
            i1 += (p && gt) as u64;
            u1 += (p || gt) as u64;
            fp += (p && !gt) as u64;
        }
        inter += i1;
        union += u1;
        niou += if u1 == 0 { 1.0 } else { i1 as f64 / u1 as f64 };
        total += (im.h * im.w) as u64;
        let (mm, _, gg) = target_counts(im, fixed, tau, eight);
        m += mm;
        g += gg;
    }
    let mut pr = Vec::new();
    for &t in thresholds {
        let (mut a, mut b, mut c) = (0u64, 0u64, 0u64);
        for im in images {
            let (x, y, z) = target_counts(im, t, tau, eight);
            a += x;
            b += y;
            c += z;
        }
        let p = if b == 0 { 0.0 } else { a as f64 / b as f64 };
        pr.push((p, a as f64 / c as f64));
    }
    let mut hse_t = 0.0;
    for j in 0..pr.len() {
        let next = if j + 1 < pr.len() { pr[j + 1].1 } else { 0.0 };
        hse_t += pr[j].0 * (pr[j].1 - next);
    }
    let hse_p = exhaustive_hse_p(images, levels);
    NaiveReport {
        iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        niou: niou / images.len() as f64,
        pd: m as f64 / g as f64,
        fa: fp as f64 / total as f64,
        hse_p,
        hse_t,
        hse: hse_p * hse_t,
    }
}

/// Small deterministic generator for test inputs (xorshift64*).
pub struct TestRng(pub u64);

impl TestRng {
    pub fn next_u64(&mut self) -> u64 {
        self.0 ^= self.0 >> 12;
        self.0 ^= self.0 << 25;
        self.0 ^= self.0 >> 27;
        self.0.wrapping_mul(0x2545_f491_4f6c_dd1d)
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random 8-bit image with blob-ish positives and label-correlated scores.
pub fn random_8bit_image(rng: &mut TestRng, h: usize, w: usize) -> (Vec<u8>, Vec<bool>) {
    let mut gt = vec![false; h * w];
    let blobs = 1 + rng.below(4) as usize;
    for _ in 0..blobs {
        let (r0, c0) = (rng.below(h as u64) as usize, rng.below(w as u64) as usize);
        let rad = 1 + rng.below(3) as i64;
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = (r as i64 - r0 as i64, c as i64 - c0 as i64);
                if dr * dr + dc * dc <= rad * rad {
                    gt[r * w + c] = true;
                }
            }
        }
    }
    let levels = gt
        .iter()
        .map(|&g| {
            let base = if g { 150.0 } else { 20.0 };
            let spread = if g { 105.0 } else { 180.0 };
            (base + spread * rng.unit() * rng.unit()).min(255.0) as u8
        })
        .collect();
    (levels, gt)
}

/// 32x32 corpus whose target PR points at thresholds {0.2, 0.5, 0.8} are
/// (1, 1), (1, 0.5), (0.5, 0.5), so the target integral is exactly 0.75.
///
/// Target A (3x3 at 10,10) scores 0.9 and is tied to a 0.9 false-alarm pixel
/// at (10,14) by a 0.6 bridge; target B (3x3 at 25,25) scores 0.3.
pub fn hand_target_corpus() -> (usize, usize, Vec<f64>, Vec<bool>) {
    let (h, w) = (32, 32);
    let mut values = vec![0.0; h * w];
    let mut gt = vec![false; h * w];
    for r in 9..=11 {
        for c in 9..=11 {
            values[r * w + c] = 0.9;
            gt[r * w + c] = true;
        }
    }
    for r in 24..=26 {
        for c in 24..=26 {
            values[r * w + c] = 0.3;
            gt[r * w + c] = true;
        }
    }
    values[10 * w + 12] = 0.6;
    values[10 * w + 13] = 0.6;
    values[10 * w + 14] = 0.9;
    (h, w, values, gt)
}
