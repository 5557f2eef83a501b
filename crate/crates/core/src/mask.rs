//! Probability maps, binary masks and connected components.
//!
//! Everything here is a pure function of its inputs. Component ids are
//! assigned in raster-scan first-encounter order so that reports built on top
//! of them are byte-stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source quantization of a probability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    Eight,
    Sixteen,
    Continuous,
}

impl BitDepth {
    /// Largest integer level, if the depth is quantized.
    pub fn max_level(self) -> Option<u32> {
        match self {
            BitDepth::Eight => Some(255),
            BitDepth::Sixteen => Some(65535),
            BitDepth::Continuous => None,
        }
    }
}

/// Row-major grid of confidences in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    bit_depth: BitDepth,
}

fn check_extent(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!(
            "image extent must be at least 1x1, got {height}x{width}"
        )));
    }
    if height * width != len {
        return Err(Error::invalid(format!(
            "{height}x{width} image needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}

impl ProbMap {
    /// Builds a continuous-valued map; every value must lie in `[0, 1]`.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_extent(height, width, values.len())?;
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(format!(
                "confidence {v} at index {i} is outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            bit_depth: BitDepth::Continuous,
        })
    }

    /// 8-bit levels, mapped to `level / 255`.
    pub fn from_u8(height: usize, width: usize, levels: &[u8]) -> Result<Self> {
        check_extent(height, width, levels.len())?;
        Ok(Self {
            height,
            width,
            values: levels.iter().map(|&l| f64::from(l) / 255.0).collect(),
            bit_depth: BitDepth::Eight,
        })
    }

    /// 16-bit levels, mapped to `level / 65535`.
    pub fn from_u16(height: usize, width: usize, levels: &[u16]) -> Result<Self> {
        check_extent(height, width, levels.len())?;
        Ok(Self {
            height,
            width,
            values: levels.iter().map(|&l| f64::from(l) / 65535.0).collect(),
            bit_depth: BitDepth::Sixteen,
        })
    }

    /// Rounds every value to the nearest level of `depth`.
    pub fn quantized(&self, depth: BitDepth) -> Self {
        let Some(max) = depth.max_level() else {
            return Self {
                bit_depth: BitDepth::Continuous,
                ..self.clone()
            };
        };
        let max = f64::from(max);
        Self {
            height: self.height,
            width: self.width,
            values: self
                .values
                .iter()
                .map(|v| (v * max).round() / max)
                .collect(),
            bit_depth: depth,
        }
    }

    /// Integer levels of a quantized map, `None` for continuous maps.
    pub fn levels(&self) -> Option<Vec<u16>> {
        let max = f64::from(self.bit_depth.max_level()?);
        Some(
            self.values
                .iter()
                .map(|v| (v * max).round() as u16)
                .collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bit_depth(&self) -> BitDepth {
        self.bit_depth
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Row-major boolean grid. Also used for ground truths.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        check_extent(height, width, bits.len())?;
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> Result<()> {
        check_same(self.height, self.width, other.height, other.width)
    }
}

pub(crate) fn check_same(lh: usize, lw: usize, rh: usize, rw: usize) -> Result<()> {
    if lh != rh || lw != rw {
        return Err(Error::DimensionMismatch {
            left_h: lh,
            left_w: lw,
            right_h: rh,
            right_w: rw,
        });
    }
    Ok(())
}

/// Neighbor relation used to group foreground pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u32) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::invalid(format!(
                "connectivity must be 4 or 8, got {other}"
            ))),
        }
    }

    pub fn neighbors(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Component labels; 0 is background, components are numbered `1..=K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: u32,
}

impl LabelMap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    /// Number of components `K`.
    pub fn count(&self) -> u32 {
        self.count
    }
}

/// Geometry of one connected component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: u32,
    pub centroid_row: f64,
    pub centroid_col: f64,
    pub area: usize,
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

/// Components of a mask in label order; `targets()[k]` has id `k + 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TargetSet {
    targets: Vec<Target>,
}

impl TargetSet {
    pub fn targets(&self) -> &[Target] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn total_area(&self) -> usize {
        self.targets.iter().map(|t| t.area).sum()
    }
}

impl FromIterator<Target> for TargetSet {
    fn from_iter<I: IntoIterator<Item = Target>>(iter: I) -> Self {
        Self {
            targets: iter.into_iter().collect(),
        }
    }
}

/// Indicator `value > t`, applied per pixel.
pub fn binarize(map: &ProbMap, t: f64) -> BinaryMask {
    BinaryMask {
        height: map.height,
        width: map.width,
        bits: map.values.iter().map(|&v| v > t).collect(),
    }
}

/// Arithmetic mean of row and column indices.
pub fn centroid(pixels: &[(usize, usize)]) -> Result<(f64, f64)> {
    if pixels.is_empty() {
        return Err(Error::invalid("centroid of an empty pixel set"));
    }
    let (sr, sc) = pixels
        .iter()
        .fold((0u64, 0u64), |(sr, sc), &(r, c)| (sr + r as u64, sc + c as u64));
    let n = pixels.len() as f64;
    Ok((sr as f64 / n, sc as f64 / n))
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) -> u32 {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra == rb {
        return ra;
    }
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    parent[hi as usize] = lo;
    lo
}

/// Running geometry of one provisional label.
#[derive(Clone, Copy)]
struct Acc {
    area: usize,
    sum_row: u64,
    sum_col: u64,
    min_row: usize,
    min_col: usize,
    max_row: usize,
    max_col: usize,
}

impl Acc {
    fn merge(&mut self, o: &Acc) {
        self.area += o.area;
        self.sum_row += o.sum_row;
        self.sum_col += o.sum_col;
        self.min_row = self.min_row.min(o.min_row);
        self.min_col = self.min_col.min(o.min_col);
        self.max_row = self.max_row.max(o.max_row);
        self.max_col = self.max_col.max(o.max_col);
    }
}

/// Components of the pixels where `fg(index)` holds, without materializing
/// a mask or a label image.
///
/// Only two rows of provisional labels are kept. Each component's root is its
/// smallest provisional label, which belongs to its first pixel in raster
/// order, so sorting roots reproduces the numbering of [`label_components`].
pub fn targets_where(
    height: usize,
    width: usize,
    connectivity: Connectivity,
    fg: impl Fn(usize) -> bool,
) -> TargetSet {
    let w = width;
    let mut prev = vec![0u32; w];
    let mut cur = vec![0u32; w];
    let mut parent: Vec<u32> = vec![0];
    let mut acc: Vec<Acc> = vec![Acc {
        area: 0,
        sum_row: 0,
        sum_col: 0,
        min_row: 0,
        min_col: 0,
        max_row: 0,
        max_col: 0,
    }];
    let eight = connectivity == Connectivity::Eight;
    for r in 0..height {
        let row = r * w;
        for c in 0..w {
            if !fg(row + c) {
                cur[c] = 0;
                continue;
            }
            let mut current = 0u32;
            let mut visit = |n: u32| {
                if n != 0 {
                    current = if current == 0 { find(&mut parent, n) } else { union(&mut parent, current, n) };
                }
            };
            if c > 0 {
                visit(cur[c - 1]);
            }
            if r > 0 {
                visit(prev[c]);
                if eight {
                    if c > 0 {
                        visit(prev[c - 1]);
                    }
                    if c + 1 < w {
                        visit(prev[c + 1]);
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
                acc.push(Acc {
                    area: 0,
                    sum_row: 0,
                    sum_col: 0,
                    min_row: r,
                    min_col: c,
                    max_row: r,
                    max_col: c,
                });
            }
            cur[c] = current;
            let a = &mut acc[current as usize];
            a.area += 1;
            a.sum_row += r as u64;
            a.sum_col += c as u64;
            a.min_col = a.min_col.min(c);
            a.max_col = a.max_col.max(c);
            a.max_row = r;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    // Non-root labels hold only their own pixels; fold each into its root.
    for l in 1..parent.len() {
        let root = find(&mut parent, l as u32) as usize;
        if root != l {
            let child = acc[l];
            acc[root].merge(&child);
        }
    }
    let mut targets = Vec::new();
    for l in 1..parent.len() {
        if parent[l] as usize == l {
            let a = &acc[l];
            targets.push(Target {
                id: targets.len() as u32 + 1,
                centroid_row: a.sum_row as f64 / a.area as f64,
                centroid_col: a.sum_col as f64 / a.area as f64,
                area: a.area,
                min_row: a.min_row,
                min_col: a.min_col,
                max_row: a.max_row,
                max_col: a.max_col,
            });
        }
    }
    TargetSet { targets }
}

/// Components of `map > t`.
pub fn targets_above(map: &ProbMap, t: f64, connectivity: Connectivity) -> TargetSet {
    let v = &map.values;
    targets_where(map.height, map.width, connectivity, |i| v[i] > t)
}

/// Two-pass union-find labeling.
///
/// The first pass assigns provisional labels and records equivalences against
/// the already-scanned neighbors; the second pass resolves roots and renumbers
/// them in the order their first pixel appears in a raster scan.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> (LabelMap, TargetSet) {
    let (h, w) = (mask.height, mask.width);
    let bits = &mask.bits;
    let mut prov = vec![0u32; h * w];
    // parent[0] is the background sentinel.
    let mut parent: Vec<u32> = vec![0];

    for r in 0..h {
        let row = r * w;
        for c in 0..w {
            if !bits[row + c] {
                continue;
            }
            let mut current = 0u32;
            let visit = |n: u32, current: &mut u32, parent: &mut Vec<u32>| {
                if n == 0 {
                    return;
                }
                *current = if *current == 0 {
                    find(parent, n)
                } else {
                    union(parent, *current, n)
                };
            };
            if c > 0 {
                visit(prov[row + c - 1], &mut current, &mut parent);
            }
            if r > 0 {
                let up = row - w;
                visit(prov[up + c], &mut current, &mut parent);
                if connectivity == Connectivity::Eight {
                    if c > 0 {
                        visit(prov[up + c - 1], &mut current, &mut parent);
                    }
                    if c + 1 < w {
                        visit(prov[up + c + 1], &mut current, &mut parent);
                    }
                }
            }
            if current == 0 {
                current = parent.len() as u32;
                parent.push(current);
            }
            prov[row + c] = current;
        }
    }

    let mut final_id = vec![0u32; parent.len()];
    let mut targets: Vec<Target> = Vec::new();
    let mut sums: Vec<(u64, u64)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let p = prov[i];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if final_id[root] == 0 {
                targets.push(Target {
                    id: targets.len() as u32 + 1,
                    centroid_row: 0.0,
                    centroid_col: 0.0,
                    area: 0,
                    min_row: r,
                    min_col: c,
                    max_row: r,
                    max_col: c,
                });
                sums.push((0, 0));
                final_id[root] = targets.len() as u32;
            }
            let id = final_id[root];
            prov[i] = id;
            let t = &mut targets[id as usize - 1];
            t.area += 1;
            t.min_col = t.min_col.min(c);
            t.max_col = t.max_col.max(c);
            t.max_row = r;
            let s = &mut sums[id as usize - 1];
            s.0 += r as u64;
            s.1 += c as u64;
        }
    }
    for (t, (sr, sc)) in targets.iter_mut().zip(sums) {
        t.centroid_row = sr as f64 / t.area as f64;
        t.centroid_col = sc as f64 / t.area as f64;
    }

    let count = targets.len() as u32;
    (
        LabelMap {
            height: h,
            width: w,
            labels: prov,
            count,
        },
        TargetSet { targets },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[f64]) -> ProbMap {
        ProbMap::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn binarize_is_strict() {
        let m = binarize(&map(1, 3, &[0.2, 0.5, 0.9]), 0.5);
        assert_eq!(m.bits(), &[false, false, true]);
    }

    #[test]
    fn binarize_at_one_is_empty() {
        let m = binarize(&map(2, 2, &[1.0, 0.0, 0.99, 1.0]), 1.0);
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn binarize_two_by_two() {
        let m = binarize(&map(2, 2, &[0.1, 0.6, 0.7, 0.3]), 0.5);
        assert_eq!(m.bits(), &[false, true, true, false]);
    }

    #[test]
    fn rejects_out_of_range_and_bad_extent() {
        assert!(ProbMap::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(ProbMap::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ProbMap::new(0, 2, vec![]).is_err());
        assert!(ProbMap::new(2, 2, vec![0.0; 3]).is_err());
        assert!(BinaryMask::new(1, 1, vec![true]).is_ok());
    }

    #[test]
    fn quantized_levels() {
        let m = ProbMap::from_u16(1, 2, &[32768, 65535]).unwrap();
        assert_eq!(m.values()[0], 32768.0 / 65535.0);
        assert_eq!(m.levels().unwrap(), vec![32768, 65535]);
        let q = map(1, 3, &[0.0, 0.5, 0.2]).quantized(BitDepth::Eight);
        assert_eq!(q.levels().unwrap(), vec![0, 128, 51]);
        assert_eq!(q.bit_depth(), BitDepth::Eight);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let m = BinaryMask::empty(4, 5).unwrap();
        let (labels, targets) = label_components(&m, Connectivity::Eight);
        assert_eq!(labels.count(), 0);
        assert!(targets.is_empty());
        assert!(labels.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn isolated_corners() {
        let m = BinaryMask::from_fn(3, 3, |r, c| (r, c) == (0, 0) || (r, c) == (2, 2)).unwrap();
        let (labels, targets) = label_components(&m, Connectivity::Eight);
        assert_eq!(labels.count(), 2);
        let t = targets.targets();
        assert_eq!((t[0].centroid_row, t[0].centroid_col, t[0].area), (0.0, 0.0, 1));
        assert_eq!((t[1].centroid_row, t[1].centroid_col, t[1].area), (2.0, 2.0, 1));
    }

    #[test]
    fn diagonal_depends_on_connectivity() {
        let m = BinaryMask::from_fn(2, 2, |r, c| r == c).unwrap();
        assert_eq!(label_components(&m, Connectivity::Eight).0.count(), 1);
        assert_eq!(label_components(&m, Connectivity::Four).0.count(), 2);
    }

    #[test]
    fn u_shape_merges_late() {
        // Two arms that only join on the bottom row.
        let rows = ["#.#", "#.#", "###"];
        let m = BinaryMask::from_fn(3, 3, |r, c| rows[r].as_bytes()[c] == b'#').unwrap();
        let (labels, targets) = label_components(&m, Connectivity::Four);
        assert_eq!(labels.count(), 1);
        assert_eq!(targets.targets()[0].area, 7);
        assert_eq!(labels.get(0, 2), 1);
    }

    #[test]
    fn labels_follow_first_encounter() {
        // The component whose first pixel appears first in raster order gets id 1,
        // even though the other one reaches further up-left overall.
        let rows = ["..#", "#.#", "#.."];
        let m = BinaryMask::from_fn(3, 3, |r, c| rows[r].as_bytes()[c] == b'#').unwrap();
        let (labels, _) = label_components(&m, Connectivity::Four);
        assert_eq!(labels.get(0, 2), 1);
        assert_eq!(labels.get(1, 0), 2);
    }

    #[test]
    fn one_by_one_images() {
        let m = BinaryMask::new(1, 1, vec![true]).unwrap();
        let (labels, targets) = label_components(&m, Connectivity::Eight);
        assert_eq!(labels.count(), 1);
        assert_eq!(targets.targets()[0].area, 1);
    }

    #[test]
    fn centroid_cases() {
        assert_eq!(centroid(&[(1, 1)]).unwrap(), (1.0, 1.0));
        assert_eq!(
            centroid(&[(0, 0), (0, 2), (2, 0), (2, 2)]).unwrap(),
            (1.0, 1.0)
        );
        let (r, c) = centroid(&[(0, 0), (0, 1), (1, 0)]).unwrap();
        assert!((r - 1.0 / 3.0).abs() < 1e-15 && (c - 1.0 / 3.0).abs() < 1e-15);
        assert!(centroid(&[]).is_err());
    }
}
