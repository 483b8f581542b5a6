//! Contextual mask: query regions the aligned host does not explain.
//!
//! The mask is the thresholded per-pixel difference between the query and
//! the registered host after uniform color quantization, cleaned by a 5x5
//! opening followed by a 5x5 binary median filter. Surviving 8-connected
//! components seed the second search tier.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{RasterImage, Rect};

/// Uniformly quantizes every channel to `levels` bins, replacing each value
/// by its bin center. `levels` is clamped to `2..=256`.
pub fn quantize_colors(img: &RasterImage, levels: u32) -> RasterImage {
    let bin = 256 / levels.clamp(2, 256);
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        let q = (v as u32 / bin) * bin + bin / 2;
        *out = q.min(255) as u8;
    }
    let pixels = img.pixels().iter().map(|&v| lut[v as usize]).collect();
    RasterImage::new(img.width(), img.height(), img.channels(), pixels).expect("same shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    pub levels: u32,
    /// A pixel is foreground when its max-over-channels difference exceeds this.
    pub diff_threshold: u8,
    pub open_size: usize,
    pub median_size: usize,
    pub min_area: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            levels: 32,
            diff_threshold: 24,
            open_size: 5,
            median_size: 5,
            min_area: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub bbox: Rect,
    pub area: usize,
}

/// Binary foreground map with its 8-connected components, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextMask {
    width: usize,
    height: usize,
    /// 0 = background, `i + 1` = member of `components[i]`.
    labels: Vec<u32>,
    coverage: f64,
    components: Vec<Component>,
}

impl ContextMask {
    /// Labels the components of a raw binary map.
    pub fn from_bits(width: usize, height: usize, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width * height, "mask buffer size");
        let (labels, components) = label_components(width, height, bits, 0);
        Self::from_labels(width, height, labels, components)
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            coverage: 0.0,
            components: Vec::new(),
        }
    }

    /// All-foreground mask.
    pub fn full(width: usize, height: usize) -> Self {
        Self::from_bits(width, height, &vec![true; width * height])
    }

    fn from_labels(width: usize, height: usize, labels: Vec<u32>, components: Vec<Component>) -> Self {
        let fg = components.iter().map(|c| c.area).sum::<usize>();
        Self {
            width,
            height,
            labels,
            coverage: fg as f64 / (width * height) as f64,
            components,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.labels[y * self.width + x] != 0
    }

    /// Foreground fraction.
    pub fn coverage(&self) -> f64 {
        self.coverage
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Index into [`Self::components`] of the pixel, if foreground.
    pub fn component_at(&self, x: usize, y: usize) -> Option<usize> {
        match self.labels[y * self.width + x] {
            0 => None,
            l => Some(l as usize - 1),
        }
    }

    /// Mask containing only component `index`.
    pub fn component_mask(&self, index: usize) -> ContextMask {
        let label = index as u32 + 1;
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == label { 1 } else { 0 })
            .collect();
        let comps = self.components.get(index).copied().into_iter().collect();
        Self::from_labels(self.width, self.height, labels, comps)
    }

    pub fn bits(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    /// Gray image with foreground 255 and background 0.
    pub fn to_image(&self) -> RasterImage {
        let px = self.labels.iter().map(|&l| if l != 0 { 255 } else { 0 }).collect();
        RasterImage::new(self.width, self.height, 1, px).expect("mask shape")
    }

    /// Pixel IoU of component `index` with a rectangle.
    pub fn component_iou(&self, index: usize, rect: &Rect) -> f64 {
        let label = index as u32 + 1;
        let r = rect.clip(self.width, self.height);
        let mut inter = 0usize;
        let mut comp = 0usize;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.labels[y * self.width + x] == label {
                    comp += 1;
                    if r.contains(x as i64, y as i64) {
                        inter += 1;
                    }
                }
            }
        }
        let union = comp + r.area() as usize - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Thresholded difference map before any morphology. `true` = changed.
pub fn difference_map(
    query: &RasterImage,
    host_aligned: &RasterImage,
    validity: Option<&[bool]>,
    params: &MaskParams,
) -> Result<Vec<bool>> {
    if query.dimensions() != host_aligned.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: query.dimensions(),
            actual: host_aligned.dimensions(),
        });
    }
    let n = query.width() * query.height();
    if let Some(v) = validity {
        if v.len() != n {
            return Err(Error::InvalidParams(format!(
                "validity map has {} entries, expected {n}",
                v.len()
            )));
        }
    }
    let q = quantize_colors(&query.to_rgb(), params.levels);
    let h = quantize_colors(&host_aligned.to_rgb(), params.levels);
    let mut out = vec![false; n];
    for (i, (a, b)) in q.pixels().chunks_exact(3).zip(h.pixels().chunks_exact(3)).enumerate() {
        if validity.is_some_and(|v| !v[i]) {
            continue;
        }
        let d = (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0);
        out[i] = d > params.diff_threshold;
    }
    Ok(out)
}

/// Full mask computation: quantize, difference, threshold, drop invalid
/// pixels, open, median filter, remove small components.
pub fn compute_mask(
    query: &RasterImage,
    host_aligned: &RasterImage,
    validity: Option<&[bool]>,
    params: &MaskParams,
) -> Result<ContextMask> {
    let (w, h) = query.dimensions();
    let raw = difference_map(query, host_aligned, validity, params)?;
    let opened = opening(&raw, w, h, params.open_size);
    let filtered = median_filter(&opened, w, h, params.median_size);
    let (labels, components) = label_components(w, h, &filtered, params.min_area);
    Ok(ContextMask::from_labels(w, h, labels, components))
}

/// Binary erosion with a `size x size` square; the window is clipped at
/// the image border.
pub fn erode(bits: &[bool], w: usize, h: usize, size: usize) -> Vec<bool> {
    window_reduce(bits, w, h, size, true)
}

pub fn dilate(bits: &[bool], w: usize, h: usize, size: usize) -> Vec<bool> {
    window_reduce(bits, w, h, size, false)
}

pub fn opening(bits: &[bool], w: usize, h: usize, size: usize) -> Vec<bool> {
    if size <= 1 {
        return bits.to_vec();
    }
    dilate(&erode(bits, w, h, size), w, h, size)
}

fn window_reduce(bits: &[bool], w: usize, h: usize, size: usize, all: bool) -> Vec<bool> {
    let r = size / 2;
    fn reduce(all: bool, mut it: impl Iterator<Item = bool>) -> bool {
        if all {
            it.all(|b| b)
        } else {
            it.any(|b| b)
        }
    }
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
            horiz[y * w + x] = reduce(all, (lo..=hi).map(|xx| bits[y * w + xx]));
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
        for x in 0..w {
            out[y * w + x] = reduce(all, (lo..=hi).map(|yy| horiz[yy * w + x]));
        }
    }
    out
}

/// Binary median over a `size x size` window clipped at the border: a pixel
/// is set when strictly more than half the window is set.
pub fn median_filter(bits: &[bool], w: usize, h: usize, size: usize) -> Vec<bool> {
    if size <= 1 {
        return bits.to_vec();
    }
    let stride = w + 1;
    let mut sat = vec![0u32; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u32;
        for x in 0..w {
            row += bits[y * w + x] as u32;
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    let r = size / 2;
    let mut out = vec![false; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let count = sat[y1 * stride + x1] + sat[y0 * stride + x0] - sat[y0 * stride + x1] - sat[y1 * stride + x0];
            let n = ((y1 - y0) * (x1 - x0)) as u32;
            out[y * w + x] = 2 * count > n;
        }
    }
    out
}

/// 8-connected labelling. Components smaller than `min_area` are dropped;
/// the rest are sorted by area (descending), then by bbox top-left.
fn label_components(w: usize, h: usize, bits: &[bool], min_area: usize) -> (Vec<u32>, Vec<Component>) {
    let mut raw = vec![0u32; w * h];
    let mut found: Vec<(Component, u32)> = Vec::new();
    let mut queue = VecDeque::new();
    let mut next = 1u32;
    for start in 0..w * h {
        if !bits[start] || raw[start] != 0 {
            continue;
        }
        raw[start] = next;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let mut area = 0usize;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            area += 1;
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if bits[j] && raw[j] == 0 {
                        raw[j] = next;
                        queue.push_back(j);
                    }
                }
            }
        }
        let bbox = Rect::new(x0 as i64, y0 as i64, x1 as i64 + 1, y1 as i64 + 1);
        found.push((Component { bbox, area }, next));
        next += 1;
    }
    found.retain(|(c, _)| c.area >= min_area.max(1));
    found.sort_by(|a, b| {
        b.0.area
            .cmp(&a.0.area)
            .then(a.0.bbox.y0.cmp(&b.0.bbox.y0))
            .then(a.0.bbox.x0.cmp(&b.0.bbox.x0))
    });
    let mut remap = vec![0u32; next as usize];
    for (rank, (_, old)) in found.iter().enumerate() {
        remap[*old as usize] = rank as u32 + 1;
    }
    let labels = raw.into_iter().map(|l| remap[l as usize]).collect();
    (labels, found.into_iter().map(|(c, _)| c).collect())
}

/// What the mask says about the query relative to its best match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVerdict {
    Composite,
    NearDuplicate,
    Unrelated,
}

/// Registration evidence needed to judge the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationSummary {
    /// Mean descriptor distance over the selected top matches.
    pub match_quality: f32,
    pub inliers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerdictThresholds {
    /// Registrations with a larger mean top-match distance count as failed.
    pub max_match_distance: f32,
    pub min_inliers: usize,
    /// Coverage above this means the host explains nothing; tier 2 is skipped.
    pub near_duplicate_coverage: f64,
    /// Coverage below this means nothing is left to refine.
    pub empty_coverage: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            max_match_distance: 0.35,
            min_inliers: 8,
            near_duplicate_coverage: 0.9,
            empty_coverage: 0.005,
        }
    }
}

/// `registration` is `None` when matching or homography estimation failed.
pub fn classify_mask(
    mask: Option<&ContextMask>,
    registration: Option<&RegistrationSummary>,
    t: &VerdictThresholds,
) -> MaskVerdict {
    let (Some(mask), Some(reg)) = (mask, registration) else {
        return MaskVerdict::Unrelated;
    };
    if reg.inliers < t.min_inliers || !(reg.match_quality <= t.max_match_distance) {
        return MaskVerdict::Unrelated;
    }
    let cov = mask.coverage();
    if cov > t.near_duplicate_coverage || cov < t.empty_coverage || mask.components().is_empty() {
        MaskVerdict::NearDuplicate
    } else {
        MaskVerdict::Composite
    }
}
