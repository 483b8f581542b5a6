//! Hessian-determinant interest points with 64-d SURF-style descriptors.
//!
//! The detector evaluates box-filter approximations of the second-order
//! Gaussian derivatives on the integral image over a small scale space
//! (3 octaves x 4 intervals by default), keeps 3x3x3 local maxima above a
//! response threshold, refines them with a quadratic fit, and describes each
//! one with Haar-wavelet statistics over a 20s window rotated to the dominant
//! gradient orientation.

use std::f32::consts::PI;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::contextmask::ContextMask;
use crate::error::{Error, Result};
use crate::imagecore::{integral, to_grayscale, IntegralImage, RasterImage, Rect};

pub const DESCRIPTOR_LEN: usize = 64;

/// Smallest image side for which detection runs at all.
pub const MIN_IMAGE_SIDE: usize = 32;

/// Default keypoint budgets for small and large collections.
pub const SMALL_SCALE_BUDGET: usize = 2000;
pub const LARGE_SCALE_BUDGET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub scale: f32,
    /// Radians in `[-pi, pi]`.
    pub orientation: f32,
    pub response: f32,
}

/// Unit-length 64-component descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor(pub [f32; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub image_id: String,
    /// Size of the image the keypoints came from. Unknown for sets read
    /// back from disk.
    pub image_size: Option<(usize, usize)>,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn empty(image_id: impl Into<String>, image_size: Option<(usize, usize)>) -> Self {
        Self {
            image_id: image_id.into(),
            image_size,
            keypoints: Vec::new(),
            descriptors: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Subset by keypoint ordinals, keeping the given order.
    pub fn select(&self, ordinals: &[usize]) -> FeatureSet {
        FeatureSet {
            image_id: self.image_id.clone(),
            image_size: self.image_size,
            keypoints: ordinals.iter().map(|&i| self.keypoints[i]).collect(),
            descriptors: ordinals.iter().map(|&i| self.descriptors[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum determinant-of-Hessian response, on intensities scaled to [0, 1].
    pub hessian_threshold: f32,
    pub octaves: usize,
    pub intervals: usize,
    /// Sampling step of the first octave, in pixels.
    pub init_step: usize,
    /// Threshold multiplier used by [`redetect_in_regions`].
    pub region_threshold_factor: f32,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hessian_threshold: 2e-4,
            octaves: 3,
            intervals: 4,
            init_step: 1,
            region_threshold_factor: 0.25,
        }
    }
}

impl DetectorConfig {
    fn validate(&self) -> Result<()> {
        if self.octaves == 0 || self.intervals < 3 || self.init_step == 0 {
            return Err(Error::InvalidParams(format!(
                "detector needs octaves >= 1, intervals >= 3, init_step >= 1 (got {}, {}, {})",
                self.octaves, self.intervals, self.init_step
            )));
        }
        Ok(())
    }
}

/// Detects up to `budget` keypoints over the whole image and describes them.
///
/// Images smaller than 32x32 and images without structure give an empty set.
/// Output is sorted by descending response, ties by `(y, x, scale)`.
pub fn detect_and_describe(
    img: &RasterImage,
    image_id: &str,
    budget: usize,
    config: &DetectorConfig,
) -> Result<FeatureSet> {
    run_detection(img, image_id, budget, config, None, 1.0)
}

/// Detection restricted to keypoint centers inside the union of `regions`,
/// with the response threshold scaled by `config.region_threshold_factor`.
pub fn redetect_in_regions(
    img: &RasterImage,
    image_id: &str,
    regions: &[Rect],
    budget: usize,
    config: &DetectorConfig,
) -> Result<FeatureSet> {
    let clipped: Vec<Rect> = regions
        .iter()
        .map(|r| r.clip(img.width(), img.height()))
        .filter(|r| !r.is_empty())
        .collect();
    if clipped.is_empty() {
        return Ok(FeatureSet::empty(image_id, Some(img.dimensions())));
    }
    run_detection(
        img,
        image_id,
        budget,
        config,
        Some(&clipped),
        config.region_threshold_factor,
    )
}

/// Keypoints whose rounded centers land on foreground mask pixels.
pub fn keypoints_in_mask(fs: &FeatureSet, mask: &ContextMask) -> Result<FeatureSet> {
    let dims = (mask.width(), mask.height());
    match fs.image_size {
        Some(size) if size != dims => {
            return Err(Error::DimensionMismatch {
                expected: size,
                actual: dims,
            })
        }
        _ => {}
    }
    let mut keep = Vec::new();
    for (i, kp) in fs.keypoints.iter().enumerate() {
        let (x, y) = (kp.x.round() as i64, kp.y.round() as i64);
        if x < 0 || y < 0 || x >= dims.0 as i64 || y >= dims.1 as i64 {
            if fs.image_size.is_none() {
                return Err(Error::DimensionMismatch {
                    expected: (x.max(0) as usize + 1, y.max(0) as usize + 1),
                    actual: dims,
                });
            }
            continue;
        }
        if mask.get(x as usize, y as usize) {
            keep.push(i);
        }
    }
    Ok(fs.select(&keep))
}

fn run_detection(
    img: &RasterImage,
    image_id: &str,
    budget: usize,
    config: &DetectorConfig,
    regions: Option<&[Rect]>,
    threshold_factor: f32,
) -> Result<FeatureSet> {
    config.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParams("keypoint budget must be >= 1".into()));
    }
    let size = img.dimensions();
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Ok(FeatureSet::empty(image_id, Some(size)));
    }
    let ii = integral(&to_grayscale(img));
    let threshold = config.hessian_threshold * threshold_factor;
    let mut candidates = detect(&ii, config, threshold);
    if let Some(regions) = regions {
        candidates.retain(|kp| {
            let (x, y) = (kp.x.floor() as i64, kp.y.floor() as i64);
            regions.iter().any(|r| r.contains(x, y))
        });
    }
    candidates.sort_by(keypoint_order);

    let mut keypoints = Vec::with_capacity(budget.min(candidates.len()));
    let mut descriptors = Vec::with_capacity(keypoints.capacity());
    for mut kp in candidates {
        if keypoints.len() == budget {
            break;
        }
        kp.orientation = orientation(&ii, &kp);
        if let Some(d) = describe(&ii, &kp) {
            keypoints.push(kp);
            descriptors.push(d);
        }
    }
    Ok(FeatureSet {
        image_id: image_id.to_string(),
        image_size: Some(size),
        keypoints,
        descriptors,
    })
}

fn keypoint_order(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.scale.total_cmp(&b.scale))
}

/// One layer of the box-filter scale space.
struct ResponseLayer {
    width: usize,
    height: usize,
    step: usize,
    filter: usize,
    responses: Vec<f32>,
}

impl ResponseLayer {
    fn new(ii: &IntegralImage, step: usize, filter: usize) -> Self {
        let width = ii.width() / step;
        let height = ii.height() / step;
        let mut responses = vec![0f32; width * height];
        let b = ((filter - 1) / 2) as i64;
        let l = (filter / 3) as i64;
        let w = filter as i64;
        let inv_area = 1.0 / (w * w) as f32;
        let norm = inv_area / 255.0;
        for ar in 0..height {
            for ac in 0..width {
                let r = (ar * step) as i64;
                let c = (ac * step) as i64;
                let dxx = ii.block(r - l + 1, c - b, 2 * l - 1, w)
                    - 3.0 * ii.block(r - l + 1, c - l / 2, 2 * l - 1, l);
                let dyy = ii.block(r - b, c - l + 1, w, 2 * l - 1)
                    - 3.0 * ii.block(r - l / 2, c - l + 1, l, 2 * l - 1);
                let dxy = ii.block(r - l, c + 1, l, l) + ii.block(r + 1, c - l, l, l)
                    - ii.block(r - l, c - l, l, l)
                    - ii.block(r + 1, c + 1, l, l);
                let (dxx, dyy, dxy) = (dxx * norm, dyy * norm, dxy * norm);
                responses[ar * width + ac] = dxx * dyy - 0.81 * dxy * dxy;
            }
        }
        Self {
            width,
            height,
            step,
            filter,
            responses,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f32 {
        self.responses[r * self.width + c]
    }
}

fn filter_size(octave: usize, interval: usize) -> usize {
    3 * ((1 << (octave + 1)) * (interval + 1) + 1)
}

fn detect(ii: &IntegralImage, config: &DetectorConfig, threshold: f32) -> Vec<Keypoint> {
    let mut out = Vec::new();
    for o in 0..config.octaves {
        let step = config.init_step << o;
        if ii.width() / step < 3 || ii.height() / step < 3 {
            break;
        }
        let layers: Vec<ResponseLayer> = (0..config.intervals)
            .map(|i| ResponseLayer::new(ii, step, filter_size(o, i)))
            .collect();
        for m in 1..layers.len() - 1 {
            find_extrema(&layers[m - 1], &layers[m], &layers[m + 1], threshold, ii, &mut out);
        }
    }
    out
}

fn find_extrema(
    b: &ResponseLayer,
    m: &ResponseLayer,
    t: &ResponseLayer,
    threshold: f32,
    ii: &IntegralImage,
    out: &mut Vec<Keypoint>,
) {
    let border = (t.filter + 1) / (2 * t.step);
    if m.height <= 2 * border + 2 || m.width <= 2 * border + 2 {
        return;
    }
    for r in border + 1..m.height - border - 1 {
        for c in border + 1..m.width - border - 1 {
            let v = m.at(r, c);
            if v <= threshold || v <= 0.0 {
                continue;
            }
            if !is_strict_max(v, r, c, b, m, t) {
                continue;
            }
            if let Some(kp) = interpolate(r, c, b, m, t, ii) {
                out.push(kp);
            }
        }
    }
}

fn is_strict_max(v: f32, r: usize, c: usize, b: &ResponseLayer, m: &ResponseLayer, t: &ResponseLayer) -> bool {
    for dr in 0..3 {
        for dc in 0..3 {
            let (rr, cc) = (r + dr - 1, c + dc - 1);
            if b.at(rr, cc) >= v || t.at(rr, cc) >= v {
                return false;
            }
            if (dr, dc) != (1, 1) && m.at(rr, cc) >= v {
                return false;
            }
        }
    }
    true
}

fn interpolate(
    r: usize,
    c: usize,
    b: &ResponseLayer,
    m: &ResponseLayer,
    t: &ResponseLayer,
    ii: &IntegralImage,
) -> Option<Keypoint> {
    let v = m.at(r, c) as f64;
    let g = |l: &ResponseLayer, dr: isize, dc: isize| {
        l.at((r as isize + dr) as usize, (c as isize + dc) as usize) as f64
    };
    let dx = (g(m, 0, 1) - g(m, 0, -1)) / 2.0;
    let dy = (g(m, 1, 0) - g(m, -1, 0)) / 2.0;
    let ds = (g(t, 0, 0) - g(b, 0, 0)) / 2.0;
    let dxx = g(m, 0, 1) + g(m, 0, -1) - 2.0 * v;
    let dyy = g(m, 1, 0) + g(m, -1, 0) - 2.0 * v;
    let dss = g(t, 0, 0) + g(b, 0, 0) - 2.0 * v;
    let dxy = (g(m, 1, 1) - g(m, 1, -1) - g(m, -1, 1) + g(m, -1, -1)) / 4.0;
    let dxs = (g(t, 0, 1) - g(t, 0, -1) - g(b, 0, 1) + g(b, 0, -1)) / 4.0;
    let dys = (g(t, 1, 0) - g(t, -1, 0) - g(b, 1, 0) + g(b, -1, 0)) / 4.0;
    let hessian = nalgebra::Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    let grad = nalgebra::Vector3::new(dx, dy, ds);
    let offset = -(hessian.try_inverse()? * grad);
    if offset.iter().any(|o| !o.is_finite() || o.abs() >= 0.5) {
        return None;
    }
    let step = m.step as f64;
    let filter_step = (m.filter - b.filter) as f64;
    let x = (c as f64 + offset[0]) * step;
    let y = (r as f64 + offset[1]) * step;
    let scale = 0.1333 * (m.filter as f64 + offset[2] * filter_step);
    if x < 0.0 || y < 0.0 || x >= ii.width() as f64 || y >= ii.height() as f64 || scale <= 0.0 {
        return None;
    }
    Some(Keypoint {
        x: x as f32,
        y: y as f32,
        scale: scale as f32,
        orientation: 0.0,
        response: v as f32,
    })
}

#[inline]
fn haar_x(ii: &IntegralImage, row: i64, col: i64, s: i64) -> f32 {
    (ii.block(row - s / 2, col, s, s / 2) - ii.block(row - s / 2, col - s / 2, s, s / 2)) / 255.0
}

#[inline]
fn haar_y(ii: &IntegralImage, row: i64, col: i64, s: i64) -> f32 {
    (ii.block(row, col - s / 2, s / 2, s) - ii.block(row - s / 2, col - s / 2, s / 2, s)) / 255.0
}

/// Dominant gradient direction from Haar responses in a 6s radius, using a
/// sliding pi/3 window.
fn orientation(ii: &IntegralImage, kp: &Keypoint) -> f32 {
    let s = kp.scale.round().max(1.0) as i64;
    let (r, c) = (kp.y.round() as i64, kp.x.round() as i64);
    let mut samples: Vec<(f32, f32, f32)> = Vec::with_capacity(113);
    for i in -6i64..=6 {
        for j in -6i64..=6 {
            if i * i + j * j >= 36 {
                continue;
            }
            let w = (-((i * i + j * j) as f32) / 8.0).exp();
            let rx = w * haar_x(ii, r + j * s, c + i * s, 4 * s);
            let ry = w * haar_y(ii, r + j * s, c + i * s, 4 * s);
            if rx != 0.0 || ry != 0.0 {
                samples.push((ry.atan2(rx), rx, ry));
            }
        }
    }
    let mut best = 0.0f32;
    let mut best_dir = (0.0f32, 0.0f32);
    let mut start = -PI;
    while start < PI {
        let end = start + PI / 3.0;
        let (mut sx, mut sy) = (0.0f32, 0.0f32);
        for &(a, rx, ry) in &samples {
            let inside = if end <= PI {
                a >= start && a < end
            } else {
                a >= start || a < end - 2.0 * PI
            };
            if inside {
                sx += rx;
                sy += ry;
            }
        }
        let mag = sx * sx + sy * sy;
        if mag > best {
            best = mag;
            best_dir = (sx, sy);
        }
        start += 0.15;
    }
    if best == 0.0 {
        0.0
    } else {
        best_dir.1.atan2(best_dir.0)
    }
}

/// 4x4 grid of sub-regions over a rotated 20s window; each contributes
/// (sum dx, sum |dx|, sum dy, sum |dy|) of Gaussian-weighted Haar responses.
fn describe(ii: &IntegralImage, kp: &Keypoint) -> Option<Descriptor> {
    let s = kp.scale;
    let (co, si) = (kp.orientation.cos(), kp.orientation.sin());
    let haar = (2.0 * s).round().max(2.0) as i64;
    let sigma = 3.3 * s;
    let inv_2sig2 = 1.0 / (2.0 * sigma * sigma);
    let mut acc = [0f64; DESCRIPTOR_LEN];
    for i in 0..4 {
        for j in 0..4 {
            let base = (i * 4 + j) * 4;
            for k in 0..5 {
                for l in 0..5 {
                    let u = (-10.0 + (i * 5 + k) as f32 + 0.5) * s;
                    let v = (-10.0 + (j * 5 + l) as f32 + 0.5) * s;
                    let x = kp.x + co * u - si * v;
                    let y = kp.y + si * u + co * v;
                    let w = (-(u * u + v * v) * inv_2sig2).exp();
                    let (row, col) = (y.round() as i64, x.round() as i64);
                    let rx = haar_x(ii, row, col, haar);
                    let ry = haar_y(ii, row, col, haar);
                    let dx = w * (co * rx + si * ry);
                    let dy = w * (-si * rx + co * ry);
                    acc[base] += dx as f64;
                    acc[base + 1] += dx.abs() as f64;
                    acc[base + 2] += dy as f64;
                    acc[base + 3] += dy.abs() as f64;
                }
            }
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let mut out = [0f32; DESCRIPTOR_LEN];
    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o = (a / norm) as f32;
    }
    Some(Descriptor(out))
}

const PFFS_MAGIC: &[u8; 4] = b"PFFS";
const PFFS_VERSION: u16 = 1;

/// Writes the binary feature record: magic, version, image id, count, then
/// per keypoint five f32 fields and 64 f32 descriptor components.
pub fn write_feature_set<W: Write>(fs: &FeatureSet, w: &mut W) -> std::io::Result<()> {
    w.write_all(PFFS_MAGIC)?;
    w.write_u16::<LittleEndian>(PFFS_VERSION)?;
    let id = fs.image_id.as_bytes();
    w.write_u32::<LittleEndian>(id.len() as u32)?;
    w.write_all(id)?;
    w.write_u32::<LittleEndian>(fs.keypoints.len() as u32)?;
    for (kp, d) in fs.keypoints.iter().zip(&fs.descriptors) {
        for v in [kp.x, kp.y, kp.scale, kp.orientation, kp.response] {
            w.write_f32::<LittleEndian>(v)?;
        }
        for &v in &d.0 {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

/// Reads one feature record. Returns `Ok(None)` at a clean end of stream.
pub fn read_feature_set<R: Read>(r: &mut R) -> Result<Option<FeatureSet>> {
    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::io("<feature stream>", e)),
    }
    if &magic != PFFS_MAGIC {
        return Err(Error::VersionMismatch(format!(
            "bad feature-set magic {magic:?}"
        )));
    }
    let io = |e| Error::io("<feature stream>", e);
    let version = r.read_u16::<LittleEndian>().map_err(io)?;
    if version != PFFS_VERSION {
        return Err(Error::VersionMismatch(format!(
            "feature-set version {version}, expected {PFFS_VERSION}"
        )));
    }
    let id_len = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(io)?;
    let image_id = String::from_utf8(id).map_err(|e| Error::Format(e.to_string()))?;
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut keypoints = Vec::with_capacity(count);
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let mut f = [0f32; 5];
        r.read_f32_into::<LittleEndian>(&mut f).map_err(io)?;
        keypoints.push(Keypoint {
            x: f[0],
            y: f[1],
            scale: f[2],
            orientation: f[3],
            response: f[4],
        });
        let mut d = [0f32; DESCRIPTOR_LEN];
        r.read_f32_into::<LittleEndian>(&mut d).map_err(io)?;
        descriptors.push(Descriptor(d));
    }
    Ok(Some(FeatureSet {
        image_id,
        image_size: None,
        keypoints,
        descriptors,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::synth::render_base_image;

    fn textured(seed: u64) -> RasterImage {
        render_base_image(160, 160, seed)
    }

    #[test]
    fn constant_image_has_no_features() {
        let img = RasterImage::filled(64, 64, 3, 128);
        let fs = detect_and_describe(&img, "c", 100, &DetectorConfig::default()).unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn tiny_image_is_empty_not_error() {
        let img = RasterImage::filled(20, 40, 1, 9);
        let fs = detect_and_describe(&img, "t", 100, &DetectorConfig::default()).unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn zero_budget_rejected() {
        let img = textured(1);
        assert!(detect_and_describe(&img, "a", 0, &DetectorConfig::default()).is_err());
    }

    #[test]
    fn budget_one_keeps_strongest() {
        let img = textured(2);
        let cfg = DetectorConfig::default();
        let all = detect_and_describe(&img, "a", 10_000, &cfg).unwrap();
        let one = detect_and_describe(&img, "a", 1, &cfg).unwrap();
        assert!(all.len() > 10);
        assert_eq!(one.len(), 1);
        assert_eq!(one.keypoints[0], all.keypoints[0]);
        assert!(all.keypoints.windows(2).all(|w| w[0].response >= w[1].response));
    }

    #[test]
    fn keypoint_and_descriptor_invariants() {
        let img = textured(3);
        let fs = detect_and_describe(&img, "a", 300, &DetectorConfig::default()).unwrap();
        assert!(fs.len() <= 300 && !fs.is_empty());
        assert_eq!(fs.keypoints.len(), fs.descriptors.len());
        for (kp, d) in fs.keypoints.iter().zip(&fs.descriptors) {
            assert!(kp.x >= 0.0 && kp.x < 160.0 && kp.y >= 0.0 && kp.y < 160.0);
            assert!(kp.response > 0.0 && kp.scale > 0.0);
            assert!(kp.orientation >= -PI && kp.orientation <= PI);
            assert!((d.norm() - 1.0).abs() < 1e-6, "norm {}", d.norm());
        }
    }

    #[test]
    fn whole_image_region_matches_global_detection() {
        let img = textured(4);
        let cfg = DetectorConfig {
            region_threshold_factor: 1.0,
            ..DetectorConfig::default()
        };
        let a = detect_and_describe(&img, "a", 400, &cfg).unwrap();
        let b = redetect_in_regions(&img, "a", &[Rect::full(160, 160)], 400, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn flat_region_yields_nothing() {
        let mut img = textured(5);
        for y in 0..60 {
            for x in 0..60 {
                for c in 0..3 {
                    img.set(x, y, c, 90);
                }
            }
        }
        let fs = redetect_in_regions(&img, "a", &[Rect::new(5, 5, 35, 35)], 400, &DetectorConfig::default())
            .unwrap();
        assert!(fs.is_empty());
    }

    #[test]
    fn region_detection_stays_inside_patch() {
        let mut img = RasterImage::filled(160, 160, 3, 100);
        let patch = textured(6);
        for y in 0..64 {
            for x in 0..64 {
                for c in 0..3 {
                    img.set(40 + x, 50 + y, c, patch.get(x + 30, y + 30, c));
                }
            }
        }
        let region = Rect::from_origin_size(40, 50, 64, 64);
        let fs = redetect_in_regions(&img, "a", &[region], 400, &DetectorConfig::default()).unwrap();
        assert!(!fs.is_empty());
        for kp in &fs.keypoints {
            assert!(region.contains(kp.x.floor() as i64, kp.y.floor() as i64), "{kp:?}");
        }
        let global = detect_and_describe(&img, "a", 400, &DetectorConfig::default()).unwrap();
        assert!(fs.len() >= global.keypoints.iter().filter(|k| region.contains(k.x as i64, k.y as i64)).count());
    }

    #[test]
    fn feature_set_binary_round_trip() {
        let fs = detect_and_describe(&textured(7), "img-7", 50, &DetectorConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_feature_set(&fs, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PFFS");
        assert_eq!(buf.len(), 4 + 2 + 4 + 5 + 4 + fs.len() * (5 + 64) * 4);
        let mut cur = std::io::Cursor::new(buf);
        let back = read_feature_set(&mut cur).unwrap().unwrap();
        assert_eq!(back.keypoints, fs.keypoints);
        assert_eq!(back.descriptors, fs.descriptors);
        assert_eq!(back.image_id, "img-7");
        assert!(read_feature_set(&mut cur).unwrap().is_none());
    }

    #[test]
    fn bad_magic_is_version_mismatch() {
        let mut cur = std::io::Cursor::new(b"XXXX\x01\x00".to_vec());
        assert!(matches!(read_feature_set(&mut cur), Err(Error::VersionMismatch(_))));
    }
}
