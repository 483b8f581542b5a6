//! Descriptor matching, RANSAC homography estimation and warping.
//!
//! Homographies map target (retrieved image) coordinates onto query
//! coordinates, with pixel `(x, y)` sampled at integer positions.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annindex::l2_sq;
use crate::error::{Error, Result};
use crate::features::{FeatureSet, Keypoint};
use crate::imagecore::RasterImage;

/// A descriptor correspondence that passed the ratio test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub query_kp: usize,
    pub target_kp: usize,
    pub distance: f32,
    /// Best over second-best distance.
    pub ratio: f32,
}

/// Exact two-nearest-neighbor matching with the distance-ratio test,
/// made one-to-one by keeping the closest query per target keypoint.
/// Returned in query ordinal order.
pub fn match_nndr(fs_q: &FeatureSet, fs_t: &FeatureSet, ratio_threshold: f32) -> Vec<Match> {
    if fs_q.is_empty() || fs_t.is_empty() {
        return Vec::new();
    }
    let candidates = crate::par::map_range(fs_q.len(), |qi| {
        let q = &fs_q.descriptors[qi].0;
        let mut best = (f32::INFINITY, usize::MAX);
        let mut second = f32::INFINITY;
        for (ti, t) in fs_t.descriptors.iter().enumerate() {
            let d = l2_sq(q, &t.0);
            if d < best.0 {
                second = best.0;
                best = (d, ti);
            } else if d < second {
                second = d;
            }
        }
        let (d1, d2) = (best.0.sqrt(), second.sqrt());
        // A lone target has no second neighbor and passes on distance alone.
        let ratio = if d2.is_infinite() {
            0.0
        } else if d2 > 0.0 {
            d1 / d2
        } else {
            1.0
        };
        (ratio <= ratio_threshold).then_some(Match {
            query_kp: qi,
            target_kp: best.1,
            distance: d1,
            ratio,
        })
    });
    let mut owner: Vec<Option<Match>> = vec![None; fs_t.len()];
    for m in candidates.into_iter().flatten() {
        let slot = &mut owner[m.target_kp];
        if slot.is_none_or(|o| m.distance < o.distance) {
            *slot = Some(m);
        }
    }
    let mut out: Vec<Match> = owner.into_iter().flatten().collect();
    out.sort_by_key(|m| m.query_kp);
    out
}

/// Minimum correspondences for a homography.
pub const MIN_MATCHES: usize = 4;

/// The `n` lowest-distance matches, ascending.
pub fn top_matches(matches: &[Match], n: usize) -> Result<Vec<Match>> {
    if n < MIN_MATCHES {
        return Err(Error::InvalidParams(format!("top_matches needs n >= {MIN_MATCHES}, got {n}")));
    }
    let mut sorted = matches.to_vec();
    sorted.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.query_kp.cmp(&b.query_kp)));
    sorted.truncate(n);
    if sorted.len() < MIN_MATCHES {
        return Err(Error::InsufficientMatches {
            needed: MIN_MATCHES,
            available: sorted.len(),
        });
    }
    Ok(sorted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    /// Normalized so that `matrix[(2, 2)] == 1` whenever that entry is nonzero.
    pub matrix: Matrix3<f64>,
    pub inlier_count: usize,
    /// Mean reprojection error over inliers, in pixels.
    pub mean_reprojection_error: f64,
    /// Mean descriptor distance of the matches it was estimated from.
    pub match_quality: f32,
    pub inliers: Vec<bool>,
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity())
    }

    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        Self {
            matrix: normalize(matrix),
            inlier_count: 0,
            mean_reprojection_error: 0.0,
            match_quality: 0.0,
            inliers: Vec::new(),
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        project(&self.matrix, x, y)
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.matrix.try_inverse().map(Homography::from_matrix)
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        std::array::from_fn(|r| std::array::from_fn(|c| self.matrix[(r, c)]))
    }
}

fn normalize(m: Matrix3<f64>) -> Matrix3<f64> {
    let h = m[(2, 2)];
    if h.abs() > 1e-15 {
        m / h
    } else {
        m / m.norm()
    }
}

#[inline]
fn project(m: &Matrix3<f64>, x: f64, y: f64) -> Option<(f64, f64)> {
    let p = m * Vector3::new(x, y, 1.0);
    if p.z.abs() < 1e-12 || !p.z.is_finite() {
        return None;
    }
    Some((p.x / p.z, p.y / p.z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub max_iterations: usize,
    /// Adaptive stop once this probability of an all-inlier sample is reached.
    pub confidence: f64,
    /// Inlier reprojection threshold in pixels.
    pub inlier_threshold: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            confidence: 0.995,
            inlier_threshold: 3.0,
        }
    }
}

/// RANSAC over the matched keypoint centers; maps target onto query.
pub fn estimate_homography(
    matches: &[Match],
    kps_q: &[Keypoint],
    kps_t: &[Keypoint],
    params: &RansacParams,
    seed: u64,
) -> Result<Homography> {
    let src: Vec<(f64, f64)> = matches
        .iter()
        .map(|m| (kps_t[m.target_kp].x as f64, kps_t[m.target_kp].y as f64))
        .collect();
    let dst: Vec<(f64, f64)> = matches
        .iter()
        .map(|m| (kps_q[m.query_kp].x as f64, kps_q[m.query_kp].y as f64))
        .collect();
    let mut h = estimate_homography_points(&src, &dst, params, seed)?;
    if !matches.is_empty() {
        h.match_quality = matches.iter().map(|m| m.distance).sum::<f32>() / matches.len() as f32;
    }
    Ok(h)
}

/// RANSAC with 4-point normalized-DLT hypotheses, then a DLT refit on all
/// inliers. Deterministic for a given seed.
pub fn estimate_homography_points(
    src: &[(f64, f64)],
    dst: &[(f64, f64)],
    params: &RansacParams,
    seed: u64,
) -> Result<Homography> {
    assert_eq!(src.len(), dst.len(), "correspondence arrays differ in length");
    let n = src.len();
    if n < MIN_MATCHES {
        return Err(Error::InsufficientMatches {
            needed: MIN_MATCHES,
            available: n,
        });
    }
    let thr = params.inlier_threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Matrix3<f64>)> = None;
    let mut needed = params.max_iterations;
    let mut iter = 0;
    while iter < needed.min(params.max_iterations) {
        iter += 1;
        let idx = rand::seq::index::sample(&mut rng, n, 4).into_vec();
        let s: Vec<(f64, f64)> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<(f64, f64)> = idx.iter().map(|&i| dst[i]).collect();
        if degenerate_sample(&s) || degenerate_sample(&d) {
            continue;
        }
        let Some(m) = dlt(&s, &d) else { continue };
        let (count, err) = score(&m, src, dst, thr);
        let better = match best {
            None => true,
            Some((bc, be, _)) => count > bc || (count == bc && err < be),
        };
        if better {
            best = Some((count, err, m));
            let w = count as f64 / n as f64;
            let p_good = w.powi(4);
            needed = if p_good >= 1.0 {
                iter
            } else if p_good <= 0.0 {
                params.max_iterations
            } else {
                let k = (1.0 - params.confidence).ln() / (1.0 - p_good).ln();
                if k.is_finite() {
                    (k.ceil() as usize).max(iter)
                } else {
                    params.max_iterations
                }
            };
        }
    }
    let Some((count, _, mut model)) = best else {
        return Err(Error::DegenerateGeometry("every sample was degenerate".into()));
    };
    if count < MIN_MATCHES {
        return Err(Error::DegenerateGeometry(format!("best model has only {count} inliers")));
    }
    // Refit on the consensus set while it does not shrink.
    let mut inliers = inlier_mask(&model, src, dst, thr);
    for _ in 0..3 {
        let (s, d): (Vec<_>, Vec<_>) = inliers
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .map(|(i, _)| (src[i], dst[i]))
            .unzip();
        let Some(refit) = dlt(&s, &d) else { break };
        let next = inlier_mask(&refit, src, dst, thr);
        let (c_old, c_new) = (count_true(&inliers), count_true(&next));
        if c_new < c_old {
            break;
        }
        let converged = next == inliers;
        model = refit;
        inliers = next;
        if converged {
            break;
        }
    }
    let model = normalize(model);
    if model.determinant().abs() <= 1e-12 || model.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateGeometry("singular homography".into()));
    }
    let inlier_count = count_true(&inliers);
    if inlier_count < MIN_MATCHES {
        return Err(Error::DegenerateGeometry(format!("refit keeps only {inlier_count} inliers")));
    }
    let total: f64 = inliers
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| reprojection_error(&model, src[i], dst[i]))
        .sum();
    Ok(Homography {
        matrix: model,
        inlier_count,
        mean_reprojection_error: total / inlier_count as f64,
        match_quality: 0.0,
        inliers,
    })
}

fn count_true(v: &[bool]) -> usize {
    v.iter().filter(|&&b| b).count()
}

fn reprojection_error(m: &Matrix3<f64>, s: (f64, f64), d: (f64, f64)) -> f64 {
    match project(m, s.0, s.1) {
        Some((x, y)) => ((x - d.0).powi(2) + (y - d.1).powi(2)).sqrt(),
        None => f64::INFINITY,
    }
}

fn inlier_mask(m: &Matrix3<f64>, src: &[(f64, f64)], dst: &[(f64, f64)], thr: f64) -> Vec<bool> {
    src.iter().zip(dst).map(|(&s, &d)| reprojection_error(m, s, d) < thr).collect()
}

fn score(m: &Matrix3<f64>, src: &[(f64, f64)], dst: &[(f64, f64)], thr: f64) -> (usize, f64) {
    let mut count = 0;
    let mut err = 0.0;
    for (&s, &d) in src.iter().zip(dst) {
        let e = reprojection_error(m, s, d);
        if e < thr {
            count += 1;
            err += e;
        }
    }
    (count, err)
}

/// True when any three of the four points are (nearly) collinear.
fn degenerate_sample(p: &[(f64, f64)]) -> bool {
    for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let (ux, uy) = (p[b].0 - p[a].0, p[b].1 - p[a].1);
        let (vx, vy) = (p[c].0 - p[a].0, p[c].1 - p[a].1);
        let cross = (ux * vy - uy * vx).abs();
        let scale = (ux * ux + uy * uy).max(vx * vx + vy * vy);
        if cross <= 1e-6 * scale || scale == 0.0 {
            return true;
        }
    }
    false
}

/// Translates to zero mean and scales to mean distance sqrt(2).
fn hartley(p: &[(f64, f64)]) -> Option<(Matrix3<f64>, Vec<(f64, f64)>)> {
    let n = p.len() as f64;
    let (mx, my) = p.iter().fold((0.0, 0.0), |a, q| (a.0 + q.0, a.1 + q.1));
    let (mx, my) = (mx / n, my / n);
    let mean_d = p.iter().map(|q| ((q.0 - mx).powi(2) + (q.1 - my).powi(2)).sqrt()).sum::<f64>() / n;
    if mean_d <= 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_d;
    let t = Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0);
    Some((t, p.iter().map(|q| (s * (q.0 - mx), s * (q.1 - my))).collect()))
}

/// Normalized direct linear transform; `None` for rank-deficient input.
fn dlt(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Option<Matrix3<f64>> {
    let (ts, s) = hartley(src)?;
    let (td, d) = hartley(dst)?;
    let rows = (2 * s.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (&(x, y), &(u, v))) in s.iter().zip(&d).enumerate() {
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t?;
    let sv = &svd.singular_values;
    let (imin, _) = sv.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    // Rank below 8 leaves more than one null direction.
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted[1] <= 1e-10 * sorted[8].max(1e-300) {
        return None;
    }
    let h = vt.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let m = td.try_inverse()? * hn * ts;
    if m.iter().any(|v| !v.is_finite()) || m.determinant().abs() <= 1e-12 * m.norm().powi(3) {
        return None;
    }
    Some(normalize(m))
}

/// Output of [`warp`]: resampled pixels plus a per-pixel validity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: RasterImage,
    pub valid: Vec<bool>,
}

/// Inverse-mapped bilinear resampling of `img` through `h` into a
/// `width x height` frame. Pixels with no source are 0 and invalid.
pub fn warp(img: &RasterImage, h: &Homography, width: usize, height: usize) -> Warped {
    let ch = img.channels();
    let (sw, sh) = (img.width(), img.height());
    let inv = h.matrix.try_inverse();
    let rows = crate::par::map_range(height, |y| {
        let mut px = vec![0u8; width * ch];
        let mut valid = vec![false; width];
        let Some(inv) = inv else { return (px, valid) };
        for x in 0..width {
            let Some((u, v)) = project(&inv, x as f64, y as f64) else { continue };
            const EPS: f64 = 1e-9;
            if !(u >= -EPS && v >= -EPS && u <= (sw - 1) as f64 + EPS && v <= (sh - 1) as f64 + EPS) {
                continue;
            }
            let u = u.clamp(0.0, (sw - 1) as f64);
            let v = v.clamp(0.0, (sh - 1) as f64);
            let (x0, y0) = (u.floor() as usize, v.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(sw - 1), (y0 + 1).min(sh - 1));
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            for c in 0..ch {
                let p = |xx: usize, yy: usize| img.get(xx, yy, c) as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                px[x * ch + c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
            valid[x] = true;
        }
        (px, valid)
    });
    let mut pixels = Vec::with_capacity(width * height * ch);
    let mut valid = Vec::with_capacity(width * height);
    for (p, v) in rows {
        pixels.extend(p);
        valid.extend(v);
    }
    Warped {
        image: RasterImage::new(width, height, ch, pixels).expect("warp output shape"),
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalharness::synth::render_base_image;
    use crate::features::Descriptor;
    use rand::Rng;

    fn kp(x: f32, y: f32) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: 2.0,
            orientation: 0.0,
            response: 1.0,
        }
    }

    fn unit(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut v = [0f32; 64];
        v.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Descriptor(v)
    }

    fn set(descs: Vec<Descriptor>) -> FeatureSet {
        FeatureSet {
            image_id: "x".into(),
            image_size: None,
            keypoints: (0..descs.len()).map(|i| kp(i as f32, 0.0)).collect(),
            descriptors: descs,
        }
    }

    #[test]
    fn self_matching_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fs = set((0..30).map(|_| unit(&mut rng)).collect());
        let m = match_nndr(&fs, &fs, 0.8);
        assert_eq!(m.len(), 30);
        assert!(m.iter().all(|m| m.query_kp == m.target_kp && m.distance == 0.0));
        let zero = match_nndr(&fs, &fs, 0.0);
        assert_eq!(zero.len(), 30);
        let other = set((0..30).map(|_| unit(&mut rng)).collect());
        assert!(match_nndr(&fs, &other, 0.0).is_empty());
    }

    #[test]
    fn noisy_copies_match_their_sources() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let originals: Vec<Descriptor> = (0..20).map(|_| unit(&mut rng)).collect();
        let mut target: Vec<Descriptor> = originals
            .iter()
            .map(|d| {
                let mut v = d.0;
                v.iter_mut().for_each(|x| *x += crate::annindex::testdata::gauss(&mut rng) * 0.01);
                Descriptor(v)
            })
            .collect();
        target.extend((0..20).map(|_| unit(&mut rng)));
        let m = match_nndr(&set(originals), &set(target), 0.8);
        let correct = m.iter().filter(|m| m.query_kp == m.target_kp).count();
        assert!(correct >= 18, "{correct}");
    }

    #[test]
    fn matches_are_one_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = set((0..5).map(|_| unit(&mut rng)).collect());
        let mut q: Vec<Descriptor> = t.descriptors.clone();
        q.extend(t.descriptors.iter().copied());
        let m = match_nndr(&set(q), &t, 1.0);
        let mut targets: Vec<usize> = m.iter().map(|m| m.target_kp).collect();
        targets.dedup();
        assert_eq!(targets.len(), m.len());
        assert_eq!(m.len(), 5);
    }

    #[test]
    fn top_matches_cases() {
        let mk = |n: usize| -> Vec<Match> {
            (0..n)
                .map(|i| Match {
                    query_kp: i,
                    target_kp: i,
                    distance: ((i * 7919) % 31) as f32 + i as f32 * 1e-3,
                    ratio: 0.5,
                })
                .collect()
        };
        let m30 = mk(30);
        let top = top_matches(&m30, 25).unwrap();
        assert_eq!(top.len(), 25);
        let mut d: Vec<f32> = m30.iter().map(|m| m.distance).collect();
        d.sort_by(f32::total_cmp);
        assert_eq!(top.iter().map(|m| m.distance).collect::<Vec<_>>(), d[..25]);
        assert_eq!(top_matches(&mk(10), 25).unwrap().len(), 10);
        assert!(matches!(top_matches(&mk(3), 25), Err(Error::InsufficientMatches { available: 3, .. })));
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = rng.gen_range(-0.5..0.5f64);
        let s = rng.gen_range(0.8..1.25f64);
        Matrix3::new(
            s * a.cos(),
            -s * a.sin() + rng.gen_range(-0.1..0.1),
            rng.gen_range(-40.0..40.0),
            s * a.sin() + rng.gen_range(-0.1..0.1),
            s * a.cos(),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-4e-4..4e-4),
            rng.gen_range(-4e-4..4e-4),
            1.0,
        )
    }

    #[test]
    fn identity_correspondences_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<(f64, f64)> = (0..25).map(|_| (rng.gen_range(0.0..300.0), rng.gen_range(0.0..200.0))).collect();
        let h = estimate_homography_points(&pts, &pts, &RansacParams::default(), 0).unwrap();
        let diff = (h.matrix - Matrix3::identity()).abs().max();
        assert!(diff < 1e-6, "{diff}");
        assert_eq!(h.inlier_count, 25);
        assert!(h.mean_reprojection_error < 1e-9);
    }

    #[test]
    fn recovers_projective_warp_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_h(&mut rng);
        let src: Vec<(f64, f64)> = (0..50).map(|_| (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0))).collect();
        let mut dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| project(&truth, x, y).unwrap()).collect();
        for d in dst.iter_mut().take(10) {
            *d = (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
        }
        let h = estimate_homography_points(&src, &dst, &RansacParams::default(), 9).unwrap();
        assert!(h.inlier_count >= 40);
        assert!(h.mean_reprojection_error < 0.5);
        for i in 10..50 {
            assert!(h.inliers[i]);
        }
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let src: Vec<(f64, f64)> = (0..4).map(|i| (i as f64 * 10.0, i as f64 * 5.0)).collect();
        let err = estimate_homography_points(&src, &src, &RansacParams::default(), 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateGeometry(_)));
        let err = estimate_homography_points(&src[..3], &src[..3], &RansacParams::default(), 1).unwrap_err();
        assert!(matches!(err, Error::InsufficientMatches { .. }));
    }

    #[test]
    fn inliers_do_not_drop_when_outliers_are_removed() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_h(&mut rng);
        let src: Vec<(f64, f64)> = (0..40).map(|_| (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0))).collect();
        let mut dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| project(&truth, x, y).unwrap()).collect();
        for d in dst.iter_mut().take(12) {
            *d = (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0));
        }
        let p = RansacParams::default();
        let with = estimate_homography_points(&src, &dst, &p, 3).unwrap().inlier_count;
        let without = estimate_homography_points(&src[12..], &dst[12..], &p, 3).unwrap().inlier_count;
        assert_eq!(with, 28);
        assert!(without >= with, "{with} {without}");
    }

    #[test]
    fn warp_identity_and_translation() {
        let img = render_base_image(60, 40, 7);
        let w = warp(&img, &Homography::identity(), 60, 40);
        assert_eq!(w.image, img);
        assert!(w.valid.iter().all(|&v| v));
        let t = Homography::from_matrix(Matrix3::new(1.0, 0.0, 5.0, 0.0, 1.0, 3.0, 0.0, 0.0, 1.0));
        let w = warp(&img, &t, 60, 40);
        for y in 0..40 {
            for x in 0..60 {
                let ok = w.valid[y * 60 + x];
                assert_eq!(ok, x >= 5 && y >= 3);
                if ok {
                    for c in 0..3 {
                        assert!(w.image.get(x, y, c).abs_diff(img.get(x - 5, y - 3, c)) <= 1);
                    }
                }
            }
        }
        let away = Homography::from_matrix(Matrix3::new(1.0, 0.0, 500.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0));
        assert!(warp(&img, &away, 60, 40).valid.iter().all(|&v| !v));
    }

    #[test]
    fn warp_round_trip_within_two_levels() {
        let pixels = (0..60)
            .flat_map(|y| (0..80).flat_map(move |x| (0..3).map(move |c| {
                let v = 128.0 + 60.0 * ((x as f64 + 7.0 * c as f64) / 9.0).sin() * (y as f64 / 11.0).cos();
                v.round() as u8
            })))
            .collect();
        let img = RasterImage::new(80, 60, 3, pixels).unwrap();
        let h = Homography::from_matrix(Matrix3::new(0.95, -0.08, 6.0, 0.07, 1.02, -3.0, 1e-4, -5e-5, 1.0));
        let fwd = warp(&img, &h, 80, 60);
        let back = warp(&fwd.image, &h.inverse().unwrap(), 80, 60);
        let mut checked = 0;
        for y in 0..60 {
            for x in 0..80 {
                let Some((u, v)) = h.apply(x as f64, y as f64) else { continue };
                if !back.valid[y * 80 + x] || !(u >= 0.0 && v >= 0.0 && u < 79.0 && v < 59.0) {
                    continue;
                }
                let (xf, yf) = (u.floor() as usize, v.floor() as usize);
                let corners = [(xf, yf), (xf + 1, yf), (xf, yf + 1), (xf + 1, yf + 1)];
                if !corners.iter().all(|&(a, b)| fwd.valid[b * 80 + a]) {
                    continue;
                }
                checked += 1;
                for c in 0..3 {
                    let d = back.image.get(x, y, c).abs_diff(img.get(x, y, c));
                    assert!(d <= 2, "{x},{y}: {d}");
                }
            }
        }
        assert!(checked > 2000, "{checked}");
    }

    proptest::proptest! {
        #[test]
        fn inverse_undoes_apply(seed in 0u64..10_000, x in 0.0f64..320.0, y in 0.0f64..240.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = Homography::from_matrix(random_h(&mut rng));
            let (u, v) = h.apply(x, y).unwrap();
            let (bx, by) = h.inverse().unwrap().apply(u, v).unwrap();
            proptest::prop_assert!((bx - x).abs() < 1e-6 && (by - y).abs() < 1e-6);
        }

        #[test]
        fn ransac_is_deterministic_per_seed(data_seed in 0u64..500, seed in 0u64..50) {
            let mut rng = ChaCha8Rng::seed_from_u64(data_seed);
            let truth = random_h(&mut rng);
            let src: Vec<(f64, f64)> = (0..20).map(|_| (rng.gen_range(0.0..320.0), rng.gen_range(0.0..240.0))).collect();
            let mut dst: Vec<(f64, f64)> = src.iter().map(|&(x, y)| project(&truth, x, y).unwrap()).collect();
            dst[0] = (5.0, 5.0);
            let p = RansacParams::default();
            let a = estimate_homography_points(&src, &dst, &p, seed).unwrap();
            let b = estimate_homography_points(&src, &dst, &p, seed).unwrap();
            proptest::prop_assert_eq!(a.matrix, b.matrix);
            proptest::prop_assert!(a.inlier_count >= 19);
        }
    }
}
