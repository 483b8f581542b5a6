//! Procedural base images and the raster transforms used to build
//! composites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{warp, Homography};
use crate::imagecore::RasterImage;

/// A textured RGB scene: gradient background, multi-octave value noise and
/// a few dozen random shapes. Different seeds give unrelated images.
pub fn render_base_image(width: usize, height: usize, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba5e);
    let c0: [f32; 3] = std::array::from_fn(|_| rng.gen_range(20.0..235.0));
    let c1: [f32; 3] = std::array::from_fn(|_| rng.gen_range(20.0..235.0));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let diag = ((width * width + height * height) as f32).sqrt().max(1.0);

    let octaves: Vec<(ValueNoise, f32)> = [(48.0, 38.0), (17.0, 26.0), (6.0, 16.0)]
        .iter()
        .map(|&(cell, amp)| (ValueNoise::new(&mut rng, width, height, cell), amp))
        .collect();
    let tint: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.4));

    let mut px = vec![0f32; width * height * 3];
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f32 * ca + y as f32 * sa) / diag + 1.0) * 0.5;
            let n: f32 = octaves.iter().map(|(o, a)| (o.at(x as f32, y as f32) - 0.5) * a).sum();
            for c in 0..3 {
                px[(y * width + x) * 3 + c] = c0[c] + (c1[c] - c0[c]) * t + n * tint[c];
            }
        }
    }

    let shapes = rng.gen_range(18..34);
    let scale = width.min(height) as f32;
    for _ in 0..shapes {
        let color: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..255.0));
        let cx = rng.gen_range(0.0..width as f32);
        let cy = rng.gen_range(0.0..height as f32);
        let r = rng.gen_range(0.03..0.16) * scale;
        let alpha = rng.gen_range(0.55..1.0f32);
        let kind = rng.gen_range(0..4);
        let rot: f32 = rng.gen_range(0.0..std::f32::consts::PI);
        let aspect = rng.gen_range(0.4..1.0f32);
        let stripe = rng.gen_range(2.5..7.0f32);
        let verts: Vec<(f32, f32)> = (0..3)
            .map(|_| (cx + rng.gen_range(-r..r) * 1.6, cy + rng.gen_range(-r..r) * 1.6))
            .collect();
        let (cr, sr) = (rot.cos(), rot.sin());
        let x0 = (cx - 1.7 * r).floor().max(0.0) as usize;
        let y0 = (cy - 1.7 * r).floor().max(0.0) as usize;
        let x1 = ((cx + 1.7 * r).ceil() as usize).min(width);
        let y1 = ((cy + 1.7 * r).ceil() as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f32 - cx;
                let dy = y as f32 - cy;
                let u = dx * cr + dy * sr;
                let v = -dx * sr + dy * cr;
                let (inside, shade) = match kind {
                    0 => (dx * dx + dy * dy <= r * r, 1.0),
                    1 => (u.abs() <= r && v.abs() <= r * aspect, 1.0),
                    2 => (in_triangle(x as f32, y as f32, &verts), 1.0),
                    _ => {
                        let band = ((u / stripe).floor() as i64).rem_euclid(2) == 0;
                        (u.abs() <= r && v.abs() <= r, if band { 1.0 } else { 0.35 })
                    }
                };
                if inside {
                    let i = (y * width + x) * 3;
                    for c in 0..3 {
                        px[i + c] = px[i + c] * (1.0 - alpha) + color[c] * shade * alpha;
                    }
                }
            }
        }
    }

    let pixels = px.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    RasterImage::new(width, height, 3, pixels).expect("valid shape")
}

fn in_triangle(px: f32, py: f32, v: &[(f32, f32)]) -> bool {
    let sign = |a: (f32, f32), b: (f32, f32)| (px - b.0) * (a.1 - b.1) - (a.0 - b.0) * (py - b.1);
    let d1 = sign(v[0], v[1]);
    let d2 = sign(v[1], v[2]);
    let d3 = sign(v[2], v[0]);
    let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(neg && pos)
}

struct ValueNoise {
    cell: f32,
    cols: usize,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f32) -> Self {
        let cols = (width as f32 / cell).ceil() as usize + 2;
        let rows = (height as f32 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.gen::<f32>()).collect();
        Self { cell, cols, lattice }
    }

    fn at(&self, x: f32, y: f32) -> f32 {
        let fx = x / self.cell;
        let fy = y / self.cell;
        let (ix, iy) = (fx.floor() as usize, fy.floor() as usize);
        let smooth = |t: f32| t * t * (3.0 - 2.0 * t);
        let (tx, ty) = (smooth(fx - ix as f32), smooth(fy - iy as f32));
        let l = |cx: usize, cy: usize| self.lattice[cy * self.cols + cx];
        let top = l(ix, iy) * (1.0 - tx) + l(ix + 1, iy) * tx;
        let bottom = l(ix, iy + 1) * (1.0 - tx) + l(ix + 1, iy + 1) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Bilinear resize to `width x height`.
pub fn resize(img: &RasterImage, width: usize, height: usize) -> RasterImage {
    let sx = img.width() as f64 / width as f64;
    let sy = img.height() as f64 / height as f64;
    let h = Homography::from_matrix(nalgebra::Matrix3::new(1.0 / sx, 0.0, 0.5 / sx - 0.5, 0.0, 1.0 / sy, 0.5 / sy - 0.5, 0.0, 0.0, 1.0));
    let mut out = warp(img, &h, width, height);
    // Border samples that land a fraction outside the source are clamped in.
    for y in 0..height {
        for x in 0..width {
            if !out.valid[y * width + x] {
                let srcx = (((x as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(img.width() - 1);
                let srcy = (((y as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(img.height() - 1);
                for c in 0..img.channels() {
                    out.image.set(x, y, c, img.get(srcx, srcy, c));
                }
                out.valid[y * width + x] = true;
            }
        }
    }
    out.image
}

/// Rotates about the image center into the bounding box of the rotated
/// frame. Pixels outside the source are flagged invalid.
pub fn rotate(img: &RasterImage, radians: f64) -> (RasterImage, Vec<bool>) {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let (c, s) = (radians.cos(), radians.sin());
    let ow = (w * c.abs() + h * s.abs()).ceil().max(1.0) as usize;
    let oh = (w * s.abs() + h * c.abs()).ceil().max(1.0) as usize;
    let (icx, icy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
    let (ocx, ocy) = ((ow as f64 - 1.0) / 2.0, (oh as f64 - 1.0) / 2.0);
    let m = nalgebra::Matrix3::new(c, -s, ocx - c * icx + s * icy, s, c, ocy - s * icx - c * icy, 0.0, 0.0, 1.0);
    let out = warp(img, &Homography::from_matrix(m), ow, oh);
    (out.image, out.valid)
}

/// Multiplies every channel by `factor`, saturating.
pub fn adjust_brightness(img: &RasterImage, factor: f32) -> RasterImage {
    let pixels = img
        .pixels()
        .iter()
        .map(|&v| (v as f32 * factor).round().clamp(0.0, 255.0) as u8)
        .collect();
    RasterImage::new(img.width(), img.height(), img.channels(), pixels).expect("same shape")
}

/// Uniform noise in `[-amplitude, amplitude]`, unrelated to any corpus image.
pub fn noise_image(width: usize, height: usize, amplitude: u8, seed: u64) -> RasterImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = amplitude as i32;
    let pixels = (0..width * height * 3)
        .map(|_| (128 + rng.gen_range(-a..=a)).clamp(0, 255) as u8)
        .collect();
    RasterImage::new(width, height, 3, pixels).expect("valid shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_images_are_deterministic_and_distinct() {
        let a = render_base_image(64, 48, 3);
        assert_eq!(a, render_base_image(64, 48, 3));
        assert_ne!(a, render_base_image(64, 48, 4));
        assert_eq!(a.dimensions(), (64, 48));
        let mean = a.pixels().iter().map(|&v| v as f64).sum::<f64>() / a.pixels().len() as f64;
        let var = a.pixels().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / a.pixels().len() as f64;
        assert!(var > 100.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = render_base_image(40, 30, 1);
        assert_eq!(resize(&img, 40, 30), img);
        let flat = RasterImage::filled(10, 10, 3, 77);
        assert_eq!(resize(&flat, 23, 7), RasterImage::filled(23, 7, 3, 77));
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let img = render_base_image(33, 21, 2);
        let (r, valid) = rotate(&img, 0.0);
        assert_eq!(r, img);
        assert!(valid.iter().all(|&v| v));
        let (r, valid) = rotate(&img, 0.4);
        assert!(r.width() > 33 && r.height() > 21);
        assert!(valid.iter().any(|&v| !v));
    }

    #[test]
    fn brightness_saturates() {
        let img = RasterImage::new(3, 1, 1, vec![0, 100, 250]).unwrap();
        assert_eq!(adjust_brightness(&img, 1.2).pixels(), &[0, 120, 255]);
    }
}
