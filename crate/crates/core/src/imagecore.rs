//! Raster images, grayscale conversion and summed-area tables.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit raster, row-major, 1 (gray) or 3 (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParams(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidParams(format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Constant image. Panics on zero dimensions or a channel count other than 1 or 3.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid constant image")
    }

    /// Builds an image from RGBA bytes, dropping alpha.
    pub fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::InvalidParams(format!(
                "rgba buffer has {} bytes, expected {}",
                rgba.len(),
                width * height * 4
            )));
        }
        let pixels = rgba
            .chunks_exact(4)
            .flat_map(|p| [p[0], p[1], p[2]])
            .collect();
        Self::new(width, height, 3, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    /// Expands a gray image to three identical channels; RGB is returned as is.
    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }

    /// RGBA bytes with opaque alpha, for canvases.
    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height * 4);
        for p in self.pixels.chunks_exact(self.channels) {
            if self.channels == 1 {
                out.extend_from_slice(&[p[0], p[0], p[0], 255]);
            } else {
                out.extend_from_slice(&[p[0], p[1], p[2], 255]);
            }
        }
        out
    }

    /// Copies the part of `rect` inside the image. Returns `None` when the
    /// clipped rectangle is empty.
    pub fn crop(&self, rect: Rect) -> Option<RasterImage> {
        let r = rect.clip(self.width, self.height);
        if r.is_empty() {
            return None;
        }
        let (w, h) = (r.width() as usize, r.height() as usize);
        let mut pixels = Vec::with_capacity(w * h * self.channels);
        for y in r.y0 as usize..r.y1 as usize {
            let start = (y * self.width + r.x0 as usize) * self.channels;
            pixels.extend_from_slice(&self.pixels[start..start + w * self.channels]);
        }
        Some(RasterImage {
            width: w,
            height: h,
            channels: self.channels,
            pixels,
        })
    }

    /// Decodes PNG, JPEG or binary PNM bytes. Alpha is dropped and 16-bit
    /// samples are rescaled to 8 bits.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        let (width, height) = (img.width() as usize, img.height() as usize);
        if img.color().has_color() {
            let rgb = img.into_rgb8();
            RasterImage {
                width,
                height,
                channels: 3,
                pixels: rgb.into_raw(),
            }
        } else {
            let gray = img.into_luma8();
            RasterImage {
                width,
                height,
                channels: 1,
                pixels: gray.into_raw(),
            }
        }
    }

    pub fn to_dynamic(&self) -> DynamicImage {
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 1 {
            DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, self.pixels.clone()).expect("buffer size"),
            )
        } else {
            DynamicImage::ImageRgb8(
                image::RgbImage::from_raw(w, h, self.pixels.clone()).expect("buffer size"),
            )
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_dynamic()
            .write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(buf.into_inner())
    }

    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        let mut enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut buf, quality);
        enc.encode_image(&self.to_dynamic())
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(buf)
    }

    /// JPEG encode + decode at `quality`, i.e. lossy re-compression.
    pub fn recompress_jpeg(&self, quality: u8) -> Result<RasterImage> {
        let bytes = self.encode_jpeg(quality)?;
        RasterImage::decode(&bytes)
    }

    /// Writes the image; the format follows the extension (png, jpg/jpeg, ppm/pgm).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        let bytes = match ext.as_str() {
            "jpg" | "jpeg" => self.encode_jpeg(95)?,
            "ppm" | "pgm" | "pnm" => self.encode_pnm(),
            _ => self.encode_png()?,
        };
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Binary PGM (gray) or PPM (RGB).
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Reads and decodes an image file.
pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    RasterImage::decode(&bytes)
}

/// BT.601 luma. Gray input is returned unchanged.
pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    if img.channels == 1 {
        return img.clone();
    }
    let pixels = img
        .pixels
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]))
        .collect();
    RasterImage {
        width: img.width,
        height: img.height,
        channels: 1,
        pixels,
    }
}

#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

/// Half-open integer rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Rect {
    pub fn new(x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn from_origin_size(x: i64, y: i64, w: i64, h: i64) -> Self {
        Self::new(x, y, x + w, y + h)
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0, 0, width as i64, height as i64)
    }

    pub fn width(&self) -> i64 {
        (self.x1 - self.x0).max(0)
    }

    pub fn height(&self) -> i64 {
        (self.y1 - self.y0).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn clip(&self, width: usize, height: usize) -> Rect {
        let (w, h) = (width as i64, height as i64);
        let x0 = self.x0.clamp(0, w);
        let y0 = self.y0.clamp(0, h);
        Rect {
            x0,
            y0,
            x1: self.x1.clamp(x0, w),
            y1: self.y1.clamp(y0, h),
        }
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        Rect {
            x0,
            y0,
            x1: self.x1.min(other.x1).max(x0),
            y1: self.y1.min(other.y1).max(y0),
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersect(other).area();
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Summed-area table with a zero first row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<u64>,
}

/// Builds the summed-area table of a gray image (RGB input is converted first).
pub fn integral(img: &RasterImage) -> IntegralImage {
    let gray;
    let src = if img.channels == 1 {
        img
    } else {
        gray = to_grayscale(img);
        &gray
    };
    let (w, h) = (src.width, src.height);
    let stride = w + 1;
    let mut sums = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        for x in 0..w {
            row += src.pixels[y * w + x] as u64;
            sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        sums,
    }
}

impl IntegralImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Table entry at grid position `(x, y)`, both in `0..=width`/`0..=height`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.sums[y * (self.width + 1) + x]
    }

    /// Exact pixel sum inside `rect` after clipping to the image.
    pub fn box_sum(&self, rect: Rect) -> u64 {
        let r = rect.clip(self.width, self.height);
        if r.is_empty() {
            return 0;
        }
        let (x0, y0, x1, y1) = (r.x0 as usize, r.y0 as usize, r.x1 as usize, r.y1 as usize);
        self.at(x1, y1) + self.at(x0, y0) - self.at(x1, y0) - self.at(x0, y1)
    }

    /// Box sum of `rows x cols` pixels with top-left `(row, col)`, clipped.
    /// Returned as f32 for filter arithmetic.
    #[inline]
    pub(crate) fn block(&self, row: i64, col: i64, rows: i64, cols: i64) -> f32 {
        self.box_sum(Rect::new(col, row, col + cols, row + rows)) as f32
    }
}
