//! Pixel containers and resampling helpers shared by the pipeline stages.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb, Rgb32FImage, RgbImage};

use crate::error::{ensure, Result};

pub type GrayF32 = ImageBuffer<Luma<f32>, Vec<f32>>;

/// Per-pixel validity map; `true` marks a usable pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Mask {
    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        ensure!(
            data.len() == width as usize * height as usize,
            "mask data length {} does not match {width}x{height}",
            data.len()
        );
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_valid(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.dimensions(), other.dimensions());
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// Rows `first_row..height` set to `false`.
    pub fn clear_rows_from(&mut self, first_row: u32) {
        let start = first_row.min(self.height) as usize * self.width as usize;
        self.data[start..].fill(false);
    }
}

pub fn to_f32(img: &RgbImage) -> Rgb32FImage {
    let (w, h) = img.dimensions();
    Rgb32FImage::from_raw(w, h, img.as_raw().iter().map(|&c| c as f32 / 255.0).collect())
        .expect("buffer length matches dimensions")
}

pub fn to_u8(img: &Rgb32FImage) -> RgbImage {
    let (w, h) = img.dimensions();
    RgbImage::from_raw(w, h, img.as_raw().iter().map(|&c| quantize(c)).collect())
        .expect("buffer length matches dimensions")
}

pub fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rec. 601 luma in `[0, 1]`.
pub fn luma(img: &Rgb32FImage) -> GrayF32 {
    let (w, h) = img.dimensions();
    GrayF32::from_fn(w, h, |x, y| {
        let Rgb([r, g, b]) = *img.get_pixel(x, y);
        Luma([0.299 * r + 0.587 * g + 0.114 * b])
    })
}

pub fn luma_u8(img: &RgbImage) -> GrayF32 {
    luma(&to_f32(img))
}

/// How out-of-range coordinates are resolved during bilinear sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrap {
    /// Clamp to the border in both axes.
    Clamp,
    /// Wrap columns (longitude), clamp rows.
    Horizontal,
}

#[inline]
fn corners(x: f64, size: u32, wrap: bool) -> (u32, u32, f32) {
    let n = size as i64;
    let x0 = x.floor();
    let f = (x - x0) as f32;
    let i0 = x0 as i64;
    let (a, b) = if wrap {
        (i0.rem_euclid(n), (i0 + 1).rem_euclid(n))
    } else {
        (i0.clamp(0, n - 1), (i0 + 1).clamp(0, n - 1))
    };
    (a as u32, b as u32, f)
}

/// Bilinear sample at continuous pixel coordinate `(x, y)`, where integer
/// coordinates address pixel centers.
pub fn sample_rgb(img: &Rgb32FImage, x: f64, y: f64, wrap: Wrap) -> [f32; 3] {
    let (w, h) = img.dimensions();
    let (x0, x1, fx) = corners(x, w, wrap == Wrap::Horizontal);
    let (y0, y1, fy) = corners(y, h, false);
    let p = |x, y| img.get_pixel(x, y).0;
    let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] + (b[k] - a[k]) * fx;
        let bot = c[k] + (d[k] - c[k]) * fx;
        out[k] = top + (bot - top) * fy;
    }
    out
}

pub fn sample_gray(img: &GrayF32, x: f64, y: f64, wrap: Wrap) -> f32 {
    let (w, h) = img.dimensions();
    let (x0, x1, fx) = corners(x, w, wrap == Wrap::Horizontal);
    let (y0, y1, fy) = corners(y, h, false);
    let raw = img.as_raw();
    let p = |x: u32, y: u32| raw[y as usize * w as usize + x as usize];
    let top = p(x0, y0) + (p(x1, y0) - p(x0, y0)) * fx;
    let bot = p(x0, y1) + (p(x1, y1) - p(x0, y1)) * fx;
    top + (bot - top) * fy
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    img.save(path)?;
    Ok(())
}

/// Write distances as a 16-bit PNG in millimeters. Non-finite or
/// non-positive values become 0 (invalid); the range saturates at 65.535 m.
pub fn save_depth_mm(depth: &[f64], width: u32, height: u32, path: &Path) -> Result<()> {
    ensure!(
        depth.len() == width as usize * height as usize,
        "depth buffer has {} values for a {width}x{height} image",
        depth.len()
    );
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let img = ImageBuffer::<Luma<u16>, _>::from_fn(width, height, |x, y| {
        let d = depth[(y * width + x) as usize];
        Luma([if d.is_finite() && d > 0.0 {
            (d * 1000.0).round().clamp(1.0, 65535.0) as u16
        } else {
            0
        }])
    });
    img.save(path)?;
    Ok(())
}

/// Inverse of [`save_depth_mm`]: meters, with `0` for invalid pixels.
pub fn load_depth_mm(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let img = image::open(path)?;
    ensure!(
        matches!(img, image::DynamicImage::ImageLuma16(_)),
        "{} is not a 16-bit grayscale depth image",
        path.display()
    );
    let img = img.into_luma16();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw().into_iter().map(|v| v as f64 / 1000.0).collect()))
}
