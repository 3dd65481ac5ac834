//! Single-channel rasters, reflect-101 padding and Lanczos3 resampling.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid raster dimensions {0}x{1}")]
    BadDimensions(usize, usize),
    #[error("resampling factor must lie in (0, 8], got {0}")]
    BadFactor(f64),
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
}

/// Luminance raster with samples in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(RasterError::BadDimensions(width, height));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        assert!(width > 0 && height > 0);
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    /// Copy of the sub-rectangle; the rectangle must lie inside the image.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Self {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut data = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + width]);
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Decodes an 8/16-bit PNG or PNM file. Color is reduced with BT.601 luma weights.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let img = image::open(path)?;
        Ok(Self::from_dynamic(&img))
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = match img {
            image::DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
            image::DynamicImage::ImageLuma16(g) => {
                g.as_raw().iter().map(|&v| v as f32 / 65535.0).collect()
            }
            other => other
                .to_rgb32f()
                .pixels()
                .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
                .collect(),
        };
        Self {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_gray8(&self) -> image::GrayImage {
        image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.get(x as usize, y as usize);
            image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
        })
    }
}

/// Reflect-101 index: `-1 -> 1`, `n -> n - 2`. Works for any offset.
#[inline]
pub fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Pads by `pad` pixels on every side with reflect-101 borders. Pixel `(x, y)`
/// of the input sits at `(x + pad, y + pad)` in the output.
pub fn pad_image(img: &RasterImage, pad: usize) -> RasterImage {
    if pad == 0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    RasterImage::from_fn(w + 2 * pad, h + 2 * pad, |x, y| {
        let sx = reflect101(x as isize - pad as isize, w);
        let sy = reflect101(y as isize - pad as isize, h);
        img.get(sx, sy)
    })
}

const LANCZOS_A: f64 = 3.0;

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= LANCZOS_A || x.fract() == 0.0 {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
}

struct Taps {
    first: isize,
    weights: Vec<f32>,
}

/// Per-output-sample kernel taps. Output sample `i` is centered on input
/// coordinate `(i + 0.5) / factor - 0.5`; the kernel is widened when minifying.
fn taps(out_len: usize, factor: f64) -> Vec<Taps> {
    let support = (1.0 / factor).max(1.0);
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) / factor - 0.5;
            let first = (center - LANCZOS_A * support).floor() as isize + 1;
            let last = (center + LANCZOS_A * support).floor() as isize;
            let mut w: Vec<f64> = (first..=last)
                .map(|j| lanczos3((j as f64 - center) / support))
                .collect();
            let sum: f64 = w.iter().sum();
            for v in &mut w {
                *v /= sum;
            }
            Taps {
                first,
                weights: w.into_iter().map(|v| v as f32).collect(),
            }
        })
        .collect()
}

/// Lanczos3 resampling with reflect-101 borders; output is `round(dims * factor)`.
pub fn resample(img: &RasterImage, factor: f64) -> Result<RasterImage, RasterError> {
    if !(factor > 0.0 && factor <= 8.0) {
        return Err(RasterError::BadFactor(factor));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let (w, h) = img.dims();
    let ow = ((w as f64 * factor).round() as usize).max(1);
    let oh = ((h as f64 * factor).round() as usize).max(1);
    let tx = taps(ow, factor);
    let ty = taps(oh, factor);

    let mut horiz = vec![0f32; ow * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for (x, t) in tx.iter().enumerate() {
            let mut acc = 0f32;
            for (k, &wt) in t.weights.iter().enumerate() {
                acc += wt * row[reflect101(t.first + k as isize, w)];
            }
            horiz[y * ow + x] = acc;
        }
    }
    let mut out = vec![0f32; ow * oh];
    for (y, t) in ty.iter().enumerate() {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (k, &wt) in t.weights.iter().enumerate() {
            let sy = reflect101(t.first + k as isize, h);
            let src = &horiz[sy * ow..(sy + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wt * s;
            }
        }
    }
    RasterImage::new(ow, oh, out)
}
