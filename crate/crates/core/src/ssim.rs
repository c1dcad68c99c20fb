//! Gaussian-window SSIM on 8-bit grayscale images.
//!
//! Scores are averaged over valid window positions only (no padding). For
//! repeated comparisons, [`PreparedImage`] caches the per-image windowed
//! moments so a pair only costs one extra filtering pass.

use alloc::vec::Vec;

use thiserror::Error;

use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SsimError {
    #[error("images differ in shape: {a_width}x{a_height} vs {b_width}x{b_height}")]
    ShapeMismatch {
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
    #[error("image side {side} is smaller than the {window}-pixel window")]
    TooSmall { side: u32, window: usize },
    #[error("invalid SSIM configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Longer side after preprocessing.
    pub max_side: u32,
    pub data_range: f64,
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            max_side: 128,
            data_range: 255.0,
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<(), SsimError> {
        if self.max_side < 8 {
            return Err(SsimError::InvalidConfig("max_side must be at least 8"));
        }
        if !(self.data_range > 0.0) {
            return Err(SsimError::InvalidConfig("data_range must be positive"));
        }
        if self.window == 0 || self.window % 2 == 0 {
            return Err(SsimError::InvalidConfig("window must be a positive odd size"));
        }
        if !(self.sigma > 0.0) {
            return Err(SsimError::InvalidConfig("sigma must be positive"));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        let v = self.k1 * self.data_range;
        v * v
    }

    pub fn c2(&self) -> f64 {
        let v = self.k2 * self.data_range;
        v * v
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let half = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                libm::exp(-(d * d) / (2.0 * self.sigma * self.sigma))
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Shrinks the image so its longer side equals `max_side`, keeping the aspect
/// ratio (shorter side rounded, at least 1). Smaller images pass unchanged.
pub fn preprocess_for_ssim(img: &GrayImage, cfg: &SsimConfig) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let longest = w.max(h);
    if longest <= cfg.max_side {
        return img.clone();
    }
    let scale = f64::from(cfg.max_side) / f64::from(longest);
    let shrink = |side: u32| {
        if side == longest {
            cfg.max_side
        } else {
            (libm::round(f64::from(side) * scale) as u32).max(1)
        }
    };
    img.resize_bilinear(shrink(w), shrink(h))
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut horiz = alloc::vec![0.0; ow * h];
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let out = &mut horiz[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            *o = row[x..x + n].iter().zip(kernel).map(|(a, k)| a * k).sum();
        }
    }
    let mut out = alloc::vec![0.0; ow * oh];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (i, k) in kernel.iter().enumerate() {
            let src = &horiz[(y + i) * ow..(y + i + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

/// Image plus its windowed first and second moments.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
    mean: Vec<f64>,
    mean_sq: Vec<f64>,
}

impl PreparedImage {
    pub fn new(img: &GrayImage, cfg: &SsimConfig) -> Result<Self, SsimError> {
        let side = img.width().min(img.height());
        if (side as usize) < cfg.window {
            return Err(SsimError::TooSmall {
                side,
                window: cfg.window,
            });
        }
        let (w, h) = (img.width() as usize, img.height() as usize);
        let values: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p)).collect();
        let squares: Vec<f64> = values.iter().map(|v| v * v).collect();
        let kernel = cfg.kernel();
        Ok(Self {
            width: w,
            height: h,
            mean: filter_valid(&values, w, h, &kernel),
            mean_sq: filter_valid(&squares, w, h, &kernel),
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width as u32
    }

    pub fn height(&self) -> u32 {
        self.height as u32
    }
}

/// SSIM between two prepared images of identical shape.
pub fn ssim_prepared(
    a: &PreparedImage,
    b: &PreparedImage,
    cfg: &SsimConfig,
) -> Result<f64, SsimError> {
    if a.width != b.width || a.height != b.height {
        return Err(SsimError::ShapeMismatch {
            a_width: a.width as u32,
            a_height: a.height as u32,
            b_width: b.width as u32,
            b_height: b.height as u32,
        });
    }
    let cross: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
    let cross = filter_valid(&cross, a.width, a.height, &cfg.kernel());
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut total = 0.0;
    for i in 0..cross.len() {
        let (ma, mb) = (a.mean[i], b.mean[i]);
        let va = a.mean_sq[i] - ma * ma;
        let vb = b.mean_sq[i] - mb * mb;
        let cov = cross[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    Ok(total / cross.len() as f64)
}

/// SSIM of two images with identical dimensions (no preprocessing applied).
pub fn ssim(a: &GrayImage, b: &GrayImage, cfg: &SsimConfig) -> Result<f64, SsimError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(SsimError::ShapeMismatch {
            a_width: a.width(),
            a_height: a.height(),
            b_width: b.width(),
            b_height: b.height(),
        });
    }
    let pa = PreparedImage::new(a, cfg)?;
    let pb = PreparedImage::new(b, cfg)?;
    ssim_prepared(&pa, &pb, cfg)
}
