//! 8-bit grayscale image carrier and the resampling shared by every stage.

use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    PixelCountMismatch { expected: usize, actual: usize },
    #[error("overlay fraction {0} outside [0, 0.5]")]
    InvalidFraction(f64),
    #[error("crop region {width}x{height} at ({x},{y}) does not fit a {img_width}x{img_height} image")]
    CropOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
        img_width: u32,
        img_height: u32,
    },
}

/// Row-major 8-bit grayscale image. Width and height are always at least 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("GrayImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(ImageError::PixelCountMismatch {
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, alloc::vec![value; width as usize * height as usize])
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel in row-major order.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn mean(&self) -> f64 {
        let sum: u64 = self.pixels.iter().map(|&p| u64::from(p)).sum();
        sum as f64 / self.pixels.len() as f64
    }

    /// Copies out a rectangular region.
    pub fn crop(&self, x: u32, y: u32, width: u32, height: u32) -> Result<GrayImage, ImageError> {
        let fits = width >= 1
            && height >= 1
            && x.checked_add(width).is_some_and(|r| r <= self.width)
            && y.checked_add(height).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(ImageError::CropOutOfBounds {
                x,
                y,
                width,
                height,
                img_width: self.width,
                img_height: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for row in y..y + height {
            let start = row as usize * self.width as usize + x as usize;
            pixels.extend_from_slice(&self.pixels[start..start + width as usize]);
        }
        GrayImage::new(width, height, pixels)
    }

    /// Bilinear resize, rounding back to 8 bits.
    pub fn resize_bilinear(&self, width: u32, height: u32) -> GrayImage {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let pixels = resample_bilinear(self, width, height)
            .into_iter()
            .map(quantize)
            .collect();
        GrayImage {
            width,
            height,
            pixels,
        }
    }
}

/// Rounds to the nearest representable intensity, clamping to `[0, 255]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        return 0;
    }
    let r = libm::round(v);
    if r <= 0.0 {
        0
    } else if r >= 255.0 {
        255
    } else {
        r as u8
    }
}

/// Rec.601 luma of an RGB triple, used when colour inputs are loaded.
#[inline]
pub fn luma601(r: u8, g: u8, b: u8) -> u8 {
    quantize(0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
}

/// Precomputed sampling taps for one axis: for each output coordinate the two
/// source indices and the weight of the second one.
fn axis_taps(src_len: u32, dst_len: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src_len) / f64::from(dst_len);
    let max = f64::from(src_len - 1);
    (0..dst_len)
        .map(|d| {
            // pixel-centre alignment, clamped at the borders
            let s = ((f64::from(d) + 0.5) * scale - 0.5).clamp(0.0, max);
            let i0 = libm::floor(s);
            let frac = s - i0;
            let i0 = i0 as usize;
            let i1 = (i0 + 1).min(src_len as usize - 1);
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling to `width` x `height` with unrounded output.
///
/// Source coordinate for destination index `d` is `(d + 0.5) * scale - 0.5`,
/// clamped to the valid pixel range. No prefiltering is applied.
pub fn resample_bilinear(img: &GrayImage, width: u32, height: u32) -> Vec<f64> {
    assert!(width >= 1 && height >= 1, "resample target must be non-empty");
    let xs = axis_taps(img.width, width);
    let ys = axis_taps(img.height, height);
    let stride = img.width as usize;
    let px = &img.pixels;
    let mut out = Vec::with_capacity(width as usize * height as usize);
    for &(y0, y1, fy) in &ys {
        let r0 = &px[y0 * stride..(y0 + 1) * stride];
        let r1 = &px[y1 * stride..(y1 + 1) * stride];
        for &(x0, x1, fx) in &xs {
            let top = f64::from(r0[x0]) * (1.0 - fx) + f64::from(r0[x1]) * fx;
            let bottom = f64::from(r1[x0]) * (1.0 - fx) + f64::from(r1[x1]) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Removes the bottom `floor(height * bottom_fraction)` rows, where SEM
/// instruments place their scale bar and info banner.
pub fn crop_overlay(img: &GrayImage, bottom_fraction: f64) -> Result<GrayImage, ImageError> {
    if !(0.0..=0.5).contains(&bottom_fraction) {
        return Err(ImageError::InvalidFraction(bottom_fraction));
    }
    // the epsilon absorbs products such as 0.29 * 100 = 28.999999999999996
    let removed = libm::floor(f64::from(img.height) * bottom_fraction + 1e-9) as u32;
    let kept = (img.height - removed).max(1);
    img.crop(0, 0, img.width, kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: u32, h: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 256) as u8).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert!(matches!(
            GrayImage::new(0, 4, alloc::vec![]),
            Err(ImageError::EmptyDimensions { .. })
        ));
        assert!(matches!(
            GrayImage::new(2, 2, alloc::vec![0; 3]),
            Err(ImageError::PixelCountMismatch { expected: 4, actual: 3 })
        ));
    }

    #[test]
    fn crop_overlay_examples() {
        let img = ramp(100, 200);
        let c = crop_overlay(&img, 0.10).unwrap();
        assert_eq!((c.width(), c.height()), (100, 180));
        assert_eq!(c.pixels(), &img.pixels()[..100 * 180]);

        assert_eq!(crop_overlay(&img, 0.0).unwrap(), img);

        let c = crop_overlay(&ramp(64, 10), 0.5).unwrap();
        assert_eq!((c.width(), c.height()), (64, 5));

        let c = crop_overlay(&ramp(3, 100), 0.29).unwrap();
        assert_eq!(c.height(), 71);
    }

    #[test]
    fn crop_overlay_rejects_fraction() {
        let img = ramp(4, 4);
        assert_eq!(crop_overlay(&img, 0.6), Err(ImageError::InvalidFraction(0.6)));
        assert_eq!(crop_overlay(&img, -0.1), Err(ImageError::InvalidFraction(-0.1)));
    }

    #[test]
    fn single_row_survives_half_crop() {
        let img = ramp(5, 1);
        assert_eq!(crop_overlay(&img, 0.5).unwrap().height(), 1);
    }

    #[test]
    fn resample_constant_is_constant() {
        let img = GrayImage::filled(37, 91, 123).unwrap();
        assert!(resample_bilinear(&img, 32, 32).iter().all(|&v| v == 123.0));
    }

    #[test]
    fn resample_halves_by_averaging_pairs() {
        // 2x downscale lands exactly between source pixels
        let img = GrayImage::new(4, 1, alloc::vec![0, 100, 200, 50]).unwrap();
        assert_eq!(resample_bilinear(&img, 2, 1), alloc::vec![50.0, 125.0]);
    }

    #[test]
    fn resample_identity_size() {
        let img = ramp(9, 5);
        let out = resample_bilinear(&img, 9, 5);
        let back: Vec<u8> = out.into_iter().map(quantize).collect();
        assert_eq!(back, img.pixels());
    }

    #[test]
    fn luma_weights() {
        assert_eq!(luma601(255, 255, 255), 255);
        assert_eq!(luma601(255, 0, 0), 76);
        assert_eq!(luma601(0, 255, 0), 150);
        assert_eq!(luma601(0, 0, 255), 29);
    }

    proptest! {
        #[test]
        fn crop_overlay_then_zero_is_stable(w in 1u32..40, h in 1u32..40, f in 0.0f64..=0.5) {
            let img = ramp(w, h);
            let once = crop_overlay(&img, f).unwrap();
            prop_assert_eq!(crop_overlay(&once, 0.0).unwrap(), once.clone());
            prop_assert_eq!(once.width(), w);
            prop_assert!(once.height() >= 1);
        }
    }
}
