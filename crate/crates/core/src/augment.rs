//! Two-view stochastic augmentation.
//!
//! Each view independently picks one of two strategies:
//!
//! 1. crop -> resize back to the source size -> horizontal flip
//! 2. crop -> color distortion -> resize back
//!
//! Crops keep the source aspect ratio and are placed uniformly, which covers
//! nested, adjacent and overlapping view geometries.
//!
//! RNG consumption per view, in order: strategy (`next_f64`), crop area
//! (`uniform`), crop top (`below`), crop left (`below`), then either the flip
//! coin (`next_f64`) or the color factors (brightness, contrast, and for RGB
//! three channel gains, each `uniform`).

use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::rng::Philox;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationSpec {
    /// Range of crop area as a fraction of the source area.
    pub crop_area_range: (f64, f64),
    pub flip_probability: f64,
    pub jitter_strength: f64,
    /// Selection weights for strategy 1 and strategy 2.
    pub method_weights: (f64, f64),
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_area_range: (0.5, 1.0),
            flip_probability: 0.5,
            jitter_strength: 0.5,
            method_weights: (0.5, 0.5),
        }
    }
}

impl AugmentationSpec {
    /// A spec under which every view equals its source.
    pub fn identity() -> Self {
        Self {
            crop_area_range: (1.0, 1.0),
            flip_probability: 0.0,
            jitter_strength: 0.0,
            method_weights: (0.5, 0.5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop area range must satisfy 0 < min <= max <= 1, got ({lo}, {hi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidArgument(format!(
                "flip probability must lie in [0, 1], got {}",
                self.flip_probability
            )));
        }
        if !(self.jitter_strength >= 0.0 && self.jitter_strength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "jitter strength must be non-negative, got {}",
                self.jitter_strength
            )));
        }
        let (a, b) = self.method_weights;
        if !(a >= 0.0 && b >= 0.0 && ((a + b) - 1.0).abs() < 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "method weights must be non-negative and sum to 1, got ({a}, {b})"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    CropResizeFlip,
    CropColorResize,
}

/// Two augmented views of one source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub view_i: ImageTensor,
    pub view_j: ImageTensor,
    pub source_id: usize,
    pub strategies: [Strategy; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Draws a crop of `area_fraction` of a `height x width` image with the
/// source aspect ratio.
pub fn sample_crop_window(
    height: usize,
    width: usize,
    area_fraction: f64,
    rng: &mut Philox,
) -> Result<CropWindow> {
    if !(area_fraction > 0.0 && area_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "area fraction must lie in (0, 1], got {area_fraction}"
        )));
    }
    let side = area_fraction.sqrt();
    let ch = ((height as f64 * side).round() as usize).min(height);
    let cw = ((width as f64 * side).round() as usize).min(width);
    if ch == 0 || cw == 0 {
        return Err(Error::DegenerateCrop {
            fraction: area_fraction,
            height,
            width,
        });
    }
    let top = rng.below((height - ch + 1) as u64) as usize;
    let left = rng.below((width - cw + 1) as u64) as usize;
    Ok(CropWindow {
        top,
        left,
        height: ch,
        width: cw,
    })
}

pub fn crop(img: &ImageTensor, w: CropWindow) -> Result<ImageTensor> {
    if w.top + w.height > img.height() || w.left + w.width > img.width() {
        return Err(Error::InvalidArgument(format!(
            "crop window {w:?} exceeds {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let mut px = Vec::with_capacity(img.channels() * w.height * w.width);
    for c in 0..img.channels() {
        for y in w.top..w.top + w.height {
            for x in w.left..w.left + w.width {
                px.push(img.get(c, y, x));
            }
        }
    }
    ImageTensor::new(img.channels(), w.height, w.width, px)
}

pub fn random_crop(img: &ImageTensor, area_fraction: f64, rng: &mut Philox) -> Result<ImageTensor> {
    let w = sample_crop_window(img.height(), img.width(), area_fraction, rng)?;
    crop(img, w)
}

/// Corner-aligned bilinear interpolation: output pixel `y` samples source
/// row `y * (H - 1) / (out_h - 1)`.
pub fn bilinear_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let coord = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut px = Vec::with_capacity(img.channels() * out_h * out_w);
    for c in 0..img.channels() {
        for y in 0..out_h {
            let (y0, y1, fy) = coord(y, h, out_h);
            for x in 0..out_w {
                let (x0, x1, fx) = coord(x, w, out_w);
                let p = |yy, xx| f64::from(img.get(c, yy, xx));
                let top = (1.0 - fx) * p(y0, x0) + fx * p(y0, x1);
                let bottom = (1.0 - fx) * p(y1, x0) + fx * p(y1, x1);
                px.push(((1.0 - fy) * top + fy * bottom) as f32);
            }
        }
    }
    Ok(ImageTensor::clamped(img.channels(), out_h, out_w, px))
}

/// Mirrors columns unconditionally.
pub fn flip_columns(img: &ImageTensor) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let mut px = Vec::with_capacity(img.pixels().len());
    for c in 0..img.channels() {
        for y in 0..h {
            for x in (0..w).rev() {
                px.push(img.get(c, y, x));
            }
        }
    }
    ImageTensor::clamped(img.channels(), h, w, px)
}

/// Mirrors columns with probability `p`. Always consumes one draw.
pub fn horizontal_flip(img: &ImageTensor, rng: &mut Philox, p: f64) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "flip probability must lie in [0, 1], got {p}"
        )));
    }
    if rng.next_f64() < p {
        Ok(flip_columns(img))
    } else {
        Ok(img.clone())
    }
}

/// Multiplicative factors of one color distortion.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorFactors {
    pub brightness: f64,
    pub contrast: f64,
    /// Per-channel gains; empty for grayscale.
    pub gains: Vec<f64>,
}

pub fn draw_color_factors(channels: usize, strength: f64, rng: &mut Philox) -> ColorFactors {
    let brightness = rng.uniform(1.0 - 0.8 * strength, 1.0 + 0.8 * strength);
    let contrast = rng.uniform(1.0 - 0.8 * strength, 1.0 + 0.8 * strength);
    let gains = if channels == 3 {
        (0..3)
            .map(|_| rng.uniform(1.0 - 0.2 * strength, 1.0 + 0.2 * strength))
            .collect()
    } else {
        Vec::new()
    };
    ColorFactors {
        brightness,
        contrast,
        gains,
    }
}

/// Brightness scale, then contrast about the image mean, then channel gains,
/// clamping to `[0, 1]` after each stage. Factors equal to 1 are skipped.
pub fn apply_color_factors(img: &ImageTensor, f: &ColorFactors) -> ImageTensor {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let mut px: Vec<f64> = img.pixels().iter().map(|&p| f64::from(p)).collect();
    if f.brightness != 1.0 {
        px.iter_mut().for_each(|p| *p = clamp(*p * f.brightness));
    }
    if f.contrast != 1.0 {
        let mean = px.iter().sum::<f64>() / px.len() as f64;
        px.iter_mut()
            .for_each(|p| *p = clamp((*p - mean) * f.contrast + mean));
    }
    if img.channels() == 3 && f.gains.len() == 3 {
        let plane = img.height() * img.width();
        for (c, &g) in f.gains.iter().enumerate() {
            if g != 1.0 {
                px[c * plane..(c + 1) * plane]
                    .iter_mut()
                    .for_each(|p| *p = clamp(*p * g));
            }
        }
    }
    ImageTensor::clamped(
        img.channels(),
        img.height(),
        img.width(),
        px.into_iter().map(|p| p as f32).collect(),
    )
}

pub fn color_distort(img: &ImageTensor, strength: f64, rng: &mut Philox) -> Result<ImageTensor> {
    if !(strength >= 0.0 && strength.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "jitter strength must be non-negative, got {strength}"
        )));
    }
    let f = draw_color_factors(img.channels(), strength, rng);
    Ok(apply_color_factors(img, &f))
}

/// One randomized view of `img`.
pub fn augment_view(
    img: &ImageTensor,
    spec: &AugmentationSpec,
    rng: &mut Philox,
) -> Result<(Strategy, ImageTensor)> {
    let strategy = if rng.next_f64() < spec.method_weights.0 {
        Strategy::CropResizeFlip
    } else {
        Strategy::CropColorResize
    };
    let (lo, hi) = spec.crop_area_range;
    let area = rng.uniform(lo, hi);
    let cropped = random_crop(img, area, rng)?;
    let view = match strategy {
        Strategy::CropResizeFlip => {
            let resized = bilinear_resize(&cropped, img.height(), img.width())?;
            horizontal_flip(&resized, rng, spec.flip_probability)?
        }
        Strategy::CropColorResize => {
            let distorted = color_distort(&cropped, spec.jitter_strength, rng)?;
            bilinear_resize(&distorted, img.height(), img.width())?
        }
    };
    Ok((strategy, view))
}

pub fn make_view_pair(
    img: &ImageTensor,
    source_id: usize,
    spec: &AugmentationSpec,
    rng: &mut Philox,
) -> Result<ViewPair> {
    spec.validate()?;
    let (si, view_i) = augment_view(img, spec, rng)?;
    let (sj, view_j) = augment_view(img, spec, rng)?;
    Ok(ViewPair {
        view_i,
        view_j,
        source_id,
        strategies: [si, sj],
    })
}
