use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Channel-major image with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidArgument(format!(
                "images have 1 or 3 channels, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image extents must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
        })
    }

    /// Builds an image, clamping every pixel into `[0, 1]`.
    pub(crate) fn clamped(channels: usize, height: usize, width: usize, mut pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), channels * height * width);
        for p in &mut pixels {
            *p = p.clamp(0.0, 1.0);
        }
        Self {
            channels,
            height,
            width,
            pixels,
        }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_parts(
            vec![self.channels, self.height, self.width],
            self.pixels.clone(),
        )
    }

    /// Stacks equal-sized images into `[B, C, H, W]`.
    pub fn batch(images: &[&ImageTensor]) -> Result<Tensor<f32>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty image batch".into()))?;
        let dims = (first.channels, first.height, first.width);
        let mut data = Vec::with_capacity(first.pixels.len() * images.len());
        for img in images {
            if (img.channels, img.height, img.width) != dims {
                return Err(Error::Shape {
                    op: "image batch",
                    lhs: vec![dims.0, dims.1, dims.2],
                    rhs: vec![img.channels, img.height, img.width],
                });
            }
            data.extend_from_slice(&img.pixels);
        }
        Ok(Tensor::from_parts(
            vec![images.len(), dims.0, dims.1, dims.2],
            data,
        ))
    }
}
