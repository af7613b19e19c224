use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Invalid(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }
}

/// Stacks equally sized images into an `N x 1 x H x W` tensor with values in
/// `[0, 1]`.
pub fn batch_tensor(images: &[&GrayImage]) -> Result<Tensor> {
    let first = images.first().ok_or(Error::Empty { op: "batch_tensor" })?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.width() != w || img.height() != h {
            return Err(Error::ShapeMismatch {
                op: "batch_tensor",
                left: vec![h, w],
                right: vec![img.height(), img.width()],
            });
        }
        data.extend(img.to_unit());
    }
    Tensor::new(vec![images.len(), 1, h, w], data)
}

/// Axis-aligned box in pixel units. `x`, `y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxF {
    /// True when the two boxes share a region of positive area.
    pub fn overlaps(&self, other: &BoxF) -> bool {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        ix > 0.0 && iy > 0.0
    }
}

/// Integer pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= width && self.y + self.h <= height
    }

    pub fn to_f64(self) -> BoxF {
        BoxF {
            x: self.x as f64,
            y: self.y as f64,
            w: self.w as f64,
            h: self.h as f64,
        }
    }
}
