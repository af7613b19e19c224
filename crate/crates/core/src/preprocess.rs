//! Background removal, resizing and training-time augmentation.

use alloc::format;
use alloc::vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{BoxF, GrayImage, Rect};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtsuThreshold {
    pub threshold: u8,
    /// Set when the histogram has a single occupied bin.
    pub degenerate: bool,
}

/// Otsu's threshold over the 256-bin histogram.
///
/// Class 0 is `pixel <= t`. Returns the smallest `t` in `0..=254` that
/// maximizes the between-class variance `w0 * w1 * (mu0 - mu1)^2`. A
/// constant image returns its value with `degenerate` set.
pub fn otsu_threshold(image: &GrayImage) -> OtsuThreshold {
    let mut hist = [0u64; 256];
    for &p in image.pixels() {
        hist[p as usize] += 1;
    }
    let occupied = hist.iter().filter(|&&c| c > 0).count();
    if occupied == 1 {
        let v = hist.iter().position(|&c| c > 0).unwrap() as u8;
        return OtsuThreshold {
            threshold: v,
            degenerate: true,
        };
    }
    let total: u64 = hist.iter().sum();
    let total_sum: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    // The variance is (s0 N - n0 S)^2 / (N^2 n0 n1); candidates are compared
    // exactly as fractions so ties resolve to the smallest threshold.
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best_t = 0u8;
    let mut best = (0u128, 1u64);
    for t in 0..255usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (s0 as i128) * (total as i128) - (n0 as i128) * (total_sum as i128);
        let num = diff.unsigned_abs().pow(2);
        let den = n0 * n1;
        if wide_mul(num, best.1) > wide_mul(best.0, den) {
            best = (num, den);
            best_t = t as u8;
        }
    }
    OtsuThreshold {
        threshold: best_t,
        degenerate: false,
    }
}

/// 256-bit product as (high, low) halves.
fn wide_mul(a: u128, b: u64) -> (u128, u128) {
    let lo = (a as u64 as u128) * b as u128;
    let hi = (a >> 64) * b as u128;
    let (low, carry) = lo.overflowing_add(hi << 64);
    ((hi >> 64) + carry as u128, low)
}

/// `w0 * w1 * (mu0 - mu1)^2` from class-0 count and intensity sum.
pub fn between_class_variance(n0: u64, s0: u64, total: u64, total_sum: u64) -> f64 {
    let n1 = total - n0;
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let w0 = n0 as f64 / total as f64;
    let w1 = n1 as f64 / total as f64;
    let mu0 = s0 as f64 / n0 as f64;
    let mu1 = (total_sum - s0) as f64 / n1 as f64;
    let d = mu0 - mu1;
    w0 * w1 * d * d
}

/// Tight bounding box of the pixels strictly above `threshold`.
pub fn foreground_box(image: &GrayImage, threshold: u8) -> Result<Rect> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..image.height() {
        for x in 0..image.width() {
            if image.get(x, y) > threshold {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        return Err(Error::NoForeground { threshold });
    }
    Ok(Rect {
        x: x0,
        y: y0,
        w: x1 - x0 + 1,
        h: y1 - y0 + 1,
    })
}

pub fn crop(image: &GrayImage, rect: Rect) -> Result<GrayImage> {
    if !rect.fits_in(image.width(), image.height()) {
        return Err(Error::Invalid(format!(
            "crop {rect:?} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    let mut out = vec![0u8; rect.w * rect.h];
    for y in 0..rect.h {
        let src = &image.pixels()[(rect.y + y) * image.width() + rect.x..][..rect.w];
        out[y * rect.w..(y + 1) * rect.w].copy_from_slice(src);
    }
    GrayImage::new(rect.w, rect.h, out)
}

/// Crops to the bounding box of the foreground (`pixel > threshold`).
/// Background pixels inside the box are kept.
pub fn crop_foreground(image: &GrayImage, threshold: u8) -> Result<GrayImage> {
    crop(image, foreground_box(image, threshold)?)
}

fn sample_coord(out_idx: usize, in_len: usize, out_len: usize) -> f64 {
    if out_len == 1 {
        (in_len - 1) as f64 / 2.0
    } else {
        out_idx as f64 * (in_len - 1) as f64 / (out_len - 1) as f64
    }
}

/// Bilinear value at a real-valued position inside `[0, w-1] x [0, h-1]`.
fn bilinear_at(image: &GrayImage, sx: f64, sy: f64) -> f64 {
    let x0 = math::floor(sx) as usize;
    let y0 = math::floor(sy) as usize;
    let x1 = (x0 + 1).min(image.width() - 1);
    let y1 = (y0 + 1).min(image.height() - 1);
    let fx = sx - x0 as f64;
    let fy = sy - y0 as f64;
    let p = |x: usize, y: usize| image.get(x, y) as f64;
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn to_u8(v: f64) -> u8 {
    math::round(v).clamp(0.0, 255.0) as u8
}

/// Bilinear resize with corner-aligned sampling: output corners land exactly
/// on input corners.
pub fn resize_bilinear(image: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::Invalid(format!("resize target {out_w}x{out_h} must be positive")));
    }
    let mut out = vec![0u8; out_w * out_h];
    for y in 0..out_h {
        let sy = sample_coord(y, image.height(), out_h);
        for x in 0..out_w {
            let sx = sample_coord(x, image.width(), out_w);
            out[y * out_w + x] = to_u8(bilinear_at(image, sx, sy));
        }
    }
    GrayImage::new(out_w, out_h, out)
}

/// Result of turning a raw image into a network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub image: GrayImage,
    pub threshold: OtsuThreshold,
    /// Foreground box in raw-image pixels.
    pub crop: Rect,
}

impl Prepared {
    /// Maps a box given in raw-image pixels into network-input pixels.
    pub fn map_box(&self, b: BoxF) -> BoxF {
        let axis = |start: f64, len: f64, off: usize, in_len: usize, out_len: usize| {
            let scale = if in_len > 1 {
                (out_len - 1) as f64 / (in_len - 1) as f64
            } else {
                out_len as f64
            };
            let a = (start - off as f64) * scale;
            let b = (start + len - 1.0 - off as f64) * scale + 1.0;
            (a, b - a)
        };
        let (x, w) = axis(b.x, b.w, self.crop.x, self.crop.w, self.image.width());
        let (y, h) = axis(b.y, b.h, self.crop.y, self.crop.h, self.image.height());
        BoxF { x, y, w, h }
    }
}

/// Otsu threshold, background crop, then resize to `size x size`.
pub fn prepare(image: &GrayImage, size: usize) -> Result<Prepared> {
    let threshold = otsu_threshold(image);
    let crop_box = if threshold.degenerate {
        // a constant image has no background to remove
        Rect {
            x: 0,
            y: 0,
            w: image.width(),
            h: image.height(),
        }
    } else {
        foreground_box(image, threshold.threshold)?
    };
    let cropped = crop(image, crop_box)?;
    Ok(Prepared {
        image: resize_bilinear(&cropped, size, size)?,
        threshold,
        crop: crop_box,
    })
}

/// Training-time augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Maximum shift as a fraction of the image side.
    pub shift_frac: f64,
    pub rotate_deg_max: f64,
    /// Side of the zeroed square as a fraction of the image side.
    pub cutout_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip_prob: 0.5,
            shift_frac: 0.1,
            rotate_deg_max: 45.0,
            cutout_frac: 50.0 / 224.0,
        }
    }
}

impl AugmentConfig {
    pub const IDENTITY: AugmentConfig = AugmentConfig {
        flip_prob: 0.0,
        shift_frac: 0.0,
        rotate_deg_max: 0.0,
        cutout_frac: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.flip_prob)
            && (0.0..1.0).contains(&self.shift_frac)
            && (0.0..=180.0).contains(&self.rotate_deg_max)
            && (0.0..1.0).contains(&self.cutout_frac);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("augmentation parameters out of range: {self:?}")))
        }
    }
}

pub fn flip_horizontal(image: &GrayImage) -> GrayImage {
    let mut out = image.clone();
    let w = image.width();
    for row in out.pixels_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}

/// Integer shift with zero fill.
pub fn shift(image: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut out = GrayImage::filled(image.width(), image.height(), 0);
    for y in 0..h {
        let sy = y - dy;
        if sy < 0 || sy >= h {
            continue;
        }
        for x in 0..w {
            let sx = x - dx;
            if sx >= 0 && sx < w {
                out.set(x as usize, y as usize, image.get(sx as usize, sy as usize));
            }
        }
    }
    out
}

/// Rotation about the image center with bilinear resampling and zero fill.
pub fn rotate(image: &GrayImage, degrees: f64) -> GrayImage {
    if degrees == 0.0 {
        return image.clone();
    }
    let theta = degrees * core::f64::consts::PI / 180.0;
    let (s, c) = (math::sin(theta), math::cos(theta));
    let cx = (image.width() - 1) as f64 / 2.0;
    let cy = (image.height() - 1) as f64 / 2.0;
    let max_x = (image.width() - 1) as f64;
    let max_y = (image.height() - 1) as f64;
    let mut out = GrayImage::filled(image.width(), image.height(), 0);
    for y in 0..image.height() {
        for x in 0..image.width() {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse rotation
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            // tolerate rounding noise from sin/cos at the border
            const EPS: f64 = 1e-9;
            if sx > -EPS && sy > -EPS && sx < max_x + EPS && sy < max_y + EPS {
                let v = bilinear_at(image, sx.clamp(0.0, max_x), sy.clamp(0.0, max_y));
                out.set(x, y, to_u8(v));
            }
        }
    }
    out
}

pub fn cutout(image: &GrayImage, x0: usize, y0: usize, side: usize) -> GrayImage {
    let mut out = image.clone();
    for y in y0..(y0 + side).min(image.height()) {
        for x in x0..(x0 + side).min(image.width()) {
            out.set(x, y, 0);
        }
    }
    out
}

/// Flip, shift, rotate, cutout, in that order. Every random draw is taken
/// from `rng` whether or not the corresponding transform is active, so the
/// output is a pure function of the image, the config and the stream state.
pub fn augment<R: Rng + ?Sized>(image: &GrayImage, cfg: &AugmentConfig, rng: &mut R) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let flip = rng.gen::<f64>() < cfg.flip_prob;
    let max_dx = math::round(cfg.shift_frac * w as f64) as i64;
    let max_dy = math::round(cfg.shift_frac * h as f64) as i64;
    let dx = rng.gen_range(-max_dx..=max_dx);
    let dy = rng.gen_range(-max_dy..=max_dy);
    let angle = (2.0 * rng.gen::<f64>() - 1.0) * cfg.rotate_deg_max;
    let side = (math::round(cfg.cutout_frac * w.min(h) as f64) as usize).min(w.min(h));
    let cx = rng.gen_range(0..=w - side);
    let cy = rng.gen_range(0..=h - side);

    let mut out = if flip { flip_horizontal(image) } else { image.clone() };
    if dx != 0 || dy != 0 {
        out = shift(&out, dx, dy);
    }
    if cfg.rotate_deg_max > 0.0 {
        out = rotate(&out, angle);
    }
    if side > 0 {
        out = cutout(&out, cx, cy, side);
    }
    out
}
