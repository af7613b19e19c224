//! Synthetic bags: textured tissue on a black background, with one bright
//! soft-edged square planted in every positive image.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Rect};
use crate::math;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    /// Side of the square images.
    pub size: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Mass side as a fraction of the image side.
    pub mass_frac: f64,
    /// Intensity added on top of the tissue base level inside the mass.
    pub lift: f64,
    /// Amplitude of the uniform pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            size: 80,
            n_pos: 40,
            n_neg: 160,
            mass_frac: 0.14,
            lift: 60.0,
            noise: 8.0,
            seed: 2017,
        }
    }
}

/// Tissue base intensity.
pub const TISSUE_LEVEL: f64 = 100.0;
/// Summed amplitude of the low-frequency texture waves.
pub const TEXTURE_AMPLITUDE: f64 = 20.0;
/// Width of the linear falloff around a mass, in pixels.
pub const MASS_FALLOFF: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub image: GrayImage,
    pub positive: bool,
    pub mass: Option<Rect>,
}

impl SynthSpec {
    pub fn mass_side(&self) -> usize {
        math::round(self.mass_frac * self.size as f64) as usize
    }

    fn max_margin(&self) -> usize {
        (math::round(0.08 * self.size as f64) as usize).max(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return Err(Error::Config(format!(
                "need positive counts, got {} positives and {} negatives",
                self.n_pos, self.n_neg
            )));
        }
        let side = self.mass_side();
        let tissue_min = self.size.saturating_sub(2 * self.max_margin());
        if side == 0 || side + 2 * MASS_FALLOFF > tissue_min {
            return Err(Error::Config(format!(
                "mass side {side} does not fit a {}x{} image",
                self.size, self.size
            )));
        }
        if !(self.lift > 0.0 && self.noise >= 0.0) {
            return Err(Error::Config("lift must be positive and noise non-negative".into()));
        }
        Ok(())
    }
}

/// Generates `n_pos` positives followed by `n_neg` negatives. Image `i` only
/// depends on the seed and `i`.
pub fn generate(spec: &SynthSpec) -> Result<Vec<SynthImage>> {
    spec.validate()?;
    let total = spec.n_pos + spec.n_neg;
    (0..total).map(|i| generate_one(spec, i, i < spec.n_pos)).collect()
}

pub fn generate_one(spec: &SynthSpec, index: usize, positive: bool) -> Result<SynthImage> {
    let s = spec.size;
    let mut rng = rng::stream(spec.seed, Purpose::Synth, index as u64, 0);
    let mm = spec.max_margin();
    let left = rng.gen_range(2..=mm);
    let right = rng.gen_range(2..=mm);
    let top = rng.gen_range(2..=mm);
    let bottom = rng.gen_range(2..=mm);
    let tissue = Rect {
        x: left,
        y: top,
        w: s - left - right,
        h: s - top - bottom,
    };

    // three plane waves with one to three periods across the image
    let mut waves = [(0.0f64, 0.0f64, 0.0f64); 3];
    for wave in waves.iter_mut() {
        let angle = rng.gen_range(0.0..core::f64::consts::TAU);
        let periods = rng.gen_range(1.0..3.0);
        let freq = core::f64::consts::TAU * periods / s as f64;
        *wave = (freq * math::cos(angle), freq * math::sin(angle), rng.gen_range(0.0..core::f64::consts::TAU));
    }
    let amp = TEXTURE_AMPLITUDE / waves.len() as f64;

    let side = spec.mass_side();
    let mass = if positive {
        let x = rng.gen_range(tissue.x + MASS_FALLOFF..=tissue.x + tissue.w - side - MASS_FALLOFF);
        let y = rng.gen_range(tissue.y + MASS_FALLOFF..=tissue.y + tissue.h - side - MASS_FALLOFF);
        Some(Rect { x, y, w: side, h: side })
    } else {
        None
    };

    let mut img = GrayImage::filled(s, s, 0);
    for y in tissue.y..tissue.y + tissue.h {
        for x in tissue.x..tissue.x + tissue.w {
            let (xf, yf) = (x as f64, y as f64);
            let texture = TISSUE_LEVEL
                + waves
                    .iter()
                    .map(|(fx, fy, ph)| amp * math::sin(fx * xf + fy * yf + ph))
                    .sum::<f64>();
            let alpha = mass.map_or(0.0, |m| falloff(m, x, y));
            let noise = if spec.noise > 0.0 {
                rng.gen_range(-spec.noise..=spec.noise)
            } else {
                0.0
            };
            let v = (1.0 - alpha) * texture + alpha * (TISSUE_LEVEL + spec.lift) + noise;
            // tissue never touches the background level
            img.set(x, y, math::round(v).clamp(1.0, 255.0) as u8);
        }
    }
    Ok(SynthImage {
        image: img,
        positive,
        mass,
    })
}

/// 1 inside the box, decreasing linearly to 0 over [`MASS_FALLOFF`] pixels
/// outside it.
fn falloff(m: Rect, x: usize, y: usize) -> f64 {
    let dist = |p: usize, lo: usize, len: usize| {
        if p < lo {
            lo - p
        } else if p >= lo + len {
            p + 1 - (lo + len)
        } else {
            0
        }
    };
    let d = dist(x, m.x, m.w).max(dist(y, m.y, m.h));
    if d > MASS_FALLOFF {
        0.0
    } else {
        1.0 - d as f64 / (MASS_FALLOFF + 1) as f64
    }
}
