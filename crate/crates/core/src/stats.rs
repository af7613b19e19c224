//! Size statistics of a dataset: image and mass dimension histograms.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::Rect;

/// Number of bins used when the values are not all equal.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed. All-equal
/// values give a single bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let Some(&first) = values.first() else {
        return Vec::new();
    };
    let (lo, hi) = values
        .iter()
        .fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi || bins <= 1 {
        return vec![Bin {
            start: lo,
            end: hi,
            count: values.len(),
        }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            start: lo + i as f64 * width,
            end: if i + 1 == bins { hi } else { lo + (i + 1) as f64 * width },
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        out[idx].count += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub image_width: Vec<Bin>,
    pub image_height: Vec<Bin>,
    pub mass_width: Vec<Bin>,
    pub mass_height: Vec<Bin>,
    pub mean_image_width: f64,
    pub mean_image_height: f64,
    pub mean_mass_width: f64,
    pub mean_mass_height: f64,
    /// Mean over masses of `mass area / image area`.
    pub mass_area_fraction: f64,
    pub n_images: usize,
    pub n_masses: usize,
}

/// `(width, height, mass box)` per image.
pub fn dataset_stats(items: &[(usize, usize, Option<Rect>)]) -> DatasetStats {
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let iw: Vec<f64> = items.iter().map(|i| i.0 as f64).collect();
    let ih: Vec<f64> = items.iter().map(|i| i.1 as f64).collect();
    let masses: Vec<(Rect, f64)> = items
        .iter()
        .filter_map(|&(w, h, b)| b.map(|r| (r, (w * h) as f64)))
        .collect();
    let mw: Vec<f64> = masses.iter().map(|(r, _)| r.w as f64).collect();
    let mh: Vec<f64> = masses.iter().map(|(r, _)| r.h as f64).collect();
    let frac: Vec<f64> = masses.iter().map(|(r, a)| (r.w * r.h) as f64 / a).collect();
    DatasetStats {
        image_width: histogram(&iw, DEFAULT_BINS),
        image_height: histogram(&ih, DEFAULT_BINS),
        mass_width: histogram(&mw, DEFAULT_BINS),
        mass_height: histogram(&mh, DEFAULT_BINS),
        mean_image_width: mean(&iw),
        mean_image_height: mean(&ih),
        mean_mass_width: mean(&mw),
        mean_mass_height: mean(&mh),
        mass_area_fraction: mean(&frac),
        n_images: items.len(),
        n_masses: masses.len(),
    }
}
