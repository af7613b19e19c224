//! Manifest images prepared for the network.

use std::path::Path;

use milnet_core::image::BoxF;
use milnet_core::preprocess;
use milnet_core::synth::{self, SynthSpec};
use milnet_core::train::Sample;

use crate::error::{io, Result};
use crate::manifest::{self, Manifest};
use crate::pgm;

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub name: String,
    pub sample: Sample,
    /// Mass box mapped into network input coordinates.
    pub mass: Option<BoxF>,
}

/// Loads, crops and resizes every image to `size x size`. Sample ids are
/// manifest row indices.
pub fn load(manifest: &Manifest, size: usize) -> Result<Vec<Item>> {
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let image = pgm::load(&r.path)?;
            let prepared = preprocess::prepare(&image, size)?;
            Ok(Item {
                name: r.name.clone(),
                mass: r.mass.map(|m| prepared.map_box(m.to_f64())),
                sample: Sample {
                    id: i as u64,
                    image: prepared.image,
                    positive: r.positive,
                },
            })
        })
        .collect()
}

pub fn pick(items: &[Item], indices: &[usize]) -> Vec<Item> {
    indices.iter().map(|&i| items[i].clone()).collect()
}

pub fn samples(items: &[Item]) -> Vec<Sample> {
    items.iter().map(|i| i.sample.clone()).collect()
}

pub fn labels(items: &[Item]) -> Vec<bool> {
    items.iter().map(|i| i.sample.positive).collect()
}

/// Writes `imgNNNN.pgm` files and `manifest.csv` into `dir`.
pub fn write_synthetic(spec: &SynthSpec, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let images = synth::generate(spec)?;
    let mut rows = Vec::with_capacity(images.len());
    for (i, s) in images.iter().enumerate() {
        let name = format!("img{i:04}.pgm");
        pgm::write(&dir.join(&name), &s.image)?;
        rows.push((name, s.positive, s.mass));
    }
    let path = dir.join("manifest.csv");
    manifest::write(&path, &rows)?;
    manifest::load(&path)
}
