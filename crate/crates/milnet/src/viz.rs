//! Response map export.

use std::fmt::Write as _;
use std::path::Path;

use milnet_core::image::{BoxF, GrayImage};
use milnet_core::model::{BackboneSpec, ModelParams, ResponseMap};
use milnet_core::{preprocess, train};

use crate::error::{io, Result};
use crate::pgm;

/// Writes into `dir`:
/// - `responses.csv`: the grid, one row per line
/// - `responses.pgm`: the grid at one pixel per cell
/// - `overlay.pgm`: the grid upsampled to the network input
/// - `input.pgm`: the preprocessed input it was computed from
pub fn export(spec: &BackboneSpec, params: &ModelParams, image: &GrayImage, dir: &Path) -> Result<ResponseMap> {
    let prepared = preprocess::prepare(image, spec.input_size)?;
    let map = train::predict(spec, params, &[&prepared.image])?.remove(0);
    write_map(&map, spec.input_size, dir)?;
    pgm::write(&dir.join("input.pgm"), &prepared.image)?;
    Ok(map)
}

pub fn write_map(map: &ResponseMap, input_size: usize, dir: &Path) -> Result<()> {
    let mut csv = String::new();
    for row in map.values.chunks(map.grid_w) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    let path = dir.join("responses.csv");
    std::fs::write(&path, csv).map_err(io(&path))?;
    let (w, h) = (map.grid_w, map.grid_h);
    pgm::write(&dir.join("responses.pgm"), &pgm::grid_image(&map.values, w, h, w, h))?;
    pgm::write(
        &dir.join("overlay.pgm"),
        &pgm::grid_image(&map.values, w, h, input_size, input_size),
    )
}

/// True when the strongest cell overlaps `mass` (input coordinates).
pub fn localizes(map: &ResponseMap, mass: &BoxF, input_size: usize) -> bool {
    map.cell_box(map.argmax(), input_size, input_size).overlaps(mass)
}
