//! Dataset manifests: CSV with header `path,label[,x,y,w,h]`.
//!
//! Paths are relative to the manifest's directory. The mass box is optional
//! per row; leave the four cells empty (or omit them) for images without one.

use std::fs;
use std::path::{Path, PathBuf};

use milnet_core::image::Rect;

use crate::error::{io, Error, Result};
use crate::pgm;

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Path as written in the manifest.
    pub name: String,
    /// `name` resolved against the manifest directory.
    pub path: PathBuf,
    pub positive: bool,
    pub mass: Option<Rect>,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<Record>,
}

impl Manifest {
    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.positive).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let with_boxes = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["path", "label"] => false,
        ["path", "label", "x", "y", "w", "h"] => true,
        other => return Err(err(1, format!("expected header `path,label[,x,y,w,h]`, found `{}`", other.join(",")))),
    };

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() == 1 && row[0].is_empty() {
            continue;
        }
        let expected = if with_boxes { [2, 6].as_slice() } else { [2].as_slice() };
        if !expected.contains(&row.len()) {
            return Err(err(line, format!("expected {} fields, found {}", header.len(), row.len())));
        }
        let name = row[0].to_owned();
        let positive = match &row[1] {
            "0" => false,
            "1" => true,
            other => return Err(err(line, format!("label must be 0 or 1, found `{other}`"))),
        };
        let file = root.join(&name);
        if !file.is_file() {
            return Err(err(line, format!("image `{}` does not exist", file.display())));
        }
        let image = pgm::load(&file).map_err(|e| err(line, e.to_string()))?;
        let mass = if row.len() == 6 && !(2..6).all(|i| row[i].is_empty()) {
            let mut v = [0usize; 4];
            for (slot, cell) in v.iter_mut().zip(row.iter().skip(2)) {
                *slot = cell
                    .parse()
                    .map_err(|_| err(line, format!("box coordinate `{cell}` is not a non-negative integer")))?;
            }
            let rect = Rect {
                x: v[0],
                y: v[1],
                w: v[2],
                h: v[3],
            };
            if !rect.fits_in(image.width(), image.height()) {
                return Err(err(
                    line,
                    format!(
                        "box ({},{},{},{}) exceeds the {}x{} image",
                        rect.x,
                        rect.y,
                        rect.w,
                        rect.h,
                        image.width(),
                        image.height()
                    ),
                ));
            }
            Some(rect)
        } else {
            None
        };
        records.push(Record {
            name,
            path: file,
            positive,
            mass,
            width: image.width(),
            height: image.height(),
        });
    }
    if records.is_empty() {
        return Err(err(1, "manifest has no records".into()));
    }
    Ok(Manifest { records })
}

/// Writes `(name, positive, mass)` rows with the full box header.
pub fn write(path: &Path, rows: &[(String, bool, Option<Rect>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "label", "x", "y", "w", "h"])?;
    for (name, positive, mass) in rows {
        let label = if *positive { "1" } else { "0" };
        match mass {
            Some(r) => w.write_record([
                name.as_str(),
                label,
                &r.x.to_string(),
                &r.y.to_string(),
                &r.w.to_string(),
                &r.h.to_string(),
            ])?,
            None => w.write_record([name.as_str(), label, "", "", "", ""])?,
        }
    }
    w.flush().map_err(io(path))
}
