//! 8-bit grayscale images on disk: binary PGM (P5), or raw bytes with a
//! `<file>.hdr` sidecar holding `width height`.

use std::fs;
use std::path::{Path, PathBuf};

use milnet_core::image::GrayImage;

use crate::error::{io, Error, Result};

pub fn encode(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}

pub fn write(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, encode(image)).map_err(io(path))
}

/// Parses a binary PGM. Images with a max value below 255 are rescaled to
/// the full 8-bit range.
pub fn decode(bytes: &[u8]) -> Result<GrayImage, String> {
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.get(..2) != Some(b"P5") {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    pos += 2;
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported max value {maxval}"));
    }
    let data = &bytes[pos..];
    let n = width * height;
    if data.len() < n {
        return Err(format!("expected {n} pixels, found {}", data.len()));
    }
    let pixels = data[..n]
        .iter()
        .map(|&v| if maxval == 255 { v } else { ((v as usize * 255 + maxval / 2) / maxval).min(255) as u8 })
        .collect();
    GrayImage::new(width, height, pixels).map_err(|e| e.to_string())
}

pub fn read(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(io(path))?;
    decode(&bytes).map_err(|msg| Error::Format {
        path: path.into(),
        msg,
    })
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

pub fn read_raw(path: &Path) -> Result<GrayImage> {
    let hdr = sidecar(path);
    let text = fs::read_to_string(&hdr).map_err(io(&hdr))?;
    let dims: Vec<usize> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    let &[width, height] = dims.as_slice() else {
        return Err(Error::Format {
            path: hdr,
            msg: "expected `width height`".into(),
        });
    };
    let pixels = fs::read(path).map_err(io(path))?;
    if pixels.len() != width * height {
        return Err(Error::Format {
            path: path.into(),
            msg: format!("{} bytes for a {width}x{height} image", pixels.len()),
        });
    }
    GrayImage::new(width, height, pixels).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// Reads `.pgm` files as PGM and anything else as raw bytes plus sidecar.
pub fn load(path: &Path) -> Result<GrayImage> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        read(path)
    } else {
        read_raw(path)
    }
}

/// Expands a response grid to `width x height` by nearest neighbour and
/// quantizes it to `round(255 r)`.
pub fn grid_image(values: &[f64], grid_w: usize, grid_h: usize, width: usize, height: usize) -> GrayImage {
    let mut out = GrayImage::filled(width, height, 0);
    for y in 0..height {
        let gy = y * grid_h / height;
        for x in 0..width {
            let gx = x * grid_w / width;
            out.set(x, y, quantize(values[gy * grid_w + gx]));
        }
    }
    out
}

pub fn quantize(r: f64) -> u8 {
    (255.0 * r).round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 3, 254, 255]).unwrap();
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn comments_and_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1 # size\n15\n".to_vec();
        bytes.extend_from_slice(&[15, 1]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.pixels(), &[255, 17]);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
    }

    #[test]
    fn grid_upsample() {
        let img = grid_image(&[0.0, 1.0, 0.5, 0.25], 2, 2, 4, 4);
        assert_eq!(&img.pixels()[..4], &[0, 0, 255, 255]);
        assert_eq!(&img.pixels()[12..], &[128, 128, 64, 64]);
    }
}
