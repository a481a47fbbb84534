//! Raster I/O: PNG via the `image` crate, PPM (binary P6) written directly.

use super::{DataError, Raster, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn io_err(path: &Path, e: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn save_png(raster: &Raster, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(raster.width as u32, raster.height as u32);
    for y in 0..raster.height {
        for x in 0..raster.width {
            let rgb = raster.get(x, y);
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([to_u8(rgb[0]), to_u8(rgb[1]), to_u8(rgb[2])]),
            );
        }
    }
    buf.save(path).map_err(|e| DataError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn save_ppm(raster: &Raster, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(raster.width * raster.height * 3 + 32);
    write!(out, "P6\n{} {}\n255\n", raster.width, raster.height)
        .expect("writing to a Vec cannot fail");
    for y in 0..raster.height {
        for x in 0..raster.width {
            let rgb = raster.get(x, y);
            out.extend_from_slice(&[to_u8(rgb[0]), to_u8(rgb[1]), to_u8(rgb[2])]);
        }
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn load_ppm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let parse = || -> Option<Raster> {
        let mut pos = 0usize;
        let mut fields = Vec::new();
        // header: magic, width, height, maxval, separated by whitespace
        while fields.len() < 4 && pos < bytes.len() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
        }
        pos += 1; // single whitespace after maxval
        if fields.len() != 4 || fields[0] != "P6" || fields[3] != "255" {
            return None;
        }
        let width: usize = fields[1].parse().ok()?;
        let height: usize = fields[2].parse().ok()?;
        let pixels = &bytes[pos..];
        if pixels.len() < width * height * 3 {
            return None;
        }
        let mut raster = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let i = (y * width + x) * 3;
                raster.set(
                    x,
                    y,
                    [
                        pixels[i] as f64 / 255.0,
                        pixels[i + 1] as f64 / 255.0,
                        pixels[i + 2] as f64 / 255.0,
                    ],
                );
            }
        }
        Some(raster)
    };
    parse().ok_or_else(|| DataError::Image {
        path: path.display().to_string(),
        message: "not a P6 PPM with maxval 255".into(),
    })
}

/// Loads a PNG or PPM image into a [0, 1] RGB raster.
pub fn load_raster(path: &Path) -> Result<Raster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => load_ppm(path),
        _ => {
            let img = image::open(path)
                .map_err(|e| DataError::Image {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut raster = Raster::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let p = img.get_pixel(x as u32, y as u32);
                    raster.set(
                        x,
                        y,
                        [
                            p[0] as f64 / 255.0,
                            p[1] as f64 / 255.0,
                            p[2] as f64 / 255.0,
                        ],
                    );
                }
            }
            Ok(raster)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(width: usize, height: usize) -> Raster {
        let mut r = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                r.set(
                    x,
                    y,
                    [
                        x as f64 / width as f64,
                        y as f64 / height as f64,
                        (x + y) as f64 / (width + height) as f64,
                    ],
                );
            }
        }
        r
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let src = gradient(17, 11);
        save_png(&src, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!((back.width, back.height), (17, 11));
        for (a, b) in src.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn ppm_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let src = gradient(9, 13);
        save_ppm(&src, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert_eq!((back.width, back.height), (9, 13));
        for (a, b) in src.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_raster(Path::new("/nonexistent/nope.png")).is_err());
    }
}
