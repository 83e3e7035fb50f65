//! Image, mask and measurement files.
//!
//! Images are 8-bit grayscale PNG or PGM (P2/P5, maxval <= 255). On write,
//! intensities are clamped to `[0, 255]` and rounded half away from zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::operators::Measurements;
use crate::types::{GrayImage, PixelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Png,
    Pgm,
}

fn format_of(path: &Path) -> Result<Format> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(Format::Png),
        Some("pgm") | Some("pnm") => Ok(Format::Pgm),
        _ => Err(Error::format(path, "unsupported extension (expected .png or .pgm)")),
    }
}

/// Quantises one intensity to 8 bits.
#[inline]
pub fn quantize(v: f64) -> u8 {
    v.clamp(0.0, 255.0).round() as u8
}

pub fn to_bytes(img: &GrayImage) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<GrayImage> {
    GrayImage::new(height, width, bytes.iter().map(|&b| f64::from(b)).collect())
}

/// Reads a PNG (any colour type, converted to 8-bit luma) or PGM file.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    match format_of(path)? {
        Format::Png => {
            let img = image::open(path)?.to_luma8();
            let (w, h) = img.dimensions();
            from_bytes(h as usize, w as usize, img.as_raw())
        }
        Format::Pgm => {
            let mut buf = Vec::new();
            File::open(path)
                .and_then(|f| BufReader::new(f).read_to_end(&mut buf))
                .map_err(|e| Error::io(path, e))?;
            let (h, w, bytes) = parse_pgm(&buf).map_err(|r| Error::format(path, r))?;
            from_bytes(h, w, &bytes)
        }
    }
}

pub fn write_image(img: &GrayImage, path: &Path) -> Result<()> {
    let bytes = to_bytes(img);
    match format_of(path)? {
        Format::Png => {
            let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
                .ok_or_else(|| Error::format(path, "buffer size mismatch"))?;
            buf.save(path)?;
            Ok(())
        }
        Format::Pgm => {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(file);
            write!(w, "P5\n{} {}\n255\n", img.width(), img.height()).map_err(|e| Error::io(path, e))?;
            w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
            w.flush().map_err(|e| Error::io(path, e))
        }
    }
}

/// Parses binary (P5) or ASCII (P2) PGM with maxval <= 255, rescaling other
/// maxvals to 0..255.
pub fn parse_pgm(buf: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> std::result::Result<String, String> {
        loop {
            while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < buf.len() && buf[*pos] == b'#' {
                while *pos < buf.len() && buf[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&buf[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    let num = |s: String| s.parse::<usize>().map_err(|e| format!("bad header field {s:?}: {e}"));
    let width = num(next_token(&mut pos)?)?;
    let height = num(next_token(&mut pos)?)?;
    let maxval = num(next_token(&mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    let n = width * height;
    let scale = |v: usize| -> u8 {
        if maxval == 255 {
            v as u8
        } else {
            ((v as f64) * 255.0 / maxval as f64).round() as u8
        }
    };
    match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            if buf.len() < start + n {
                return Err(format!("raster truncated: need {n} bytes"));
            }
            Ok((height, width, buf[start..start + n].iter().map(|&b| scale(b as usize)).collect()))
        }
        "P2" => {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                let v = num(next_token(&mut pos)?)?;
                if v > maxval {
                    return Err(format!("sample {v} exceeds maxval {maxval}"));
                }
                out.push(scale(v));
            }
            Ok((height, width, out))
        }
        other => Err(format!("unsupported magic {other:?}")),
    }
}

/// Writes a mask as an 8-bit image: 255 = kept, 0 = killed.
pub fn write_mask(mask: &PixelMask, path: &Path) -> Result<()> {
    let img = GrayImage::new(
        mask.height(),
        mask.width(),
        mask.kept().iter().map(|&k| if k { 255.0 } else { 0.0 }).collect(),
    )?;
    write_image(&img, path)
}

/// Reads a mask image; any value >= 128 counts as kept.
pub fn read_mask(path: &Path) -> Result<PixelMask> {
    let img = read_image(path)?;
    PixelMask::new(
        img.height(),
        img.width(),
        img.data().iter().map(|&v| v >= 128.0).collect(),
    )
}

pub fn write_measurements(meas: &Measurements, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    meas.write_to(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_measurements(path: &Path) -> Result<Measurements> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Measurements::read_from(BufReader::new(file)).map_err(|r| Error::format(path, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
        assert_eq!(quantize(2.5), 3);
        assert_eq!(quantize(2.4999), 2);
        assert_eq!(quantize(254.5), 255);
    }

    #[test]
    fn png_and_pgm_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(7, 5, |r, c| ((r * 41 + c * 23) % 256) as f64);
        for name in ["a.png", "a.pgm"] {
            let p = dir.path().join(name);
            write_image(&img, &p).unwrap();
            assert_eq!(read_image(&p).unwrap(), img);
        }
    }

    #[test]
    fn ascii_pgm() {
        let text = b"P2\n# comment\n3 2\n15\n0 15 5\n10 1 2\n";
        let (h, w, px) = parse_pgm(text).unwrap();
        assert_eq!((h, w), (2, 3));
        assert_eq!(px, vec![0, 255, 85, 170, 17, 34]);
        assert!(parse_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(parse_pgm(b"P5\n4 4\n255\n\0").is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let mask = PixelMask::new(2, 3, vec![true, false, true, false, false, true]).unwrap();
        write_mask(&mask, &p).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);
    }

    #[test]
    fn unsupported_extension() {
        assert!(matches!(
            read_image(Path::new("x.jpg")),
            Err(Error::Format { .. })
        ));
    }
}
