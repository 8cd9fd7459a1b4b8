//! Binary PPM (P6) and PGM (P5) reading and writing. These formats are
//! header-plus-raw-bytes, which keeps dataset round-trips bit-exact without
//! any codec dependency.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::RasterImage;
use crate::error::{Error, Result};

pub fn write_ppm(path: &Path, image: &RasterImage) -> Result<()> {
    let mut buf = Vec::with_capacity(image.data.len() + 32);
    write!(buf, "P6\n{} {}\n255\n", image.width, image.height)?;
    buf.extend_from_slice(&image.data);
    fs::write(path, buf)?;
    Ok(())
}

/// Single-channel variant used for mask dumps.
pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != width * height {
        return Err(Error::Dim(format!(
            "pgm: {} bytes for {width}x{height}",
            gray.len()
        )));
    }
    let mut buf = Vec::with_capacity(gray.len() + 32);
    write!(buf, "P5\n{width} {height}\n255\n")?;
    buf.extend_from_slice(gray);
    fs::write(path, buf)?;
    Ok(())
}

/// Reads the P6 subset this crate writes: ASCII header (with optional
/// `#` comment lines), maxval 255, then raw RGB.
pub fn read_ppm(path: &Path) -> Result<RasterImage> {
    let bytes = fs::read(path)?;
    let err = |msg: &str| Error::Parse(format!("{}: {msg}", path.display()));

    fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
        // Skip whitespace and comment lines.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Parse("unexpected end of header".to_string()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    }

    let mut pos = 0usize;
    if next_token(&bytes, &mut pos)? != "P6" {
        return Err(err("not a binary PPM (P6)"));
    }
    let width: usize = next_token(&bytes, &mut pos)?.parse().map_err(|_| err("bad width"))?;
    let height: usize = next_token(&bytes, &mut pos)?.parse().map_err(|_| err("bad height"))?;
    let maxval: usize = next_token(&bytes, &mut pos)?.parse().map_err(|_| err("bad maxval"))?;
    if maxval != 255 {
        return Err(err("only maxval 255 is supported"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(err(&format!(
            "pixel payload is {} bytes, expected {need}",
            bytes.len().saturating_sub(pos)
        )));
    }
    Ok(RasterImage { width, height, data: bytes[pos..].to_vec() })
}
