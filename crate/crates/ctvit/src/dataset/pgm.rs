//! Binary PGM (P5, maxval 255) reader and writer.
//!
//! Readers reject malformed input outright: wrong magic, non-255 maxval,
//! truncated or oversized payloads.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    file.write_all(header.as_bytes())
        .and_then(|_| file.write_all(image.pixels()))
        .map_err(|e| Error::io(path, e))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    pos += 2;
    let width = read_token(bytes, &mut pos)?;
    let height = read_token(bytes, &mut pos)?;
    let maxval = read_token(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, expected 255"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing whitespace before pixel data".into());
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(format!("degenerate dimensions {width}x{height}"));
    }
    let expected = width * height;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(format!(
            "truncated payload: expected {expected} bytes, found {}",
            payload.len()
        ));
    }
    if payload.len() > expected {
        return Err(format!(
            "trailing garbage: expected {expected} payload bytes, found {}",
            payload.len()
        ));
    }
    GrayImage::new(width, height, payload.to_vec()).map_err(|e| e.to_string())
}

/// Reads the next unsigned decimal token, skipping whitespace and `#`
/// comment lines.
fn read_token(bytes: &[u8], pos: &mut usize) -> std::result::Result<usize, String> {
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
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err("expected a decimal value in header".into());
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| "invalid header encoding".to_string())?
        .parse::<usize>()
        .map_err(|e| format!("bad header value: {e}"))
}
