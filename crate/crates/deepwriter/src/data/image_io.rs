//! Grayscale image loading (PNG and binary PGM) and PGM writing.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DwError, Result};
use crate::patching::GrayImage;

fn io_err(path: &Path, message: impl Into<String>) -> DwError {
    DwError::Io {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Loads a PNG or binary PGM (P5) file as 8-bit grayscale. Color inputs are
/// converted by luma.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| io_err(path, e.to_string()))?;
    if bytes.starts_with(b"P5") {
        return parse_pgm(path, &bytes);
    }
    let img = image::load_from_memory(&bytes)
        .map_err(|e| io_err(path, format!("decode failed: {e}")))?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    GrayImage::new(w, h, gray.into_raw())
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    // header: "P5" <ws> width <ws> height <ws> maxval <single ws> data
    let mut pos = 2usize;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        // skip whitespace and comment lines
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| io_err(path, "corrupt PGM header"))?;
        *f = text
            .parse()
            .map_err(|_| io_err(path, "corrupt PGM header"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(io_err(path, format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1; // single whitespace byte before payload
    let need = w.checked_mul(h).ok_or_else(|| io_err(path, "PGM size overflow"))?;
    if bytes.len() < pos + need {
        return Err(io_err(path, "truncated PGM payload"));
    }
    GrayImage::new(w, h, bytes[pos..pos + need].to_vec())
}

/// Writes a binary PGM (P5, maxval 255). The byte layout is fully determined
/// by the image content, which keeps generated corpora byte-reproducible.
pub fn write_pgm(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(img.pixels().len() + 32);
    write!(out, "P5\n{} {}\n255\n", img.width(), img.height())
        .expect("in-memory write cannot fail");
    out.extend_from_slice(img.pixels());
    fs::write(path, out).map_err(|e| io_err(path, e.to_string()))
}
