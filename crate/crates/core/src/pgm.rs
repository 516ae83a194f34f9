//! 8-bit binary portable graymap (`P5`) read/write for `[0, 1]` intensity
//! grids. This is the image format of the synthetic datasets and the heatmap
//! renderings; writing is byte-deterministic.

use std::fs;
use std::io;
use std::path::Path;

use crate::numcore::Tensor;

/// Quantizes to 8 bits with round-to-nearest and writes `P5` bytes.
pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor<f64>) -> io::Result<()> {
    assert_eq!(image.ndim(), 2, "pgm wants a (h, w) tensor");
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes)
}

/// Reads a `P5` graymap with maxval 255 into intensities `v / 255`.
pub fn read_pgm(path: impl AsRef<Path>) -> io::Result<Tensor<f64>> {
    let bytes = fs::read(&path)?;
    parse_pgm(&bytes).map_err(|msg| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{}: {msg}", path.as_ref().display()),
        )
    })
}

fn parse_pgm(bytes: &[u8]) -> Result<Tensor<f64>, String> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8], String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err("not a binary graymap (missing P5 magic)".into());
    }
    let parse_dim = |t: &[u8]| -> Result<usize, String> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "bad header value".into())
    };
    let w = parse_dim(token()?)?;
    let h = parse_dim(token()?)?;
    let maxval = parse_dim(token()?)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte separates the header from raster data
    pos += 1;
    let raster = bytes
        .get(pos..pos + h * w)
        .ok_or_else(|| "truncated raster".to_string())?;
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[h, w], data).map_err(|e| e.to_string())
}
