//! 16-bit binary PGM (P5) export for visual inspection.

use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::image::Image;

/// Encodes `img` with `[0, peak]` mapped onto `[0, 65535]` (clamped).
pub fn encode_pgm16(img: &Image, peak: f64) -> Vec<u8> {
    let n = img.side();
    let mut out = format!("P5\n{n} {n}\n65535\n").into_bytes();
    let scale = if peak > 0.0 { 65535.0 / peak } else { 0.0 };
    for &v in img.as_slice() {
        let q = (v * scale).round().clamp(0.0, 65535.0) as u16;
        // multi-byte PGM samples are big-endian
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn write_pgm16(path: &Path, img: &Image, peak: f64) -> Result<()> {
    fs::write(path, encode_pgm16(img, peak))?;
    Ok(())
}
