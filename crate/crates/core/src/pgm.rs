//! 8-bit binary PGM (P5) export for maps and selection masks.

use std::io::Write;

use crate::error::Result;
use crate::tensor::{SelectionMask, SpatialMap};

/// Writes raw gray levels as a P5 image.
pub fn write_gray<W: Write>(
    width: usize,
    height: usize,
    pixels: &[u8],
    sink: &mut W,
) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    write!(sink, "P5\n{width} {height}\n255\n")?;
    sink.write_all(pixels)?;
    Ok(())
}

/// Min-max normalizes `values` into `0..=255`. A constant field maps to 0.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - lo) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn write_map<W: Write>(map: &SpatialMap, sink: &mut W) -> Result<()> {
    write_gray(map.width(), map.height(), &to_gray(map.as_slice()), sink)
}

/// Averaged locations are black, `Winner(b)` is `64 + 64 * b`, clipped at 255.
pub fn write_selection<W: Write>(mask: &SelectionMask, sink: &mut W) -> Result<()> {
    let pixels: Vec<u8> = mask.entries().iter().map(|s| s.gray()).collect();
    write_gray(mask.width(), mask.height(), &pixels, sink)
}
