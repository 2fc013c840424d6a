//! Binary PGM (P5) output for range images, label masks and cost maps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{invalid, Result};
use crate::projection::Raster;
use crate::Label;

/// Stored 16-bit value per metre of range (millimetres).
pub const RANGE_UNITS_PER_METRE: f64 = 1000.0;

/// Ranges become `round(r · 1000)` clamped to 65535; empty pixels stay 0.
pub fn range_to_u16(r: f64) -> u16 {
    (r * RANGE_UNITS_PER_METRE).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn write_pgm8(path: impl AsRef<Path>, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return invalid("PGM data does not match its dimensions");
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(data)?;
    w.flush()?;
    Ok(())
}

pub fn write_pgm16(path: impl AsRef<Path>, width: usize, height: usize, data: &[u16]) -> Result<()> {
    if data.len() != width * height {
        return invalid("PGM data does not match its dimensions");
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{width} {height}\n65535\n")?;
    // 16-bit PGM samples are big-endian
    for v in data {
        w.write_all(&v.to_be_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_range_pgm(path: impl AsRef<Path>, ranges: &Raster<f64>) -> Result<()> {
    let data: Vec<u16> = ranges.data.iter().map(|&r| range_to_u16(r)).collect();
    write_pgm16(path, ranges.width, ranges.height, &data)
}

/// Changed pixels white, Consistent black.
pub fn write_label_pgm(path: impl AsRef<Path>, labels: &Raster<Label>) -> Result<()> {
    let data: Vec<u8> = labels.data.iter().map(|l| if l.is_changed() { 255 } else { 0 }).collect();
    write_pgm8(path, labels.width, labels.height, &data)
}
