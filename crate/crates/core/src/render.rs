//! Binary PPM heatmaps.

use std::path::Path;

use crate::error::{Error, Result};

/// Blue at `lo`, red at `hi`, linear in between; values outside are clamped.
pub fn colormap(value: f64, lo: f64, hi: f64) -> [u8; 3] {
    let t = if hi > lo {
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let t = if t.is_nan() { 0.0 } else { t };
    [
        (255.0 * t).round() as u8,
        0,
        (255.0 * (1.0 - t)).round() as u8,
    ]
}

/// P6 image of an `n × n` row-major grid, one pixel per cell.
pub fn ppm_bytes(values: &[f64], n: usize, lo: f64, hi: f64) -> Result<Vec<u8>> {
    if values.len() != n * n {
        return Err(Error::Dimension(format!(
            "{} values for a {n}x{n} image",
            values.len()
        )));
    }
    let mut out = format!("P6 {n} {n} 255\n").into_bytes();
    out.reserve(3 * values.len());
    for &v in values {
        out.extend_from_slice(&colormap(v, lo, hi));
    }
    Ok(out)
}

pub fn render_heatmap(
    values: &[f64],
    n: usize,
    lo: f64,
    hi: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = ppm_bytes(values, n, lo, hi)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
