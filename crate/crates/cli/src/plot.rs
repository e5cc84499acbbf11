//! Binary PPM heatmaps and CSV dumps of 2-D slices.

use std::fmt::Write as _;

/// A 2-D slice in row-major order: `rows x cols`.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl Slice {
    /// `field[x, y, z]` over a `[nx, ny, nz]` block at fixed `z` (rows x, cols y).
    pub fn xy(block: &[f64], dims: [usize; 3], z: usize) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[1]);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                values.push(block[(x * dims[1] + y) * dims[2] + z]);
            }
        }
        Self {
            rows: dims[0],
            cols: dims[1],
            values,
        }
    }

    /// `field[x, y, z]` at fixed `y` (rows x, cols z).
    pub fn xz(block: &[f64], dims: [usize; 3], y: usize) -> Self {
        let mut values = Vec::with_capacity(dims[0] * dims[2]);
        for x in 0..dims[0] {
            for z in 0..dims[2] {
                values.push(block[(x * dims[1] + y) * dims[2] + z]);
            }
        }
        Self {
            rows: dims[0],
            cols: dims[2],
            values,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows {
            let row = &self.values[r * self.cols..(r + 1) * self.cols];
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    /// P6 image, one pixel per cell, colours from blue (min) to red (max).
    pub fn to_ppm(&self) -> Vec<u8> {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let mut out = format!("P6\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        for &v in &self.values {
            let t = if span > 0.0 && span.is_finite() { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 };
            out.extend_from_slice(&colour(t));
        }
        out
    }
}

/// Blue-white-red ramp.
fn colour(t: f64) -> [u8; 3] {
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    if t < 0.5 {
        let s = t * 2.0;
        [byte(s), byte(s), 255]
    } else {
        let s = (1.0 - t) * 2.0;
        [255, byte(s), byte(s)]
    }
}
