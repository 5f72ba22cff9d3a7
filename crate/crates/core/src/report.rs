//! Plain-text matrix dumps and 8-bit grayscale heatmaps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Grey-level mapping of matrix values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    /// `lo` maps to 0 and `hi` to 255.
    Fixed { lo: f64, hi: f64 },
    /// The matrix's own minimum and maximum; a constant matrix is mid grey.
    MinMax,
}

fn rows_cols<F: Scalar>(m: &Tensor<F>) -> Result<(usize, usize)> {
    match *m.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::invalid(format!(
            "expected a matrix, got {:?}",
            m.shape()
        ))),
    }
}

/// One line per row, comma-separated, shortest round-trip formatting.
pub fn matrix_csv<F: Scalar>(m: &Tensor<F>) -> Result<String> {
    let (_, cols) = rows_cols(m)?;
    let mut out = String::new();
    for row in m.data().chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_matrix_csv(text: &str) -> Result<Tensor<f64>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::invalid(format!("matrix line {}: {e}", i + 1)))?;
        if *cols.get_or_insert(vals.len()) != vals.len() {
            return Err(Error::invalid(format!(
                "matrix line {} has {} values",
                i + 1,
                vals.len()
            )));
        }
        data.extend(vals);
        rows += 1;
    }
    Tensor::new(vec![rows, cols.unwrap_or(0)], data)
}

pub fn grey_levels<F: Scalar>(m: &Tensor<F>, scale: Scale) -> Vec<u8> {
    let vals: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
    let (lo, hi) = match scale {
        Scale::Fixed { lo, hi } => (lo, hi),
        Scale::MinMax => vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                (a.min(v), b.max(v))
            }),
    };
    vals.iter()
        .map(|&v| {
            let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (u.clamp(0.0, 1.0) * 255.0).round() as u8
        })
        .collect()
}

/// Binary PGM (P5). Each cell becomes a `cell×cell` block of pixels.
pub fn matrix_pgm<F: Scalar>(m: &Tensor<F>, scale: Scale, cell: usize) -> Result<Vec<u8>> {
    let (rows, cols) = rows_cols(m)?;
    let cell = cell.max(1);
    let levels = grey_levels(m, scale);
    let (w, h) = (cols * cell, rows * cell);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.push(levels[(y / cell) * cols + x / cell]);
        }
    }
    Ok(out)
}

pub fn write_matrix<F: Scalar>(
    csv_path: &Path,
    pgm_path: &Path,
    m: &Tensor<F>,
    scale: Scale,
    cell: usize,
) -> Result<()> {
    fs::write(csv_path, matrix_csv(m)?).map_err(|e| Error::io(csv_path, e))?;
    fs::write(pgm_path, matrix_pgm(m, scale, cell)?).map_err(|e| Error::io(pgm_path, e))
}
