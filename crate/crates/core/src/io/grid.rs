//! Numeric grids as headerless CSV, one grid row per line.
//!
//! Values are written in the shortest form that parses back to the same
//! `f64`, so a write/read round trip is bitwise exact.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Accepts `[rows, cols]` or any shape with unit leading axes.
pub fn encode_grid(grid: &Tensor) -> Result<String> {
    let s = grid.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!(
            "grid CSV needs a 2-D grid, got {s:?}"
        )));
    }
    let cols = s[s.len() - 1];
    let mut out = String::new();
    if cols == 0 {
        return Ok(out);
    }
    for row in grid.data().chunks(cols) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("write to string");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses a rectangular grid of finite numbers into `[rows, cols]`.
pub fn decode_grid(text: &[u8]) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text);
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(format!("grid CSV line {}: {e}", i + 1)))?;
        if cols.is_some_and(|c| c != rec.len()) {
            return Err(Error::format(format!(
                "grid CSV line {}: ragged row",
                i + 1
            )));
        }
        cols = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::format(format!("grid CSV line {}: bad number {field:?}", i + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::format(format!(
                    "grid CSV line {}: non-finite value {field:?}",
                    i + 1
                )));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format("grid CSV is empty"))?;
    Tensor::new(vec![rows, cols], data)
}
