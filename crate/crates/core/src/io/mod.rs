//! File formats: binary netpbm images and masks, numeric grid CSV, and the
//! flat run-config text format.

pub mod config;
pub mod grid;
pub mod netpbm;

use std::path::Path;

use crate::error::{Error, Result};

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    std::fs::read(path.as_ref()).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    std::fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
}
