//! Directory items, ordered work distribution and per-item error policy.

use std::io::Write;
use std::path::{Path, PathBuf};

use bicam::io::netpbm::decode_ppm;
use bicam::{Error, Tensor};

use crate::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct Item {
    /// File stem; joins images to masks, clean to adversarial, and names
    /// every output row.
    pub id: String,
    pub path: PathBuf,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// `.ppm` files in `dir`, sorted by file name. An empty listing is a
/// contract error.
pub fn list_images(dir: &Path) -> CliResult<Vec<Item>> {
    let mut items = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "ppm") {
            let id = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            items.push(Item { id, path });
        }
    }
    items.sort_by(|a, b| a.path.file_name().cmp(&b.path.file_name()));
    if items.is_empty() {
        return Err(Error::Contract(format!("no .ppm images in {}", dir.display())).into());
    }
    Ok(items)
}

/// A single image file, or every image in a directory.
pub fn image_or_dir(path: &Path) -> CliResult<Vec<Item>> {
    if path.is_dir() {
        return list_images(path);
    }
    let id = path
        .file_stem()
        .ok_or_else(|| CliError::Usage(format!("{} is not an image path", path.display())))?
        .to_string_lossy()
        .into_owned();
    Ok(vec![Item {
        id,
        path: path.to_path_buf(),
    }])
}

pub fn load_image(path: &Path) -> bicam::Result<Tensor> {
    decode_ppm(&bicam::io::read_file(path)?).map_err(|e| e.in_context(&path.display().to_string()))
}

/// Maps `f` over `items` on scoped threads. Results come back in item
/// order whatever the thread count, so output never depends on scheduling.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len())
        .max(1);
    if threads == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, t)| f(c * chunk + j, t))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Applies the `skip_errors` policy: the first failure aborts unless
/// skipping, in which case failures are reported on stderr and dropped.
/// Nothing left over is a contract error.
pub fn settle<T>(
    items: &[Item],
    results: Vec<bicam::Result<T>>,
    skip: bool,
) -> CliResult<Vec<(Item, T)>> {
    let mut kept = Vec::with_capacity(results.len());
    for (item, r) in items.iter().zip(results) {
        match r {
            Ok(v) => kept.push((item.clone(), v)),
            Err(e) if skip => {
                let _ = writeln!(std::io::stderr(), "skipping {}: {e}", item.id);
            }
            Err(e) => return Err(e.in_context(&item.id).into()),
        }
    }
    if kept.is_empty() {
        return Err(Error::Contract("every item failed".into()).into());
    }
    Ok(kept)
}
