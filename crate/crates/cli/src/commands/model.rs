use std::io::Write;
use std::path::Path;

use bicam::classifier::argmax_rows;
use bicam::eval::BinaryMask;
use bicam::io::config::RunConfig;
use bicam::io::netpbm::{encode_pgm, encode_ppm};
use bicam::vit::train::ToyRecipe;
use bicam::vit::weights::parameter_count;
use bicam::{ImageClassifier, Tensor, ViTConfig, VisionTransformer};

use super::{emit, out_dir, write_csv};
use crate::{table, CliError, CliResult, Command};

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| super::io_err(dir, e).into())
        }
        _ => Ok(()),
    }
}

pub fn init_model(cmd: &Command, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let Command::InitModel {
        out: path,
        image_size,
        patch_size,
        layers,
        heads,
        embed_dim,
        ffn_dim,
        classes,
        distillation_token,
    } = cmd
    else {
        unreachable!("dispatched on InitModel");
    };
    let mut vc = ViTConfig::new(
        *image_size,
        *patch_size,
        *layers,
        *heads,
        *embed_dim,
        *ffn_dim,
        *classes,
    );
    vc.distillation_token = *distillation_token;
    if let Some(w) = cfg.layer_window {
        vc.layer_window = w;
    }
    if let Some(t) = cfg.temperature {
        vc.temperature = t;
    }
    vc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = VisionTransformer::init(vc.clone(), cfg.seed)?;
    create_parent(path)?;
    model.save(path)?;
    let rows = vec![
        vec!["path".into(), path.display().to_string()],
        vec![
            "parameters".into(),
            parameter_count(&vc).unwrap_or(0).to_string(),
        ],
        vec!["seed".into(), cfg.seed.to_string()],
        vec!["checksum".into(), model.weights().checksum()],
    ];
    emit(out, &table::render(&["field", "value"], &rows))
}

pub fn train_toy(path: &Path, steps: Option<usize>, out: &mut dyn Write) -> CliResult<()> {
    let mut recipe = ToyRecipe::default();
    if let Some(s) = steps {
        recipe.train.steps = s;
    }
    let (model, losses) = recipe.fit()?;
    create_parent(path)?;
    model.save(path)?;
    let (x, y) = recipe.test_set(64, 99);
    let pred = argmax_rows(&model.logits(&x)?);
    let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64;
    let rows = vec![
        vec!["path".into(), path.display().to_string()],
        vec!["steps".into(), losses.len().to_string()],
        vec!["final loss".into(), table::fixed(losses.last().copied())],
        vec!["held-out accuracy".into(), table::fixed(Some(acc))],
        vec!["checksum".into(), model.weights().checksum()],
    ];
    emit(out, &table::render(&["field", "value"], &rows))
}

/// `images/blob_NNN.ppm`, `masks/blob_NNN.pgm` (the blob square) and
/// `labels.csv` under the output directory.
pub fn toy_data(count: usize, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    let dir = out_dir(cfg)?;
    let (images, masks) = (dir.join("images"), dir.join("masks"));
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| super::io_err(d, e))?;
    }
    let recipe = ToyRecipe::default();
    let set = recipe.test_blobs(count, cfg.seed);
    let (h, w) = (recipe.config.image_height, recipe.config.image_width);
    let mut rows = Vec::with_capacity(count);
    for (i, (label, bx)) in set.labels.iter().zip(&set.boxes).enumerate() {
        let id = format!("blob_{i:03}");
        let img = Tensor::stack(&[set.images.index_axis0(i)])?;
        bicam::io::write_file(images.join(format!("{id}.ppm")), &encode_ppm(&img)?)?;
        let bits = (0..h * w).map(|p| bx.contains(p / w, p % w)).collect();
        let mask = BinaryMask::new(h, w, bits)?;
        bicam::io::write_file(masks.join(format!("{id}.pgm")), &encode_pgm(&mask))?;
        rows.push(vec![id, label.to_string()]);
    }
    write_csv(&dir.join("labels.csv"), &["id", "label"], &rows)?;
    emit(
        out,
        &format!("wrote {count} blob images to {}\n", dir.display()),
    )
}
