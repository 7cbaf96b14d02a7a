mod attack;
mod attribute;
mod detect;
mod evaluate;
mod model;

use std::io::Write;
use std::path::{Path, PathBuf};

use bicam::attribution::BicamOptions;
use bicam::classifier::argmax_rows;
use bicam::io::config::RunConfig;
use bicam::{ImageClassifier, Tensor, VisionTransformer};

use crate::{CliError, CliResult, Command};

pub fn dispatch(cmd: &Command, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::InitModel { .. } => model::init_model(cmd, cfg, out),
        Command::TrainToy { out: path, steps } => model::train_toy(path, *steps, out),
        Command::ToyData { count } => model::toy_data(*count, cfg, out),
        Command::Attribute { input } => attribute::attribute(input, cfg, out),
        Command::Rollout { input } => attribute::rollout(input, cfg, out),
        Command::Attack { input_dir, labels } => {
            attack::attack(input_dir, labels.as_deref(), cfg, out)
        }
        Command::PnrDetect {
            clean_dir,
            adv_dir,
            records,
        } => match (clean_dir, adv_dir, records) {
            (Some(c), Some(a), None) => detect::from_images(c, a, cfg, out),
            (None, None, Some(r)) => detect::from_records(r, cfg, out),
            _ => Err(CliError::Usage(
                "give --clean-dir and --adv-dir, or --records".into(),
            )),
        },
        Command::EvalLoc {
            image_dir,
            mask_dir,
            nontarget_dir,
        } => evaluate::localization(image_dir, mask_dir, nontarget_dir.as_deref(), cfg, out),
        Command::EvalFaith { image_dir } => evaluate::faithfulness(image_dir, cfg, out),
    }
}

pub(crate) fn load_model(cfg: &RunConfig) -> CliResult<VisionTransformer> {
    let path = cfg.model.as_deref().ok_or_else(|| {
        CliError::Usage("this command needs --model (or `model` in the config)".into())
    })?;
    Ok(VisionTransformer::load(path)?)
}

pub(crate) fn bicam_options(cfg: &RunConfig) -> BicamOptions {
    BicamOptions {
        window: cfg.layer_window,
        temperature: cfg.temperature,
        upsample: cfg.upsample,
    }
}

/// The configured class, or the model's prediction for `image`.
pub(crate) fn query_class(
    model: &impl ImageClassifier,
    image: &Tensor,
    cfg: &RunConfig,
) -> bicam::Result<usize> {
    match cfg.class {
        Some(c) => Ok(c),
        None => Ok(argmax_rows(&model.logits(image)?)[0]),
    }
}

/// Creates and returns the output directory.
pub(crate) fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = PathBuf::from(cfg.out_dir.as_deref().unwrap_or("."));
    std::fs::create_dir_all(&dir).map_err(|source| bicam::Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(dir)
}

/// RFC 4180 CSV bytes.
pub(crate) fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> bicam::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| bicam::Error::Format(format!("csv write: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| bicam::Error::Format(format!("csv write: {e}")))
}

pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> bicam::Result<()> {
    bicam::io::write_file(path, &csv_bytes(header, rows)?)
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> bicam::Error {
    bicam::Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn emit(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| io_err(Path::new("<stdout>"), e).into())
}
