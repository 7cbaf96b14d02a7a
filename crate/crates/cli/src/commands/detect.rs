use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use bicam::attribution::bicam;
use bicam::io::config::RunConfig;
use bicam::pnr::{
    pnr_of_scores, read_records, roc_analysis, write_records, DetectionReport, Label, PnrRecord,
};

use super::{bicam_options, emit, load_model, out_dir, query_class, write_csv};
use crate::inputs::{list_images, load_image, par_map, settle};
use crate::{table, CliResult};

/// `metric,value` rows; absent values are empty cells.
pub fn report_rows(rep: &DetectionReport) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("num_clean", Some(rep.num_clean as f64)),
        ("num_adversarial", Some(rep.num_adversarial as f64)),
        ("pairs", Some(rep.pairs as f64)),
        ("delta_pnr_mean", rep.delta_pnr_mean),
        ("delta_pnr_std", rep.delta_pnr_std),
        ("auroc", Some(rep.auroc)),
        ("aupr", Some(rep.aupr)),
        ("threshold", Some(rep.threshold)),
        ("sensitivity", Some(rep.sensitivity)),
        ("specificity", Some(rep.specificity)),
    ]
}

fn finish(
    records: &[PnrRecord],
    cfg: &RunConfig,
    dir: &Path,
    out: &mut dyn Write,
) -> CliResult<()> {
    let rep = roc_analysis(records, cfg.direction)?;
    let rows = report_rows(&rep);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, v)| vec![k.to_string(), table::num(*v)])
        .collect();
    write_csv(&dir.join("detection.csv"), &["metric", "value"], &csv_rows)?;
    let shown: Vec<Vec<String>> = rows
        .iter()
        .map(|(k, v)| {
            let cell = if k.starts_with("num") || *k == "pairs" {
                v.map_or("-".into(), |x| (x as usize).to_string())
            } else {
                table::fixed(*v)
            };
            vec![k.to_string(), cell]
        })
        .collect();
    let mut text = table::render(&["metric", "value"], &shown);
    text += &format!("direction: {} pnr is flagged\n", cfg.direction);
    emit(out, &text)
}

/// Scores an existing record file.
pub fn from_records(path: &Path, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let bytes = bicam::io::read_file(path)?;
    let records =
        read_records(bytes.as_slice()).map_err(|e| e.in_context(&path.display().to_string()))?;
    finish(&records, cfg, &out_dir(cfg)?, out)
}

/// PNR of every clean and adversarial image, then detection statistics.
/// Both images of a pair are explained for the same class: the configured
/// one, else the clean image's prediction (an unpaired adversarial image
/// falls back to its own prediction). Writes `pnr_records.csv` and
/// `detection.csv`.
pub fn from_images(
    clean_dir: &Path,
    adv_dir: &Path,
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> CliResult<()> {
    let model = load_model(cfg)?;
    let clean = list_images(clean_dir)?;
    let adv = list_images(adv_dir)?;
    let dir = out_dir(cfg)?;
    let opts = bicam_options(cfg);
    let score = |x: &bicam::Tensor, class: usize| -> bicam::Result<f64> {
        let map = bicam(&model, x, class, &opts)?;
        pnr_of_scores(map.patch_scores.data(), cfg.pnr_epsilon)
    };
    let clean_res = par_map(&clean, |_, item| {
        let x = load_image(&item.path)?;
        let class = query_class(&model, &x, cfg)?;
        Ok((class, score(&x, class)?))
    });
    let clean_kept = settle(&clean, clean_res, cfg.skip_errors)?;
    let classes: BTreeMap<&str, usize> = clean_kept
        .iter()
        .map(|(it, (c, _))| (it.id.as_str(), *c))
        .collect();
    let adv_res = par_map(&adv, |_, item| {
        let x = load_image(&item.path)?;
        let class = match classes.get(item.id.as_str()) {
            Some(&c) => c,
            None => query_class(&model, &x, cfg)?,
        };
        Ok((class, score(&x, class)?))
    });
    let adv_kept = settle(&adv, adv_res, cfg.skip_errors)?;
    let records: Vec<PnrRecord> = clean_kept
        .iter()
        .map(|(it, (_, p))| PnrRecord::new(it.id.clone(), Label::Clean, *p))
        .chain(
            adv_kept
                .iter()
                .map(|(it, (_, p))| PnrRecord::new(it.id.clone(), Label::Adversarial, *p)),
        )
        .collect();
    let mut buf = Vec::new();
    write_records(&records, &mut buf)?;
    bicam::io::write_file(dir.join("pnr_records.csv"), &buf)?;
    finish(&records, cfg, &dir, out)
}
