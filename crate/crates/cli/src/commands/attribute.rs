use std::io::Write;
use std::path::Path;

use bicam::attribution::{attention_rollout, bicam, AttributionMap};
use bicam::classifier::probabilities;
use bicam::io::config::RunConfig;
use bicam::io::grid::encode_grid;
use bicam::pnr::pnr_of_scores;
use bicam::render::{render_negative, render_positive, render_signed};
use bicam::ImageClassifier;

use super::{bicam_options, emit, load_model, out_dir, query_class, write_csv};
use crate::inputs::{image_or_dir, load_image, par_map, settle};
use crate::{table, CliResult};

fn write_grids(dir: &Path, stem: &str, map: &AttributionMap) -> bicam::Result<()> {
    bicam::io::write_file(
        dir.join(format!("{stem}.grid.csv")),
        encode_grid(&map.patch_scores)?.as_bytes(),
    )?;
    bicam::io::write_file(
        dir.join(format!("{stem}.heatmap.csv")),
        encode_grid(&map.heatmap)?.as_bytes(),
    )
}

struct Row {
    class: usize,
    probability: f64,
    pnr: f64,
    positive: f64,
    negative: f64,
}

/// Per image: `<id>.grid.csv` (signed patch scores), `<id>.heatmap.csv`
/// (upsampled), `<id>.signed.ppm`, `<id>.pos.ppm`, `<id>.neg.ppm`; plus
/// `attribution.csv` and the PNR table on stdout.
pub fn attribute(input: &Path, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let model = load_model(cfg)?;
    let items = image_or_dir(input)?;
    let dir = out_dir(cfg)?;
    let opts = bicam_options(cfg);
    let results = par_map(&items, |_, item| {
        let x = load_image(&item.path)?;
        let class = query_class(&model, &x, cfg)?;
        let map = bicam(&model, &x, class, &opts)?;
        write_grids(&dir, &item.id, &map)?;
        let heat = &map.heatmap;
        for (suffix, rgb) in [
            ("signed", render_signed(heat)?),
            ("pos", render_positive(heat)?),
            ("neg", render_negative(heat)?),
        ] {
            bicam::io::write_file(dir.join(format!("{}.{suffix}.ppm", item.id)), &rgb.to_ppm())?;
        }
        let scores = map.patch_scores.data();
        Ok(Row {
            class,
            probability: probabilities(&model.logits(&x)?)?.get(&[0, class]),
            pnr: pnr_of_scores(scores, cfg.pnr_epsilon)?,
            positive: scores.iter().map(|v| v.max(0.0)).sum(),
            negative: scores.iter().map(|v| (-v).max(0.0)).sum(),
        })
    });
    let kept = settle(&items, results, cfg.skip_errors)?;
    let csv_rows: Vec<Vec<String>> = kept
        .iter()
        .map(|(it, r)| {
            vec![
                it.id.clone(),
                r.class.to_string(),
                table::num(Some(r.probability)),
                table::num(Some(r.pnr)),
                table::num(Some(r.positive)),
                table::num(Some(r.negative)),
            ]
        })
        .collect();
    write_csv(
        &dir.join("attribution.csv"),
        &[
            "id",
            "class",
            "probability",
            "pnr",
            "positive_mass",
            "negative_mass",
        ],
        &csv_rows,
    )?;
    let rows: Vec<Vec<String>> = kept
        .iter()
        .map(|(it, r)| {
            vec![
                it.id.clone(),
                r.class.to_string(),
                table::fixed(Some(r.probability)),
                table::fixed(Some(r.pnr)),
            ]
        })
        .collect();
    emit(
        out,
        &table::render(&["id", "class", "p(class)", "pnr"], &rows),
    )
}

/// Class-agnostic rollout maps: `<id>.rollout.grid.csv`,
/// `<id>.rollout.heatmap.csv`, `<id>.rollout.ppm` and `rollout.csv`.
pub fn rollout(input: &Path, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let model = load_model(cfg)?;
    let items = image_or_dir(input)?;
    let dir = out_dir(cfg)?;
    let results = par_map(&items, |_, item| {
        let x = load_image(&item.path)?;
        let map = attention_rollout(&model, &x, cfg.upsample)?;
        write_grids(&dir, &format!("{}.rollout", item.id), &map)?;
        let rgb = render_signed(&map.heatmap)?;
        bicam::io::write_file(dir.join(format!("{}.rollout.ppm", item.id)), &rgb.to_ppm())?;
        let s = map.patch_scores.data();
        let top = s
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        Ok((map.patch_scores.sum(), top))
    });
    let kept = settle(&items, results, cfg.skip_errors)?;
    let rows: Vec<Vec<String>> = kept
        .iter()
        .map(|(it, (mass, top))| vec![it.id.clone(), table::num(Some(*mass)), top.to_string()])
        .collect();
    write_csv(
        &dir.join("rollout.csv"),
        &["id", "patch_mass", "top_patch"],
        &rows,
    )?;
    let shown: Vec<Vec<String>> = kept
        .iter()
        .map(|(it, (mass, top))| vec![it.id.clone(), table::fixed(Some(*mass)), top.to_string()])
        .collect();
    emit(
        out,
        &table::render(&["id", "patch mass", "top patch"], &shown),
    )
}
