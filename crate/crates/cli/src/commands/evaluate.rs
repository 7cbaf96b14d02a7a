use std::io::Write;
use std::path::Path;

use bicam::attribution::{attention_rollout, bicam, Upsample};
use bicam::eval::{
    evaluate_bidirectional, faithfulness as faith, random_baseline_faithfulness,
    FaithfulnessReport, LocalizationReport,
};
use bicam::io::config::RunConfig;
use bicam::io::netpbm::decode_pgm;
use bicam::seed::split_seed;

use super::{bicam_options, emit, load_model, out_dir, query_class, write_csv};
use crate::inputs::{list_images, load_image, par_map, settle};
use crate::{table, CliResult};

const METRICS: [&str; 5] = ["pixel_accuracy", "iou", "f1", "precision", "recall"];

fn metric_values(r: &LocalizationReport) -> [f64; 5] {
    [r.pixel_accuracy, r.iou, r.f1, r.precision, r.recall]
}

fn load_mask(dir: &Path, id: &str) -> bicam::Result<bicam::eval::BinaryMask> {
    let path = dir.join(format!("{id}.pgm"));
    decode_pgm(&bicam::io::read_file(&path)?).map_err(|e| e.in_context(&path.display().to_string()))
}

/// Thresholded signed maps against `<mask_dir>/<id>.pgm`. With
/// `nontarget_dir` the positive channel is scored against the target mask
/// and the negative channel against the non-target mask; without it the
/// magnitude is scored as one map and a warning is printed. Writes
/// `localization.csv` and `localization_summary.csv`.
pub fn localization(
    image_dir: &Path,
    mask_dir: &Path,
    nontarget_dir: Option<&Path>,
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> CliResult<()> {
    let model = load_model(cfg)?;
    let items = list_images(image_dir)?;
    let dir = out_dir(cfg)?;
    let opts = bicam_options(cfg);
    let results = par_map(&items, |_, item| {
        let x = load_image(&item.path)?;
        let target = load_mask(mask_dir, &item.id)?;
        let nontarget = nontarget_dir.map(|d| load_mask(d, &item.id)).transpose()?;
        let class = query_class(&model, &x, cfg)?;
        let map = bicam(&model, &x, class, &opts)?;
        Ok((
            class,
            evaluate_bidirectional(&map.heatmap, &target, nontarget.as_ref())?,
        ))
    });
    let kept = settle(&items, results, cfg.skip_errors)?;
    if let Some(w) = kept.iter().find_map(|(_, (_, r))| r.warning()) {
        let _ = writeln!(std::io::stderr(), "warning: {w}");
    }
    let mut rows = Vec::new();
    let mut channels: Vec<(&'static str, Vec<[f64; 5]>)> = Vec::new();
    for (it, (class, rep)) in &kept {
        for r in rep.reports() {
            let v = metric_values(&r);
            let mut row = vec![
                it.id.clone(),
                class.to_string(),
                r.channel.as_str().to_string(),
            ];
            row.extend(v.iter().map(|x| table::num(Some(*x))));
            rows.push(row);
            match channels.iter_mut().find(|(c, _)| *c == r.channel.as_str()) {
                Some((_, vals)) => vals.push(v),
                None => channels.push((r.channel.as_str(), vec![v])),
            }
        }
    }
    let mut header = vec!["id", "class", "channel"];
    header.extend(METRICS);
    write_csv(&dir.join("localization.csv"), &header, &rows)?;
    let mut summary = Vec::new();
    let mut shown = Vec::new();
    for (channel, vals) in &channels {
        let mut cells = vec![channel.to_string()];
        for (m, name) in METRICS.iter().enumerate() {
            let column: Vec<f64> = vals.iter().map(|v| v[m]).collect();
            let (mean, std) = table::mean_std(&column);
            summary.push(vec![
                channel.to_string(),
                name.to_string(),
                table::num(mean),
                table::num(std),
                column.len().to_string(),
            ]);
            cells.push(format!("{} ± {}", table::fixed(mean), table::fixed(std)));
        }
        shown.push(cells);
    }
    write_csv(
        &dir.join("localization_summary.csv"),
        &["channel", "metric", "mean", "std", "count"],
        &summary,
    )?;
    let mut head = vec!["channel"];
    head.extend(METRICS);
    emit(out, &table::render(&head, &shown))
}

struct Faith {
    class: usize,
    /// (method, seed, report)
    runs: Vec<(&'static str, Option<u64>, FaithfulnessReport)>,
}

/// MIF/LIF patch-removal curves for BiCAM, attention rollout and
/// `random_seeds` random orderings per image. Image `i` derives its
/// control seeds as `split_seed(split_seed(seed, i), k)`. Writes
/// `faithfulness.csv`, `curves.csv` and `faithfulness_summary.csv`.
pub fn faithfulness(image_dir: &Path, cfg: &RunConfig, out: &mut dyn Write) -> CliResult<()> {
    let model = load_model(cfg)?;
    let items = list_images(image_dir)?;
    let dir = out_dir(cfg)?;
    let opts = bicam_options(cfg);
    let grid = model.config().grid();
    let results = par_map(&items, |i, item| {
        let x = load_image(&item.path)?;
        let class = query_class(&model, &x, cfg)?;
        let mut runs = Vec::with_capacity(cfg.random_seeds + 2);
        let map = bicam(&model, &x, class, &opts)?;
        runs.push(("bicam", None, faith(&model, &x, class, &map.patch_scores)?));
        let roll = attention_rollout(&model, &x, Upsample::Nearest)?;
        runs.push((
            "rollout",
            None,
            faith(&model, &x, class, &roll.patch_scores)?,
        ));
        let root = split_seed(cfg.seed, i as u64);
        for k in 0..cfg.random_seeds {
            let s = split_seed(root, k as u64);
            runs.push((
                "random",
                Some(s),
                random_baseline_faithfulness(&model, &x, class, grid, s)?,
            ));
        }
        Ok(Faith { class, runs })
    });
    let kept = settle(&items, results, cfg.skip_errors)?;
    let seed_cell = |s: &Option<u64>| s.map(|v| v.to_string()).unwrap_or_default();
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (it, f) in &kept {
        for (method, seed, r) in &f.runs {
            rows.push(vec![
                it.id.clone(),
                f.class.to_string(),
                method.to_string(),
                seed_cell(seed),
                table::num(Some(r.mif_auc)),
                table::num(Some(r.lif_auc)),
                table::num(Some(r.faithfulness)),
            ]);
            for (k, (m, l)) in r.mif_curve.iter().zip(&r.lif_curve).enumerate() {
                curves.push(vec![
                    it.id.clone(),
                    method.to_string(),
                    seed_cell(seed),
                    k.to_string(),
                    table::num(Some(*m)),
                    table::num(Some(*l)),
                ]);
            }
        }
    }
    write_csv(
        &dir.join("faithfulness.csv"),
        &[
            "id",
            "class",
            "method",
            "seed",
            "mif_auc",
            "lif_auc",
            "faithfulness",
        ],
        &rows,
    )?;
    write_csv(
        &dir.join("curves.csv"),
        &["id", "method", "seed", "removed", "mif", "lif"],
        &curves,
    )?;
    let mut summary = Vec::new();
    let mut shown = Vec::new();
    for method in ["bicam", "rollout", "random"] {
        let pick = |f: fn(&FaithfulnessReport) -> f64| -> Vec<f64> {
            kept.iter()
                .flat_map(|(_, x)| {
                    x.runs
                        .iter()
                        .filter(|(m, _, _)| *m == method)
                        .map(|(_, _, r)| f(r))
                })
                .collect()
        };
        let cols = [
            pick(|r| r.mif_auc),
            pick(|r| r.lif_auc),
            pick(|r| r.faithfulness),
        ];
        if cols[2].is_empty() {
            continue;
        }
        let stats: Vec<_> = cols.iter().map(|c| table::mean_std(c)).collect();
        let mut row = vec![method.to_string()];
        for (m, s) in &stats {
            row.push(table::num(*m));
            row.push(table::num(*s));
        }
        row.push(cols[2].len().to_string());
        summary.push(row);
        shown.push(vec![
            method.to_string(),
            table::fixed(stats[0].0),
            table::fixed(stats[1].0),
            format!(
                "{} ± {}",
                table::fixed(stats[2].0),
                table::fixed(stats[2].1)
            ),
            cols[2].len().to_string(),
        ]);
    }
    write_csv(
        &dir.join("faithfulness_summary.csv"),
        &[
            "method",
            "mif_auc_mean",
            "mif_auc_std",
            "lif_auc_mean",
            "lif_auc_std",
            "faithfulness_mean",
            "faithfulness_std",
            "runs",
        ],
        &summary,
    )?;
    emit(
        out,
        &table::render(
            &["method", "mif auc", "lif auc", "faithfulness", "runs"],
            &shown,
        ),
    )
}
