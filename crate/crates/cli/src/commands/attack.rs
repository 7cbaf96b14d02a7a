use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use bicam::adversarial;
use bicam::classifier::{argmax_rows, probabilities};
use bicam::io::config::RunConfig;
use bicam::io::netpbm::{decode_ppm, encode_ppm};
use bicam::seed::split_seed;
use bicam::ImageClassifier;

use super::{emit, load_model, out_dir, write_csv};
use crate::inputs::{list_images, load_image, par_map, settle};
use crate::{table, CliError, CliResult};

fn read_labels(path: &Path) -> CliResult<BTreeMap<String, usize>> {
    let bytes = bicam::io::read_file(path)?;
    let bad = |m: String| bicam::Error::Format(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(bad("expected header id,label".into()).into());
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let label = rec[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("label {:?} is not a class index", &rec[1])))?;
        if out.insert(rec[0].to_string(), label).is_some() {
            return Err(bad(format!("duplicate id {:?}", &rec[0])).into());
        }
    }
    Ok(out)
}

struct Outcome {
    label: usize,
    p_clean: f64,
    p_adv: f64,
    pred_adv: usize,
}

/// Attacks every image with the configured method, writing the adversarial
/// PPMs under their original names plus `attack.csv`. Item `i` (sorted
/// order) uses random-start seed `split_seed(seed, i)`. Probabilities after
/// the attack are measured on the saved 8-bit image.
pub fn attack(
    input_dir: &Path,
    labels: Option<&Path>,
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> CliResult<()> {
    let model = load_model(cfg)?;
    let items = list_images(input_dir)?;
    let dir = out_dir(cfg)?;
    let same = |a: &Path, b: &Path| matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y);
    if same(&dir, input_dir) {
        return Err(CliError::Usage(
            "--out-dir must differ from the input directory".into(),
        ));
    }
    let labels = labels.map(read_labels).transpose()?;
    let results = par_map(&items, |i, item| {
        let x = load_image(&item.path)?;
        let clean_probs = probabilities(&model.logits(&x)?)?;
        let label = match &labels {
            Some(map) => *map
                .get(&item.id)
                .ok_or_else(|| bicam::Error::Contract(format!("no label for {}", item.id)))?,
            None => argmax_rows(&clean_probs)[0],
        };
        let adv = adversarial::attack(
            &model,
            &x,
            &[label],
            &cfg.attack_config(split_seed(cfg.seed, i as u64)),
        )?;
        let bytes = encode_ppm(&adv)?;
        bicam::io::write_file(
            dir.join(item.path.file_name().expect("listed file")),
            &bytes,
        )?;
        let saved = decode_ppm(&bytes)?;
        let logits = model.logits(&saved)?;
        Ok(Outcome {
            label,
            p_clean: clean_probs.get(&[0, label]),
            p_adv: probabilities(&logits)?.get(&[0, label]),
            pred_adv: argmax_rows(&logits)[0],
        })
    });
    let kept = settle(&items, results, cfg.skip_errors)?;
    let rows: Vec<Vec<String>> = kept
        .iter()
        .map(|(it, o)| {
            vec![
                it.id.clone(),
                o.label.to_string(),
                table::num(Some(o.p_clean)),
                table::num(Some(o.p_adv)),
                o.pred_adv.to_string(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("attack.csv"),
        &["id", "label", "p_clean", "p_adv", "pred_adv"],
        &rows,
    )?;
    let n = kept.len() as f64;
    let mean = |f: fn(&Outcome) -> f64| kept.iter().map(|(_, o)| f(o)).sum::<f64>() / n;
    let flipped = kept.iter().filter(|(_, o)| o.pred_adv != o.label).count();
    let summary = vec![
        vec!["method".into(), cfg.attack.to_string()],
        vec!["epsilon".into(), table::fixed(Some(cfg.epsilon))],
        vec!["images".into(), kept.len().to_string()],
        vec![
            "mean p(label) clean".into(),
            table::fixed(Some(mean(|o| o.p_clean))),
        ],
        vec![
            "mean p(label) adversarial".into(),
            table::fixed(Some(mean(|o| o.p_adv))),
        ],
        vec![
            "prediction flipped".into(),
            format!("{flipped}/{}", kept.len()),
        ],
    ];
    emit(out, &table::render(&["field", "value"], &summary))
}
