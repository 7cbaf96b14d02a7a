//! Positive-to-negative ratio of signed attributions, and ROC-based
//! detection of adversarial inputs from it.
//!
//! Detection scores raw PNR values (a clean counterpart is not available at
//! deployment); the paired difference is reported alongside as a population
//! statistic.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};

/// Keeps an all-positive map finite without visibly moving ordinary ratios.
pub const DEFAULT_EPSILON: f64 = 1e-8;

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "epsilon must be positive, got {epsilon}"
        )))
    }
}

/// `sum(max(m, 0)) / (sum(max(-m, 0)) + epsilon)`.
pub fn pnr_of_scores(scores: &[f64], epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    let (pos, neg) = scores
        .iter()
        .fold((0.0, 0.0), |(p, n), &m| (p + m.max(0.0), n + (-m).max(0.0)));
    let r = pos / (neg + epsilon);
    if r.is_finite() {
        Ok(r)
    } else {
        Err(Error::Numeric {
            context: "pnr".into(),
        })
    }
}

/// PNR of each image's patch grid (the heatmap is not used).
pub fn pnr(map: &AttributionMap, epsilon: f64) -> Result<Vec<f64>> {
    let scores = &map.patch_scores;
    let batch = *scores
        .shape()
        .first()
        .ok_or_else(|| Error::shape("patch scores without a batch axis"))?;
    if batch == 0 {
        return Ok(Vec::new());
    }
    let per = scores.numel() / batch;
    scores
        .data()
        .chunks(per)
        .map(|s| pnr_of_scores(s, epsilon))
        .collect()
}

/// `PNR(adversarial) - PNR(clean)` for one image's patch scores.
pub fn delta_pnr(clean: &[f64], adversarial: &[f64], epsilon: f64) -> Result<f64> {
    Ok(pnr_of_scores(adversarial, epsilon)? - pnr_of_scores(clean, epsilon)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Clean,
    Adversarial,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Adversarial => "adversarial",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Label::Clean),
            "adversarial" | "adv" => Ok(Label::Adversarial),
            other => Err(Error::format(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnrRecord {
    pub id: String,
    pub label: Label,
    pub pnr: f64,
}

impl PnrRecord {
    pub fn new(id: impl Into<String>, label: Label, pnr: f64) -> Self {
        PnrRecord {
            id: id.into(),
            label,
            pnr,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionReport {
    /// Mean and sample std of PNR(adv) - PNR(clean) over ids present under
    /// both labels; `None` when no id pairs up (std also when only one does).
    pub delta_pnr_mean: Option<f64>,
    pub delta_pnr_std: Option<f64>,
    pub pairs: usize,
    pub auroc: f64,
    pub aupr: f64,
    /// Youden-optimal cut on raw PNR.
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub num_clean: usize,
    pub num_adversarial: usize,
}

/// Which side of the threshold counts as adversarial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Direction {
    /// `pnr >= threshold` flags an input.
    #[default]
    HigherIsAdversarial,
    /// `pnr <= threshold` flags an input.
    LowerIsAdversarial,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "higher" => Ok(Direction::HigherIsAdversarial),
            "lower" => Ok(Direction::LowerIsAdversarial),
            other => Err(Error::param(format!(
                "unknown direction {other:?} (expected higher or lower)"
            ))),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Direction::HigherIsAdversarial => "higher",
            Direction::LowerIsAdversarial => "lower",
        })
    }
}

/// Averages of 1-based ranks, tied values sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUROC with ties counted as one half.
pub fn auroc(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return Err(Error::Contract(
            "AUROC needs at least one score of each class".into(),
        ));
    }
    let all: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    let ranks = average_ranks(&all);
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let rank_sum: f64 = ranks[..positives.len()].iter().sum();
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Step-wise average precision, each distinct score one operating point.
pub fn average_precision(negatives: &[f64], positives: &[f64]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Contract("AUPR needs at least one positive".into()));
    }
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = positives.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let s = scored[i].0;
        while i < scored.len() && scored[i].0 == s {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

struct Youden {
    threshold: f64,
    sensitivity: f64,
    specificity: f64,
}

/// Best sensitivity + specificity over thresholds drawn from the observed
/// scores; `flagged(score, t)` decides the positive call.
fn youden(negatives: &[f64], positives: &[f64], flagged: impl Fn(f64, f64) -> bool) -> Youden {
    let mut candidates: Vec<f64> = negatives.iter().chain(positives).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (np, nn) = (positives.len() as u128, negatives.len() as u128);
    let mut best: Option<(u128, f64, usize, usize)> = None;
    // Ascending scan with a strict improvement test keeps the smallest of
    // equally good thresholds. J is compared as tp*nn + tn*np to stay exact.
    for &t in &candidates {
        let tp = positives.iter().filter(|&&s| flagged(s, t)).count();
        let tn = negatives.iter().filter(|&&s| !flagged(s, t)).count();
        let score = tp as u128 * nn + tn as u128 * np;
        if best.is_none_or(|b| score > b.0) {
            best = Some((score, t, tp, tn));
        }
    }
    let (_, threshold, tp, tn) = best.expect("non-empty candidates");
    Youden {
        threshold,
        sensitivity: tp as f64 / np as f64,
        specificity: tn as f64 / nn as f64,
    }
}

fn mean_and_sample_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1)
        .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

/// AUROC, AUPR and the Youden operating point, with adversarial as the
/// positive class. Records sharing an id across labels also feed the paired
/// ΔPNR summary.
pub fn roc_analysis(records: &[PnrRecord], direction: Direction) -> Result<DetectionReport> {
    for r in records {
        if !(r.pnr.is_finite() && r.pnr >= 0.0) {
            return Err(Error::param(format!(
                "record {:?} has invalid pnr {}",
                r.id, r.pnr
            )));
        }
    }
    let pick = |label: Label| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.pnr)
            .collect()
    };
    let (clean, adv) = (pick(Label::Clean), pick(Label::Adversarial));
    if clean.is_empty() || adv.is_empty() {
        return Err(Error::Contract(format!(
            "detection needs both labels, got {} clean and {} adversarial records",
            clean.len(),
            adv.len()
        )));
    }

    // Ranking statistics are computed on oriented scores so that larger
    // always means "more adversarial".
    let orient = |v: &[f64]| -> Vec<f64> {
        match direction {
            Direction::HigherIsAdversarial => v.to_vec(),
            Direction::LowerIsAdversarial => v.iter().map(|s| -s).collect(),
        }
    };
    let (oc, oa) = (orient(&clean), orient(&adv));
    let auroc = auroc(&oc, &oa)?;
    let aupr = average_precision(&oc, &oa)?;
    let cut = match direction {
        Direction::HigherIsAdversarial => youden(&clean, &adv, |s, t| s >= t),
        Direction::LowerIsAdversarial => youden(&clean, &adv, |s, t| s <= t),
    };

    let mut by_id: BTreeMap<&str, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in records {
        let slot = by_id.entry(r.id.as_str()).or_default();
        let field = match r.label {
            Label::Clean => &mut slot.0,
            Label::Adversarial => &mut slot.1,
        };
        if field.replace(r.pnr).is_some() {
            return Err(Error::Contract(format!(
                "duplicate {} record for id {:?}",
                r.label.as_str(),
                r.id
            )));
        }
    }
    let deltas: Vec<f64> = by_id.values().filter_map(|&(c, a)| Some(a? - c?)).collect();
    let (delta_pnr_mean, delta_pnr_std) = mean_and_sample_std(&deltas);

    Ok(DetectionReport {
        delta_pnr_mean,
        delta_pnr_std,
        pairs: deltas.len(),
        auroc,
        aupr,
        threshold: cut.threshold,
        sensitivity: cut.sensitivity,
        specificity: cut.specificity,
        num_clean: clean.len(),
        num_adversarial: adv.len(),
    })
}

const HEADER: [&str; 3] = ["id", "label", "pnr"];

/// Writes `id,label,pnr` rows with a header. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_records<W: Write>(records: &[PnrRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::format(format!("writing pnr records: {e}"));
    w.write_record(HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([r.id.as_str(), r.label.as_str(), &format!("{:?}", r.pnr)])
            .map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::format(format!("writing pnr records: {e}")))
}

/// Reads what [`write_records`] writes. Rejects a missing or different
/// header, unknown labels, and negative or non-finite ratios.
pub fn read_records<R: Read>(input: R) -> Result<Vec<PnrRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::format(format!("pnr records: {e}")))?;
    if header.iter().ne(HEADER) {
        return Err(Error::format(format!(
            "pnr records: expected header id,label,pnr, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::format(format!("pnr records line {line}: {e}")))?;
        let [id, label, value] = [0, 1, 2].map(|k| row.get(k).unwrap_or(""));
        let label: Label = label
            .parse()
            .map_err(|e| Error::format(format!("pnr records line {line}: {e}")))?;
        let pnr: f64 = value
            .parse()
            .map_err(|_| Error::format(format!("pnr records line {line}: bad number {value:?}")))?;
        if !(pnr.is_finite() && pnr >= 0.0) {
            return Err(Error::format(format!(
                "pnr records line {line}: pnr must be finite and >= 0, got {value}"
            )));
        }
        out.push(PnrRecord::new(id, label, pnr));
    }
    Ok(out)
}
