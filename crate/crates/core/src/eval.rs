//! Attribution quality: pixel-level localization against ground-truth masks
//! and faithfulness via iterative patch removal.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attribution::split_channels;
use crate::classifier::{probabilities, ImageClassifier};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A binary grid, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape(format!(
                "{} mask bits for a {height}x{width} grid",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn complement(&self) -> Self {
        BinaryMask {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }
}

/// `(rows, cols)` of a grid stored as `[.., rows, cols]` with unit leading axes.
fn grid_dims(t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::shape(format!(
            "expected a single 2-D grid, got shape {s:?}"
        )));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

/// Min-max scales to `[0, 1]` and keeps values strictly above 0.5.
/// A constant grid gives an empty mask.
pub fn binarize(channel: &Tensor) -> Result<BinaryMask> {
    let (h, w) = grid_dims(channel)?;
    if !channel.is_finite() {
        return Err(Error::Numeric {
            context: "binarize".into(),
        });
    }
    let d = channel.data();
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bits = if d.is_empty() || hi <= lo {
        vec![false; d.len()]
    } else {
        d.iter().map(|&v| (v - lo) / (hi - lo) > 0.5).collect()
    };
    BinaryMask::new(h, w, bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    /// Magnitude `|M|` scored as one map.
    Unified,
    Positive,
    Negative,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Unified => "unified",
            Channel::Positive => "positive",
            Channel::Negative => "negative",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalizationReport {
    pub channel: Channel,
    pub pixel_accuracy: f64,
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn count(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::shape(format!(
                "prediction {}x{} against ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.bits.iter().zip(&gt.bits) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-pixel IoU, F1, precision, recall and accuracy. A zero denominator
/// yields 0 for that metric.
pub fn localization_metrics(
    pred: &BinaryMask,
    gt: &BinaryMask,
    channel: Channel,
) -> Result<LocalizationReport> {
    let c = Confusion::count(pred, gt)?;
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(LocalizationReport {
        channel,
        pixel_accuracy: ratio(c.tp + c.tn, c.tp + c.fp + c.fn_ + c.tn),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_),
        f1,
        precision,
        recall,
    })
}

/// Scores `|map|` against the target mask.
pub fn evaluate_unified(heatmap: &Tensor, target: &BinaryMask) -> Result<LocalizationReport> {
    let pred = binarize(&heatmap.map(f64::abs))?;
    localization_metrics(&pred, target, Channel::Unified)
}

#[derive(Clone, Debug, PartialEq)]
pub enum BidirectionalReport {
    Split {
        positive: LocalizationReport,
        negative: LocalizationReport,
    },
    /// No non-target annotation was supplied.
    Unified {
        report: LocalizationReport,
        warning: String,
    },
}

impl BidirectionalReport {
    pub fn reports(&self) -> Vec<LocalizationReport> {
        match self {
            BidirectionalReport::Split { positive, negative } => vec![*positive, *negative],
            BidirectionalReport::Unified { report, .. } => vec![*report],
        }
    }

    pub fn warning(&self) -> Option<&str> {
        match self {
            BidirectionalReport::Unified { warning, .. } => Some(warning),
            BidirectionalReport::Split { .. } => None,
        }
    }
}

/// Positive channel against the target mask, negative channel against the
/// non-target mask; each channel is normalized on its own.
pub fn evaluate_bidirectional(
    heatmap: &Tensor,
    target: &BinaryMask,
    nontarget: Option<&BinaryMask>,
) -> Result<BidirectionalReport> {
    let Some(nontarget) = nontarget else {
        return Ok(BidirectionalReport::Unified {
            report: evaluate_unified(heatmap, target)?,
            warning: "no non-target mask; scored |map| against the target mask".into(),
        });
    };
    let (pos, neg) = split_channels(heatmap);
    Ok(BidirectionalReport::Split {
        positive: localization_metrics(&binarize(&pos)?, target, Channel::Positive)?,
        negative: localization_metrics(&binarize(&neg)?, nontarget, Channel::Negative)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaithfulnessReport {
    pub class: usize,
    /// Patch indices (row-major) in removal order.
    pub mif_order: Vec<usize>,
    /// Class probability after removing the first k patches, k = 0..=P.
    pub mif_curve: Vec<f64>,
    pub lif_curve: Vec<f64>,
    pub mif_auc: f64,
    pub lif_auc: f64,
    /// `lif_auc - mif_auc`.
    pub faithfulness: f64,
}

/// Patch indices by descending score; equal scores keep index order.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Patch indices by ascending score; equal scores keep index order.
pub fn ascending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

struct PatchLayout {
    rows: usize,
    cols: usize,
    ph: usize,
    pw: usize,
    height: usize,
    width: usize,
}

impl PatchLayout {
    fn new(image: &Tensor, rows: usize, cols: usize) -> Result<Self> {
        let &[1, 3, height, width] = image.shape() else {
            return Err(Error::shape(format!(
                "expected one [1, 3, H, W] image, got {:?}",
                image.shape()
            )));
        };
        if rows == 0 || cols == 0 || height % rows != 0 || width % cols != 0 {
            return Err(Error::shape(format!(
                "a {rows}x{cols} patch grid does not tile a {height}x{width} image"
            )));
        }
        Ok(PatchLayout {
            rows,
            cols,
            ph: height / rows,
            pw: width / cols,
            height,
            width,
        })
    }

    fn zero_patch(&self, pixels: &mut [f64], patch: usize) {
        let (r, c) = (patch / self.cols, patch % self.cols);
        for ch in 0..3 {
            for y in r * self.ph..(r + 1) * self.ph {
                let row = (ch * self.height + y) * self.width;
                pixels[row + c * self.pw..row + (c + 1) * self.pw].fill(0.0);
            }
        }
    }

    fn patch_mean(&self, pixels: &[f64], patch: usize) -> f64 {
        let (r, c) = (patch / self.cols, patch % self.cols);
        let mut s = 0.0;
        for ch in 0..3 {
            for y in r * self.ph..(r + 1) * self.ph {
                let row = (ch * self.height + y) * self.width;
                s += pixels[row + c * self.pw..row + (c + 1) * self.pw]
                    .iter()
                    .sum::<f64>();
            }
        }
        s / (3 * self.ph * self.pw) as f64
    }
}

/// Class-probability curve as patches are zeroed in `order`, one entry per
/// prefix length 0..=P. All P+1 images go through the model as one batch.
pub fn removal_curve(
    model: &impl ImageClassifier,
    image: &Tensor,
    class: usize,
    grid: (usize, usize),
    order: &[usize],
) -> Result<Vec<f64>> {
    let layout = PatchLayout::new(image, grid.0, grid.1)?;
    let p = layout.rows * layout.cols;
    if class >= model.num_classes() {
        return Err(Error::param(format!(
            "class {class} out of range 0..{}",
            model.num_classes()
        )));
    }
    let mut seen = vec![false; p];
    if order.len() != p
        || order
            .iter()
            .any(|&i| i >= p || std::mem::replace(&mut seen[i], true))
    {
        return Err(Error::param(format!(
            "removal order must be a permutation of 0..{p}"
        )));
    }
    let per = image.numel();
    let mut current = image.data().to_vec();
    let mut batch = Vec::with_capacity(per * (p + 1));
    batch.extend_from_slice(&current);
    for &patch in order {
        layout.zero_patch(&mut current, patch);
        batch.extend_from_slice(&current);
    }
    let mut shape = image.shape().to_vec();
    shape[0] = p + 1;
    let probs = probabilities(&model.logits(&Tensor::new(shape, batch)?)?)?;
    let classes = model.num_classes();
    Ok(probs.data().chunks(classes).map(|row| row[class]).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// MIF and LIF curves from one score grid `[rows, cols]` (or
/// `[1, rows, cols]`). Only the ordering of scores matters.
pub fn faithfulness(
    model: &impl ImageClassifier,
    image: &Tensor,
    class: usize,
    scores: &Tensor,
) -> Result<FaithfulnessReport> {
    let grid = grid_dims(scores)?;
    let mif_order = descending_order(scores.data());
    let lif_order = ascending_order(scores.data());
    let mif_curve = removal_curve(model, image, class, grid, &mif_order)?;
    let lif_curve = removal_curve(model, image, class, grid, &lif_order)?;
    let (mif_auc, lif_auc) = (mean(&mif_curve), mean(&lif_curve));
    Ok(FaithfulnessReport {
        class,
        mif_order,
        mif_curve,
        lif_curve,
        mif_auc,
        lif_auc,
        faithfulness: lif_auc - mif_auc,
    })
}

/// Uniformly random patch scores: the MIF order is a random permutation
/// and the LIF order its reverse.
pub fn random_scores(grid: (usize, usize), seed: u64) -> Tensor {
    let p = grid.0 * grid.1;
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut scores = vec![0.0; p];
    for (rank, &patch) in perm.iter().enumerate() {
        scores[patch] = (p - rank) as f64;
    }
    Tensor::new(vec![grid.0, grid.1], scores).expect("grid shape")
}

/// The faithfulness protocol under a random ordering, as a control.
pub fn random_baseline_faithfulness(
    model: &impl ImageClassifier,
    image: &Tensor,
    class: usize,
    grid: (usize, usize),
    seed: u64,
) -> Result<FaithfulnessReport> {
    faithfulness(model, image, class, &random_scores(grid, seed))
}

/// Two-class reference model whose class-1 logit is `sum_i c_i * mean_i`
/// over patch pixel means; class 0 has logit 0. Exact per-patch
/// contributions are known, which makes it a ground truth for orderings.
#[derive(Clone, Debug)]
pub struct LinearPatchModel {
    coefficients: Tensor,
    height: usize,
    width: usize,
}

impl LinearPatchModel {
    /// `coefficients` is the `[rows, cols]` grid; the image must tile it.
    pub fn new(coefficients: Tensor, height: usize, width: usize) -> Result<Self> {
        let (rows, cols) = grid_dims(&coefficients)?;
        let coefficients = coefficients.reshape(&[rows, cols])?;
        PatchLayout::new(&Tensor::zeros(&[1, 3, height, width]), rows, cols)?;
        Ok(LinearPatchModel {
            coefficients,
            height,
            width,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.coefficients.shape()[0], self.coefficients.shape()[1])
    }

    fn layout(&self) -> PatchLayout {
        let (rows, cols) = self.grid();
        PatchLayout {
            rows,
            cols,
            ph: self.height / rows,
            pw: self.width / cols,
            height: self.height,
            width: self.width,
        }
    }

    fn check(&self, images: &Tensor) -> Result<usize> {
        match *images.shape() {
            [b, 3, h, w] if h == self.height && w == self.width => Ok(b),
            _ => Err(Error::shape(format!(
                "expected [B, 3, {}, {}] images, got {:?}",
                self.height,
                self.width,
                images.shape()
            ))),
        }
    }

    /// `c_i * mean_i` for one `[1, 3, H, W]` image, as a `[rows, cols]` grid.
    pub fn contributions(&self, image: &Tensor) -> Result<Tensor> {
        if self.check(image)? != 1 {
            return Err(Error::shape("contributions take a single image"));
        }
        let layout = self.layout();
        let data = self
            .coefficients
            .data()
            .iter()
            .enumerate()
            .map(|(i, c)| c * layout.patch_mean(image.data(), i))
            .collect();
        Tensor::new(self.coefficients.shape().to_vec(), data)
    }
}

impl ImageClassifier for LinearPatchModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn logits(&self, images: &Tensor) -> Result<Tensor> {
        let b = self.check(images)?;
        let layout = self.layout();
        let per = images.numel() / b.max(1);
        let mut out = Vec::with_capacity(2 * b);
        for img in images.data().chunks(per) {
            let z: f64 = self
                .coefficients
                .data()
                .iter()
                .enumerate()
                .map(|(i, c)| c * layout.patch_mean(img, i))
                .sum();
            out.extend([0.0, z]);
        }
        Tensor::new(vec![b, 2], out)
    }

    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
        let logits = self.logits(images)?;
        let loss = crate::classifier::cross_entropy(&logits, labels)?;
        let probs = probabilities(&logits)?;
        let layout = self.layout();
        let b = labels.len();
        let per = images.numel() / b.max(1);
        let area = (3 * layout.ph * layout.pw) as f64;
        let mut grad = vec![0.0; images.numel()];
        for (n, &y) in labels.iter().enumerate() {
            // d CE / dz for the class-1 logit.
            let dz = probs.get(&[n, 1]) - if y == 1 { 1.0 } else { 0.0 };
            let g = &mut grad[n * per..(n + 1) * per];
            for ch in 0..3 {
                for yy in 0..self.height {
                    for xx in 0..self.width {
                        let patch = (yy / layout.ph) * layout.cols + xx / layout.pw;
                        g[(ch * self.height + yy) * self.width + xx] =
                            dz * self.coefficients.data()[patch] / area;
                    }
                }
            }
        }
        Ok((loss, Tensor::new(images.shape().to_vec(), grad)?))
    }
}
