//! Deliberately naive reference implementations.
#![allow(dead_code)]

/// Two separate loops over positive and negative entries.
pub fn pnr(m: &[f64], eps: f64) -> f64 {
    let mut pos = 0.0;
    for &v in m {
        if v > 0.0 {
            pos += v;
        }
    }
    let mut neg = 0.0;
    for &v in m {
        if v < 0.0 {
            neg += -v;
        }
    }
    pos / (neg + eps)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties as half.
pub fn auroc(neg: &[f64], pos: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &p in pos {
        for &n in neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    (twice as f64 / 2.0) / (pos.len() * neg.len()) as f64
}

/// Precision-recall points at every distinct threshold, integrated as a
/// step function over recall.
pub fn aupr(neg: &[f64], pos: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = neg.iter().chain(pos).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut points = Vec::new();
    for &t in &thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        points.push((tp / pos.len() as f64, tp / (tp + fp)));
    }
    let mut area = 0.0;
    let mut last_recall = 0.0;
    for (r, p) in points {
        area += (r - last_recall) * p;
        last_recall = r;
    }
    area
}

/// Sensitivity + specificity - 1 when `score >= t` flags a positive.
pub fn youden_j(neg: &[f64], pos: &[f64], t: f64) -> f64 {
    let sens = pos.iter().filter(|&&s| s >= t).count() as f64 / pos.len() as f64;
    let spec = neg.iter().filter(|&&s| s < t).count() as f64 / neg.len() as f64;
    sens + spec - 1.0
}

/// (tp, fp, fn, tn) from nested row/column loops over `h x w` masks.
pub fn confusion(pred: &[bool], gt: &[bool], h: usize, w: usize) -> [usize; 4] {
    let mut c = [0; 4];
    for y in 0..h {
        for x in 0..w {
            let (p, g) = (pred[y * w + x], gt[y * w + x]);
            let k = match (p, g) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            c[k] += 1;
        }
    }
    c
}

/// (pixel accuracy, iou, f1, precision, recall) from counts.
pub fn metrics(c: [usize; 4]) -> [f64; 5] {
    let [tp, fp, fn_, tn] = c.map(|v| v as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let p = div(tp, tp + fp);
    let r = div(tp, tp + fn_);
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    [
        div(tp + tn, tp + fp + fn_ + tn),
        div(tp, tp + fp + fn_),
        f1,
        p,
        r,
    ]
}
