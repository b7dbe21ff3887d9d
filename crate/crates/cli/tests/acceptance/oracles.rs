//! Reference implementations written independently of the library.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

/// Step AP by brute force: each distinct score is a threshold, counts by full scan.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> f64 {
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let positives = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let (mut tp, mut predicted) = (0.0, 0.0);
        for (s, l) in scores.iter().zip(labels) {
            if *s >= t {
                predicted += 1.0;
                tp += f64::from(*l);
            }
        }
        let recall = tp / positives;
        ap += (recall - prev_recall) * (tp / predicted);
        prev_recall = recall;
    }
    ap
}

/// AUC over every positive/negative pair, ties worth one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 0) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// `softplus(a) - softplus(c)` without cancellation.
fn softplus_diff(a: f64, c: f64) -> f64 {
    if a < c {
        return -softplus_diff(c, a);
    }
    let sigmoid_c = if c >= 0.0 { 1.0 / (1.0 + (-c).exp()) } else { c.exp() / (1.0 + c.exp()) };
    ((a - c).exp_m1() * sigmoid_c).ln_1p()
}

/// Central difference `(L(θ + h e) - L(θ - h e)) / 2h` of the logit-form BCE, where
/// `e` moves W[tag, dim] (or the bias when `dim` is `None`). The two losses are
/// differenced cell by cell so rounding does not swamp small gradients.
#[allow(clippy::too_many_arguments)]
pub fn central_difference(
    w: &Array2<f64>,
    b: &Array1<f64>,
    x: &Array2<f64>,
    y: &Array2<f64>,
    l2: f64,
    tag: usize,
    dim: Option<usize>,
    h: f64,
) -> f64 {
    let z = x.dot(&w.t()) + b;
    let mut diff = 0.0;
    for r in 0..x.nrows() {
        let delta = h * dim.map_or(1.0, |j| x[[r, j]]);
        let zr = z[[r, tag]];
        diff += softplus_diff(zr + delta, zr - delta) - y[[r, tag]] * 2.0 * delta;
    }
    let mut total = diff / z.len() as f64;
    if let Some(j) = dim {
        total += 0.5 * l2 * 4.0 * w[[tag, j]] * h;
    }
    total / (2.0 * h)
}

/// Weights whose response to tag prototype `s` is 1 for row `s` and 0 elsewhere:
/// the transpose of the prototype matrix's pseudo-inverse.
pub fn separating_weights(prototypes: &Array2<f64>) -> Array2<f64> {
    let (t, d) = prototypes.dim();
    let p = DMatrix::from_row_iterator(t, d, prototypes.iter().copied());
    let pinv = p.pseudo_inverse(1e-10).expect("pseudo-inverse");
    Array2::from_shape_fn((t, d), |(i, j)| pinv[(j, i)])
}
