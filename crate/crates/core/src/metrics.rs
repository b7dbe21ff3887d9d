//! Ranking metrics per tag and their means over the test split.

use std::cmp::Ordering;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{forward, ProbeModel};

/// Why a tag's ranking metrics are undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degenerate {
    NoPositives,
    NoNegatives,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("scores contain NaN".into()));
    }
    Ok(())
}

/// Indices sorted by descending score.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Step-interpolated average precision, equal scores forming one threshold.
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(Error::Undefined("average precision with no positives".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            tp += (labels[idx[i]] == 1) as usize;
            seen += 1;
            i += 1;
        }
        let recall = tp as f64 / positives as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Mann–Whitney AUC with ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined(
            "ROC AUC needs both positive and negative labels".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // sum of 1-based midranks of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        let start = i;
        let mut pos_in_group = 0usize;
        while i < idx.len() && scores[idx[i]] == s {
            pos_in_group += (labels[idx[i]] == 1) as usize;
            i += 1;
        }
        let midrank = (start + 1 + i) as f64 / 2.0;
        rank_sum += midrank * pos_in_group as f64;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedTag {
    pub tag: usize,
    pub reason: Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Global tag indices, aligned with `ap` and `auc`.
    pub tags: Vec<usize>,
    /// `None` for excluded tags.
    pub ap: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    pub map: f64,
    pub mean_auc: f64,
    pub excluded: Vec<ExcludedTag>,
    pub num_test_rows: usize,
}

impl MetricsReport {
    /// Per-tag metrics, then means over the tags that are not degenerate.
    pub fn from_scores(scores: &Array2<f64>, labels: &Array2<u8>, tags: &[usize]) -> Result<Self> {
        if scores.dim() != labels.dim() || scores.ncols() != tags.len() {
            return Err(Error::Argument(format!(
                "scores {:?}, labels {:?}, {} tags",
                scores.dim(),
                labels.dim(),
                tags.len()
            )));
        }
        let per_tag: Vec<(Option<f64>, Option<f64>, Option<Degenerate>)> = scores
            .axis_iter(Axis(1))
            .zip(labels.axis_iter(Axis(1)))
            .map(|(s, l)| {
                let s = s.to_vec();
                let l = l.to_vec();
                let pos = l.iter().filter(|&&v| v == 1).count();
                if pos == 0 {
                    Ok((None, None, Some(Degenerate::NoPositives)))
                } else if pos == l.len() {
                    Ok((None, None, Some(Degenerate::NoNegatives)))
                } else {
                    Ok((Some(average_precision(&s, &l)?), Some(roc_auc(&s, &l)?), None))
                }
            })
            .collect::<Result<_>>()?;

        let excluded: Vec<ExcludedTag> = per_tag
            .iter()
            .zip(tags)
            .filter_map(|((_, _, d), &tag)| d.map(|reason| ExcludedTag { tag, reason }))
            .collect();
        let ap: Vec<Option<f64>> = per_tag.iter().map(|t| t.0).collect();
        let auc: Vec<Option<f64>> = per_tag.iter().map(|t| t.1).collect();
        let retained: Vec<f64> = ap.iter().flatten().copied().collect();
        if retained.is_empty() {
            return Err(Error::Undefined(
                "every evaluated tag lacks positives or negatives in the test split".into(),
            ));
        }
        let mean = |v: &[Option<f64>]| {
            let kept: Vec<f64> = v.iter().flatten().copied().collect();
            kept.iter().sum::<f64>() / kept.len() as f64
        };
        Ok(MetricsReport {
            tags: tags.to_vec(),
            map: mean(&ap),
            mean_auc: mean(&auc),
            ap,
            auc,
            excluded,
            num_test_rows: scores.nrows(),
        })
    }
}

/// Scores every test row and reports metrics for `tag_subset` (global tag indices).
///
/// `y_test` holds all tags of the dataset as columns.
pub fn evaluate(
    model: &ProbeModel,
    x_test: &Array2<f64>,
    y_test: &Array2<u8>,
    tag_subset: &[usize],
) -> Result<MetricsReport> {
    if tag_subset.is_empty() {
        return Err(Error::Argument("tag subset is empty".into()));
    }
    if x_test.nrows() != y_test.nrows() {
        return Err(Error::Argument(format!(
            "{} test rows vs {} label rows",
            x_test.nrows(),
            y_test.nrows()
        )));
    }
    let columns = tag_subset
        .iter()
        .map(|t| {
            if *t >= y_test.ncols() {
                return Err(Error::Argument(format!("tag {t} outside label matrix")));
            }
            model
                .tag_indices
                .iter()
                .position(|x| x == t)
                .ok_or_else(|| Error::Argument(format!("probe does not score tag {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let probs = forward(model, x_test)?;
    let scores = probs.select(Axis(1), &columns);
    let labels = y_test.select(Axis(1), tag_subset);
    MetricsReport::from_scores(&scores, &labels, tag_subset)
}
