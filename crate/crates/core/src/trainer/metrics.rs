use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Fraud-positive classification metrics; AUC is absent when only one class
/// is present.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub auc: Option<f64>,
    pub f1: f64,
}

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Empty("no scores to evaluate".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores contain NaN".into()));
    }
    Ok(())
}

/// Mann–Whitney AUC with midranks for tied scores.
pub fn auc_score(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined("AUC needs both fraud and legitimate samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        // Ranks k+1..=end share their mean.
        let mid = (k + 1 + end) as f64 / 2.0;
        rank_sum += mid * order[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Recall, AUC and F1 with fraud as the positive class. Scores at or above
/// `threshold` are predicted fraud.
pub fn evaluate(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Metrics> {
    check(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let recall = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let auc = match auc_score(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics { recall, auc, f1 })
}

/// One point of a forgetting curve: AUC on a region's test set after a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub task_index: usize,
    pub region_id: u32,
    pub auc: Option<f64>,
}

pub fn write_forgetting_curves(rows: &[CurveRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["task_index", "region_id", "auc"])?;
    for r in rows {
        let auc = r.auc.map(|a| a.to_string()).unwrap_or_default();
        w.write_record([r.task_index.to_string(), r.region_id.to_string(), auc])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
