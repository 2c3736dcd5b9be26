use serde::{Deserialize, Serialize};

use crate::classifier::PredictionSet;
use crate::error::{Error, Result};
use crate::record::ImageRecord;

pub const GRID_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// `None` for the (0, 0) anchor, which sits above every score.
    pub threshold: Option<f64>,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    pub positive_label: String,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Linear interpolation of TPR at `fpr`; on a vertical segment the
    /// highest TPR is taken.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let mut best: f64 = 0.0;
        for w in self.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.fpr <= fpr && fpr <= b.fpr {
                let v = if a.fpr == b.fpr {
                    a.tpr.max(b.tpr)
                } else {
                    a.tpr + (b.tpr - a.tpr) * (fpr - a.fpr) / (b.fpr - a.fpr)
                };
                best = best.max(v);
            }
        }
        best
    }
}

/// One-vs-rest sweep: a sample is called positive when its score is at or
/// above the threshold. Thresholds are the distinct scores, descending, so
/// tied scores move together. AUC is the trapezoidal area, accumulated in
/// integer counts and divided once.
pub fn roc_from_scores(label: &str, scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::Invalid("scores and truth differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let p = positive.iter().filter(|&&x| x).count() as u64;
    let n = positive.len() as u64 - p;
    if p == 0 || n == 0 {
        return Err(Error::DegenerateRoc(format!(
            "class {label} has {p} positive and {n} negative samples"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: None, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold: Some(t),
            fpr: fp as f64 / n as f64,
            tpr: tp as f64 / p as f64,
        });
    }
    Ok(RocCurve {
        positive_label: label.to_string(),
        points,
        auc: area2 as f64 / (2 * p as u128 * n as u128) as f64,
    })
}

/// One-vs-rest curve for `positive_label` over the test split.
pub fn roc(preds: &PredictionSet, truth: &[ImageRecord], positive_label: &str) -> Result<RocCurve> {
    let class = preds.schema.require(positive_label)?;
    if truth.len() != preds.len() {
        return Err(Error::Invalid(format!("{} test images but {} predictions", truth.len(), preds.len())));
    }
    let positive: Vec<bool> = truth.iter().map(|r| r.label == positive_label).collect();
    roc_from_scores(positive_label, &preds.class_scores(class), &positive)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RocMode {
    #[default]
    Macro,
    Micro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAuc {
    pub label: String,
    pub auc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub method: RocMode,
    pub auc: f64,
    pub per_class: Vec<ClassAuc>,
    /// (fpr, tpr) on the shared grid 0.00, 0.01, ..., 1.00.
    #[serde(skip)]
    pub grid: Vec<(f64, f64)>,
}

fn grid() -> impl Iterator<Item = f64> {
    (0..GRID_POINTS).map(|i| i as f64 / (GRID_POINTS - 1) as f64)
}

fn per_class(curves: &[RocCurve]) -> Vec<ClassAuc> {
    curves
        .iter()
        .map(|c| ClassAuc {
            label: c.positive_label.clone(),
            auc: c.auc,
        })
        .collect()
}

/// Macro average: per-class TPRs averaged on the shared grid; the AUC is
/// the mean of the per-class AUCs.
pub fn experiment_roc_summary(curves: &[RocCurve]) -> Result<RocSummary> {
    if curves.is_empty() {
        return Err(Error::DegenerateRoc("no class curves to average".into()));
    }
    let k = curves.len() as f64;
    let grid = grid()
        .map(|x| (x, curves.iter().map(|c| c.tpr_at(x)).sum::<f64>() / k))
        .collect();
    Ok(RocSummary {
        method: RocMode::Macro,
        auc: curves.iter().map(|c| c.auc).sum::<f64>() / k,
        per_class: per_class(curves),
        grid,
    })
}

/// Micro average: every (sample, class) score pooled into one binary
/// problem.
pub fn micro_roc_summary(preds: &PredictionSet, truth: &[ImageRecord], curves: &[RocCurve]) -> Result<RocSummary> {
    let labels = preds.schema.labels();
    let mut scores = Vec::with_capacity(preds.len() * labels.len());
    let mut positive = Vec::with_capacity(scores.capacity());
    for (row, r) in preds.rows.iter().zip(truth) {
        for (c, l) in labels.iter().enumerate() {
            scores.push(row.scores[c]);
            positive.push(&r.label == l);
        }
    }
    let pooled = roc_from_scores("micro", &scores, &positive)?;
    Ok(RocSummary {
        method: RocMode::Micro,
        auc: pooled.auc,
        per_class: per_class(curves),
        grid: grid().map(|x| (x, pooled.tpr_at(x))).collect(),
    })
}
