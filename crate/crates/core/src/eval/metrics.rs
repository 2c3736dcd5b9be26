use serde::{Deserialize, Serialize};

use super::ConfusionMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weighted {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<PerClass>,
    /// Support-weighted means of the per-class values.
    pub weighted: Weighted,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let labels = cm.schema.labels();
    let per_class: Vec<PerClass> = (0..cm.k())
        .map(|c| {
            let tp = cm.counts[c][c];
            let support = cm.support(c);
            let (precision, precision_undefined) = ratio(tp, cm.predicted_total(c));
            let (recall, recall_undefined) = ratio(tp, support);
            let (f1, f1_undefined) = if precision + recall == 0.0 {
                (0.0, true)
            } else {
                (2.0 * precision * recall / (precision + recall), false)
            };
            PerClass {
                label: labels.get(c).cloned().unwrap_or_default(),
                precision,
                recall,
                f1,
                support,
                precision_undefined,
                recall_undefined,
                f1_undefined,
            }
        })
        .collect();
    let total: u64 = per_class.iter().map(|p| p.support).sum();
    let mean = |f: fn(&PerClass) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|p| f(p) * p.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted = Weighted {
        f1: mean(|p| p.f1),
        precision: mean(|p| p.precision),
        recall: mean(|p| p.recall),
    };
    ClassMetrics {
        per_class,
        weighted,
        accuracy: cm.accuracy(),
    }
}
