use serde::Serialize;

use crate::classifier::PredictionSet;
use crate::error::{Error, Result};
use crate::record::ImageRecord;
use crate::schema::LabelSchema;

/// Rows are true labels, columns predicted labels, both in schema order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    #[serde(skip)]
    pub schema: LabelSchema,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(schema: LabelSchema) -> Self {
        let k = schema.len();
        ConfusionMatrix {
            schema,
            counts: vec![vec![0; k]; k],
        }
    }

    /// From parallel class-index sequences.
    pub fn from_indices(schema: LabelSchema, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Invalid(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = ConfusionMatrix::zeros(schema);
        let k = cm.k();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::Invalid(format!("class index out of range for {k} classes")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.k()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64
    }

    /// Each non-empty row as exact percentages of its support.
    pub fn row_normalize(&self) -> RowNormalized {
        let mut percent = Vec::with_capacity(self.k());
        let mut zero_support = Vec::with_capacity(self.k());
        for row in &self.counts {
            let s: u64 = row.iter().sum();
            zero_support.push(s == 0);
            percent.push(
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { 100.0 * c as f64 / s as f64 })
                    .collect(),
            );
        }
        RowNormalized { percent, zero_support }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowNormalized {
    pub percent: Vec<Vec<f64>>,
    /// Rows with no samples; rendered as all zeros.
    pub zero_support: Vec<bool>,
}

impl RowNormalized {
    /// Whole percentages, as displayed.
    pub fn rounded(&self) -> Vec<Vec<u32>> {
        self.percent
            .iter()
            .map(|row| row.iter().map(|p| p.round() as u32).collect())
            .collect()
    }
}

/// Tallies predictions against the true labels of `test`, which must list
/// the same images in the same order as `preds`.
pub fn confusion(test: &[ImageRecord], preds: &PredictionSet) -> Result<ConfusionMatrix> {
    if test.len() != preds.len() {
        return Err(Error::Predictions {
            row: test.len().min(preds.len()) + 1,
            message: format!("{} test images but {} prediction rows", test.len(), preds.len()),
        });
    }
    let mut truth = Vec::with_capacity(test.len());
    for (i, (r, p)) in test.iter().zip(&preds.rows).enumerate() {
        if r.id != p.image_id {
            return Err(Error::Predictions {
                row: i + 1,
                message: format!("expected image {}, found {}", r.id, p.image_id),
            });
        }
        truth.push(preds.schema.require(&r.label)?);
    }
    ConfusionMatrix::from_indices(preds.schema.clone(), &truth, &preds.predicted_indices())
}
