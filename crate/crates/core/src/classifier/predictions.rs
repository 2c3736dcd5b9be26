use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::schema::{LabelSchema, HRP_LABELS, LABELS_OF_INTEREST, URC_LABELS};

/// Rows whose scores sum this close to 1 are renormalized on ingest.
pub const INGEST_SUM_TOLERANCE: f64 = 1e-4;
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub scores: Vec<f64>,
    pub predicted_label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub schema: LabelSchema,
    pub rows: Vec<PredictionRow>,
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

impl PredictionSet {
    /// Builds rows from score vectors, deriving `predicted_label` by argmax.
    pub fn from_scores(schema: LabelSchema, rows: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .map(|(image_id, scores)| {
                let predicted_label = schema.labels()[argmax(&scores)].clone();
                PredictionRow {
                    image_id,
                    scores,
                    predicted_label,
                }
            })
            .collect();
        let set = PredictionSet { schema, rows };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.schema.len();
        for (i, row) in self.rows.iter().enumerate() {
            let fail = |message: String| Err(Error::Predictions { row: i + 1, message });
            if row.scores.len() != k {
                return fail(format!("{} scores for {} labels", row.scores.len(), k));
            }
            if row.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
                return fail("score outside [0, 1]".into());
            }
            let sum: f64 = row.scores.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return fail(format!("scores sum to {sum}"));
            }
            if row.predicted_label != self.schema.labels()[argmax(&row.scores)] {
                return fail(format!("predicted label {} is not the argmax", row.predicted_label));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scores of one class across all rows.
    pub fn class_scores(&self, class: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.scores[class]).collect()
    }

    pub fn predicted_indices(&self) -> Vec<usize> {
        self.rows.iter().map(|r| argmax(&r.scores)).collect()
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["image_id".to_string(), "predicted_label".to_string()];
        header.extend(self.schema.labels().iter().map(|l| format!("score_{l}")));
        let csv_err = |e: csv::Error| Error::parse("predictions", e);
        w.write_record(&header).map_err(csv_err)?;
        for row in &self.rows {
            let mut fields = vec![row.image_id.clone(), row.predicted_label.clone()];
            fields.extend(row.scores.iter().map(|s| format!("{s}")));
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::parse("predictions", e.to_string()))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Reorders rows to follow the manifest's test split; every test image
    /// must have exactly one row and no extra rows are allowed.
    pub fn aligned_to(mut self, manifest: &DatasetManifest) -> Result<Self> {
        if self.schema != manifest.schema {
            return Err(Error::SchemaMismatch {
                model: self.schema.to_string(),
                data: manifest.schema.to_string(),
            });
        }
        let mut by_id: std::collections::HashMap<String, PredictionRow> =
            self.rows.drain(..).map(|r| (r.image_id.clone(), r)).collect();
        let mut rows = Vec::with_capacity(manifest.test.len());
        for (i, r) in manifest.test.iter().enumerate() {
            let row = by_id.remove(&r.id).ok_or(Error::Predictions {
                row: i + 1,
                message: format!("missing prediction for image {}", r.id),
            })?;
            rows.push(row);
        }
        if let Some(extra) = by_id.keys().min() {
            return Err(Error::Predictions {
                row: 0,
                message: format!("prediction for image {extra} not in the test split"),
            });
        }
        Ok(PredictionSet {
            schema: self.schema,
            rows,
        })
    }
}

fn schema_for_labels(labels: &[String]) -> Result<LabelSchema> {
    let mut sorted = labels.to_vec();
    sorted.sort();
    let mut candidates = vec![LabelSchema::urc(), LabelSchema::hrp()];
    for x in LABELS_OF_INTEREST {
        candidates.push(LabelSchema::reduced(x)?);
    }
    for schema in candidates {
        let mut theirs = schema.labels().to_vec();
        theirs.sort();
        if theirs == sorted {
            return Ok(schema);
        }
    }
    let known: Vec<&str> = URC_LABELS.iter().chain(HRP_LABELS.iter()).copied().collect();
    let unknown = labels.iter().find(|l| !known.contains(&l.as_str()));
    Err(Error::Predictions {
        row: 0,
        message: match unknown {
            Some(l) => format!("unknown label {l:?} in header"),
            None => format!("header labels {labels:?} do not form a known schema"),
        },
    })
}

/// Parses a worker's `predictions.csv`
/// (`image_id,predicted_label,score_<label1>,...,score_<labelK>`).
///
/// Score columns may come in any order; rows are stored in schema order.
/// Sums within `INGEST_SUM_TOLERANCE` of 1 are renormalized, larger
/// deviations are rejected with the offending row number.
pub fn ingest_external_predictions(path: impl AsRef<Path>) -> Result<PredictionSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&bytes)
}

pub fn parse_predictions(bytes: &[u8]) -> Result<PredictionSet> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| Error::Predictions { row: 0, message: e.to_string() })?
        .clone();
    if header.len() < 3 || &header[0] != "image_id" || &header[1] != "predicted_label" {
        return Err(Error::Predictions {
            row: 0,
            message: "header must start with image_id,predicted_label,score_...".into(),
        });
    }
    let mut labels = Vec::new();
    for col in header.iter().skip(2) {
        let label = col.strip_prefix("score_").ok_or_else(|| Error::Predictions {
            row: 0,
            message: format!("column {col:?} is not a score column"),
        })?;
        labels.push(label.to_string());
    }
    let schema = schema_for_labels(&labels)?;
    let column_to_class: Vec<usize> = labels.iter().map(|l| schema.index_of(l).unwrap_or(0)).collect();

    let mut rows = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let fail = |message: String| Error::Predictions { row: row_no, message };
        let record = record.map_err(|e| fail(e.to_string()))?;
        if record.len() != header.len() {
            return Err(fail(format!("expected {} fields, found {}", header.len(), record.len())));
        }
        let image_id = record[0].to_string();
        if image_id.is_empty() || !seen.insert(image_id.clone()) {
            return Err(fail(format!("missing or duplicate image id {image_id:?}")));
        }
        let claimed = &record[1];
        let claimed_class = schema
            .index_of(claimed)
            .ok_or_else(|| fail(format!("unknown predicted label {claimed:?}")))?;
        let mut scores = vec![0.0; schema.len()];
        for (col, class) in column_to_class.iter().enumerate() {
            let raw = &record[col + 2];
            let v: f64 = raw.trim().parse().map_err(|_| fail(format!("bad score {raw:?}")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(fail(format!("score {v} is not a probability")));
            }
            scores[*class] = v;
        }
        let sum: f64 = scores.iter().sum();
        if (sum - 1.0).abs() > INGEST_SUM_TOLERANCE {
            return Err(fail(format!("scores sum to {sum}, outside 1 +/- {INGEST_SUM_TOLERANCE}")));
        }
        for s in &mut scores {
            *s /= sum;
        }
        let best = argmax(&scores);
        if scores[claimed_class] < scores[best] {
            return Err(fail(format!("predicted label {claimed} is not the highest-scoring label")));
        }
        rows.push(PredictionRow {
            image_id,
            predicted_label: schema.labels()[best].clone(),
            scores,
        });
    }
    let set = PredictionSet { schema, rows };
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "image_id,predicted_label,score_null,score_other,score_stucco\n";

    #[test]
    fn well_formed_file() {
        let text = format!("{HEADER}a,null,0.7,0.2,0.1\nb,stucco,0.1,0.1,0.8\n");
        let set = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(set.schema, LabelSchema::reduced("stucco").unwrap());
        assert_eq!(set.rows[1].predicted_label, "stucco");
    }

    #[test]
    fn near_one_sums_are_renormalized() {
        let text = format!("{HEADER}a,null,0.5,0.2999,0.2\n");
        let set = parse_predictions(text.as_bytes()).unwrap();
        let sum: f64 = set.rows[0].scores.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_sums_name_the_row() {
        let text = format!("{HEADER}a,null,0.5,0.2,0.3\nb,null,0.5,0.2,0.1\n");
        match parse_predictions(text.as_bytes()) {
            Err(Error::Predictions { row, message }) => {
                assert_eq!(row, 2);
                assert!(message.contains("sum"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_labels_rejected() {
        let text = "image_id,predicted_label,score_null,score_other,score_marble\na,null,1,0,0\n";
        let err = parse_predictions(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("marble"), "{err}");
        let text = format!("{HEADER}a,marble,1,0,0\n");
        assert!(parse_predictions(text.as_bytes()).is_err());
    }

    #[test]
    fn column_order_is_free() {
        let text = "image_id,predicted_label,score_stucco,score_null,score_other\na,stucco,0.6,0.3,0.1\n";
        let set = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(set.rows[0].scores, vec![0.3, 0.1, 0.6]);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        let set = PredictionSet::from_scores(
            LabelSchema::reduced("siding").unwrap(),
            [("x".to_string(), vec![1.0 / 3.0; 3])],
        )
        .unwrap();
        assert_eq!(set.rows[0].predicted_label, "null");
        // a worker may name any of the tied labels; we store the tie-rule label
        let text = format!("{HEADER}a,stucco,0.25,0.25,0.5\nb,other,0.4,0.4,0.2\n");
        let set = parse_predictions(text.as_bytes()).unwrap();
        assert_eq!(set.rows[1].predicted_label, "null");
    }

    #[test]
    fn csv_round_trip() {
        let set = PredictionSet::from_scores(
            LabelSchema::hrp(),
            [("a".to_string(), vec![0.2, 0.3, 0.5]), ("b".to_string(), vec![0.9, 0.05, 0.05])],
        )
        .unwrap();
        let back = parse_predictions(&set.to_csv().unwrap()).unwrap();
        assert_eq!(back.rows.len(), 2);
        for (a, b) in set.rows.iter().zip(&back.rows) {
            assert_eq!(a.predicted_label, b.predicted_label);
            for (x, y) in a.scores.iter().zip(&b.scores) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
