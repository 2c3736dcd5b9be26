use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::roc::{experiment_roc_summary, micro_roc_summary, roc, RocCurve, RocMode, RocSummary};
use super::{class_metrics, confusion, ClassMetrics, ConfusionMatrix, PerClass, RowNormalized, Weighted};
use crate::classifier::PredictionSet;
use crate::error::{Error, Result};
use crate::record::ImageRecord;

pub const METRICS_FILE: &str = "metrics.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SUMMARY_SVG: &str = "weighted_metrics.svg";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment: String,
    pub confusion: ConfusionMatrix,
    pub normalized: RowNormalized,
    pub metrics: ClassMetrics,
    pub curves: Vec<RocCurve>,
    /// Classes without both positives and negatives in the test split.
    pub degenerate: Vec<String>,
    pub auc_summary: RocSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionDoc {
    pub counts: Vec<Vec<u64>>,
    pub percent: Vec<Vec<u32>>,
    pub zero_support: Vec<bool>,
}

/// The contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub experiment: String,
    pub schema: String,
    pub labels: Vec<String>,
    pub n_test: u64,
    pub per_class: Vec<PerClass>,
    pub weighted: Weighted,
    pub accuracy: f64,
    pub confusion: ConfusionDoc,
    pub auc_summary: RocSummary,
    pub degenerate_roc_classes: Vec<String>,
}

/// Runs every metric for one experiment's predictions on its test split.
pub fn evaluate(experiment: &str, test: &[ImageRecord], preds: &PredictionSet, mode: RocMode) -> Result<ExperimentReport> {
    preds.validate()?;
    let cm = confusion(test, preds)?;
    let metrics = class_metrics(&cm);
    let mut curves = Vec::new();
    let mut degenerate = Vec::new();
    for label in preds.schema.labels() {
        match roc(preds, test, label) {
            Ok(c) => curves.push(c),
            Err(Error::DegenerateRoc(_)) => degenerate.push(label.clone()),
            Err(e) => return Err(e),
        }
    }
    let auc_summary = match mode {
        RocMode::Macro => experiment_roc_summary(&curves)?,
        RocMode::Micro => micro_roc_summary(preds, test, &curves)?,
    };
    Ok(ExperimentReport {
        experiment: experiment.to_string(),
        normalized: cm.row_normalize(),
        confusion: cm,
        metrics,
        curves,
        degenerate,
        auc_summary,
    })
}

impl ExperimentReport {
    pub fn doc(&self) -> MetricsDoc {
        MetricsDoc {
            experiment: self.experiment.clone(),
            schema: self.confusion.schema.to_string(),
            labels: self.confusion.schema.labels().to_vec(),
            n_test: self.confusion.total(),
            per_class: self.metrics.per_class.clone(),
            weighted: self.metrics.weighted,
            accuracy: self.metrics.accuracy,
            confusion: ConfusionDoc {
                counts: self.confusion.counts.clone(),
                percent: self.normalized.rounded(),
                zero_support: self.normalized.zero_support.clone(),
            },
            auc_summary: self.auc_summary.clone(),
            degenerate_roc_classes: self.degenerate.clone(),
        }
    }

    /// `true_label,predicted_label,count,percent` with whole percentages.
    pub fn confusion_csv(&self) -> String {
        let labels = self.confusion.schema.labels();
        let rounded = self.normalized.rounded();
        let mut out = String::from("true_label,predicted_label,count,percent\n");
        for (i, t) in labels.iter().enumerate() {
            for (j, p) in labels.iter().enumerate() {
                let _ = writeln!(out, "{t},{p},{},{}", self.confusion.counts[i][j], rounded[i][j]);
            }
        }
        out
    }

    /// `label,threshold,fpr,tpr`: every class curve, then the summary grid
    /// under the averaging method's name with an empty threshold.
    pub fn roc_csv(&self) -> String {
        let mut out = String::from("label,threshold,fpr,tpr\n");
        for c in &self.curves {
            for p in &c.points {
                let t = p.threshold.map_or("inf".to_string(), |t| t.to_string());
                let _ = writeln!(out, "{},{t},{},{}", c.positive_label, p.fpr, p.tpr);
            }
        }
        let method = match self.auc_summary.method {
            RocMode::Macro => "macro",
            RocMode::Micro => "micro",
        };
        for (x, y) in &self.auc_summary.grid {
            let _ = writeln!(out, "{method},,{x},{y}");
        }
        out
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    Ok(p)
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| Error::parse("json", e))?;
    v.push(b'\n');
    Ok(v)
}

/// Writes `metrics.json`, `confusion_<exp>.csv`, `roc_<exp>.csv` and
/// `weighted_<exp>.svg` into `out_dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let exp = &report.experiment;
    let doc = report.doc();
    Ok(vec![
        write(out_dir, METRICS_FILE, &json_bytes(&doc)?)?,
        write(out_dir, &format!("confusion_{exp}.csv"), report.confusion_csv().as_bytes())?,
        write(out_dir, &format!("roc_{exp}.csv"), report.roc_csv().as_bytes())?,
        write(out_dir, &format!("weighted_{exp}.svg"), weighted_svg(std::slice::from_ref(&doc)).as_bytes())?,
    ])
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<MetricsDoc> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    schema: &'a str,
    n_test: u64,
    weighted: Weighted,
    accuracy: f64,
    auc: f64,
    auc_method: RocMode,
}

/// Writes `summary.json` and a combined bar chart for several experiments.
pub fn emit_summary(docs: &[MetricsDoc], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rows: Vec<SummaryRow> = docs
        .iter()
        .map(|d| SummaryRow {
            experiment: &d.experiment,
            schema: &d.schema,
            n_test: d.n_test,
            weighted: d.weighted,
            accuracy: d.accuracy,
            auc: d.auc_summary.auc,
            auc_method: d.auc_summary.method,
        })
        .collect();
    Ok(vec![
        write(out_dir, SUMMARY_FILE, &json_bytes(&rows)?)?,
        write(out_dir, SUMMARY_SVG, weighted_svg(docs).as_bytes())?,
    ])
}

pub fn summary_table(docs: &[MetricsDoc]) -> String {
    let width = docs.iter().map(|d| d.experiment.len()).max().unwrap_or(0).max(10);
    let mut out = format!(
        "{:<width$}  {:>6}  {:>9}  {:>6}  {:>8}  {:>9}\n",
        "experiment", "f1", "precision", "recall", "accuracy", "auc"
    );
    for d in docs {
        let method = match d.auc_summary.method {
            RocMode::Macro => "macro",
            RocMode::Micro => "micro",
        };
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.3}  {:>9.3}  {:>6.3}  {:>8.3}  {:>5.3} {method}",
            d.experiment, d.weighted.f1, d.weighted.precision, d.weighted.recall, d.accuracy, d.auc_summary.auc
        );
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars of weighted F1, precision and recall per experiment.
pub fn weighted_svg(docs: &[MetricsDoc]) -> String {
    const BAR: f64 = 18.0;
    const GAP: f64 = 24.0;
    const LEFT: f64 = 48.0;
    const TOP: f64 = 40.0;
    const PLOT_H: f64 = 200.0;
    let colors = [("F1", "#3b6ea5"), ("precision", "#e08a3c"), ("recall", "#5a9e5a")];
    let group = 3.0 * BAR + GAP;
    let width = LEFT + group * docs.len().max(1) as f64 + GAP;
    let height = TOP + PLOT_H + 90.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="16" font-size="13">Weighted metrics</text>"#);
    for (i, (name, color)) in colors.iter().enumerate() {
        let x = LEFT + i as f64 * 90.0;
        let _ = writeln!(s, r#"<rect x="{x}" y="22" width="10" height="10" fill="{color}"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="31">{name}</text>"#, x + 14.0);
    }
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = TOP + PLOT_H * (1.0 - v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{}" y1="{y}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            width - GAP / 2.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (g, d) in docs.iter().enumerate() {
        let x0 = LEFT + GAP / 2.0 + g as f64 * group;
        let values = [d.weighted.f1, d.weighted.precision, d.weighted.recall];
        for (i, v) in values.iter().enumerate() {
            let h = PLOT_H * v.clamp(0.0, 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{BAR}" height="{h}" fill="{}"><title>{:.4}</title></rect>"#,
                x0 + i as f64 * BAR,
                TOP + PLOT_H - h,
                colors[i].1,
                v
            );
        }
        let cx = x0 + 1.5 * BAR;
        let cy = TOP + PLOT_H + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{cy}" text-anchor="end" transform="rotate(-40 {cx} {cy})">{}</text>"#,
            escape(&d.experiment)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::ImageRecord;
    use crate::schema::LabelSchema;

    fn fixture() -> (Vec<ImageRecord>, PredictionSet) {
        let labels = ["null", "other", "stucco"];
        let mut test = Vec::new();
        let mut rows = Vec::new();
        for i in 0..30 {
            let t = i % 3;
            test.push(ImageRecord::manual(format!("m{i}"), format!("m{i}.png"), labels[t]));
            let mut s = vec![0.2; 3];
            let p = if i % 7 == 0 { (t + 1) % 3 } else { t };
            s[p] = 0.6;
            rows.push((format!("m{i}"), s));
        }
        (test, PredictionSet::from_scores(LabelSchema::reduced("stucco").unwrap(), rows).unwrap())
    }

    #[test]
    fn four_files_and_deterministic() {
        let (test, preds) = fixture();
        let report = evaluate("baseline-stucco", &test, &preds, RocMode::Macro).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = emit_report(&report, a.path()).unwrap();
        let report2 = evaluate("baseline-stucco", &test, &preds, RocMode::Macro).unwrap();
        emit_report(&report2, b.path()).unwrap();
        assert_eq!(fs::read_dir(a.path()).unwrap().count(), 4);
        for p in &pa {
            let name = p.file_name().unwrap();
            assert_eq!(fs::read(p).unwrap(), fs::read(b.path().join(name)).unwrap());
        }
        let doc = load_metrics(a.path().join(METRICS_FILE)).unwrap();
        assert_eq!(doc, report.doc().with_grid_cleared());
        let svg = fs::read_to_string(a.path().join("weighted_baseline-stucco.svg")).unwrap();
        assert_eq!(svg.matches("http://").count(), 1);
        assert!(!svg.contains("@font-face") && !svg.contains("<image"));
    }

    #[test]
    fn micro_mode_labelled() {
        let (test, preds) = fixture();
        let report = evaluate("x", &test, &preds, RocMode::Micro).unwrap();
        assert_eq!(report.auc_summary.method, RocMode::Micro);
        assert!(report.roc_csv().contains("\nmicro,,0.5,"));
        let table = summary_table(&[report.doc()]);
        assert!(table.contains("micro"));
    }

    impl MetricsDoc {
        fn with_grid_cleared(mut self) -> Self {
            self.auc_summary.grid.clear();
            self
        }
    }
}
