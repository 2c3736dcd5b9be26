//! Shared helpers for the integration suites: independent oracles, pool
//! builders and the reference fixture generator.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use cadastre_core::classifier::{PredictionRow, PredictionSet};
use cadastre_core::{DatasetManifest, ImageRecord, LabelSchema, Provenance, ReviewStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Resolves from either workspace crate that includes this module.
pub fn fixtures_dir() -> PathBuf {
    let crates = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("..");
    crates.join("core").join("tests").join("fixtures")
}

// ---------------------------------------------------------------- oracles

#[derive(Clone, Debug, PartialEq)]
pub struct OracleClass {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleMetrics {
    pub per_class: Vec<OracleClass>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

/// Expands a count matrix into one (truth, prediction) pair per sample.
pub fn expand(counts: &[Vec<u64>]) -> (Vec<usize>, Vec<usize>) {
    let (mut t, mut p) = (Vec::new(), Vec::new());
    for (i, row) in counts.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                t.push(i);
                p.push(j);
            }
        }
    }
    (t, p)
}

/// Brute-force per-class metrics: walks every sample and counts tp/fp/fn
/// for each class separately; 0 for undefined ratios.
pub fn brute_force_metrics(k: usize, truth: &[usize], pred: &[usize]) -> OracleMetrics {
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(OracleClass {
            precision,
            recall,
            f1,
            support: tp + fneg,
        });
    }
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    let w = |f: fn(&OracleClass) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    OracleMetrics {
        weighted_precision: w(|c| c.precision),
        weighted_recall: w(|c| c.recall),
        weighted_f1: w(|c| c.f1),
        per_class,
    }
}

/// P[score_pos > score_neg] + 0.5 P[tie] over every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !positive[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if positive[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random K x K counts; each row has its own support (possibly 0) and its
/// own pull towards the diagonal.
pub fn random_matrix(rng: &mut impl Rng, k: usize, max_support: u64) -> Vec<Vec<u64>> {
    (0..k)
        .map(|i| {
            let support = rng.random_range(0..=max_support);
            let diag_bias = rng.random_range(0.0..1.0);
            let mut row = vec![0u64; k];
            for _ in 0..support {
                let j = if rng.random_bool(diag_bias) { i } else { rng.random_range(0..k) };
                row[j] += 1;
            }
            row
        })
        .collect()
}

// ---------------------------------------------------------------- pools

pub fn manual(id: &str, label: &str) -> ImageRecord {
    ImageRecord::manual(format!("man_{id}"), format!("manual/{id}.png"), label)
}

pub fn synthetic(id: &str, label: &str, status: ReviewStatus) -> ImageRecord {
    ImageRecord {
        id: format!("syn_{id}"),
        path: format!("synthetic/{id}.png"),
        width: 512,
        height: 512,
        label: label.to_string(),
        provenance: Provenance::Synthetic,
        prompt_id: Some(format!("p_{label}")),
        city_keyword: None,
        review_status: status,
    }
}

pub fn manual_pool(counts: &[(&str, usize)]) -> Vec<ImageRecord> {
    counts
        .iter()
        .flat_map(|(l, n)| (0..*n).map(move |i| manual(&format!("{l}_{i:04}"), l)))
        .collect()
}

pub fn synthetic_pool(counts: &[(&str, usize)]) -> Vec<ImageRecord> {
    counts
        .iter()
        .flat_map(|(l, n)| (0..*n).map(move |i| synthetic(&format!("{l}_{i:04}"), l, ReviewStatus::Accepted)))
        .collect()
}

// ---------------------------------------------------------------- reference fixtures

/// A reference prediction set: a test-only manifest plus scores whose argmax
/// reproduces `counts` and whose macro one-vs-rest AUC is tuned to `auc`.
pub struct Reference {
    pub name: &'static str,
    pub label_of_interest: &'static str,
    /// Rows = true class, columns = predicted, in `{null, other, X}` order.
    pub counts: [[u64; 3]; 3],
    pub auc: f64,
    pub seed: u64,
}

pub const REFERENCES: [Reference; 3] = [
    Reference {
        name: "mixed-stucco",
        label_of_interest: "stucco",
        counts: [[104, 3, 42], [3, 145, 1], [8, 5, 136]],
        auc: 0.95,
        seed: 11,
    },
    Reference {
        name: "mixed-siding",
        label_of_interest: "siding",
        counts: [[48, 7, 7], [3, 59, 0], [14, 18, 30]],
        auc: 0.91,
        seed: 12,
    },
    Reference {
        name: "baseline-siding",
        label_of_interest: "siding",
        counts: [[49, 1, 0], [0, 49, 1], [1, 0, 49]],
        auc: 0.999,
        seed: 13,
    },
];

pub fn macro_pairwise_auc(k: usize, truth: &[usize], scores: &[Vec<f64>]) -> f64 {
    (0..k)
        .map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            pairwise_auc(&s, &pos)
        })
        .sum::<f64>()
        / k as f64
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Scores for one sample: the true class gets a `separation` head start over
/// standard-normal logits, the winning logit is then moved onto `pred`, and
/// the softmax is rounded to 6 decimals (the winner absorbs the rounding
/// so rows still sum to 1). Redrawn until the rounded argmax
/// is unambiguous.
fn sample_scores(rng: &mut ChaCha8Rng, k: usize, truth: usize, pred: usize, separation: f64) -> Vec<f64> {
    loop {
        let mut logits: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        logits[truth] += separation;
        let rival = (0..k)
            .filter(|&c| c != pred)
            .map(|c| logits[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if logits[pred] <= rival {
            logits[pred] = rival + rng.random::<f64>();
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exp.iter().sum();
        let mut scores: Vec<f64> = exp.iter().map(|e| round6(e / sum)).collect();
        scores[pred] = round6(1.0 - (0..k).filter(|&c| c != pred).map(|c| scores[c]).sum::<f64>());
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if scores.iter().filter(|&&s| s == best).count() == 1 && scores[pred] == best {
            return scores;
        }
    }
}

fn draw(r: &Reference, separation: f64) -> (Vec<usize>, Vec<usize>, Vec<Vec<f64>>) {
    let rows: Vec<Vec<u64>> = r.counts.iter().map(|row| row.to_vec()).collect();
    let (truth, pred) = expand(&rows);
    let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
    let scores = truth
        .iter()
        .zip(&pred)
        .map(|(&t, &p)| sample_scores(&mut rng, 3, t, p, separation))
        .collect();
    (truth, pred, scores)
}

/// Builds the fixture, bisecting the class separation until the pairwise
/// macro AUC lands on the target.
pub fn build_reference(r: &Reference) -> (DatasetManifest, PredictionSet) {
    let (mut lo, mut hi) = (0.0, 12.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (truth, _, scores) = draw(r, mid);
        if macro_pairwise_auc(3, &truth, &scores) < r.auc {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (truth, pred, scores) = draw(r, hi);
    let schema = LabelSchema::reduced(r.label_of_interest).unwrap();
    let labels = schema.labels().to_vec();
    let mut manifest = DatasetManifest::new(schema.clone(), r.seed, r.name);
    let mut rows = Vec::new();
    let mut per_class = [0usize; 3];
    for ((t, p), s) in truth.iter().zip(&pred).zip(scores) {
        let id = format!("{}_{:03}", labels[*t], per_class[*t]);
        per_class[*t] += 1;
        let rec = manual(&format!("ref_{id}"), &labels[*t]);
        rows.push(PredictionRow {
            image_id: rec.id.clone(),
            scores: s,
            predicted_label: labels[*p].clone(),
        });
        manifest.test.push(rec);
    }
    (manifest, PredictionSet { schema, rows })
}

pub fn reference_paths(name: &str) -> (PathBuf, PathBuf) {
    let d = fixtures_dir();
    (d.join(format!("{name}.manifest.csv")), d.join(format!("{name}.predictions.csv")))
}

/// Reported aggregates a reference fixture must reproduce.
pub struct Target {
    pub name: &'static str,
    /// Weighted (F1, precision, recall).
    pub weighted: (f64, f64, f64),
    /// Row-normalized whole-percent cell for the label of interest.
    pub diagonal: Option<u32>,
    pub auc: f64,
}

pub const WEIGHTED_TOLERANCE: f64 = 0.005;
pub const AUC_TOLERANCE: f64 = 0.01;

pub const TARGETS: [Target; 3] = [
    Target {
        name: "mixed-stucco",
        weighted: (0.86, 0.87, 0.86),
        diagonal: Some(91),
        auc: 0.95,
    },
    Target {
        name: "mixed-siding",
        weighted: (0.72, 0.75, 0.74),
        diagonal: Some(48),
        auc: 0.91,
    },
    Target {
        name: "baseline-siding",
        weighted: (0.98, 0.98, 0.98),
        diagonal: None,
        auc: 1.00,
    },
];

/// Loads a committed fixture through the external-prediction ingest path
/// and returns one (check, passed) line per reported number.
pub fn check_reference(t: &Target) -> Vec<(String, bool)> {
    use cadastre_core::classifier::ingest_external_predictions;
    use cadastre_core::eval::{evaluate, RocMode};
    use cadastre_core::manifest::load_manifest;

    let (m, p) = reference_paths(t.name);
    let manifest = load_manifest(&m).unwrap();
    let preds = ingest_external_predictions(&p).unwrap().aligned_to(&manifest).unwrap();
    let doc = evaluate(t.name, &manifest.test, &preds, RocMode::Macro).unwrap().doc();
    let w = doc.weighted;
    let mut out = vec![];
    for (what, got, want) in [("f1", w.f1, t.weighted.0), ("precision", w.precision, t.weighted.1), ("recall", w.recall, t.weighted.2)] {
        out.push((
            format!("{} weighted {what} {got:.4} vs {want:.2}", t.name),
            (got - want).abs() <= WEIGHTED_TOLERANCE,
        ));
    }
    if let Some(d) = t.diagonal {
        let x = doc.labels.len() - 1;
        let got = doc.confusion.percent[x][x];
        out.push((format!("{} {} diagonal {got}% vs {d}%", t.name, doc.labels[x]), got == d));
    }
    let auc = doc.auc_summary.auc;
    out.push((
        format!("{} macro auc {auc:.4} vs {:.2}", t.name, t.auc),
        (auc - t.auc).abs() <= AUC_TOLERANCE,
    ));
    out
}

/// Confusion matrix over `counts`. Metric arithmetic only reads the counts,
/// so a 2-class matrix borrows the HRP schema for its label names.
pub fn matrix(counts: Vec<Vec<u64>>) -> cadastre_core::eval::ConfusionMatrix {
    let schema = match counts.len() {
        8 => LabelSchema::urc(),
        _ => LabelSchema::hrp(),
    };
    cadastre_core::eval::ConfusionMatrix { schema, counts }
}

/// Runs the library metrics against the brute-force oracle; returns the
/// largest absolute difference seen.
pub fn metrics_disagreement(counts: &[Vec<u64>]) -> f64 {
    let k = counts.len();
    let (t, p) = expand(counts);
    let want = brute_force_metrics(k, &t, &p);
    let got = cadastre_core::eval::class_metrics(&matrix(counts.to_vec()));
    let mut worst: f64 = 0.0;
    for (g, w) in got.per_class.iter().zip(&want.per_class) {
        assert_eq!(g.support, w.support);
        worst = worst
            .max((g.precision - w.precision).abs())
            .max((g.recall - w.recall).abs())
            .max((g.f1 - w.f1).abs());
    }
    worst
        .max((got.weighted.precision - want.weighted_precision).abs())
        .max((got.weighted.recall - want.weighted_recall).abs())
        .max((got.weighted.f1 - want.weighted_f1).abs())
}

/// Threshold-sweep AUC against the pairwise count on one random fixture;
/// returns the absolute difference.
pub fn auc_disagreement(rng: &mut impl Rng) -> f64 {
    let n = rng.random_range(2..=500);
    let rate = rng.random_range(0.05..0.95);
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(rate)).collect();
    positive[0] = true;
    positive[1] = false;
    // Coarse levels force plenty of ties.
    let levels = rng.random_range(2..=60);
    let scores: Vec<f64> = positive
        .iter()
        .map(|&pos| {
            let shift = if pos { rng.random_range(0..levels / 2 + 1) } else { 0 };
            ((rng.random_range(0..levels) + shift) as f64) / levels as f64
        })
        .collect();
    let curve = cadastre_core::eval::roc_from_scores("c", &scores, &positive).unwrap();
    (curve.auc - pairwise_auc(&scores, &positive)).abs()
}

// ---------------------------------------------------------------- assembler

use cadastre_core::assembler::{assemble, ExperimentKind, ExperimentPlan};

/// One randomized assembly: random kind, label of interest, seed, pool
/// sizes and targets. `Ok(false)` when the pools were too small and the
/// assembler refused; otherwise the first violated invariant, if any.
pub fn assembler_trial(rng: &mut impl Rng) -> Result<bool, String> {
    let kind = ExperimentKind::ALL[rng.random_range(0..4)];
    let loi = ["stucco", "siding"][rng.random_range(0..2)];
    let mut plan = match kind {
        ExperimentKind::Synthetic => ExperimentPlan::new(kind, None, rng.random()),
        _ => ExperimentPlan::new(kind, Some(loi), rng.random()),
    }
    .unwrap();
    plan.test_fraction = rng.random_range(0.05..0.5);
    plan.train_per_class = rng.random_range(1..40);
    plan.test_per_class = rng.random_range(1..15);
    plan.mixed_test_entire = rng.random_bool(0.2);
    let labels: Vec<String> = plan.schema.labels().to_vec();
    let sizes = |rng: &mut dyn rand::RngCore, lo: usize, hi: usize| -> Vec<usize> {
        labels.iter().map(|_| rng.random_range(lo..hi)).collect()
    };
    let man_sizes = sizes(rng, 2, 80);
    let syn_sizes = sizes(rng, 0, 120);
    let counts = |s: &[usize]| labels.iter().map(String::as_str).zip(s.iter().copied()).collect::<Vec<_>>();
    let mut manual = manual_pool(&counts(&man_sizes));
    let mut synthetic = synthetic_pool(&counts(&syn_sizes));
    let report = match assemble(&plan, &manual, &synthetic) {
        Ok(r) => r,
        Err(cadastre_core::Error::Insufficient(_)) => return Ok(false),
        Err(e) => return Err(format!("{plan}: {e}")),
    };
    let m = &report.manifest;

    let mut seen = std::collections::HashSet::new();
    for r in m.train.iter().chain(&m.test) {
        if !seen.insert(&r.id) {
            return Err(format!("{plan}: {} appears twice", r.id));
        }
    }
    let per = |split: &[ImageRecord], prov: Option<Provenance>| -> Vec<usize> {
        labels
            .iter()
            .map(|l| split.iter().filter(|r| &r.label == l && prov.is_none_or(|p| r.provenance == p)).count())
            .collect()
    };
    let all_equal = |v: &[usize], want: usize| v.iter().all(|&n| n == want);
    let test_prov = per(&m.test, Some(Provenance::Synthetic)).iter().sum::<usize>();
    match kind {
        ExperimentKind::Baseline => {
            if m.train.iter().chain(&m.test).any(|r| r.provenance != Provenance::Manual) {
                return Err(format!("{plan}: synthetic record in baseline"));
            }
        }
        ExperimentKind::Augmented => {
            let train = per(&m.train, None);
            let manual_train = per(&m.train, Some(Provenance::Manual));
            let target = *manual_train.iter().max().unwrap();
            if !all_equal(&train, target) {
                return Err(format!("{plan}: augmented train {train:?}, want {target} each"));
            }
            if test_prov > 0 {
                return Err(format!("{plan}: synthetic record in augmented test"));
            }
        }
        ExperimentKind::Mixed => {
            if per(&m.train, Some(Provenance::Manual)).iter().sum::<usize>() > 0 || test_prov > 0 {
                return Err(format!("{plan}: mixed provenance misplaced"));
            }
            if !all_equal(&per(&m.train, None), plan.train_per_class) {
                return Err(format!("{plan}: mixed train unbalanced"));
            }
            let test = per(&m.test, None);
            let ok = if plan.mixed_test_entire { test == man_sizes } else { all_equal(&test, plan.test_per_class) };
            if !ok {
                return Err(format!("{plan}: mixed test {test:?}"));
            }
        }
        ExperimentKind::Synthetic => {
            if m.train.iter().chain(&m.test).any(|r| r.provenance != Provenance::Synthetic) {
                return Err(format!("{plan}: manual record in synthetic experiment"));
            }
            if !all_equal(&per(&m.train, None), plan.train_per_class) || !all_equal(&per(&m.test, None), plan.test_per_class) {
                return Err(format!("{plan}: synthetic splits unbalanced"));
            }
        }
    }

    use rand::seq::SliceRandom;
    manual.shuffle(rng);
    synthetic.shuffle(rng);
    let again = assemble(&plan, &manual, &synthetic).map_err(|e| e.to_string())?;
    if again.manifest.to_bytes().unwrap() != m.to_bytes().unwrap() {
        return Err(format!("{plan}: result depends on pool order"));
    }
    Ok(true)
}

/// Augmented experiment over a manual pool with the given per-class counts
/// and an ample synthetic pool; returns the label of interest's synthetic
/// train fraction.
pub fn augmented_fraction(loi: &str, manual_counts: &[(&str, usize)]) -> f64 {
    let plan = ExperimentPlan::new(ExperimentKind::Augmented, Some(loi), 5).unwrap();
    let synthetic = synthetic_pool(&[("null", 200), ("other", 200), (loi, 200)]);
    let report = assemble(&plan, &manual_pool(manual_counts), &synthetic).unwrap();
    report.class(loi).unwrap().synthetic_fraction.unwrap()
}

/// Mixed or synthetic experiment with default targets over ample pools;
/// returns the (train, test) size of every class.
pub fn default_split_sizes(name: &str) -> Vec<(usize, usize)> {
    let plan = ExperimentPlan::from_name(name, 3).unwrap();
    let labels: Vec<&str> = plan.schema.labels().iter().map(String::as_str).collect();
    let big: Vec<(&str, usize)> = labels.iter().map(|l| (*l, 800)).collect();
    let report = assemble(&plan, &manual_pool(&big), &synthetic_pool(&big)).unwrap();
    report.per_class.iter().map(|c| (c.train.manual_count + c.train.synthetic_count, c.test.manual_count + c.test.synthetic_count)).collect()
}

// ---------------------------------------------------------------- calibration

/// Plans `n` stub requests spread evenly over the URC labels, reviews each
/// by whether the stub drew the requested motif, and returns the triage
/// service's (overall, per-label) irrelevance rates.
pub fn calibration_rates(n: usize, seed: u64) -> (f64, BTreeMap<String, f64>) {
    use cadastre_core::synth::stub::{IrrelevanceRates, StubBackend};
    use cadastre_core::synth::SynthGenerator;

    let labels: Vec<String> = LabelSchema::urc().labels().to_vec();
    let mut pool = PromptPool::empty(seed);
    for l in &labels {
        let k = KeywordSet {
            material: l.clone(),
            synonyms: vec![],
            period: None,
            cities: vec!["Zurich".into(), "Geneva".into()],
        };
        pool.merge(generate_prompts(&k, 2, seed).unwrap()).unwrap();
    }
    let requests = SynthGenerator::plan_batch(&mut pool, &labels, n / labels.len(), seed).unwrap();
    let backend = StubBackend::new(&IrrelevanceRates::default(), &labels);
    let records: Vec<ImageRecord> = requests
        .iter()
        .enumerate()
        .map(|(i, req)| {
            let mut r = synthetic(&format!("{i:05}"), &req.target_label, ReviewStatus::Pending);
            r.prompt_id = Some(req.prompt_id.clone());
            r
        })
        .collect();
    let mut state = TriageState::new(records.clone(), pool).unwrap();
    for (r, req) in records.iter().zip(&requests) {
        let v = if backend.is_relevant(req) { Verdict::Accepted } else { Verdict::Rejected };
        state.submit_review(&ReviewDecision::now(&r.id, v, "sim")).unwrap();
    }
    let stats = state.stats();
    let per_label = stats
        .per_label
        .iter()
        .map(|(l, s)| (l.clone(), s.irrelevance_rate.unwrap()))
        .collect();
    (stats.overall.irrelevance_rate.unwrap(), per_label)
}

// ---------------------------------------------------------------- triage

use cadastre_core::prompt::{generate_prompts, KeywordSet, PromptPool, Verdict};
use cadastre_core::synth::store::PROMPTS_FILE;
use cadastre_core::synth::ImageStore;
use cadastre_core::triage::{read_decision_log, ReviewDecision, TriageService, TriageState, TriageStats};

const TRIAGE_LABELS: [&str; 3] = ["stucco", "siding", "wood"];
pub const POOL_SEED: u64 = 4;

pub fn build_store(root: &std::path::Path) -> Vec<String> {
    let mut pool = PromptPool::empty(POOL_SEED);
    for m in TRIAGE_LABELS {
        let k = KeywordSet {
            material: m.into(),
            synonyms: vec![],
            period: None,
            cities: vec!["Zurich".into(), "Basel".into(), "Bern".into()],
        };
        pool.merge(generate_prompts(&k, 3, 1).unwrap()).unwrap();
    }
    let mut records: Vec<ImageRecord> = (0..20).map(|i| manual(&format!("m{i}"), TRIAGE_LABELS[i % 3])).collect();
    for (i, p) in pool.prompts().iter().cycle().take(900).enumerate() {
        let mut r = synthetic(&format!("{}_{i:04}", p.material), &p.material, ReviewStatus::Pending);
        r.prompt_id = Some(p.id.clone());
        records.push(r);
    }
    ImageStore::open(root).unwrap().append(records.clone()).unwrap();
    pool.save_sidecar(root.join(PROMPTS_FILE)).unwrap();
    records.into_iter().map(|r| r.id).collect()
}

pub fn assert_conserved(s: &TriageStats) {
    for (label, row) in s.per_label.iter().chain([(&"overall".to_string(), &s.overall)]) {
        assert_eq!(row.generated, row.accepted + row.rejected + row.pending, "{label}: {row:?}");
    }
}

fn random_verdict(rng: &mut impl Rng) -> Verdict {
    if rng.random_bool(0.7) {
        Verdict::Accepted
    } else {
        Verdict::Rejected
    }
}

/// Runs `ops` random reviews, queue pulls and stats reads from `threads`
/// threads against a store-backed service, then checks conservation, a
/// sequential replay of the decision log and a restart.
pub fn triage_conservation_trial(ops: usize, threads: u64) {
    let dir = tempfile::tempdir().unwrap();
    let mut ids = build_store(dir.path());
    ids.push("syn_missing".into());
    let service = TriageService::open(dir.path(), POOL_SEED).unwrap();

    std::thread::scope(|s| {
        for t in 0..threads {
            let (service, ids) = (&service, &ids);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + t);
                let reviewer = format!("r{t}");
                for _ in 0..ops / threads as usize {
                    match rng.random_range(0..10) {
                        0..=4 => {
                            let id = &ids[rng.random_range(0..ids.len())];
                            let _ = service.submit_review(&ReviewDecision::now(id, random_verdict(&mut rng), &reviewer));
                        }
                        5..=6 => {
                            let label = [None, Some("stucco"), Some("siding"), Some("wood")][rng.random_range(0..4)];
                            if let Some(r) = service.next_pending(label) {
                                assert_eq!(r.review_status, ReviewStatus::Pending);
                                let d = ReviewDecision::now(&r.id, random_verdict(&mut rng), &reviewer);
                                let _ = service.submit_review(&d);
                            }
                        }
                        _ => assert_conserved(&service.stats()),
                    }
                }
            });
        }
    });

    let stats = service.stats();
    assert_conserved(&stats);
    assert_eq!(stats.overall.generated, 900);
    assert!(stats.overall.accepted > 0 && stats.overall.rejected > 0);

    let state = service.into_state();
    let log = read_decision_log(dir.path().join("decisions.log")).unwrap();
    assert_eq!(log.len() as u64, stats.overall.accepted + stats.overall.rejected);

    // Sequential oracle over the log.
    let prompt_of: BTreeMap<&str, &str> = state
        .records()
        .iter()
        .filter_map(|r| r.prompt_id.as_deref().map(|p| (r.id.as_str(), p)))
        .collect();
    let mut want: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for p in prompt_of.values() {
        want.entry(p.to_string()).or_default().0 += 1;
    }
    for d in &log {
        let e = want.get_mut(prompt_of[d.image_id.as_str()]).unwrap();
        match d.verdict {
            Verdict::Accepted => e.1 += 1,
            Verdict::Rejected => e.2 += 1,
        }
    }
    for p in &stats.prompts {
        assert_eq!(want[&p.id], (p.generated, p.accepted, p.rejected), "{}", p.id);
    }

    let store = ImageStore::open(dir.path()).unwrap();
    let pool = PromptPool::load_sidecar(dir.path().join(PROMPTS_FILE), POOL_SEED).unwrap();
    let replayed = TriageState::replay(store.records().to_vec(), pool, &log).unwrap().stats();
    assert_eq!(replayed.per_label, stats.per_label);
    assert_eq!(replayed.overall, stats.overall);
    assert_eq!(replayed.prompts, stats.prompts);

    drop(state);
    let reopened = TriageService::open(dir.path(), POOL_SEED).unwrap().stats();
    assert_eq!(reopened.per_label, stats.per_label);
    assert_eq!(reopened.prompts, stats.prompts);
}
