//! Builds the baseline, augmented, mixed and synthetic experiment datasets.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{save_manifest, DatasetManifest, Split};
use crate::record::{ImageRecord, Provenance, ReviewStatus};
use crate::schema::{LabelSchema, LABELS_OF_INTEREST, URC_LABELS};
use crate::seed;

pub const REPORT_FILE: &str = "assembly_report.json";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Baseline,
    Augmented,
    Mixed,
    Synthetic,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::Baseline,
        ExperimentKind::Augmented,
        ExperimentKind::Mixed,
        ExperimentKind::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Baseline => "baseline",
            ExperimentKind::Augmented => "augmented",
            ExperimentKind::Mixed => "mixed",
            ExperimentKind::Synthetic => "synthetic",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown experiment kind {s:?}")))
    }
}

/// Per-class train/test sizes that the mixed and synthetic experiments use.
pub fn default_targets(label_of_interest: Option<&str>) -> (usize, usize) {
    match label_of_interest {
        Some("siding") => (248, 62),
        _ => (596, 149),
    }
}

/// Names of the six reduced experiments plus `synthetic`.
pub fn primary_experiment_names() -> Vec<String> {
    let mut names = Vec::new();
    for kind in &ExperimentKind::ALL[..3] {
        for x in LABELS_OF_INTEREST {
            names.push(format!("{}-{x}", kind.as_str()));
        }
    }
    names.push("synthetic".to_string());
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub label_of_interest: Option<String>,
    #[serde(with = "schema_str")]
    pub schema: LabelSchema,
    pub seed: u64,
    pub test_fraction: f64,
    /// Per-class train size for mixed and synthetic.
    pub train_per_class: usize,
    /// Per-class test size for mixed and synthetic.
    pub test_per_class: usize,
    /// Mixed only: test on every manual image instead of equal per-class counts.
    pub mixed_test_entire: bool,
}

mod schema_str {
    use super::LabelSchema;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: &LabelSchema, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<LabelSchema, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl ExperimentPlan {
    pub fn new(kind: ExperimentKind, label_of_interest: Option<&str>, seed: u64) -> Result<Self> {
        let schema = match (kind, label_of_interest) {
            (ExperimentKind::Synthetic, None) => LabelSchema::hrp(),
            (ExperimentKind::Synthetic, Some(_)) => {
                return Err(Error::Invalid("the synthetic experiment has no label of interest".into()))
            }
            (_, Some(x)) => LabelSchema::reduced(x)?,
            (_, None) => {
                return Err(Error::Invalid(format!("{} needs a label of interest", kind.as_str())))
            }
        };
        let (train_per_class, test_per_class) = default_targets(label_of_interest);
        Ok(ExperimentPlan {
            kind,
            label_of_interest: label_of_interest.map(str::to_string),
            schema,
            seed,
            test_fraction: DEFAULT_TEST_FRACTION,
            train_per_class,
            test_per_class,
            mixed_test_entire: false,
        })
    }

    /// Parses `<kind>-<label>` or `synthetic`.
    pub fn from_name(name: &str, seed: u64) -> Result<Self> {
        match name.split_once('-') {
            Some((kind, x)) => ExperimentPlan::new(kind.parse()?, Some(x), seed),
            None => ExperimentPlan::new(name.parse()?, None, seed),
        }
    }

    pub fn name(&self) -> String {
        match &self.label_of_interest {
            Some(x) => format!("{}-{x}", self.kind.as_str()),
            None => self.kind.as_str().to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = ExperimentPlan::new(self.kind, self.label_of_interest.as_deref(), self.seed)?;
        if expected.schema != self.schema {
            return Err(Error::Invalid(format!(
                "{} must use schema {}, not {}",
                self.name(),
                expected.schema,
                self.schema
            )));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Invalid(format!("test_fraction {} not in (0, 1)", self.test_fraction)));
        }
        if matches!(self.kind, ExperimentKind::Mixed | ExperimentKind::Synthetic)
            && (self.train_per_class == 0 || self.test_per_class == 0)
        {
            return Err(Error::Invalid("per-class targets must be positive".into()));
        }
        Ok(())
    }

    fn expect_kind(&self, kind: ExperimentKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::Invalid(format!("plan {} is not a {} plan", self.name(), kind.as_str())));
        }
        Ok(())
    }
}

impl fmt::Display for ExperimentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Maps URC labels onto `{null, other, X}`; everything except `null` and
/// `X` becomes `other`.
pub fn reduce_labels(records: &[ImageRecord], label_of_interest: &str) -> Result<Vec<ImageRecord>> {
    let schema = LabelSchema::reduced(label_of_interest)?;
    let urc = LabelSchema::urc();
    records
        .iter()
        .map(|r| {
            urc.require(&r.label)?;
            let mut out = r.clone();
            if r.label != "null" && r.label != label_of_interest {
                out.label = "other".to_string();
            }
            debug_assert!(schema.contains(&out.label));
            Ok(out)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceCounts {
    pub manual_count: usize,
    pub synthetic_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub label: String,
    pub train: ProvenanceCounts,
    pub test: ProvenanceCounts,
    /// Synthetic share of this class's train split; `None` when it is empty.
    pub synthetic_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolDigest {
    pub role: String,
    pub count: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyReport {
    pub manifest: DatasetManifest,
    pub plan: ExperimentPlan,
    pub per_class: Vec<ClassBreakdown>,
    /// Synthetic share of the whole train split.
    pub synthetic_fraction: Option<f64>,
    pub pools: Vec<PoolDigest>,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    experiment: String,
    schema: String,
    seed: u64,
    plan: &'a ExperimentPlan,
    train_size: usize,
    test_size: usize,
    per_class: &'a [ClassBreakdown],
    synthetic_fraction: Option<f64>,
    pools: &'a [PoolDigest],
}

fn fraction(synthetic: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| synthetic as f64 / total as f64)
}

/// Recomputes per-class provenance counts and fractions from a manifest.
pub fn breakdown(manifest: &DatasetManifest) -> (Vec<ClassBreakdown>, Option<f64>) {
    let count = |split: Split, label: &str| {
        let mut c = ProvenanceCounts::default();
        for r in manifest.split(split).iter().filter(|r| r.label == label) {
            match r.provenance {
                Provenance::Manual => c.manual_count += 1,
                Provenance::Synthetic => c.synthetic_count += 1,
            }
        }
        c
    };
    let per_class: Vec<ClassBreakdown> = manifest
        .schema
        .labels()
        .iter()
        .map(|l| {
            let train = count(Split::Train, l);
            ClassBreakdown {
                label: l.clone(),
                synthetic_fraction: fraction(train.synthetic_count, train.manual_count + train.synthetic_count),
                train,
                test: count(Split::Test, l),
            }
        })
        .collect();
    let syn: usize = per_class.iter().map(|c| c.train.synthetic_count).sum();
    (per_class, fraction(syn, manifest.train.len()))
}

/// Order-independent digest over a pool's ids, labels and statuses.
pub fn pool_digest(role: &str, pool: &[ImageRecord]) -> PoolDigest {
    let mut keys: Vec<String> = pool
        .iter()
        .map(|r| format!("{}:{}:{}", r.id, r.label, r.review_status))
        .collect();
    keys.sort();
    PoolDigest {
        role: role.to_string(),
        count: pool.len(),
        sha256: seed::digest_hex(keys.iter().map(|k| k.as_bytes())),
    }
}

impl AssemblyReport {
    fn new(manifest: DatasetManifest, plan: &ExperimentPlan, pools: Vec<PoolDigest>) -> Result<Self> {
        manifest.validate()?;
        let (per_class, synthetic_fraction) = breakdown(&manifest);
        Ok(AssemblyReport {
            manifest,
            plan: plan.clone(),
            per_class,
            synthetic_fraction,
            pools,
        })
    }

    pub fn class(&self, label: &str) -> Option<&ClassBreakdown> {
        self.per_class.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let doc = ReportDoc {
            experiment: self.plan.name(),
            schema: self.manifest.schema.to_string(),
            seed: self.manifest.seed,
            plan: &self.plan,
            train_size: self.manifest.train.len(),
            test_size: self.manifest.test.len(),
            per_class: &self.per_class,
            synthetic_fraction: self.synthetic_fraction,
            pools: &self.pools,
        };
        let mut v = serde_json::to_vec_pretty(&doc).map_err(|e| Error::parse("assembly report", e))?;
        v.push(b'\n');
        Ok(v)
    }

    /// Writes `manifest.csv` and `assembly_report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let m = dir.join(MANIFEST_FILE);
        save_manifest(&self.manifest, &m)?;
        let r = dir.join(REPORT_FILE);
        fs::write(&r, self.to_json()?).map_err(|e| Error::io(&r, e))?;
        Ok((m, r))
    }
}

/// Records of each schema class, sorted by id and then shuffled with a
/// stream derived from (seed, stream, label), so results do not depend on
/// pool order.
fn by_class(pool: &[ImageRecord], schema: &LabelSchema, seed: u64, stream: &str) -> Result<Vec<Vec<ImageRecord>>> {
    let mut classes = vec![Vec::new(); schema.len()];
    for r in pool {
        classes[schema.require(&r.label)?].push(r.clone());
    }
    for (c, recs) in classes.iter_mut().enumerate() {
        recs.sort_by(|a, b| a.id.cmp(&b.id));
        recs.dedup_by(|a, b| a.id == b.id);
        recs.shuffle(&mut seed::rng(seed, &format!("{stream}:{}", schema.labels()[c])));
    }
    Ok(classes)
}

fn check_pool(pool: &[ImageRecord], provenance: Provenance, what: &str) -> Result<()> {
    for r in pool {
        if r.provenance != provenance {
            return Err(Error::Validation {
                record: r.id.clone(),
                message: format!("{} record in the {what} pool", r.provenance),
            });
        }
        if r.review_status != ReviewStatus::Accepted {
            return Err(Error::Validation {
                record: r.id.clone(),
                message: format!("{what} pool holds a {} record", r.review_status),
            });
        }
    }
    Ok(())
}

fn manual_split(manual: &[ImageRecord], plan: &ExperimentPlan) -> Result<(Vec<Vec<ImageRecord>>, Vec<ImageRecord>)> {
    check_pool(manual, Provenance::Manual, "manual")?;
    let classes = by_class(manual, &plan.schema, plan.seed, "split")?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut recs) in classes.into_iter().enumerate() {
        if recs.is_empty() {
            return Err(Error::EmptyClass {
                label: plan.schema.labels()[c].clone(),
            });
        }
        let n_test = (recs.len() as f64 * plan.test_fraction).round() as usize;
        let rest = recs.split_off(n_test);
        test.extend(recs);
        train.push(rest);
    }
    Ok((train, test))
}

fn shortfall(plan: &ExperimentPlan, what: &str, need: &[(usize, usize)]) -> Result<()> {
    let short: Vec<String> = need
        .iter()
        .enumerate()
        .filter(|(_, (want, have))| have < want)
        .map(|(c, (want, have))| format!("{}: need {want}, have {have} (short {})", plan.schema.labels()[c], want - have))
        .collect();
    if short.is_empty() {
        Ok(())
    } else {
        Err(Error::Insufficient(format!("{} {what}: {}", plan.name(), short.join("; "))))
    }
}

pub fn assemble_baseline(manual: &[ImageRecord], plan: &ExperimentPlan) -> Result<AssemblyReport> {
    plan.expect_kind(ExperimentKind::Baseline)?;
    let (train, test) = manual_split(manual, plan)?;
    let mut m = DatasetManifest::new(plan.schema.clone(), plan.seed, plan.name());
    m.train = train.into_iter().flatten().collect();
    m.test = test;
    AssemblyReport::new(m, plan, vec![pool_digest("manual", manual)])
}

/// Manual split as in the baseline, then every train class topped up with
/// synthetic images to the largest manual train class.
pub fn assemble_augmented(manual: &[ImageRecord], synthetic: &[ImageRecord], plan: &ExperimentPlan) -> Result<AssemblyReport> {
    plan.expect_kind(ExperimentKind::Augmented)?;
    check_pool(synthetic, Provenance::Synthetic, "synthetic")?;
    let (train, test) = manual_split(manual, plan)?;
    let target = train.iter().map(Vec::len).max().unwrap_or(0);
    let syn = by_class(synthetic, &plan.schema, plan.seed, "augment")?;
    let need: Vec<(usize, usize)> = train.iter().zip(&syn).map(|(t, s)| (target - t.len(), s.len())).collect();
    shortfall(plan, "synthetic images", &need)?;
    let mut m = DatasetManifest::new(plan.schema.clone(), plan.seed, plan.name());
    for ((manual_train, pool), (want, _)) in train.into_iter().zip(syn).zip(need) {
        m.train.extend(manual_train);
        m.train.extend(pool.into_iter().take(want));
    }
    m.test = test;
    AssemblyReport::new(m, plan, vec![pool_digest("manual", manual), pool_digest("synthetic", synthetic)])
}

/// Synthetic-only train, manual-only test, with equal per-class counts
/// unless the plan asks for the entire manual pool as test.
pub fn assemble_mixed(manual: &[ImageRecord], synthetic: &[ImageRecord], plan: &ExperimentPlan) -> Result<AssemblyReport> {
    plan.expect_kind(ExperimentKind::Mixed)?;
    check_pool(manual, Provenance::Manual, "manual")?;
    check_pool(synthetic, Provenance::Synthetic, "synthetic")?;
    let syn = by_class(synthetic, &plan.schema, plan.seed, "mixed-train")?;
    let man = by_class(manual, &plan.schema, plan.seed, "mixed-test")?;
    let syn_need: Vec<(usize, usize)> = syn.iter().map(|s| (plan.train_per_class, s.len())).collect();
    shortfall(plan, "synthetic train images", &syn_need)?;
    if !plan.mixed_test_entire {
        let man_need: Vec<(usize, usize)> = man.iter().map(|s| (plan.test_per_class, s.len())).collect();
        shortfall(plan, "manual test images", &man_need)?;
    } else if let Some(c) = man.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass {
            label: plan.schema.labels()[c].clone(),
        });
    }
    let mut m = DatasetManifest::new(plan.schema.clone(), plan.seed, plan.name());
    for s in syn {
        m.train.extend(s.into_iter().take(plan.train_per_class));
    }
    for t in man {
        let n = if plan.mixed_test_entire { t.len() } else { plan.test_per_class };
        m.test.extend(t.into_iter().take(n));
    }
    AssemblyReport::new(m, plan, vec![pool_digest("manual", manual), pool_digest("synthetic", synthetic)])
}

/// Synthetic train and test, drawn disjointly from one pool per class.
pub fn assemble_synthetic(synthetic: &[ImageRecord], plan: &ExperimentPlan) -> Result<AssemblyReport> {
    plan.expect_kind(ExperimentKind::Synthetic)?;
    check_pool(synthetic, Provenance::Synthetic, "synthetic")?;
    let syn = by_class(synthetic, &plan.schema, plan.seed, "synthetic")?;
    let per_class = plan.train_per_class + plan.test_per_class;
    let need: Vec<(usize, usize)> = syn.iter().map(|s| (per_class, s.len())).collect();
    shortfall(plan, "synthetic images", &need)?;
    let mut m = DatasetManifest::new(plan.schema.clone(), plan.seed, plan.name());
    for s in syn {
        let mut it = s.into_iter();
        m.train.extend(it.by_ref().take(plan.train_per_class));
        m.test.extend(it.take(plan.test_per_class));
    }
    AssemblyReport::new(m, plan, vec![pool_digest("synthetic", synthetic)])
}

/// Dispatches on the plan kind. Pools are expected to match the plan's
/// schema already (URC pools reduced, HRP pool for `synthetic`).
pub fn assemble(plan: &ExperimentPlan, manual: &[ImageRecord], synthetic: &[ImageRecord]) -> Result<AssemblyReport> {
    match plan.kind {
        ExperimentKind::Baseline => assemble_baseline(manual, plan),
        ExperimentKind::Augmented => assemble_augmented(manual, synthetic, plan),
        ExperimentKind::Mixed => assemble_mixed(manual, synthetic, plan),
        ExperimentKind::Synthetic => assemble_synthetic(synthetic, plan),
    }
}

/// Per-label record counts, keyed by label.
pub fn label_histogram(records: &[ImageRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.label.clone()).or_insert(0) += 1;
    }
    out
}

/// True when every label is in the URC schema.
pub fn is_urc_pool(records: &[ImageRecord]) -> bool {
    records.iter().all(|r| URC_LABELS.contains(&r.label.as_str()))
}
