//! One TOML file describing a whole study: store, backend, keywords,
//! corpus sizes, experiments and classifier settings.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::assembler::{primary_experiment_names, ExperimentPlan};
use crate::classifier::{ClassifierBackend, TrainConfig, WorkerConfig};
use crate::error::{Error, Result};
use crate::eval::RocMode;
use crate::prompt::KeywordSet;
use crate::schema::{HRP_LABELS, URC_LABELS};
use crate::synth::stub::IrrelevanceRates;
use crate::synth::{BackendDescriptor, BackendKind, RetryPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Environment variable holding the API token.
    pub credential: Option<String>,
    pub max_in_flight: usize,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        let d = BackendDescriptor::stub();
        BackendSection {
            kind: d.kind,
            endpoint: None,
            credential: None,
            max_in_flight: d.max_in_flight,
            max_attempts: d.retry.max_attempts,
            initial_backoff_ms: d.retry.initial_backoff.as_millis() as u64,
        }
    }
}

impl BackendSection {
    pub fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: self.kind,
            endpoint: self.endpoint.clone(),
            credential: self.credential.clone(),
            max_in_flight: self.max_in_flight,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                initial_backoff: Duration::from_millis(self.initial_backoff_ms),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordEntry {
    #[serde(default)]
    pub synonyms: Vec<String>,
    #[serde(default)]
    pub period: Option<String>,
    pub cities: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    /// Prompts expanded per label when a label has none yet.
    pub per_label: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        PromptSection { per_label: 40 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PlanOverride {
    pub test_fraction: Option<f64>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub mixed_test_entire: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub backend: ClassifierBackend,
    pub input_resolution: u32,
    pub color_bins: usize,
    pub edge_bins: usize,
    pub temperature: f64,
    pub epochs: u32,
    pub roc_mode: RocMode,
    /// Worker program and arguments for the external backend.
    pub worker_command: Vec<String>,
    pub worker_timeout_secs: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ClassifierSection {
            backend: t.backend,
            input_resolution: t.input_resolution,
            color_bins: t.color_bins,
            edge_bins: t.edge_bins,
            temperature: t.temperature,
            epochs: t.epochs,
            roc_mode: RocMode::Macro,
            worker_command: Vec::new(),
            worker_timeout_secs: WorkerConfig::default().timeout_secs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriageSection {
    pub bind: String,
    /// Shared secret for mutating requests; `token_env` takes precedence.
    pub token: Option<String>,
    pub token_env: Option<String>,
    /// Directory of review UI assets served at `/`.
    pub static_dir: Option<PathBuf>,
    pub reviewer: String,
}

impl Default for TriageSection {
    fn default() -> Self {
        TriageSection {
            bind: "127.0.0.1:8737".into(),
            token: None,
            token_env: None,
            static_dir: None,
            reviewer: "curator".into(),
        }
    }
}

impl TriageSection {
    pub fn resolve_token(&self) -> Result<String> {
        if let Some(var) = &self.token_env {
            return std::env::var(var).map_err(|_| Error::Config(format!("environment variable {var} is not set")));
        }
        self.token
            .clone()
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::Config("triage.token or triage.token_env must be set".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Image store root (catalog, prompt sidecar, decision log, images).
    pub store: PathBuf,
    /// Report output root.
    pub out: PathBuf,
    #[serde(default)]
    pub backend: BackendSection,
    /// Stub backend irrelevance rates.
    #[serde(default)]
    pub stub: IrrelevanceRates,
    /// Stub manual corpus size per URC label.
    #[serde(default)]
    pub manual: BTreeMap<String, usize>,
    pub keywords: BTreeMap<String, KeywordEntry>,
    #[serde(default)]
    pub prompts: PromptSection,
    /// Default images per label for `generate` without `--label`.
    #[serde(default)]
    pub generation: BTreeMap<String, usize>,
    #[serde(default = "primary_experiment_names")]
    pub experiments: Vec<String>,
    #[serde(default)]
    pub plans: BTreeMap<String, PlanOverride>,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub triage: TriageSection,
    /// Experiments run concurrently by `run`; 1 means sequential.
    #[serde(default = "one")]
    pub parallel_experiments: usize,
}

fn one() -> usize {
    1
}

fn known_label(l: &str) -> bool {
    URC_LABELS.contains(&l) || HRP_LABELS.contains(&l)
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a config; relative paths resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.out);
        if let Some(d) = self.triage.static_dir.as_mut() {
            fix(d);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backend.descriptor().validate()?;
        for (label, entry) in &self.keywords {
            if !known_label(label) {
                return Err(Error::Config(format!("keywords for unknown label {label:?}")));
            }
            self.keyword_set_of(label, entry).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        for label in self.manual.keys() {
            if !URC_LABELS.contains(&label.as_str()) {
                return Err(Error::Config(format!("manual corpus label {label:?} is not a URC label")));
            }
        }
        for label in self.generation.keys() {
            if !self.keywords.contains_key(label) {
                return Err(Error::Config(format!("generation label {label:?} has no keyword set")));
            }
        }
        for (label, rate) in self.stub.per_label.iter().map(|(l, r)| (l.as_str(), *r)).chain([("overall", self.stub.overall)]) {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("irrelevance rate for {label} outside [0, 1]")));
            }
        }
        for name in self.experiments.iter().chain(self.plans.keys()) {
            let plan = ExperimentPlan::from_name(name, self.seed).map_err(|e| Error::Config(format!("experiment {name}: {e}")))?;
            let needed: Vec<String> = match &plan.label_of_interest {
                Some(x) => vec![x.clone()],
                None => plan.schema.labels().to_vec(),
            };
            for l in needed {
                if !self.keywords.contains_key(&l) {
                    return Err(Error::Config(format!("experiment {name} needs a keyword set for {l}")));
                }
            }
        }
        if self.parallel_experiments == 0 {
            return Err(Error::Config("parallel_experiments must be at least 1".into()));
        }
        self.train_config().validate()?;
        for name in &self.experiments {
            self.plan(name)?.validate().map_err(|e| Error::Config(format!("experiment {name}: {e}")))?;
        }
        Ok(())
    }

    fn keyword_set_of(&self, label: &str, entry: &KeywordEntry) -> KeywordSet {
        KeywordSet {
            material: label.to_string(),
            synonyms: entry.synonyms.clone(),
            period: entry.period.clone(),
            cities: entry.cities.clone(),
        }
    }

    pub fn keyword_set(&self, label: &str) -> Option<KeywordSet> {
        self.keywords.get(label).map(|e| self.keyword_set_of(label, e))
    }

    /// Labels with keyword sets, in schema order (URC, then HRP).
    pub fn labels(&self) -> Vec<String> {
        URC_LABELS
            .iter()
            .chain(HRP_LABELS.iter())
            .filter(|l| self.keywords.contains_key(**l))
            .map(|l| l.to_string())
            .collect()
    }

    pub fn plan(&self, name: &str) -> Result<ExperimentPlan> {
        let mut plan = ExperimentPlan::from_name(name, crate::seed::derive(self.seed, &format!("plan:{name}")))?;
        if let Some(o) = self.plans.get(name) {
            if let Some(v) = o.test_fraction {
                plan.test_fraction = v;
            }
            if let Some(v) = o.train_per_class {
                plan.train_per_class = v;
            }
            if let Some(v) = o.test_per_class {
                plan.test_per_class = v;
            }
            if let Some(v) = o.mixed_test_entire {
                plan.mixed_test_entire = v;
            }
        }
        Ok(plan)
    }

    pub fn train_config(&self) -> TrainConfig {
        let c = &self.classifier;
        TrainConfig {
            backend: c.backend,
            input_resolution: c.input_resolution,
            color_bins: c.color_bins,
            edge_bins: c.edge_bins,
            temperature: c.temperature,
            epochs: c.epochs,
            seed: crate::seed::derive(self.seed, "classifier"),
            worker: (!c.worker_command.is_empty()).then(|| WorkerConfig {
                command: c.worker_command.clone(),
                timeout_secs: c.worker_timeout_secs,
                work_dir: self.out.join("worker"),
            }),
        }
    }
}
