//! Human review of generated images: a single-writer state machine over the
//! image catalog, persisted as an append-only JSON-lines decision log.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{PromptPool, PromptRecord, Verdict};
use crate::record::{ImageRecord, Provenance, ReviewStatus};
use crate::synth::store::{ImageStore, DECISIONS_FILE, PROMPTS_FILE};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub image_id: String,
    pub verdict: Verdict,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl ReviewDecision {
    pub fn now(image_id: impl Into<String>, verdict: Verdict, reviewer: impl Into<String>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        ReviewDecision {
            image_id: image_id.into(),
            verdict,
            reviewer: reviewer.into(),
            timestamp,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub pending: u64,
    /// `rejected / (accepted + rejected)`; absent before any decision.
    pub irrelevance_rate: Option<f64>,
}

impl LabelStats {
    fn finish(&mut self) {
        let decided = self.accepted + self.rejected;
        self.irrelevance_rate = (decided > 0).then(|| self.rejected as f64 / decided as f64);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub id: String,
    pub material: String,
    pub text: String,
    pub generated: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub batting_average: Option<f64>,
    pub promoted: bool,
}

impl From<&PromptRecord> for PromptStats {
    fn from(p: &PromptRecord) -> Self {
        PromptStats {
            id: p.id.clone(),
            material: p.material.clone(),
            text: p.text.clone(),
            generated: p.generated_count,
            accepted: p.accepted_count,
            rejected: p.rejected_count(),
            batting_average: p.batting_average(),
            promoted: p.promoted,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageStats {
    /// State version the snapshot was taken from.
    pub version: u64,
    pub per_label: BTreeMap<String, LabelStats>,
    pub overall: LabelStats,
    pub prompts: Vec<PromptStats>,
}

#[derive(Debug)]
struct DecisionLog {
    path: PathBuf,
    file: File,
}

impl DecisionLog {
    fn open(path: PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(DecisionLog { path, file })
    }

    fn append(&mut self, d: &ReviewDecision) -> Result<()> {
        let mut line = serde_json::to_string(d).map_err(|e| Error::parse("decision", e))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_decision_log(path: impl AsRef<Path>) -> Result<Vec<ReviewDecision>> {
    let path = path.as_ref();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))?;
        out.push(d);
    }
    Ok(out)
}

#[derive(Debug)]
pub struct TriageState {
    records: Vec<ImageRecord>,
    index: HashMap<String, usize>,
    pool: PromptPool,
    log: Option<DecisionLog>,
    version: u64,
}

impl TriageState {
    /// Builds state from catalog records; prompt counters are recomputed from
    /// the records, and already-decided records count as outcomes.
    pub fn new(records: Vec<ImageRecord>, mut pool: PromptPool) -> Result<Self> {
        pool.reset_counters();
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(Error::Validation {
                    record: r.id.clone(),
                    message: "duplicate id".into(),
                });
            }
            if let (Provenance::Synthetic, Some(prompt)) = (r.provenance, &r.prompt_id) {
                pool.record_generation(prompt)?;
            }
        }
        for r in records.iter().filter(|r| r.is_synthetic()) {
            let prompt = r.prompt_id.as_deref().unwrap_or_default();
            match r.review_status {
                ReviewStatus::Accepted => pool.record_outcome(prompt, Verdict::Accepted)?,
                ReviewStatus::Rejected => pool.record_outcome(prompt, Verdict::Rejected)?,
                ReviewStatus::Pending => {}
            }
        }
        Ok(TriageState {
            records,
            index,
            pool,
            log: None,
            version: 0,
        })
    }

    /// Rebuilds state by applying `decisions` in order (no log attached).
    pub fn replay(records: Vec<ImageRecord>, pool: PromptPool, decisions: &[ReviewDecision]) -> Result<Self> {
        let mut state = Self::new(records, pool)?;
        for d in decisions {
            state.submit_review(d)?;
        }
        Ok(state)
    }

    /// Opens the store's catalog, prompt sidecar and decision log, replays
    /// the log and keeps appending to it.
    pub fn open(store_root: impl AsRef<Path>, pool_seed: u64) -> Result<Self> {
        let root = store_root.as_ref();
        let store = ImageStore::open(root)?;
        let sidecar = root.join(PROMPTS_FILE);
        let pool = if sidecar.exists() {
            PromptPool::load_sidecar(&sidecar, pool_seed)?
        } else {
            PromptPool::empty(pool_seed)
        };
        let log_path = root.join(DECISIONS_FILE);
        let decisions = read_decision_log(&log_path)?;
        let mut state = Self::replay(store.records().to_vec(), pool, &decisions)?;
        state.log = Some(DecisionLog::open(log_path)?);
        Ok(state)
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn pool(&self) -> &PromptPool {
        &self.pool
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Oldest pending synthetic record, optionally restricted to one label.
    pub fn next_pending(&self, label: Option<&str>) -> Option<&ImageRecord> {
        self.records.iter().find(|r| {
            r.is_synthetic()
                && r.review_status == ReviewStatus::Pending
                && label.is_none_or(|l| r.label == l)
        })
    }

    pub fn submit_review(&mut self, d: &ReviewDecision) -> Result<TriageStats> {
        let i = *self
            .index
            .get(&d.image_id)
            .ok_or_else(|| Error::UnknownImage(d.image_id.clone()))?;
        let record = &self.records[i];
        if record.provenance == Provenance::Manual {
            return Err(Error::ManualImage(d.image_id.clone()));
        }
        let target = match d.verdict {
            Verdict::Accepted => ReviewStatus::Accepted,
            Verdict::Rejected => ReviewStatus::Rejected,
        };
        match record.review_status {
            ReviewStatus::Pending => {}
            s if s == target => return Ok(self.stats()),
            s => {
                return Err(Error::ConflictingVerdict {
                    image: d.image_id.clone(),
                    existing: s.to_string(),
                })
            }
        }
        let prompt_id = record.prompt_id.clone().unwrap_or_default();
        let prompt = self
            .pool
            .get(&prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(prompt_id.clone()))?;
        if prompt.decided_count >= prompt.generated_count {
            return Err(Error::OutcomeWithoutGeneration(prompt_id));
        }
        if let Some(log) = self.log.as_mut() {
            log.append(d)?;
        }
        self.pool.record_outcome(&prompt_id, d.verdict)?;
        self.records[i].review_status = target;
        self.version += 1;
        Ok(self.stats())
    }

    pub fn stats(&self) -> TriageStats {
        let mut per_label: BTreeMap<String, LabelStats> = BTreeMap::new();
        let mut overall = LabelStats::default();
        for r in self.records.iter().filter(|r| r.is_synthetic()) {
            let row = per_label.entry(r.label.clone()).or_default();
            for s in [&mut *row, &mut overall] {
                s.generated += 1;
                match r.review_status {
                    ReviewStatus::Pending => s.pending += 1,
                    ReviewStatus::Accepted => s.accepted += 1,
                    ReviewStatus::Rejected => s.rejected += 1,
                }
            }
        }
        per_label.values_mut().for_each(LabelStats::finish);
        overall.finish();
        TriageStats {
            version: self.version,
            per_label,
            overall,
            prompts: self.pool.prompts().iter().map(PromptStats::from).collect(),
        }
    }

    pub fn promote(&mut self, min_samples: u64, threshold: f64) -> Result<Vec<String>> {
        let ids = self.pool.promote(min_samples, threshold)?;
        self.version += 1;
        Ok(ids)
    }

    /// Writes the prompt sidecar next to the catalog.
    pub fn save_pool(&self, store_root: impl AsRef<Path>) -> Result<()> {
        self.pool.save_sidecar(store_root.as_ref().join(PROMPTS_FILE))
    }

    /// Adds newly generated records (and counts them against their prompts).
    pub fn add_records(&mut self, records: impl IntoIterator<Item = ImageRecord>) -> Result<()> {
        for r in records {
            if self.index.contains_key(&r.id) {
                continue;
            }
            if let Some(p) = r.prompt_id.as_deref().filter(|_| r.is_synthetic()) {
                self.pool.record_generation(p)?;
            }
            self.index.insert(r.id.clone(), self.records.len());
            self.records.push(r);
        }
        self.version += 1;
        Ok(())
    }
}

/// Thread-safe wrapper: concurrent readers, decisions serialized by one writer lock.
#[derive(Debug)]
pub struct TriageService {
    state: RwLock<TriageState>,
    store_root: Option<PathBuf>,
}

impl TriageService {
    pub fn new(state: TriageState) -> Self {
        TriageService {
            state: RwLock::new(state),
            store_root: None,
        }
    }

    pub fn open(store_root: impl Into<PathBuf>, pool_seed: u64) -> Result<Self> {
        let root = store_root.into();
        let state = TriageState::open(&root, pool_seed)?;
        Ok(TriageService {
            state: RwLock::new(state),
            store_root: Some(root),
        })
    }

    pub fn store_root(&self) -> Option<&Path> {
        self.store_root.as_deref()
    }

    pub fn read(&self) -> RwLockReadGuard<'_, TriageState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, TriageState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn next_pending(&self, label: Option<&str>) -> Option<ImageRecord> {
        self.read().next_pending(label).cloned()
    }

    pub fn submit_review(&self, d: &ReviewDecision) -> Result<TriageStats> {
        self.write().submit_review(d)
    }

    pub fn stats(&self) -> TriageStats {
        self.read().stats()
    }

    pub fn prompts(&self) -> Vec<PromptStats> {
        self.read().pool().prompts().iter().map(PromptStats::from).collect()
    }

    /// Promotes and, when backed by a store, persists the sidecar.
    pub fn promote(&self, min_samples: u64, threshold: f64) -> Result<Vec<String>> {
        let mut state = self.write();
        let ids = state.promote(min_samples, threshold)?;
        if let Some(root) = &self.store_root {
            state.save_pool(root)?;
        }
        Ok(ids)
    }

    pub fn image_path(&self, id: &str) -> Option<PathBuf> {
        let root = self.store_root.as_ref()?;
        self.read().get(id).map(|r| root.join(&r.path))
    }

    /// Persists the prompt sidecar; the decision log is flushed per write.
    pub fn flush(&self) -> Result<()> {
        if let Some(root) = &self.store_root {
            let state = self.read();
            state.save_pool(root)?;
        }
        Ok(())
    }

    pub fn into_state(self) -> TriageState {
        self.state.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

/// Removes a store's review history (decision log), leaving images intact.
pub fn clear_decisions(store_root: impl AsRef<Path>) -> Result<()> {
    let path = store_root.as_ref().join(DECISIONS_FILE);
    if path.exists() {
        fs::remove_file(&path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
