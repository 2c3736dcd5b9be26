//! File protocol for external training workers.
//!
//! A bundle directory holds `train_manifest.csv`, `test_manifest.csv` and
//! `config.json`. The worker runs with the bundle as its working directory
//! (and as its last argument), writes `predictions.csv` there and exits 0.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::manifest::DatasetManifest;
use crate::record::ImageRecord;

pub const TRAIN_FILE: &str = "train_manifest.csv";
pub const TEST_FILE: &str = "test_manifest.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const DEFAULT_TIMEOUT_SECS: u64 = 6 * 60 * 60;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    pub timeout_secs: u64,
    /// Parent of the per-experiment bundle directories.
    pub work_dir: PathBuf,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            command: Vec::new(),
            timeout_secs: DEFAULT_TIMEOUT_SECS,
            work_dir: PathBuf::from("worker"),
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.command.is_empty() || self.command[0].is_empty() {
            return Err(Error::Config("worker command is empty".into()));
        }
        if self.timeout_secs == 0 {
            return Err(Error::Config("worker timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct BundleConfig<'a> {
    resolution: u32,
    epochs: u32,
    seed: u64,
    schema: String,
    labels: &'a [String],
}

fn split_csv(records: &[ImageRecord], image_root: &Path) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let err = |e: csv::Error| Error::parse("worker bundle", e);
    w.write_record(["image_id", "path", "label", "provenance"]).map_err(err)?;
    for r in records {
        let path = image_root.join(&r.path);
        w.write_record([r.id.as_str(), &path.to_string_lossy(), &r.label, r.provenance.as_str()])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| Error::parse("worker bundle", e.to_string()))
}

/// Writes the bundle for `manifest` under `dir`, replacing any stale
/// predictions from an earlier run.
pub fn write_bundle(manifest: &DatasetManifest, cfg: &TrainConfig, image_root: &Path, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let root = fs::canonicalize(image_root).map_err(|e| Error::io(image_root, e))?;
    let write = |name: &str, bytes: Vec<u8>| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(TRAIN_FILE, split_csv(&manifest.train, &root)?)?;
    write(TEST_FILE, split_csv(&manifest.test, &root)?)?;
    let config = BundleConfig {
        resolution: cfg.input_resolution,
        epochs: cfg.epochs,
        seed: cfg.seed,
        schema: manifest.schema.to_string(),
        labels: manifest.schema.labels(),
    };
    let mut json = serde_json::to_vec_pretty(&config).map_err(|e| Error::parse("config.json", e))?;
    json.push(b'\n');
    write(CONFIG_FILE, json)?;
    let stale = dir.join(PREDICTIONS_FILE);
    if stale.exists() {
        fs::remove_file(&stale).map_err(|e| Error::io(&stale, e))?;
    }
    Ok(())
}

/// Runs the worker to completion or until the timeout, then checks that the
/// predictions it wrote cover the test split exactly.
pub fn run_worker(manifest: &DatasetManifest, cfg: &TrainConfig, worker: &WorkerConfig, image_root: &Path) -> Result<PathBuf> {
    let dir = worker.work_dir.join(&manifest.tag);
    write_bundle(manifest, cfg, image_root, &dir)?;
    let dir = fs::canonicalize(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut child = Command::new(&worker.command[0])
        .args(&worker.command[1..])
        .arg(&dir)
        .current_dir(&dir)
        .stdin(Stdio::null())
        .spawn()
        .map_err(|e| Error::Worker(format!("cannot start {:?}: {e}", worker.command[0])))?;
    let deadline = Instant::now() + Duration::from_secs(worker.timeout_secs);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break status,
            Ok(None) if Instant::now() >= deadline => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(Error::Worker(format!("timed out after {} s", worker.timeout_secs)));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => return Err(Error::Worker(e.to_string())),
        }
    };
    if !status.success() {
        return Err(Error::Worker(format!("worker exited with {status}")));
    }
    super::ingest_external_predictions(dir.join(PREDICTIONS_FILE))?.aligned_to(manifest)?;
    Ok(dir)
}
