//! Train/predict over two backends: a built-in nearest-centroid model on
//! histogram features, and an external worker driven through files.

pub mod features;
pub mod predictions;
pub mod worker;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::record::ImageRecord;
use crate::schema::LabelSchema;

pub use features::FeatureParams;
pub use predictions::{argmax, ingest_external_predictions, PredictionRow, PredictionSet};
pub use worker::WorkerConfig;

pub const RESOLUTIONS: [u32; 2] = [192, 384];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierBackend {
    #[default]
    Builtin,
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub backend: ClassifierBackend,
    pub input_resolution: u32,
    pub color_bins: usize,
    pub edge_bins: usize,
    pub temperature: f64,
    /// Passed through to the external worker; the builtin model has no epochs.
    pub epochs: u32,
    pub seed: u64,
    pub worker: Option<WorkerConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            backend: ClassifierBackend::Builtin,
            input_resolution: 384,
            color_bins: 8,
            edge_bins: 8,
            temperature: 1.0,
            epochs: 10,
            seed: 0,
            worker: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !RESOLUTIONS.contains(&self.input_resolution) {
            return Err(Error::Config(format!(
                "input_resolution must be one of {RESOLUTIONS:?}, got {}",
                self.input_resolution
            )));
        }
        if self.color_bins == 0 || self.color_bins > 256 || self.edge_bins == 0 {
            return Err(Error::Config("histogram bin counts must be in 1..=256".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.backend == ClassifierBackend::External {
            match &self.worker {
                Some(w) => w.validate()?,
                None => return Err(Error::Config("external backend needs a worker command".into())),
            }
        }
        Ok(())
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            resolution: self.input_resolution,
            color_bins: self.color_bins,
            edge_bins: self.edge_bins,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentroidModel {
    pub schema: LabelSchema,
    pub params: FeatureParams,
    pub temperature: f64,
    /// One centroid per class, in schema order.
    pub centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    /// Softmax over negative Euclidean distances to each centroid.
    pub fn scores(&self, feature: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .centroids
            .iter()
            .map(|c| -features::euclidean(feature, c) / self.temperature)
            .collect();
        softmax(&logits)
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug)]
pub enum ModelHandle {
    Builtin(CentroidModel),
    /// The worker already scored the test split; the handle points at its bundle.
    External { schema: LabelSchema, bundle: PathBuf },
}

impl ModelHandle {
    pub fn schema(&self) -> &LabelSchema {
        match self {
            ModelHandle::Builtin(m) => &m.schema,
            ModelHandle::External { schema, .. } => schema,
        }
    }
}

/// Memoizes feature vectors by (image path, feature parameters). Safe to
/// share across experiments running in parallel.
#[derive(Debug, Default)]
pub struct FeatureCache {
    entries: Mutex<HashMap<(PathBuf, FeatureParams), Arc<Vec<f64>>>>,
}

impl FeatureCache {
    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_extract(&self, path: &Path, params: &FeatureParams) -> Result<Arc<Vec<f64>>> {
        let key = (path.to_path_buf(), *params);
        if let Some(f) = self.entries.lock().unwrap().get(&key) {
            return Ok(f.clone());
        }
        let img = image::open(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let f = Arc::new(features::extract(&img, params));
        Ok(self.entries.lock().unwrap().entry(key).or_insert(f).clone())
    }
}

pub struct ClassifierBridge {
    image_root: PathBuf,
    cache: FeatureCache,
}

impl ClassifierBridge {
    /// `image_root` resolves the relative paths stored in manifests.
    pub fn new(image_root: impl Into<PathBuf>) -> Self {
        ClassifierBridge {
            image_root: image_root.into(),
            cache: FeatureCache::default(),
        }
    }

    pub fn image_root(&self) -> &Path {
        &self.image_root
    }

    pub fn cache(&self) -> &FeatureCache {
        &self.cache
    }

    fn features(&self, records: &[ImageRecord], params: &FeatureParams) -> Result<Vec<Arc<Vec<f64>>>> {
        records
            .par_iter()
            .map(|r| self.cache.get_or_extract(&self.image_root.join(&r.path), params))
            .collect()
    }

    pub fn train(&self, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<ModelHandle> {
        cfg.validate()?;
        manifest.validate()?;
        let counts = manifest.class_counts(Split::Train);
        if let Some((label, _)) = counts.iter().find(|(_, n)| *n == 0) {
            return Err(Error::EmptyClass { label: label.to_string() });
        }
        match cfg.backend {
            ClassifierBackend::Builtin => self.train_builtin(manifest, cfg).map(ModelHandle::Builtin),
            ClassifierBackend::External => {
                let worker = cfg.worker.as_ref().expect("validated");
                let bundle = worker::run_worker(manifest, cfg, worker, &self.image_root)?;
                Ok(ModelHandle::External {
                    schema: manifest.schema.clone(),
                    bundle,
                })
            }
        }
    }

    fn train_builtin(&self, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<CentroidModel> {
        let params = cfg.feature_params();
        let feats = self.features(&manifest.train, &params)?;
        let k = manifest.schema.len();
        let mut sums = vec![vec![0.0; params.len()]; k];
        let mut n = vec![0usize; k];
        // summed in manifest order so the centroids do not depend on thread scheduling
        for (r, f) in manifest.train.iter().zip(&feats) {
            let c = manifest.schema.require(&r.label)?;
            n[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(f.iter()) {
                *s += v;
            }
        }
        for (s, count) in sums.iter_mut().zip(&n) {
            for v in s.iter_mut() {
                *v /= *count as f64;
            }
        }
        Ok(CentroidModel {
            schema: manifest.schema.clone(),
            params,
            temperature: cfg.temperature,
            centroids: sums,
        })
    }

    /// Scores the manifest's test split, one row per image in manifest order.
    pub fn predict(&self, handle: &ModelHandle, manifest: &DatasetManifest) -> Result<PredictionSet> {
        if handle.schema() != &manifest.schema {
            return Err(Error::SchemaMismatch {
                model: handle.schema().to_string(),
                data: manifest.schema.to_string(),
            });
        }
        match handle {
            ModelHandle::Builtin(model) => self.predict_records(model, &manifest.test),
            ModelHandle::External { bundle, .. } => {
                ingest_external_predictions(bundle.join(worker::PREDICTIONS_FILE))?.aligned_to(manifest)
            }
        }
    }

    pub fn predict_records(&self, model: &CentroidModel, records: &[ImageRecord]) -> Result<PredictionSet> {
        let feats = self.features(records, &model.params)?;
        let rows = records
            .iter()
            .zip(feats)
            .map(|(r, f)| (r.id.clone(), model.scores(&f)))
            .collect::<Vec<_>>();
        PredictionSet::from_scores(model.schema.clone(), rows)
    }
}
