//! Image synthesis behind a pluggable backend, with a content-addressed cache
//! and a per-backend limit on in-flight calls.

pub mod remote;
pub mod store;
pub mod stub;

use std::collections::HashMap;
use std::fmt;
use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use image::codecs::png::{CompressionType, FilterType as PngFilter, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptPool;
use crate::record::{ImageRecord, Provenance, ReviewStatus};
use crate::seed;
pub use store::ImageStore;

/// Side length of every generated image.
pub const IMAGE_SIZE: u32 = 512;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GenerationRequest {
    pub prompt_id: String,
    pub prompt_text: String,
    pub target_label: String,
    pub city: Option<String>,
    pub size: u32,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(
        prompt_id: impl Into<String>,
        prompt_text: impl Into<String>,
        target_label: impl Into<String>,
        seed: u64,
    ) -> Self {
        GenerationRequest {
            prompt_id: prompt_id.into(),
            prompt_text: prompt_text.into(),
            target_label: target_label.into(),
            city: None,
            size: IMAGE_SIZE,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size != IMAGE_SIZE {
            return Err(Error::Invalid(format!("generation size must be {IMAGE_SIZE}, got {}", self.size)));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(Error::Invalid(format!("empty prompt text for {}", self.prompt_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    RemoteApi,
    LocalStub,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::RemoteApi => "remote_api",
            BackendKind::LocalStub => "local_stub",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles after every further failure.
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(2))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    /// Name of the environment variable that holds the API token.
    pub credential: Option<String>,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl BackendDescriptor {
    pub fn stub() -> Self {
        BackendDescriptor {
            kind: BackendKind::LocalStub,
            endpoint: None,
            credential: None,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Config("retry max_attempts must be at least 1".into()));
        }
        if self.kind == BackendKind::RemoteApi && (self.endpoint.is_none() || self.credential.is_none()) {
            return Err(Error::Config("remote_api backend requires endpoint and credential".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BackendError {
    /// Connection or server-side failure; retried.
    Transport(String),
    /// The service refused the prompt; never retried.
    ContentPolicy(String),
    Malformed(String),
}

impl fmt::Display for BackendError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendError::Transport(m) => write!(f, "transport failure: {m}"),
            BackendError::ContentPolicy(m) => write!(f, "content policy rejection: {m}"),
            BackendError::Malformed(m) => write!(f, "malformed image payload: {m}"),
        }
    }
}

/// A text-to-image service. Implementations return PNG bytes.
pub trait ImageBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn render_png(&self, req: &GenerationRequest) -> std::result::Result<Vec<u8>, BackendError>;
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, PngFilter::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

/// Counting gate bounding concurrent backend calls.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a>(&'a InFlightGate);

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        InFlightGate {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Content address of a request: hash of prompt text, seed and backend kind
/// (first 128 bits, hex).
pub fn content_key(prompt_text: &str, seed: u64, kind: BackendKind) -> String {
    let mut key = seed::digest_hex([prompt_text.as_bytes(), &seed.to_le_bytes(), kind.as_str().as_bytes()]);
    key.truncate(32);
    key
}

pub fn synthetic_path(key: &str) -> String {
    format!("synthetic/{key}.png")
}

type CacheSlot = Arc<Mutex<Option<ImageRecord>>>;

#[derive(Clone, Debug)]
pub struct Produced {
    pub record: ImageRecord,
    pub cached: bool,
}

#[derive(Clone, Debug)]
pub struct RequestFailure {
    pub prompt_id: String,
    pub label: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct BatchReport {
    /// One record per successful request, in request order.
    pub records: Vec<ImageRecord>,
    pub cache_hits: usize,
    pub failures: Vec<RequestFailure>,
}

impl BatchReport {
    pub fn error(&self) -> Option<Error> {
        if self.failures.is_empty() {
            return None;
        }
        Some(Error::Batch {
            failed: self.failures.len(),
            total: self.failures.len() + self.records.len(),
            errors: self
                .failures
                .iter()
                .map(|f| format!("{} (seed {}): {}", f.prompt_id, f.seed, f.error))
                .collect(),
        })
    }
}

pub struct SynthGenerator {
    backend: Arc<dyn ImageBackend>,
    root: std::path::PathBuf,
    retry: RetryPolicy,
    gate: InFlightGate,
    max_in_flight: usize,
    cache: Mutex<HashMap<String, CacheSlot>>,
    calls: AtomicUsize,
}

impl SynthGenerator {
    /// Seeds the cache with every synthetic record already in `store`.
    pub fn new(backend: Arc<dyn ImageBackend>, descriptor: &BackendDescriptor, store: &ImageStore) -> Result<Self> {
        descriptor.validate()?;
        let mut cache = HashMap::new();
        for r in store.records().iter().filter(|r| r.is_synthetic()) {
            if let Some(stem) = r.path.strip_prefix("synthetic/").and_then(|p| p.strip_suffix(".png")) {
                cache.insert(stem.to_string(), Arc::new(Mutex::new(Some(r.clone()))));
            }
        }
        Ok(SynthGenerator {
            backend,
            root: store.root().to_path_buf(),
            retry: descriptor.retry.clone(),
            gate: InFlightGate::new(descriptor.max_in_flight),
            max_in_flight: descriptor.max_in_flight,
            cache: Mutex::new(cache),
            calls: AtomicUsize::new(0),
        })
    }

    /// Number of backend calls made so far (retries included).
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn call_with_retry(&self, req: &GenerationRequest) -> Result<Vec<u8>> {
        let mut attempt = 1;
        loop {
            let outcome = {
                let _permit = self.gate.acquire();
                self.calls.fetch_add(1, Ordering::SeqCst);
                self.backend.render_png(req)
            };
            match outcome {
                Ok(bytes) => return Ok(bytes),
                Err(BackendError::Transport(_)) if attempt < self.retry.max_attempts => {
                    std::thread::sleep(self.retry.delay_before(attempt + 1));
                    attempt += 1;
                }
                Err(e @ BackendError::Transport(_)) => {
                    return Err(Error::Backend(format!("{e} after {attempt} attempts")))
                }
                Err(e) => return Err(Error::Backend(e.to_string())),
            }
        }
    }

    /// Renders (or fetches from cache) one image and writes it to the store
    /// directory. Does not touch the catalog or the prompt pool.
    pub fn produce(&self, req: &GenerationRequest) -> Result<Produced> {
        req.validate()?;
        let key = content_key(&req.prompt_text, req.seed, self.backend.kind());
        let slot = {
            let mut cache = self.cache.lock().unwrap_or_else(|e| e.into_inner());
            cache.entry(key.clone()).or_default().clone()
        };
        let mut slot = slot.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(record) = slot.as_ref() {
            return Ok(Produced {
                record: record.clone(),
                cached: true,
            });
        }
        let bytes = self.call_with_retry(req)?;
        let (width, height) = png_dimensions(&bytes)?;
        if (width, height) != (req.size, req.size) {
            return Err(Error::Backend(format!(
                "malformed image payload: expected {0}x{0}, got {width}x{height}",
                req.size
            )));
        }
        let path = synthetic_path(&key);
        store::write_image_at(&self.root, &path, &bytes)?;
        let record = ImageRecord {
            id: format!("syn_{}", &key[..16]),
            path,
            width,
            height,
            label: req.target_label.clone(),
            provenance: Provenance::Synthetic,
            prompt_id: Some(req.prompt_id.clone()),
            city_keyword: req.city.clone(),
            review_status: ReviewStatus::Pending,
        };
        *slot = Some(record.clone());
        Ok(Produced { record, cached: false })
    }

    /// Single generation: new images are appended to the catalog and counted
    /// against their prompt. Cache hits return the existing record unchanged.
    pub fn generate(&self, req: &GenerationRequest, store: &mut ImageStore, pool: &mut PromptPool) -> Result<ImageRecord> {
        if pool.get(&req.prompt_id).is_none() {
            return Err(Error::UnknownPrompt(req.prompt_id.clone()));
        }
        let produced = self.produce(req)?;
        if !produced.cached && !store.contains(&produced.record.id) {
            store.append([produced.record.clone()])?;
            pool.record_generation(&req.prompt_id)?;
        }
        Ok(produced.record)
    }

    /// Plans `n_per_label` requests per label by sampling prompts from `pool`
    /// (reseeded from `seed`). Request seeds are consecutive per label.
    pub fn plan_batch(pool: &mut PromptPool, labels: &[String], n_per_label: usize, seed: u64) -> Result<Vec<GenerationRequest>> {
        if n_per_label == 0 {
            return Err(Error::Invalid("n_per_label must be at least 1".into()));
        }
        if pool.is_empty() {
            return Err(Error::EmptyPool);
        }
        pool.reseed(seed::derive(seed, "batch-sampling"));
        let mut requests = Vec::with_capacity(labels.len() * n_per_label);
        for label in labels {
            let base = seed::derive(seed, &format!("generate:{label}"));
            for i in 0..n_per_label {
                let prompt = pool.sample_for(label)?;
                let mut req = GenerationRequest::new(&prompt.id, &prompt.text, label, base.wrapping_add(i as u64));
                req.city = prompt.slots_used.get("city").cloned();
                requests.push(req);
            }
        }
        Ok(requests)
    }

    /// Runs `requests` with at most `max_in_flight` outstanding backend calls.
    /// Successes are kept even when some requests fail.
    pub fn run_batch(&self, requests: &[GenerationRequest], store: &mut ImageStore, pool: &mut PromptPool) -> Result<BatchReport> {
        let results: Vec<Mutex<Option<Result<Produced>>>> = requests.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_in_flight.min(requests.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let outcome = self.produce(&requests[i]);
                    *results[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
                });
            }
        });

        let mut report = BatchReport::default();
        let mut fresh = Vec::new();
        for (req, slot) in requests.iter().zip(results) {
            let outcome = slot
                .into_inner()
                .unwrap_or_else(|e| e.into_inner())
                .unwrap_or_else(|| Err(Error::Backend("request not executed".into())));
            match outcome {
                Ok(p) => {
                    if p.cached || store.contains(&p.record.id) || fresh.iter().any(|r: &ImageRecord| r.id == p.record.id) {
                        report.cache_hits += 1;
                    } else {
                        pool.record_generation(&req.prompt_id)?;
                        fresh.push(p.record.clone());
                    }
                    report.records.push(p.record);
                }
                Err(e) => report.failures.push(RequestFailure {
                    prompt_id: req.prompt_id.clone(),
                    label: req.target_label.clone(),
                    seed: req.seed,
                    error: e.to_string(),
                }),
            }
        }
        store.append(fresh)?;
        Ok(report)
    }

    pub fn generate_batch(
        &self,
        pool: &mut PromptPool,
        labels: &[String],
        n_per_label: usize,
        seed: u64,
        store: &mut ImageStore,
    ) -> Result<BatchReport> {
        let requests = Self::plan_batch(pool, labels, n_per_label, seed)?;
        self.run_batch(&requests, store, pool)
    }
}

fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32)> {
    image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| Error::Backend(format!("malformed image payload: {e}")))
}

#[cfg(test)]
mod tests {
    use super::stub::StubBackend;
    use super::*;
    use crate::prompt::{generate_prompts, KeywordSet};

    fn pool(labels: &[&str]) -> PromptPool {
        let mut pool = PromptPool::empty(0);
        for l in labels {
            let k = KeywordSet {
                material: l.to_string(),
                synonyms: vec![],
                period: None,
                cities: vec!["Vancouver".into(), "Amsterdam".into()],
            };
            pool.merge(generate_prompts(&k, 4, 1).unwrap()).unwrap();
        }
        pool
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    struct Failing;

    impl ImageBackend for Failing {
        fn kind(&self) -> BackendKind {
            BackendKind::RemoteApi
        }
        fn render_png(&self, _: &GenerationRequest) -> std::result::Result<Vec<u8>, BackendError> {
            Err(BackendError::Transport("connection refused".into()))
        }
    }

    struct Policy(AtomicUsize);

    impl ImageBackend for Policy {
        fn kind(&self) -> BackendKind {
            BackendKind::RemoteApi
        }
        fn render_png(&self, _: &GenerationRequest) -> std::result::Result<Vec<u8>, BackendError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(BackendError::ContentPolicy("blocked".into()))
        }
    }

    struct WrongSize;

    impl ImageBackend for WrongSize {
        fn kind(&self) -> BackendKind {
            BackendKind::LocalStub
        }
        fn render_png(&self, _: &GenerationRequest) -> std::result::Result<Vec<u8>, BackendError> {
            Ok(encode_png(&RgbImage::new(64, 64)).unwrap())
        }
    }

    fn fast_descriptor(max_in_flight: usize) -> BackendDescriptor {
        BackendDescriptor {
            max_in_flight,
            retry: RetryPolicy {
                max_attempts: 3,
                initial_backoff: Duration::from_millis(1),
            },
            ..BackendDescriptor::stub()
        }
    }

    #[test]
    fn cache_hit_skips_backend() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ImageStore::open(dir.path()).unwrap();
        let mut pool = pool(&["stucco"]);
        let generator = SynthGenerator::new(Arc::new(StubBackend::faithful()), &fast_descriptor(2), &store).unwrap();
        let p = pool.prompts()[0].clone();
        let req = GenerationRequest::new(&p.id, &p.text, "stucco", 7);
        let a = generator.generate(&req, &mut store, &mut pool).unwrap();
        assert_eq!(generator.backend_calls(), 1);
        let b = generator.generate(&req, &mut store, &mut pool).unwrap();
        assert_eq!(generator.backend_calls(), 1);
        assert_eq!(a, b);
        assert_eq!(pool.get(&p.id).unwrap().generated_count, 1);
        assert_eq!((a.width, a.height, a.provenance), (512, 512, Provenance::Synthetic));
        assert_eq!(a.review_status, ReviewStatus::Pending);
        assert!(store.resolve(&a.path).exists());

        // a fresh generator over the same store reuses the catalog
        let again = SynthGenerator::new(Arc::new(StubBackend::faithful()), &fast_descriptor(2), &store).unwrap();
        again.generate(&req, &mut store, &mut pool).unwrap();
        assert_eq!(again.backend_calls(), 0);
    }

    #[test]
    fn batch_counts_per_label() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ImageStore::open(dir.path()).unwrap();
        let hrp = ["stone", "curtain_wall", "concrete_panels"];
        let mut pool = pool(&hrp);
        let generator = SynthGenerator::new(Arc::new(StubBackend::faithful()), &fast_descriptor(4), &store).unwrap();
        let report = generator.generate_batch(&mut pool, &labels(&hrp), 3, 5, &mut store).unwrap();
        assert!(report.error().is_none());
        assert_eq!(report.records.len(), 9);
        for l in hrp {
            assert_eq!(report.records.iter().filter(|r| r.label == l).count(), 3);
        }
        assert!(report.records.iter().all(|r| pool.get(r.prompt_id.as_ref().unwrap()).is_some()));
        let generated: u64 = pool.prompts().iter().map(|p| p.generated_count).sum();
        assert_eq!(generated, 9);
        assert_eq!(store.records().len(), 9);
    }

    #[test]
    fn failing_backend_reports_every_request() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ImageStore::open(dir.path()).unwrap();
        let hrp = ["stone", "curtain_wall", "concrete_panels"];
        let mut pool = pool(&hrp);
        let generator = SynthGenerator::new(Arc::new(Failing), &fast_descriptor(4), &store).unwrap();
        let report = generator.generate_batch(&mut pool, &labels(&hrp), 3, 5, &mut store).unwrap();
        assert!(report.records.is_empty());
        match report.error() {
            Some(Error::Batch { failed, errors, .. }) => {
                assert_eq!(failed, 9);
                assert_eq!(errors.len(), 9);
            }
            other => panic!("unexpected {other:?}"),
        }
        // 3 attempts per request
        assert_eq!(generator.backend_calls(), 27);
    }

    #[test]
    fn content_policy_is_not_retried() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::open(dir.path()).unwrap();
        let backend = Arc::new(Policy(AtomicUsize::new(0)));
        let generator = SynthGenerator::new(backend.clone(), &fast_descriptor(1), &store).unwrap();
        let err = generator.produce(&GenerationRequest::new("p", "x", "stone", 1)).unwrap_err();
        assert!(err.to_string().contains("content policy"));
        assert_eq!(backend.0.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wrong_size_payload_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::open(dir.path()).unwrap();
        let generator = SynthGenerator::new(Arc::new(WrongSize), &fast_descriptor(1), &store).unwrap();
        let err = generator.produce(&GenerationRequest::new("p", "x", "stone", 1)).unwrap_err();
        assert!(err.to_string().contains("malformed"), "{err}");
    }

    #[test]
    fn request_validation() {
        let mut req = GenerationRequest::new("p", " ", "stone", 1);
        assert!(req.validate().is_err());
        req.prompt_text = "ok".into();
        req.size = 256;
        assert!(req.validate().is_err());
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::stub();
        assert!(d.validate().is_ok());
        d.max_in_flight = 0;
        assert!(d.validate().is_err());
        d.max_in_flight = 1;
        d.kind = BackendKind::RemoteApi;
        assert!(d.validate().is_err());
        d.endpoint = Some("http://localhost".into());
        d.credential = Some("TOKEN".into());
        assert!(d.validate().is_ok());
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before(2), Duration::from_secs(1));
        assert_eq!(p.delay_before(3), Duration::from_secs(2));
        assert_eq!(p.delay_before(4), Duration::from_secs(4));
    }
}
