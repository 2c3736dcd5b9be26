//! Python bindings: label schemas, study configs, the stub pipeline, triage
//! and the evaluation primitives. Structured results come back as plain
//! dicts and lists.

use std::path::PathBuf;

use cadastre_core::config::PipelineConfig;
use cadastre_core::eval::{class_metrics as core_class_metrics, roc_from_scores, ConfusionMatrix};
use cadastre_core::prompt::{generate_prompts as core_generate_prompts, KeywordSet, Verdict};
use cadastre_core::synth::{encode_png, stub};
use cadastre_core::triage::{ReviewDecision, TriageService as CoreTriage};
use cadastre_core::{pipeline, seed, Error, LabelSchema as CoreSchema};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    match e {
        Error::UnknownLabel { .. } | Error::UnknownImage(_) | Error::UnknownPrompt(_) => PyKeyError::new_err(e.to_string()),
        e if e.is_usage() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyclass(module = "cadastre", frozen, skip_from_py_object)]
#[derive(Clone)]
struct LabelSchema {
    inner: CoreSchema,
}

#[pymethods]
impl LabelSchema {
    #[staticmethod]
    fn urc() -> Self {
        LabelSchema { inner: CoreSchema::urc() }
    }

    #[staticmethod]
    fn hrp() -> Self {
        LabelSchema { inner: CoreSchema::hrp() }
    }

    /// `{null, other, label}`.
    #[staticmethod]
    fn reduced(label: &str) -> PyResult<Self> {
        Ok(LabelSchema {
            inner: CoreSchema::reduced(label).map_err(err)?,
        })
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().to_vec()
    }

    fn index(&self, label: &str) -> PyResult<usize> {
        self.inner.require(label).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, label: &str) -> bool {
        self.inner.contains(label)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("LabelSchema({})", self.inner)
    }
}

#[pyclass(module = "cadastre")]
struct Config {
    inner: PipelineConfig,
}

#[pymethods]
impl Config {
    /// Loads a TOML study config; relative paths resolve against its directory.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = PipelineConfig::load(&path).map_err(err)?;
        inner.validate().map_err(err)?;
        Ok(Config { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn store(&self) -> PathBuf {
        self.inner.store.clone()
    }

    #[setter]
    fn set_store(&mut self, p: PathBuf) {
        self.inner.store = p;
    }

    #[getter]
    fn out(&self) -> PathBuf {
        self.inner.out.clone()
    }

    #[setter]
    fn set_out(&mut self, p: PathBuf) {
        self.inner.out = p;
    }

    #[getter]
    fn experiments(&self) -> Vec<String> {
        self.inner.experiments.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

/// Renders the stub manual corpus; returns the number of images written.
#[pyfunction]
fn stub_corpus(py: Python<'_>, cfg: &Config) -> PyResult<usize> {
    let c = cfg.inner.clone();
    py.detach(move || pipeline::stub_corpus(&c)).map_err(err)
}

/// Generates `n` images for `label`, or the configured counts for every label.
#[pyfunction]
#[pyo3(signature = (cfg, label=None, n=100, batch=0, auto_review=false))]
fn generate<'py>(
    py: Python<'py>,
    cfg: &Config,
    label: Option<String>,
    n: usize,
    batch: u64,
    auto_review: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let c = cfg.inner.clone();
    let counts: Vec<(String, usize)> = match label {
        Some(l) => vec![(l, n)],
        None => c
            .labels()
            .into_iter()
            .filter_map(|l| c.generation.get(&l).map(|n| (l, *n)))
            .collect(),
    };
    let batch_seed = seed::derive(c.seed, &format!("batch:{batch}"));
    let s = py
        .detach(move || pipeline::generate(&c, &counts, batch_seed, auto_review))
        .map_err(err)?;
    to_py(py, &s)
}

/// Assembles one experiment and writes its manifest; returns the assembly report.
#[pyfunction]
fn assemble<'py>(py: Python<'py>, cfg: &Config, experiment: String) -> PyResult<Bound<'py, PyAny>> {
    let c = cfg.inner.clone();
    let bytes = py
        .detach(move || {
            let pools = pipeline::load_pools(&c)?;
            pipeline::assemble_experiment(&c, &pools, &experiment)?.to_json()
        })
        .map_err(err)?;
    let s = String::from_utf8(bytes).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// Runs experiments end to end. Returns one metrics dict per experiment, or
/// `{"experiment": name, "error": message}` for a failed one.
#[pyfunction]
#[pyo3(signature = (cfg, experiments=None))]
fn run<'py>(py: Python<'py>, cfg: &Config, experiments: Option<Vec<String>>) -> PyResult<Vec<Bound<'py, PyAny>>> {
    let c = cfg.inner.clone();
    let names = experiments.unwrap_or_default();
    let summary = py.detach(move || pipeline::run(&c, &names)).map_err(err)?;
    summary
        .outcomes
        .iter()
        .map(|o| match &o.result {
            Ok(doc) => to_py(py, doc),
            Err(e) => to_py(py, &serde_json::json!({"experiment": o.name, "error": e.to_string()})),
        })
        .collect()
}

/// PNG bytes of one stub texture for `label`.
#[pyfunction]
#[pyo3(signature = (label, seed, width=512, height=512))]
fn render_stub<'py>(py: Python<'py>, label: &str, seed: u64, width: u32, height: u32) -> PyResult<Bound<'py, PyBytes>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let img = stub::render_motif(stub::Motif::for_label(label), width, height, &mut rng);
    let png = encode_png(&img).map_err(err)?;
    Ok(PyBytes::new(py, &png))
}

#[pyfunction]
#[pyo3(signature = (material, cities, n, seed, synonyms=Vec::new(), period=None))]
fn generate_prompts<'py>(
    py: Python<'py>,
    material: String,
    cities: Vec<String>,
    n: usize,
    seed: u64,
    synonyms: Vec<String>,
    period: Option<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let k = KeywordSet {
        material,
        synonyms,
        period,
        cities,
    };
    let pool = core_generate_prompts(&k, n, seed).map_err(err)?;
    to_py(py, &pool.prompts())
}

#[pyclass(module = "cadastre", frozen)]
struct TriageService {
    inner: CoreTriage,
}

#[pymethods]
impl TriageService {
    #[new]
    #[pyo3(signature = (store, pool_seed=0))]
    fn new(store: PathBuf, pool_seed: u64) -> PyResult<Self> {
        Ok(TriageService {
            inner: CoreTriage::open(store, pool_seed).map_err(err)?,
        })
    }

    /// The next pending image record, or None when the queue is empty.
    #[pyo3(signature = (label=None))]
    fn next_pending<'py>(&self, py: Python<'py>, label: Option<&str>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.next_pending(label).map(|r| to_py(py, &r)).transpose()
    }

    /// Records `verdict` ("accepted" or "rejected") and returns the updated stats.
    #[pyo3(signature = (image_id, verdict, reviewer="python"))]
    fn review<'py>(&self, py: Python<'py>, image_id: &str, verdict: &str, reviewer: &str) -> PyResult<Bound<'py, PyAny>> {
        let verdict = match verdict {
            "accepted" | "accept" => Verdict::Accepted,
            "rejected" | "reject" => Verdict::Rejected,
            v => return Err(PyValueError::new_err(format!("unknown verdict {v:?}"))),
        };
        let stats = self
            .inner
            .submit_review(&ReviewDecision::now(image_id, verdict, reviewer))
            .map_err(err)?;
        to_py(py, &stats)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.stats())
    }

    fn flush(&self) -> PyResult<()> {
        self.inner.flush().map_err(err)
    }
}

fn indices(schema: &CoreSchema, labels: &[String]) -> PyResult<Vec<usize>> {
    labels.iter().map(|l| schema.require(l).map_err(err)).collect()
}

/// Confusion counts, rows indexed by true label in schema order.
#[pyfunction]
fn confusion_matrix(schema: &LabelSchema, truth: Vec<String>, predicted: Vec<String>) -> PyResult<Vec<Vec<u64>>> {
    let t = indices(&schema.inner, &truth)?;
    let p = indices(&schema.inner, &predicted)?;
    Ok(ConfusionMatrix::from_indices(schema.inner.clone(), &t, &p).map_err(err)?.counts)
}

/// Per-class and support-weighted precision / recall / F1 from confusion counts.
#[pyfunction]
fn class_metrics<'py>(py: Python<'py>, schema: &LabelSchema, counts: Vec<Vec<u64>>) -> PyResult<Bound<'py, PyAny>> {
    let k = schema.inner.len();
    if counts.len() != k || counts.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err(format!("counts must be {k}x{k}")));
    }
    let cm = ConfusionMatrix {
        schema: schema.inner.clone(),
        counts,
    };
    to_py(py, &core_class_metrics(&cm))
}

/// One-vs-rest ROC curve: `{"positive_label", "points", "auc"}`.
#[pyfunction]
#[pyo3(signature = (scores, positive, label="positive"))]
fn roc_curve<'py>(py: Python<'py>, scores: Vec<f64>, positive: Vec<bool>, label: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &roc_from_scores(label, &scores, &positive).map_err(err)?)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, positive: Vec<bool>) -> PyResult<f64> {
    Ok(roc_from_scores("positive", &scores, &positive).map_err(err)?.auc)
}

#[pymodule]
fn cadastre(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LabelSchema>()?;
    m.add_class::<Config>()?;
    m.add_class::<TriageService>()?;
    m.add_function(wrap_pyfunction!(stub_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(assemble, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(render_stub, m)?)?;
    m.add_function(wrap_pyfunction!(generate_prompts, m)?)?;
    m.add_function(wrap_pyfunction!(confusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(class_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    Ok(())
}
