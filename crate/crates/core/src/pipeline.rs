//! End-to-end steps driven by a [`PipelineConfig`]: stub corpus, pool
//! generation (optionally auto-reviewed against stub ground truth),
//! experiment runs and report collection.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::assembler::{assemble, reduce_labels, AssemblyReport};
use crate::classifier::ClassifierBridge;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::report::{emit_summary, load_metrics, MetricsDoc, METRICS_FILE};
use crate::eval::{emit_report, evaluate};
use crate::prompt::{generate_prompts, grammar_capacity, PromptPool, Verdict};
use crate::record::{ImageRecord, Provenance, ReviewStatus, MANUAL_HEIGHT, MANUAL_WIDTH};
use crate::schema::{SchemaKind, HRP_LABELS, URC_LABELS};
use crate::seed;
use crate::synth::remote::RemoteBackend;
use crate::synth::store::{write_image_at, ImageStore, PROMPTS_FILE};
use crate::synth::stub::{render_manual, StubBackend};
use crate::synth::{content_key, encode_png, BackendKind, GenerationRequest, ImageBackend, SynthGenerator};
use crate::triage::{ReviewDecision, TriageState};

pub const PREDICTIONS_FILE: &str = "predictions.csv";

pub fn stub_backend(cfg: &PipelineConfig) -> StubBackend {
    StubBackend::new(&cfg.stub, &cfg.labels())
}

pub fn build_backend(cfg: &PipelineConfig) -> Result<Arc<dyn ImageBackend>> {
    Ok(match cfg.backend.kind {
        BackendKind::LocalStub => Arc::new(stub_backend(cfg)),
        BackendKind::RemoteApi => Arc::new(RemoteBackend::from_descriptor(&cfg.backend.descriptor())?),
    })
}

/// Writes the procedural stand-in for the manually annotated corpus.
/// Existing ids are left alone, so re-running only fills gaps.
pub fn stub_corpus(cfg: &PipelineConfig) -> Result<usize> {
    let mut store = ImageStore::open(&cfg.store)?;
    let corpus_seed = seed::derive(cfg.seed, "manual-corpus");
    let mut todo = Vec::new();
    for label in URC_LABELS {
        for i in 0..cfg.manual.get(label).copied().unwrap_or(0) {
            let id = format!("man_{label}_{i:04}");
            if !store.contains(&id) {
                todo.push((label, i, id));
            }
        }
    }
    let root = store.root().to_path_buf();
    let records: Vec<ImageRecord> = todo
        .par_iter()
        .map(|(label, i, id)| {
            let path = format!("manual/{label}_{i:04}.png");
            let img = render_manual(label, *i as u64, corpus_seed);
            write_image_at(&root, &path, &encode_png(&img)?)?;
            let mut r = ImageRecord::manual(id.clone(), path, *label);
            r.width = MANUAL_WIDTH;
            r.height = MANUAL_HEIGHT;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let n = records.len();
    store.append(records)?;
    Ok(n)
}

fn load_pool(cfg: &PipelineConfig) -> Result<PromptPool> {
    let sidecar = cfg.store.join(PROMPTS_FILE);
    let pool_seed = seed::derive(cfg.seed, "prompt-pool");
    if sidecar.exists() {
        PromptPool::load_sidecar(&sidecar, pool_seed)
    } else {
        Ok(PromptPool::empty(pool_seed))
    }
}

/// Expands prompts for `label` if the pool has none for it yet.
pub fn ensure_prompts(cfg: &PipelineConfig, pool: &mut PromptPool, label: &str) -> Result<()> {
    if pool.prompts().iter().any(|p| p.material == label) {
        return Ok(());
    }
    let k = cfg.keyword_set(label).ok_or_else(|| {
        Error::Config(format!(
            "no keyword set for label {label:?}; configured labels: {}",
            cfg.labels().join(", ")
        ))
    })?;
    let n = cfg.prompts.per_label.min(grammar_capacity(&k)).max(1);
    pool.merge(generate_prompts(&k, n, seed::derive(cfg.seed, &format!("prompts:{label}")))?)
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GenerateSummary {
    pub requested: usize,
    pub new_images: usize,
    pub cache_hits: usize,
    pub backend_calls: usize,
    pub failures: Vec<String>,
    /// Images generated per prompt id over the pool's lifetime.
    pub per_prompt: BTreeMap<String, u64>,
    pub accepted: usize,
    pub rejected: usize,
}

/// Generates `counts` images per label. With `auto_review`, every pending
/// image from this batch is decided by the stub's ground truth through the
/// triage state machine, so the decision log matches a human session.
pub fn generate(cfg: &PipelineConfig, counts: &[(String, usize)], batch_seed: u64, auto_review: bool) -> Result<GenerateSummary> {
    if auto_review && cfg.backend.kind != BackendKind::LocalStub {
        return Err(Error::Config("auto review needs the local stub backend".into()));
    }
    let labels = cfg.labels();
    for (label, _) in counts {
        if !labels.contains(label) {
            return Err(Error::Config(format!(
                "unknown label {label:?}; configured labels: {}",
                labels.join(", ")
            )));
        }
    }
    let mut store = ImageStore::open(&cfg.store)?;
    let mut pool = load_pool(cfg)?;
    for (label, _) in counts {
        ensure_prompts(cfg, &mut pool, label)?;
    }
    let backend = build_backend(cfg)?;
    let generator = SynthGenerator::new(backend.clone(), &cfg.backend.descriptor(), &store)?;
    let mut requests = Vec::new();
    for (label, n) in counts.iter().filter(|(_, n)| *n > 0) {
        requests.extend(SynthGenerator::plan_batch(&mut pool, std::slice::from_ref(label), *n, batch_seed)?);
    }
    let report = generator.run_batch(&requests, &mut store, &mut pool)?;
    pool.save_sidecar(cfg.store.join(PROMPTS_FILE))?;

    let mut summary = GenerateSummary {
        requested: requests.len(),
        new_images: report.records.len() - report.cache_hits,
        cache_hits: report.cache_hits,
        backend_calls: generator.backend_calls(),
        failures: report
            .failures
            .iter()
            .map(|f| format!("{} {} (seed {}): {}", f.label, f.prompt_id, f.seed, f.error))
            .collect(),
        ..Default::default()
    };

    if auto_review {
        let stub = stub_backend(cfg);
        let by_id: HashMap<String, &GenerationRequest> = requests
            .iter()
            .map(|r| (format!("syn_{}", &content_key(&r.prompt_text, r.seed, BackendKind::LocalStub)[..16]), r))
            .collect();
        let mut state = TriageState::open(&cfg.store, seed::derive(cfg.seed, "prompt-pool"))?;
        for r in &report.records {
            if state.get(&r.id).map(|x| x.review_status) != Some(ReviewStatus::Pending) {
                continue;
            }
            let Some(req) = by_id.get(&r.id) else { continue };
            let verdict = if stub.is_relevant(req) {
                summary.accepted += 1;
                Verdict::Accepted
            } else {
                summary.rejected += 1;
                Verdict::Rejected
            };
            state.submit_review(&ReviewDecision {
                image_id: r.id.clone(),
                verdict,
                reviewer: "stub-oracle".into(),
                timestamp: 0,
            })?;
        }
        state.save_pool(&cfg.store)?;
        pool = state.pool().clone();
    }
    summary.per_prompt = pool
        .prompts()
        .iter()
        .filter(|p| counts.iter().any(|(l, _)| *l == p.material))
        .map(|p| (p.id.clone(), p.generated_count))
        .collect();
    if summary.new_images == 0 && !report.failures.is_empty() {
        return Err(report.error().unwrap_or(Error::Backend("every request failed".into())));
    }
    Ok(summary)
}

/// Manual records and accepted synthetic records from the store, with the
/// decision log applied.
#[derive(Clone, Debug, Default)]
pub struct Pools {
    pub manual: Vec<ImageRecord>,
    pub synthetic: Vec<ImageRecord>,
}

pub fn load_pools(cfg: &PipelineConfig) -> Result<Pools> {
    let state = TriageState::open(&cfg.store, seed::derive(cfg.seed, "prompt-pool"))?;
    let mut pools = Pools::default();
    for r in state.records() {
        match (r.provenance, r.review_status) {
            (Provenance::Manual, _) => pools.manual.push(r.clone()),
            (Provenance::Synthetic, ReviewStatus::Accepted) => pools.synthetic.push(r.clone()),
            _ => {}
        }
    }
    Ok(pools)
}

/// The pools restricted and, for reduced schemas, relabelled for `plan`.
pub fn pools_for(plan: &crate::assembler::ExperimentPlan, pools: &Pools) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let urc = |v: &[ImageRecord]| -> Vec<ImageRecord> {
        v.iter().filter(|r| URC_LABELS.contains(&r.label.as_str())).cloned().collect()
    };
    match plan.schema.kind() {
        SchemaKind::Reduced(x) => Ok((reduce_labels(&urc(&pools.manual), x)?, reduce_labels(&urc(&pools.synthetic), x)?)),
        _ => Ok((
            Vec::new(),
            pools.synthetic.iter().filter(|r| HRP_LABELS.contains(&r.label.as_str())).cloned().collect(),
        )),
    }
}

pub fn assemble_experiment(cfg: &PipelineConfig, pools: &Pools, name: &str) -> Result<AssemblyReport> {
    let plan = cfg.plan(name)?;
    let (manual, synthetic) = pools_for(&plan, pools)?;
    let report = assemble(&plan, &manual, &synthetic)?;
    report.save(&cfg.out.join(name))?;
    Ok(report)
}

/// assemble, train, predict, evaluate and write the report directory.
pub fn run_experiment(cfg: &PipelineConfig, bridge: &ClassifierBridge, pools: &Pools, name: &str) -> Result<MetricsDoc> {
    let assembly = assemble_experiment(cfg, pools, name)?;
    let manifest = &assembly.manifest;
    let dir = cfg.out.join(name);
    let handle = bridge.train(manifest, &cfg.train_config())?;
    let preds = bridge.predict(&handle, manifest)?;
    preds.save_csv(dir.join(PREDICTIONS_FILE))?;
    let report = evaluate(name, &manifest.test, &preds, cfg.classifier.roc_mode)?;
    emit_report(&report, &dir)?;
    Ok(report.doc())
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub name: String,
    pub result: Result<MetricsDoc>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub outcomes: Vec<ExperimentOutcome>,
}

impl RunSummary {
    pub fn all_succeeded(&self) -> bool {
        self.outcomes.iter().all(|o| o.result.is_ok())
    }

    pub fn docs(&self) -> Vec<MetricsDoc> {
        self.outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect()
    }
}

/// Runs the named experiments (all configured ones when empty). A failing
/// experiment does not stop the others.
pub fn run(cfg: &PipelineConfig, names: &[String]) -> Result<RunSummary> {
    let names: Vec<String> = if names.is_empty() { cfg.experiments.clone() } else { names.to_vec() };
    for n in &names {
        cfg.plan(n).map_err(|e| Error::Config(format!("experiment {n}: {e}")))?;
    }
    let pools = load_pools(cfg)?;
    let bridge = ClassifierBridge::new(&cfg.store);
    let run_one = |name: &String| ExperimentOutcome {
        name: name.clone(),
        result: run_experiment(cfg, &bridge, &pools, name),
    };
    let outcomes = if cfg.parallel_experiments > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.parallel_experiments)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| names.par_iter().map(run_one).collect())
    } else {
        names.iter().map(run_one).collect()
    };
    let summary = RunSummary { outcomes };
    emit_summary(&summary.docs(), &cfg.out)?;
    Ok(summary)
}

/// Every `<out>/<experiment>/metrics.json`, sorted by experiment name.
pub fn collect_reports(out: &Path) -> Result<Vec<MetricsDoc>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(METRICS_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_metrics(d.join(METRICS_FILE))).collect()
}
