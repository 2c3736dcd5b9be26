//! `cadastre` command line: corpus, generation, triage service, assembly,
//! experiment runs and report collection.

pub mod server;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use cadastre_core::assembler::REPORT_FILE;
use cadastre_core::config::PipelineConfig;
use cadastre_core::eval::report::{emit_summary, summary_table};
use cadastre_core::pipeline;
use cadastre_core::seed;
use cadastre_core::synth::BackendKind;
use cadastre_core::triage::TriageService;
use cadastre_core::{Error, Result, Split};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cadastre", version, about = "Synthetic facade-material dataset pipeline")]
pub struct Cli {
    /// Study configuration (TOML).
    #[arg(long, global = true, default_value = "cadastre.toml")]
    pub config: PathBuf,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured image backend.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Stub,
    Remote,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render the procedural manual corpus into the image store.
    StubCorpus,
    /// Generate synthetic images for one label, or for every label in [generation].
    Generate(GenerateArgs),
    /// Run the triage HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Assemble experiment manifests without training.
    Assemble { experiments: Vec<String> },
    /// Assemble, train, predict and evaluate experiments.
    Run {
        experiments: Vec<String>,
        /// Experiments run concurrently.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Collect per-experiment metrics into a summary.
    Report,
    /// Print triage statistics as JSON.
    Stats,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Batch index; a new index draws fresh request seeds.
    #[arg(long, default_value_t = 0)]
    pub batch: u64,
    /// Decide every new image from the stub's ground truth.
    #[arg(long)]
    pub auto_review: bool,
}

pub fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    match cli.backend {
        Some(BackendArg::Stub) => cfg.backend.kind = BackendKind::LocalStub,
        Some(BackendArg::Remote) => cfg.backend.kind = BackendKind::RemoteApi,
        None => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_generate(cfg: &PipelineConfig, args: &GenerateArgs) -> Result<ExitCode> {
    let counts: Vec<(String, usize)> = match &args.label {
        Some(l) => vec![(l.clone(), args.n)],
        None => cfg
            .labels()
            .into_iter()
            .filter_map(|l| cfg.generation.get(&l).map(|n| (l, *n)))
            .collect(),
    };
    if counts.is_empty() {
        return Err(Error::Config("no --label given and [generation] is empty".into()));
    }
    let batch_seed = seed::derive(cfg.seed, &format!("batch:{}", args.batch));
    let s = pipeline::generate(cfg, &counts, batch_seed, args.auto_review)?;
    for (id, n) in &s.per_prompt {
        println!("{id}\t{n}");
    }
    println!(
        "requested {}  new {}  cached {}  backend calls {}  failed {}",
        s.requested,
        s.new_images,
        s.cache_hits,
        s.backend_calls,
        s.failures.len()
    );
    if args.auto_review {
        println!("auto-review: accepted {}  rejected {}", s.accepted, s.rejected);
    }
    for f in &s.failures {
        eprintln!("failed: {f}");
    }
    Ok(if s.failures.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_serve(cfg: &PipelineConfig, bind: Option<&str>) -> Result<ExitCode> {
    let token = cfg.triage.resolve_token()?;
    let bind = bind.unwrap_or(&cfg.triage.bind);
    let addr = bind
        .parse()
        .map_err(|e| Error::Config(format!("bad bind address {bind:?}: {e}")))?;
    let service = Arc::new(TriageService::open(&cfg.store, seed::derive(cfg.seed, "prompt-pool"))?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Service(e.to_string()))?;
    rt.block_on(server::serve(service, &token, cfg.triage.static_dir.clone(), addr))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_assemble(cfg: &PipelineConfig, names: &[String]) -> Result<ExitCode> {
    let names = if names.is_empty() { cfg.experiments.clone() } else { names.to_vec() };
    let pools = pipeline::load_pools(cfg)?;
    let mut failed = false;
    for name in &names {
        match pipeline::assemble_experiment(cfg, &pools, name) {
            Ok(r) => {
                let counts = |split| {
                    r.manifest
                        .class_counts(split)
                        .iter()
                        .map(|(l, n)| format!("{l}={n}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                println!("{name}: train [{}] test [{}]", counts(Split::Train), counts(Split::Test));
                println!("  -> {}", cfg.out.join(name).join(REPORT_FILE).display());
            }
            Err(e) if e.is_usage() => return Err(e),
            Err(e) => {
                failed = true;
                eprintln!("{name}: {e}");
            }
        }
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_run(cfg: &mut PipelineConfig, names: &[String], parallel: Option<usize>) -> Result<ExitCode> {
    if let Some(p) = parallel {
        cfg.parallel_experiments = p.max(1);
    }
    let summary = pipeline::run(cfg, names)?;
    let docs = summary.docs();
    print!("{}", summary_table(&docs));
    for o in &summary.outcomes {
        if let Err(e) = &o.result {
            eprintln!("{}: FAILED: {e}", o.name);
        }
    }
    Ok(if summary.all_succeeded() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_report(cfg: &PipelineConfig) -> Result<ExitCode> {
    let docs = pipeline::collect_reports(&cfg.out)?;
    if docs.is_empty() {
        eprintln!("no experiment reports under {}", cfg.out.display());
        return Ok(ExitCode::from(1));
    }
    emit_summary(&docs, &cfg.out)?;
    print!("{}", summary_table(&docs));
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(cfg: &PipelineConfig) -> Result<ExitCode> {
    let service = TriageService::open(&cfg.store, seed::derive(cfg.seed, "prompt-pool"))?;
    let json = serde_json::to_string_pretty(&service.stats()).map_err(|e| Error::Service(e.to_string()))?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}

pub fn execute(cli: Cli) -> Result<ExitCode> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::StubCorpus => {
            let n = pipeline::stub_corpus(&cfg)?;
            println!("wrote {n} manual images to {}", cfg.store.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Generate(args) => cmd_generate(&cfg, args),
        Command::Serve { bind } => cmd_serve(&cfg, bind.as_deref()),
        Command::Assemble { experiments } => cmd_assemble(&cfg, experiments),
        Command::Run { experiments, parallel } => cmd_run(&mut cfg, experiments, *parallel),
        Command::Report => cmd_report(&cfg),
        Command::Stats => cmd_stats(&cfg),
    }
}

/// Exit codes: 0 success, 1 runtime or experiment failure, 2 usage or config error.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> ExitCode {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
