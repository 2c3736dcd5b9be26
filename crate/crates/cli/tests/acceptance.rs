//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use cadastre_core::eval::roc_from_scores;
use cadastre_core::eval::report::load_metrics;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn outcome(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let k = [2, 3, 8][i % 3];
        worst = worst.max(metrics_disagreement(&random_matrix(&mut rng, k, 200)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 10.0, format!("1000 matrices, max deviation {worst:.1e}, {secs:.2}s"))
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let worst = (0..200).map(|_| auc_disagreement(&mut rng)).fold(0.0, f64::max);
    let flat = roc_from_scores("c", &[0.4; 50], &(0..50).map(|i| i % 3 == 0).collect::<Vec<_>>())
        .unwrap()
        .auc;
    outcome(worst <= 1e-9 && flat == 0.5, format!("200 fixtures, max deviation {worst:.1e}, all-equal auc {flat}"))
}

fn fixture_replication() -> Outcome {
    let lines: Vec<(String, bool)> = TARGETS.iter().flat_map(check_reference).collect();
    let failed: Vec<&str> = lines.iter().filter(|(_, ok)| !ok).map(|(l, _)| l.as_str()).collect();
    let detail = if failed.is_empty() {
        format!("{} reported numbers reproduced", lines.len())
    } else {
        failed.join("; ")
    };
    outcome(failed.is_empty(), detail)
}

fn assembler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut assembled = 0;
    for i in 0..500 {
        match assembler_trial(&mut rng) {
            Ok(built) => assembled += built as usize,
            Err(e) => return outcome(false, format!("instance {i}: {e}")),
        }
    }
    let sizes = [
        default_split_sizes("mixed-stucco") == vec![(596, 149); 3],
        default_split_sizes("synthetic") == vec![(596, 149); 3],
        default_split_sizes("mixed-siding") == vec![(248, 62); 3],
    ];
    let stucco = augmented_fraction("stucco", &[("null", 125), ("other", 125), ("stucco", 91)]);
    let siding = augmented_fraction("siding", &[("null", 125), ("other", 125), ("siding", 25)]);
    let ok = assembled >= 250
        && sizes.iter().all(|&s| s)
        && (stucco - 0.27).abs() < 1e-12
        && (siding - 0.80).abs() < 1e-12;
    outcome(
        ok,
        format!("500 instances ({assembled} assembled), default sizes {sizes:?}, augmented fractions {stucco:.2}/{siding:.2}"),
    )
}

fn cadastre(cfg: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_cadastre"))
        .arg("--config")
        .arg(cfg)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("cadastre {args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn end_to_end() -> Outcome {
    match end_to_end_inner() {
        Ok(o) => o,
        Err(e) => outcome(false, e),
    }
}

fn end_to_end_inner() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg_dir = dir.path().join("configs");
    std::fs::create_dir_all(&cfg_dir).map_err(|e| e.to_string())?;
    let cfg = cfg_dir.join("stub.toml");
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/stub.toml");
    std::fs::copy(&src, &cfg).map_err(|e| e.to_string())?;

    let start = Instant::now();
    cadastre(&cfg, &["stub-corpus"])?;
    cadastre(&cfg, &["generate", "--auto-review"])?;
    let generated = start.elapsed().as_secs_f64();
    let run_start = Instant::now();
    cadastre(&cfg, &["run"])?;
    let run_secs = run_start.elapsed().as_secs_f64();
    let total = start.elapsed().as_secs_f64();

    let second = dir.path().join("work/out-second");
    cadastre(&cfg, &["--out", second.to_str().unwrap(), "run"])?;
    let first = dir.path().join("work/out");
    let names = cadastre_core::assembler::primary_experiment_names();
    let mut identical = true;
    for n in &names {
        let a = std::fs::read(first.join(n).join("metrics.json")).map_err(|e| format!("{n}: {e}"))?;
        let b = std::fs::read(second.join(n).join("metrics.json")).map_err(|e| format!("{n}: {e}"))?;
        identical &= a == b;
    }
    let mut f1 = Vec::new();
    for n in ["baseline-stucco", "baseline-siding"] {
        f1.push(load_metrics(first.join(n).join("metrics.json")).map_err(|e| e.to_string())?.weighted.f1);
    }
    let ok = total < 300.0 && identical && f1.iter().all(|&f| f >= 0.9);
    Ok(outcome(
        ok,
        format!(
            "{} experiments, corpus+generate {generated:.0}s, run {run_secs:.0}s, total {total:.0}s, metrics identical {identical}, baseline f1 {:.3}/{:.3}",
            names.len(),
            f1[0],
            f1[1]
        ),
    ))
}

fn triage_conservation() -> Outcome {
    let start = Instant::now();
    match std::panic::catch_unwind(|| triage_conservation_trial(10_000, 4)) {
        Ok(()) => outcome(true, format!("10000 interleaved operations on 4 threads, replay equal, {:.1}s", start.elapsed().as_secs_f64())),
        Err(e) => outcome(false, e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())),
    }
}

fn calibration() -> Outcome {
    let (overall, per_label) = calibration_rates(2000, 1);
    let stucco = per_label["stucco"];
    let ok = (overall - 0.24).abs() <= 0.03 && (stucco - 0.45).abs() <= 0.03;
    outcome(ok, format!("2000 requests, irrelevance overall {overall:.3} stucco {stucco:.3}"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("metrics oracle", metrics_oracle),
        ("auc oracle", auc_oracle),
        ("fixture replication", fixture_replication),
        ("assembler", assembler),
        ("end to end", end_to_end),
        ("triage conservation", triage_conservation),
        ("calibration", calibration),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        println!("{} [{}] {name}: {}", if o.ok { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += !o.ok as usize;
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
