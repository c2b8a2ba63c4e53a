//! Exercise the composable subcommands over their file interfaces: each
//! stage consumes the previous stage's artifacts from disk.

use std::path::Path;
use std::process::Command;

fn edrk(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_edrk"))
        .args(args)
        .output()
        .expect("spawn edrk")
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&serde_json::json!({
            "seed": 9,
            "n_visits": 800,
            "narrative_count": 6,
            "variant": "with_llm",
        }))
        .unwrap(),
    )
    .unwrap();
    path
}

#[test]
fn stage_chain_runs_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let config = config.to_str().unwrap();
    let out = dir.path().join("work");
    let out_s = out.to_str().unwrap();

    let gen = edrk(&["generate", "--config", config, "--out", out_s]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(out.join("cohort/visits.csv").exists());

    let cohort_dir = out.join("cohort");
    let ex = edrk(&[
        "extract",
        "--config",
        config,
        "--offline",
        "--cohort",
        cohort_dir.to_str().unwrap(),
        "--out",
        out_s,
    ]);
    assert!(ex.status.success(), "{}", String::from_utf8_lossy(&ex.stderr));
    let extracted = out.join("extract/extracted.jsonl");
    assert!(extracted.exists());

    let harm = edrk(&[
        "harmonize",
        "--config",
        config,
        "--cohort",
        cohort_dir.to_str().unwrap(),
        "--extracted",
        extracted.to_str().unwrap(),
        "--out",
        out_s,
    ]);
    assert!(harm.status.success(), "{}", String::from_utf8_lossy(&harm.stderr));
    assert!(out.join("harmonize/features_with_llm.csv").exists());
    assert!(out.join("harmonize/features_with_llm.meta.json").exists());

    let train = edrk(&[
        "train",
        "--config",
        config,
        "--features",
        out.join("harmonize").to_str().unwrap(),
        "--out",
        out_s,
    ]);
    assert!(train.status.success(), "{}", String::from_utf8_lossy(&train.stderr));
    assert!(out.join("train/model_gbt_with_llm.json").exists());
    assert!(out.join("train/metrics_with_llm.json").exists());

    let explain = edrk(&["explain", "--config", config, "--run", out_s]);
    assert!(explain.status.success(), "{}", String::from_utf8_lossy(&explain.stderr));
    assert!(out.join("explain/manifest.json").exists());
    assert!(out.join("explain/sources.json").exists());

    let assess = edrk(&["assess", "--run", out_s]);
    assert!(assess.status.success(), "{}", String::from_utf8_lossy(&assess.stderr));
    assert!(out.join("assess/report.json").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("assess/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["error_rate"], 0.0);
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = edrk(&["run"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn unreadable_config_exits_2() {
    let out = edrk(&["run", "--config", "/nonexistent/nope.json", "--offline"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read config"));
}

#[test]
fn bad_variant_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = edrk(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--offline",
        "--variant",
        "sideways",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_directories_are_never_reused() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("c.json");
    std::fs::write(
        &config_path,
        serde_json::to_string(&serde_json::json!({
            "seed": 3,
            "n_visits": 600,
            "narrative_count": 3,
            "variant": "without_llm",
        }))
        .unwrap(),
    )
    .unwrap();
    let out = dir.path().join("runs");
    for _ in 0..2 {
        let r = edrk(&[
            "run",
            "--config",
            config_path.to_str().unwrap(),
            "--offline",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let dirs: Vec<_> = std::fs::read_dir(&out).unwrap().collect();
    assert_eq!(dirs.len(), 2, "each run gets a fresh directory");
}
