use std::path::Path;
use std::process::{Command, Output};

fn sig(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sig"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SIG_BACKEND_URL")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn last_stderr_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("a JSON line on stderr");
    serde_json::from_str(line).unwrap()
}

fn write_config(dir: &Path, body: &str) {
    std::fs::write(dir.join("sig.json"), body).unwrap();
}

const SMALL: &str = r#"{"out_dir": "run", "dataset": {"identities_per_cell": 1},
    "retry": {"max_attempts": 2, "base_delay_ms": 10, "max_delay_ms": 20}}"#;

#[test]
fn analyze_before_embed_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let out = sig(&["analyze", "--config", "sig.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = last_stderr_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert!(err["path"].as_str().unwrap().ends_with("embeddings.emb1"));
    assert!(out.stdout.is_empty());
}

#[test]
fn invalid_config_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    write_config(
        dir.path(),
        r#"{"dataset": {"ages": [], "poses": ["front", "front"]}, "concurrency": 0}"#,
    );
    let out = sig(&["plan", "--config", "sig.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = last_stderr_json(&out);
    assert_eq!(err["error"], "invalid_config");
    assert_eq!(err["violations"].as_array().unwrap().len(), 3, "{err}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.lines().count(), 1, "one-line error: {stderr}");

    write_config(dir.path(), r#"{"bogus": 1}"#);
    let out = sig(&["plan", "--config", "sig.json"], dir.path());
    assert_eq!(last_stderr_json(&out)["error"], "invalid_config");
}

#[test]
fn pool_stats_tallies_the_bundled_pool() {
    let dir = tempfile::tempdir().unwrap();
    let out = sig(&["pool-stats"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), 9);
    for row in &rows[..8] {
        assert_eq!(row[2], "26");
        assert_eq!(row[3], "2600");
    }
    assert_eq!(rows[8], vec!["total", "208", "1478256"]);

    std::fs::write(
        dir.path().join("pool.csv"),
        "name,gender,race,country\nA,female,asian,JP\nB,female,asian,JP\nC,female,asian,CN\nD,female,asian,KR\n",
    )
    .unwrap();
    let out = sig(&["pool-stats", "--pool", "pool.csv"], dir.path());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["Asian", "Female", "4", "4"]), "{text}");
}

#[test]
fn dry_run_counts_jobs_without_a_backend() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert!(sig(&["plan", "--config", "sig.json"], dir.path()).status.success());
    let out = sig(
        &["generate", "--config", "sig.json", "--dry-run", "--backend-url", "http://127.0.0.1:9"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = last_stderr_json(&out);
    assert_eq!(v["jobs"], 72);
    assert_eq!(v["pending"], 72);
    assert!(!dir.path().join("run/manifest.jsonl").exists());
}

#[test]
fn unreachable_backend_is_reported_and_manifest_untouched() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    assert!(sig(&["plan", "--config", "sig.json"], dir.path()).status.success());
    let out = sig(
        &["generate", "--config", "sig.json", "--backend-url", "http://127.0.0.1:9"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(last_stderr_json(&out)["error"], "backend_unreachable");
    assert!(!dir.path().join("run/manifest.jsonl").exists());
}

#[test]
fn generate_requires_a_plan() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let out = sig(&["generate", "--config", "sig.json", "--dry-run"], dir.path());
    let err = last_stderr_json(&out);
    assert_eq!(err["error"], "missing_input");
    assert!(err["path"].as_str().unwrap().ends_with("plan.jsonl"));
}

#[test]
fn plans_are_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), SMALL);
    let plan = |extra: &[&str]| {
        let mut args = vec!["plan", "--config", "sig.json"];
        args.extend_from_slice(extra);
        assert!(sig(&args, dir.path()).status.success());
        std::fs::read(dir.path().join("run/plan.jsonl")).unwrap()
    };
    let a = plan(&[]);
    let b = plan(&[]);
    let c = plan(&["--seed", "99"]);
    let d = plan(&["--seed", "99", "--out", "other"]);
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(std::fs::read(dir.path().join("other/plan.jsonl")).unwrap(), c);
    assert_eq!(d, c);
}
