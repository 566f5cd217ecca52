//! Acceptance checks, one line per criterion. Run with
//! `cargo test -p sig-cli --test acceptance`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use sig_core::analysis::{kde, ks_statistic, similarity_score, trapezoid};
use sig_core::embedding::{oracle_vector, OracleKeys};
use sig_core::manifest::{verify_manifest, VerifyStatus};
use sig_core::plan::DEFAULT_TEMPLATE;
use sig_core::seed::{self, sha256_hex};
use sig_core::{
    build_bundles, count_triplets, plan_dataset, DatasetConfig, Manifest, OracleParams, PromptTemplate, Status,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn sig_bin() -> &'static str {
    env!("CARGO_BIN_EXE_sig")
}

fn sig(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(sig_bin())
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .env_remove("SIG_BACKEND_URL")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("sig {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// `sig mock-serve` on a free port; killed on drop.
struct MockProcess {
    child: Child,
    url: String,
}

impl MockProcess {
    fn start(latency_ms: Option<u64>) -> Result<Self, String> {
        let mut cmd = Command::new(sig_bin());
        cmd.args(["mock-serve", "--port", "0"]).env("RUST_LOG", "warn");
        if let Some(ms) = latency_ms {
            cmd.args(["--latency-ms", &ms.to_string()]);
        }
        let mut child = cmd
            .stderr(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()
            .map_err(|e| e.to_string())?;
        let mut lines = BufReader::new(child.stderr.take().expect("piped")).lines();
        let url = loop {
            let line = lines
                .next()
                .ok_or("mock exited before listening")?
                .map_err(|e| e.to_string())?;
            if let Ok(v) = serde_json::from_str::<Value>(&line) {
                if let Some(url) = v["listening"].as_str() {
                    break url.to_string();
                }
            }
        };
        std::thread::spawn(move || lines.for_each(drop));
        Ok(Self { child, url })
    }
}

impl Drop for MockProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn desk_config(dir: &Path, url: &str) -> Result<(), String> {
    let cfg = serde_json::json!({
        "out_dir": "run",
        "backend_url": url,
        "concurrency": 4,
        "dataset": {"identities_per_cell": 1, "master_seed": 2024},
        "retry": {"base_delay_ms": 50, "max_delay_ms": 200},
    });
    std::fs::write(dir.join("sig.json"), cfg.to_string()).map_err(|e| e.to_string())
}

fn combinatorics() -> Outcome {
    let paper = count_triplets(3975);
    ensure!(paper == 10_460_015_075u64.into(), "C(3975,3) = {paper}");
    for n in 0..=30u64 {
        let mut brute = 0u64;
        for i in 0..n {
            for j in i + 1..n {
                for _k in j + 1..n {
                    brute += 1;
                }
            }
        }
        ensure!(count_triplets(n) == brute.into(), "n={n}: {} vs {brute}", count_triplets(n));
    }
    Ok(format!("C(3975,3) = {paper}; n = 0..=30 match enumeration"))
}

fn table1_plan() -> Outcome {
    let config = DatasetConfig::default();
    let plan = plan_dataset(&config, &sig_core::sample_pool()).map_err(|e| e.to_string())?;
    let template = PromptTemplate::parse(DEFAULT_TEMPLATE).map_err(|e| e.to_string())?;
    let bundles = build_bundles(&config, &plan, &template).map_err(|e| e.to_string())?;
    ensure!(plan.len() == 3336, "{} identities", plan.len());
    ensure!(bundles.len() == 10_008, "{} images", bundles.len());
    let mut race = BTreeMap::new();
    let mut gender = BTreeMap::new();
    let mut age = BTreeMap::new();
    for s in &plan {
        *race.entry(s.demographics.race).or_insert(0) += 1;
        *gender.entry(s.demographics.gender).or_insert(0) += 1;
        *age.entry(s.demographics.age).or_insert(0) += 1;
    }
    ensure!(race.len() == 4 && race.values().all(|&c| c == 834), "race {race:?}");
    ensure!(gender.len() == 2 && gender.values().all(|&c| c == 1668), "gender {gender:?}");
    ensure!(age.len() == 3 && age.values().all(|&c| c == 1112), "age {age:?}");
    let triplets: HashSet<_> = plan.iter().map(|s| &s.triplet.canonical_key).collect();
    ensure!(triplets.len() == plan.len(), "duplicate triplets");
    Ok("3336 identities, 10008 bundles; 834/race, 1668/gender, 1112/age; triplets unique".into())
}

fn report_integrals(report_dir: &Path) -> Result<usize, String> {
    let mut curves = 0;
    for entry in std::fs::read_dir(report_dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let mut rdr = csv_rows(&path)?;
            let header = rdr.remove(0);
            let x: Vec<f64> = rdr.iter().map(|r| r[0].parse().unwrap()).collect();
            for col in 1..header.len() {
                let y: Vec<f64> = rdr.iter().map(|r| r[col].parse().unwrap()).collect();
                let integral = trapezoid(&x, &y);
                ensure!(
                    (integral - 1.0).abs() <= 1e-3,
                    "{} column {}: integral {integral}",
                    path.display(),
                    header[col]
                );
                curves += 1;
            }
        }
    }
    Ok(curves)
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    Ok(text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn desk_end_to_end(work: &Path) -> Outcome {
    let start = Instant::now();
    let mock = MockProcess::start(None)?;
    desk_config(work, &mock.url)?;
    for step in ["plan", "generate", "verify", "embed", "analyze"] {
        sig(&[step, "--config", "sig.json"], work)?;
    }
    let elapsed = start.elapsed();
    drop(mock);
    let run = work.join("run");
    let manifest = Manifest::load(run.join("manifest.jsonl")).map_err(|e| e.to_string())?;
    ensure!(manifest.len() == 72, "{} records", manifest.len());
    ensure!(manifest.count(Status::Generated) == 72, "{} generated", manifest.count(Status::Generated));
    let report = verify_manifest(&manifest, &run);
    ensure!(report.count(VerifyStatus::Ok) == 72, "{} checksums match", report.count(VerifyStatus::Ok));
    let report_dir = run.join("report");
    let json: Value = serde_json::from_slice(&std::fs::read(report_dir.join("report.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure!(json["report_version"] == 1, "report_version {}", json["report_version"]);
    let densities = ["african", "asian", "caucasian", "indian"]
        .iter()
        .filter(|r| report_dir.join(format!("density_{r}.csv")).exists())
        .count();
    ensure!(densities == 4, "{densities} density CSVs");
    ensure!(report_dir.join("heatmap_SIG.svg").exists(), "no heatmap");
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "72/72 generated with matching checksums; report with 4 density CSVs + heatmap in {:.2} s",
        elapsed.as_secs_f64()
    ))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn oracle_statistics() -> Outcome {
    let params = OracleParams::default();
    let keys = |identity: usize, pose: &str| OracleKeys {
        identity: sha256_hex(format!("identity-{identity}").as_bytes()),
        pose: pose.into(),
        seed: (identity as u64 * 7919).to_string(),
    };
    let identities = 2000;
    let front: Vec<Vec<f32>> = (0..identities).map(|i| oracle_vector(&params, &keys(i, "front"))).collect();
    let left: Vec<Vec<f32>> = (0..identities).map(|i| oracle_vector(&params, &keys(i, "left"))).collect();

    let mut rng = seed::rng(11);
    let mut seen = HashSet::new();
    let mut nonmated = Vec::new();
    while nonmated.len() < 10_000 {
        let (a, b) = (rng.random_range(0..identities), rng.random_range(0..identities));
        if a != b && seen.insert((a.min(b), a.max(b))) {
            nonmated.push(similarity_score(&front[a], &front[b]).map_err(|e| e.to_string())?);
        }
    }
    let mated: Vec<f64> = (0..identities)
        .map(|i| similarity_score(&front[i], &left[i]).unwrap())
        .collect();
    let (nm_mean, nm_std) = mean_std(&nonmated);
    let (m_mean, _) = mean_std(&mated);
    let expected_std = 1.0 / (2.0 * (512f64).sqrt());
    ensure!((0.49..=0.51).contains(&nm_mean), "non-mated mean {nm_mean}");
    ensure!(
        (nm_std - expected_std).abs() <= 0.2 * expected_std,
        "non-mated std {nm_std} vs {expected_std}"
    );
    let separation = (m_mean - nm_mean) / nm_std;
    ensure!(separation >= 10.0, "mated mean {m_mean} is {separation} std above");
    Ok(format!(
        "10000 non-mated: mean {nm_mean:.4}, std {nm_std:.4} (expected {expected_std:.4}); mated mean {m_mean:.4} = {separation:.1} std above"
    ))
}

/// max_v |F_a(v) - F_b(v)| evaluated at every sample value.
fn naive_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |xs: &[f64], v: f64| xs.iter().filter(|&&x| x <= v).count() as f64 / xs.len() as f64;
    a.iter()
        .chain(b)
        .map(|&v| (cdf(a, v) - cdf(b, v)).abs())
        .fold(0.0, f64::max)
}

fn kde_validity(report_dir: &Path) -> Outcome {
    let emitted = report_integrals(report_dir)?;
    let mut rng = seed::rng(5);
    let normal = Normal::new(0.5, 0.02).unwrap();
    let sets: Vec<Vec<f64>> = vec![
        vec![0.7; 50],
        (0..10_000).map(|_| normal.sample(&mut rng)).collect(),
        (0..500).map(|_| rng.random::<f64>()).collect(),
        (0..400)
            .map(|i| if i % 2 == 0 { 0.2 } else { 0.8 } + normal.sample(&mut rng))
            .collect(),
        vec![0.0, 1.0],
    ];
    for (k, s) in sets.iter().enumerate() {
        let curve = kde(s, None, None).map_err(|e| e.to_string())?;
        let integral = curve.integral();
        ensure!((integral - 1.0).abs() <= 1e-3, "synthetic set {k}: integral {integral}");
        ensure!(curve.density.iter().all(|&d| d >= 0.0), "negative density");
    }
    let mut checked = 0;
    for trial in 0..60 {
        let n = [1, 2, 7, 50, 333, 1000][trial % 6];
        let m = [1, 3, 1000, 64, 999, 1000][(trial / 6) % 6];
        // Coarse rounding forces ties within and across samples.
        let draw = |rng: &mut seed::SigRng, len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| (normal.sample(rng) * if trial % 2 == 0 { 100.0 } else { 1e6 }).round())
                .collect()
        };
        let a = draw(&mut rng, n);
        let b = draw(&mut rng, m);
        let ks = ks_statistic(&a, &b).map_err(|e| e.to_string())?;
        let naive = naive_ks(&a, &b);
        ensure!(ks == naive, "trial {trial}: ks {ks} vs naive {naive}");
        ensure!(ks_statistic(&a, &a).map_err(|e| e.to_string())? == 0.0, "KS(a,a) != 0");
        checked += 1;
    }
    Ok(format!(
        "{emitted} emitted curves and 5 synthetic sets integrate to 1±1e-3; KS(a,a)=0 and KS == naive on {checked} sample pairs up to n=1000"
    ))
}

fn strip_timestamps(path: &Path) -> Result<Vec<Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            let obj = v.as_object_mut().ok_or("record is not an object")?;
            obj.remove("created_at");
            obj.remove("updated_at");
            Ok(v)
        })
        .collect()
}

fn image_checksums(run: &Path) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(run.join("images")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), sha256_hex(&bytes));
    }
    Ok(out)
}

fn determinism_and_resume(work: &Path, reference: &Path) -> Outcome {
    let mock = MockProcess::start(Some(60))?;
    desk_config(work, &mock.url)?;
    sig(&["plan", "--config", "sig.json"], work)?;
    let plan_same = std::fs::read(work.join("run/plan.jsonl")).ok() == std::fs::read(reference.join("run/plan.jsonl")).ok();
    ensure!(plan_same, "plan.jsonl differs between runs");

    let manifest_path = work.join("run/manifest.jsonl");
    let mut child = Command::new(sig_bin())
        .args(["generate", "--config", "sig.json", "--concurrency", "2"])
        .current_dir(work)
        .env("RUST_LOG", "warn")
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(30);
    let generated_lines = || {
        std::fs::read_to_string(&manifest_path)
            .map(|t| t.matches("\"status\":\"generated\"").count())
            .unwrap_or(0)
    };
    while generated_lines() < 10 {
        ensure!(Instant::now() < deadline, "run did not progress");
        ensure!(child.try_wait().map_err(|e| e.to_string())?.is_none(), "run finished before it could be killed");
        std::thread::sleep(Duration::from_millis(5));
    }
    child.kill().map_err(|e| e.to_string())?;
    child.wait().map_err(|e| e.to_string())?;
    let at_kill = generated_lines();
    ensure!(at_kill < 72, "nothing left to resume ({at_kill} generated)");

    sig(&["generate", "--config", "sig.json"], work)?;
    drop(mock);
    let resumed = strip_timestamps(&manifest_path)?;
    let uninterrupted = strip_timestamps(&reference.join("run/manifest.jsonl"))?;
    ensure!(resumed.len() == 72, "{} records after resume", resumed.len());
    ensure!(resumed == uninterrupted, "manifests differ after removing timestamps");
    let a = image_checksums(&work.join("run"))?;
    let b = image_checksums(&reference.join("run"))?;
    ensure!(a.len() == 72 && a == b, "image checksums differ");

    sig(&["embed", "--config", "sig.json"], work)?;
    let emb_same = std::fs::read(work.join("run/embeddings.emb1")).ok()
        == std::fs::read(reference.join("run/embeddings.emb1")).ok();
    ensure!(emb_same, "embeddings differ");
    Ok(format!(
        "killed after {at_kill}/72 generated; resumed manifest, 72 image checksums and embeddings identical to uninterrupted run"
    ))
}

fn similarity_normalization() -> Outcome {
    let tol = 1e-6;
    let mut rng = seed::rng(3);
    for dim in [2usize, 3, 128, 512] {
        let mut e1 = vec![0f32; dim];
        let mut e2 = vec![0f32; dim];
        e1[0] = 1.0;
        e2[dim - 1] = 1.0;
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let neg: Vec<f32> = v.iter().map(|x| -x).collect();
        let s = |a: &[f32], b: &[f32]| similarity_score(a, b).map_err(|e| e.to_string());
        ensure!((s(&e1, &e2)? - 0.5).abs() <= tol, "orthogonal dim {dim}: {}", s(&e1, &e2)?);
        ensure!((s(&v, &v)? - 1.0).abs() <= tol, "identical dim {dim}: {}", s(&v, &v)?);
        ensure!(s(&v, &neg)?.abs() <= tol, "antipodal dim {dim}: {}", s(&v, &neg)?);
    }
    Ok("orthogonal 0.5, identical 1.0, antipodal 0.0 within 1e-6 for dims 2, 3, 128, 512".into())
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let scratch = tempfile::tempdir().expect("tempdir");
    let desk = scratch.path().join("desk");
    let resume = scratch.path().join("resume");
    std::fs::create_dir_all(&desk).unwrap();
    std::fs::create_dir_all(&resume).unwrap();
    let desk_report: PathBuf = desk.join("run/report");

    type Check<'a> = (&'a str, Option<Duration>, Box<dyn FnOnce() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("combinatorics", Some(Duration::from_secs(1)), Box::new(combinatorics)),
        ("table 1 plan", Some(Duration::from_secs(10)), Box::new(table1_plan)),
        ("desk end-to-end", Some(Duration::from_secs(60)), Box::new(|| desk_end_to_end(&desk))),
        ("oracle statistics", None, Box::new(oracle_statistics)),
        ("kde validity", None, Box::new(|| kde_validity(&desk_report))),
        ("determinism and resume", None, Box::new(|| determinism_and_resume(&resume, &desk))),
        ("similarity normalization", None, Box::new(similarity_normalization)),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, limit) {
            if elapsed > limit {
                outcome = Err(format!("took {elapsed:?}, limit {limit:?}"));
            }
        }
        match outcome {
            Ok(detail) => println!("PASS  {name:<26} {:>8.3} s  {detail}", elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name:<26} {:>8.3} s  {detail}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
