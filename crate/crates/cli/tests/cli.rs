use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn openloop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_openloop")).args(args).output().unwrap()
}

fn run(verb: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![verb, cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    openloop(&args)
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn s1_with(edit: impl FnOnce(&mut serde_json::Value), dir: &Path) -> PathBuf {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(scenario("s1.json")).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

#[test]
fn solve_is_deterministic_and_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run("solve", &scenario("s1.json"), out, &["--paths", "2000"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["strategy.csv", "solution.csv", "solution.json", "h.json", "report.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let table = std::fs::read_to_string(a.join("strategy.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "t,c_star_mean,pi_star_1");
    let first: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(first[0], 0.0);
    assert!((first[2] - 0.3).abs() <= 1e-10);

    let r = report(&a);
    assert_eq!(r["seed"], 42);
    assert_eq!(r["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn golden_s1_artifacts_regenerate() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/s1");
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", &scenario("s1.json"), dir.path(), &["--paths", "2000"]);
    assert!(o.status.success());
    for f in ["strategy.csv", "solution.csv", "solution.json", "h.json"] {
        assert_eq!(
            std::fs::read_to_string(golden.join(f)).unwrap(),
            std::fs::read_to_string(dir.path().join(f)).unwrap(),
            "{f} differs from the golden copy"
        );
    }
}

#[test]
fn random_coefficients_go_through_regression() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("solve", &scenario("random_theta.json"), dir.path(), &["--paths", "4000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(meta["provenance"], "LSMC");
    assert!(meta["diagnostics"]["truncation_rate"].is_number());
    assert_eq!(report(dir.path())["provenance"]["solver"], "LSMC");
}

#[test]
fn verify_accepts_equilibrium_and_rejects_flat_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eq");
    let o = run("verify", &scenario("s1.json"), &out, &["--paths", "2000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("equilibrium.json").exists());
    let csv = std::fs::read_to_string(out.join("equilibrium_spike.csv")).unwrap();
    assert!(csv.starts_with("t,kappa,eta_index,eps,quotient,se\n"));
    assert_eq!(csv.lines().count(), 1 + 4 * 4 * 4);

    let out = dir.path().join("flat");
    let flat = scenario("flat.json");
    let o = run("verify", &scenario("s1.json"), &out, &["--paths", "2000", "--strategy", flat.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("spike violation: t = 0"), "{stdout}");
    let r = report(&out);
    assert!(r["failures"].as_array().unwrap().iter().any(|f| f == "spike"));
}

#[test]
fn verify_ignores_the_choice_of_lambda1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = s1_with(
        |v| v["preferences"]["lambda1"] = serde_json::json!({"kind": "hyperbolic", "delta": 3.0}),
        dir.path(),
    );
    let o = run("verify", &cfg, &dir.path().join("out"), &["--paths", "2000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn missing_seed_defaults_to_42() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = s1_with(|v| drop(v["numerics"].as_object_mut().unwrap().remove("seed")), dir.path());
    let o = run("validate", &cfg, &dir.path().join("out"), &[]);
    assert!(o.status.success());
    let r = report(&dir.path().join("out"));
    assert_eq!(r["seed"], 42);
    assert_eq!(r["config"]["numerics"]["seed"], 42);
}

#[test]
fn seed_flag_changes_hash_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run("solve", &scenario("s1.json"), &a, &["--paths", "500"]);
    run("solve", &scenario("s1.json"), &b, &["--paths", "500", "--seed", "7"]);
    let (ra, rb) = (report(&a), report(&b));
    assert_eq!(rb["seed"], 7);
    assert_ne!(ra["config_hash"], rb["config_hash"]);
    assert_ne!(
        std::fs::read(a.join("solution.csv")).unwrap(),
        std::fs::read(b.join("solution.csv")).unwrap()
    );
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = s1_with(|v| v["market"]["d1"] = serde_json::json!(2), dir.path());
    let o = run("validate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("market.d1"));

    let cfg = s1_with(|v| v["market"]["rate"] = serde_json::json!(0.1), dir.path());
    let o = run("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rate"));

    let o = run("solve", &dir.path().join("absent.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(
        "verify",
        &scenario("s1.json"),
        &dir.path().join("out"),
        &["--strategy", dir.path().join("absent.json").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("state error"));

    let o = run("solve", &scenario("fromm_imkeller.json"), &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn moments_scale_with_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let o = run("moments", &scenario("s1.json"), &out, &["--paths", "20000"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(out.join("moments.csv")).unwrap();
    assert!(csv.starts_with("gamma,eps,moment,se\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 4);

    let cfg = s1_with(
        |v| v["verify"]["bank"] = serde_json::json!([{"kappa": 0.0, "eta": [0.0]}]),
        dir.path(),
    );
    let out = dir.path().join("zero");
    let o = run("moments", &cfg, &out, &["--paths", "1000"]);
    assert_eq!(o.status.code(), Some(0));
    let r = report(&out);
    assert!(r["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("slope fit skipped")));
}

#[test]
fn equivalence_writes_candidate_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = s1_with(|v| v["verify"]["n_candidates"] = serde_json::json!(10), dir.path());
    let out = dir.path().join("e");
    let o = run("equivalence", &cfg, &out, &["--paths", "2000", "--steps", "50"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let csv = std::fs::read_to_string(out.join("equivalence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}
