use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_snippet-smc"))
}

fn sonar() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sonar.csv").canonicalize().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, threads: &str) -> Output {
    bin().arg("run").arg(cfg).arg("--out").arg(out).env("SNIPPET_SMC_THREADS", threads).output().unwrap()
}

const GAUSSIAN: &str = r#"{"model": {"type": "gaussian", "prior_variances": [1.0, 2.0], "likelihood_variances": [0.5, 0.5]},
 "n": 100, "t": 10, "seed": 42}"#;

#[test]
fn same_seed_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GAUSSIAN);
    let traces: Vec<Vec<u8>> = [("a", "1"), ("b", "1"), ("c", "3")]
        .iter()
        .map(|(name, threads)| {
            let out = dir.path().join(name);
            let o = run(&cfg, &out, threads);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(out.join("trace.csv")).unwrap()
        })
        .collect();
    assert_eq!(traces[0], traces[1]);
    assert_eq!(traces[0], traces[2]);
    let text = String::from_utf8(traces[0].clone()).unwrap();
    assert!(text.starts_with("iter,gamma,theta,T,tau,logZ_inc,logZ_cum,ess_unfolded,ess_seed,median_eps,wall_ms\n"));
}

#[test]
fn overrides_and_summary_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), GAUSSIAN);
    let out = dir.path().join("o");
    let o = bin()
        .args(["run", cfg.to_str().unwrap(), "--seed", "7", "--replications", "2", "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success());
    for r in 0..2 {
        let s: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join(format!("summary_rep{r}.json"))).unwrap()).unwrap();
        assert_eq!(s["seed"], 7);
        assert!(s["log_z"].is_f64());
        assert_eq!(s["posterior_mean"].as_array().unwrap().len(), 2);
        assert!(s["iterations"].as_u64().unwrap() >= 1);
        assert!(s["gradient_evaluations"].as_u64().unwrap() > 0);
        assert!(out.join(format!("trace_rep{r}.csv")).exists());
    }
}

#[test]
fn missing_data_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": {"type": "logistic", "data": "no_such_file.csv"}}"#);
    let o = run(&cfg, &dir.path().join("o"), "1");
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("no_such_file.csv"), "{err}");
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"model": {"type": "gaussian", "prior_variances": [1]}, "nn": 3}"#);
    let o = run(&cfg, &dir.path().join("o"), "1");
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nn"));
}

#[test]
fn sonar_adaptive_epsilon_from_small_theta() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"model": {{"type": "logistic", "data": {:?}}}, "n": 500, "t": 30,
            "epsilon": {{"adaptive": {{"theta0": 0.001, "s": 3.0}}}}, "seed": 1}}"#,
        sonar()
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("o");
    let o = run(&cfg, &out, "1");
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    let theta = s["final_theta"].as_f64().unwrap();
    assert!((0.08..=0.35).contains(&theta), "final theta {theta}");
}

#[test]
fn verify_passes() {
    let o = bin().arg("verify").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.lines().count() >= 6 && !text.contains("FAIL"), "{text}");
}

#[test]
fn shipped_configs_load() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        snippet_smc::cli::load_config(&p).unwrap_or_else(|err| panic!("{}: {err}", p.display()));
        n += 1;
    }
    assert!(n >= 4);
}
