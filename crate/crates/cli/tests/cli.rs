use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regradius"))
}

const DIAG: &str = r#"{
    "mapping": {"kind": "linear", "matrix": [[2.0, 0.0], [0.0, 0.5]]},
    "base_point": {"x": [0.0, 0.0], "y": [0.0, 0.0]},
    "schedule": {"radii": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], "samples_per_scale": 80},
    "tasks": ["rg", "bounds", {"interpolate": {"r": 0.25}}],
    "K": 4,
    "seed": 3
}"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn report(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("report.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("timestamp_unix");
    v
}

fn run(cfg: &Path, out: &Path, extra: &[&str]) -> i32 {
    bin()
        .args(["run", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn jobs_do_not_change_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", DIAG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--jobs", "1"]), 0);
    assert_eq!(run(&cfg, &b, &["--jobs", "4"]), 0);
    assert_eq!(report(&a), report(&b));
    let csv = std::fs::read_to_string(a.join("traces.csv")).unwrap();
    assert!(csv.starts_with("task,delta,value\n"));
    let rep = report(&a);
    let rgp = rep["tasks"][2]["report"]["rg_perturbed"]["value"].as_f64().unwrap();
    assert!((rgp - 0.25).abs() < 0.075, "{rgp}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &DIAG.replace(r#", {"interpolate": {"r": 0.25}}"#, ""));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a, &["--seed", "3"]), 0);
    assert_eq!(run(&cfg, &b, &["--seed", "4"]), 0);
    assert_eq!(report(&a)["seed"], 3);
    assert_eq!(report(&b)["seed"], 4);
}

#[test]
fn identity_full_task_config_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{
            "mapping": {"kind": "smooth-builtin", "builtin": "identity", "dim": 2},
            "base_point": {"x": [0.0, 0.0], "y": [0.0, 0.0]},
            "schedule": {"radii": [0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125], "samples_per_scale": 80},
            "tasks": ["rg", "rg_plus", "bounds", "destabilize", {"interpolate": {"r": 0.5}},
                      {"lyusternik_graves": {"f": {"kind": "sine", "matrix": [[0.2, 0.0], [0.1, -0.3]]}}}, "strong_check"],
            "K": 4
        }"#,
    );
    let out = dir.path().join("o");
    assert_eq!(run(&cfg, &out, &[]), 0);
    let rg = report(&out)["tasks"][0]["estimate"]["value"].as_f64().unwrap();
    assert!((rg - 1.0).abs() < 0.05, "{rg}");
}

#[test]
fn validate_and_malformed_configs() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "g.json", DIAG);
    let st = bin().args(["validate", "--config"]).arg(&good).status().unwrap();
    assert_eq!(st.code(), Some(0));

    let bad = write(dir.path(), "b.json", &DIAG.replace("\"rg\"", "\"frobnicate\""));
    let out = bin().args(["validate", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown task"));

    let broken = write(dir.path(), "x.json", "{ not json");
    let out = bin().args(["run", "--config"]).arg(&broken).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn failure_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // r above rg is a construction error.
    let cfg = write(dir.path(), "c.json", &DIAG.replace(r#""r": 0.25"#, r#""r": 0.9"#));
    assert_eq!(run(&cfg, &dir.path().join("o"), &[]), 3);
    // An output path under a regular file cannot be created.
    let blocker = write(dir.path(), "file", "");
    let cfg = write(dir.path(), "d.json", &DIAG.replace(r#", {"interpolate": {"r": 0.25}}"#, ""));
    assert_eq!(run(&cfg, &blocker.join("sub"), &[]), 4);
    // Missing config file.
    assert_eq!(run(&dir.path().join("missing.json"), &dir.path().join("o2"), &[]), 4);
}
