use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rp3-sim"))
        .args(args)
        .env_remove("RP3_SIM_THREADS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = sim(&["run", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_and_bad_override_are_usage_errors() {
    let cfg = config("consensus_desk.toml");
    let cfg = cfg.to_str().unwrap();
    assert_eq!(sim(&["run", cfg, "--frobnicate"]).status.code(), Some(2));
    assert_eq!(sim(&["validate", cfg, "--set", "no_equals"]).status.code(), Some(2));
    assert_eq!(sim(&["validate", cfg, "--set", "run.iterations=-3"]).status.code(), Some(2));
}

#[test]
fn shipped_profiles_validate() {
    for name in ["consensus_desk.toml", "consensus_large.toml", "tracking_grid.toml", "consensus_unbounded.toml"] {
        let o = sim(&["validate", config(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}:\n{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn bounds_reports_a_stable_gain_for_certified_steps() {
    let o = sim(&["bounds", config("consensus_unbounded.toml").to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("stable = true"), "{text}");
    let rho: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rho(M) = "))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(rho < 1.0);
}

#[test]
fn run_writes_outputs_and_is_reproducible() {
    let cfg = config("consensus_desk.toml");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let o = sim(&[
            "run",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--set",
            "run.iterations=100",
            "--set",
            "run.replication=2",
            "--threads",
            threads,
            "--out-dir",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["runs.csv", "aggregate.csv", "events.csv", "metadata.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let runs = std::fs::read_to_string(a.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 101);
}

#[test]
fn sweep_runs_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = sim(&[
        "sweep",
        config("consensus_desk.toml").to_str().unwrap(),
        "--set",
        "run.iterations=50",
        "--set",
        "run.replication=1",
        "--algorithm",
        "ppp",
        "--param",
        "steps.eta",
        "--values",
        "0.01,0.02",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("steps.eta=0.01/aggregate.csv").is_file());
    assert!(dir.path().join("steps.eta=0.02/aggregate.csv").is_file());
    assert!(dir.path().join("sweep.csv").is_file());
}
