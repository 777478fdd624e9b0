use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iontronic-rc"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .env_remove("IONTRONIC_VENTILATOR_CSV")
        .env_remove("IONTRONIC_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn preset_json(name: &str, dir: &Path) -> std::path::PathBuf {
    let config = iontronic_rc::experiment::preset(name).unwrap();
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn validate_config_accepts_presets_and_rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["validate-config", "--preset", "mg400"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mg400: ok"));

    let path = preset_json("harmonic12", dir.path());
    let text = std::fs::read_to_string(&path).unwrap().replace("\"leak_rate\": 0.44", "\"leak_rate\": 1.5");
    std::fs::write(&path, text).unwrap();
    let out = cli(&["validate-config", "--config", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("networks[0].reservoir.leak_rate"));

    assert_eq!(code(&cli(&["validate-config", "--preset", "nope"], dir.path())), 1);
    assert_eq!(code(&cli(&["validate-config", "--config", "missing.json"], dir.path())), 1);
}

#[test]
fn run_writes_artifacts_under_the_output_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iontronic-rc"))
        .args(["run", "--preset", "vent-classify", "--runs", "1"])
        .current_dir(dir.path())
        .env("RUST_LOG", "error")
        .env("IONTRONIC_OUTPUT_ROOT", dir.path().join("root"))
        .env_remove("IONTRONIC_VENTILATOR_CSV")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["data_source"], "synthetic");
    assert_eq!(report["runs"], 1);
    let run_dir = dir.path().join("root/vent-classify");
    assert!(run_dir.join("metrics.json").exists());

    let out = cli(
        &["plotdata", "--run", run_dir.to_str().unwrap(), "--which", "fig3b"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    assert!(run_dir.join("plots/fig3b_top.csv").exists());
    // a ventilator run has no Mackey-Glass trace
    let out = cli(
        &["plotdata", "--run", run_dir.to_str().unwrap(), "--which", "fig2a"],
        dir.path(),
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = cli(
            &["run", "--preset", "vent-classify", "--runs", "2", "--seed", "9", "--out", out_dir.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(code(&out), 0);
        std::fs::read(out_dir.join("metrics.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn divergence_sets_exit_code_three() {
    // one of the hundred harmonic runs of each network leaves the bounded range
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "--preset", "harmonic12", "--out", "h"], dir.path());
    assert_eq!(code(&out), 3);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["diverged_runs"].as_u64().unwrap() > 0);
}

#[test]
fn activation_dump_to_stdout_and_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["activation-dump", "--v-min", "-1", "--v-max", "1", "--points", "3"], dir.path());
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "voltage_v,g_inf_normalised,tanh");
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("0,0,"));

    let out = cli(&["activation-dump", "--out", "a.csv"], dir.path());
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(text.lines().count(), 242);

    let bad = dir.path().join("channel.json");
    std::fs::write(&bad, "{\"tip_radius_um\": 1}").unwrap();
    let out = cli(&["activation-dump", "--channel", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn sweep_writes_ranked_trials() {
    let dir = tempfile::tempdir().unwrap();
    let space = dir.path().join("space.json");
    std::fs::write(
        &space,
        r#"{
  "parameters": [
    {"pointer": "/networks/0/training/lambda", "low": 1e-8, "high": 1e-3, "log": true}
  ],
  "objective": {"network": "bpn", "metric": "accuracy", "direction": "maximize"}
}"#,
    )
    .unwrap();
    let config = preset_json("vent-classify", dir.path());
    let text = std::fs::read_to_string(&config).unwrap().replace("\"runs\": 20", "\"runs\": 1");
    std::fs::write(&config, text).unwrap();
    let out = cli(
        &[
            "sweep",
            "--config",
            config.to_str().unwrap(),
            "--space",
            space.to_str().unwrap(),
            "--trials",
            "3",
            "--seed",
            "4",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("rank,trial,objective,/networks/0/training/lambda,error"));

    std::fs::write(&space, "{\"parameters\": []}").unwrap();
    let out = cli(
        &["sweep", "--config", config.to_str().unwrap(), "--space", space.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(code(&out), 1);
}

#[test]
fn config_output_dir_resolves_under_the_root() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = iontronic_rc::experiment::preset("vent-classify").unwrap();
    config.run.runs = 1;
    config.output.dir = Some("custom".into());
    let path = dir.path().join("c.json");
    std::fs::write(&path, serde_json::to_string(&config).unwrap()).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_iontronic-rc"))
        .args(["run", "--config", path.to_str().unwrap()])
        .current_dir(dir.path())
        .env("RUST_LOG", "error")
        .env("IONTRONIC_OUTPUT_ROOT", dir.path().join("root"))
        .env_remove("IONTRONIC_VENTILATOR_CSV")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("root/custom/metrics.json").exists());
}
