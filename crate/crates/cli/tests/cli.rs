use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const QUBIT_PI: &str = r#"
seed = 7

[signal]
d = 2
magnitudes = [1, 1]
phases_deg = [0, 180]

[interference]
coherence_time_ns = inf

[source]
emission_efficiency = 1.0
detection_efficiency = 1.0
n_trigger_pairs = 40000
"#;

fn timebin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timebin"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn setup(config: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("exp.toml"), config).unwrap();
    dir
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_is_deterministic() {
    let dir = setup(QUBIT_PI);
    let read = |sub: &str| {
        let p = dir.path().join(sub);
        (
            fs::read(p.join("events_parallel.csv")).unwrap(),
            fs::read(p.join("events_perpendicular.csv")).unwrap(),
        )
    };
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml", "--out", "a"])), 0);
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml", "--out", "b"])), 0);
    let (a, b) = (read("a"), read("b"));
    assert_eq!(a, b);
    assert_ne!(a.0, a.1);

    let text = String::from_utf8(a.0).unwrap();
    assert!(text.starts_with("# tool: timebin"));
    assert!(text.contains("# seed: 7\n"));
    assert!(text.contains("\ntrial,detector,timestamp_ns,origin\n"));

    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml", "--out", "c", "--seed", "8"])), 0);
    assert_ne!(read("c").0, read("a").0);
}

#[test]
fn zero_triggers_give_header_only_files() {
    let dir = setup(&QUBIT_PI.replace("n_trigger_pairs = 40000", "n_trigger_pairs = 0"));
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml"])), 0);
    for name in ["events_parallel.csv", "events_perpendicular.csv"] {
        let text = fs::read_to_string(dir.path().join("out").join(name)).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows, ["trial,detector,timestamp_ns,origin"]);
    }
}

#[test]
fn malformed_configs_exit_1_without_output() {
    for bad in [
        "seed = 1\n[signal]\nd = 2\nmagnitudes = [1, 1]\nextra = true\n",
        "[signal]\nd = 2\nmagnitudes = [1, 1]\n[source]\nemission_efficiency = 1.2\ndark_count_rate_per_ns = -1\n",
        "[signal\n",
    ] {
        let dir = setup(bad);
        let out = timebin(dir.path(), &["simulate", "--config", "exp.toml"]);
        assert_eq!(code(&out), 1, "{}", stderr(&out));
        assert!(!dir.path().join("out").exists());
    }
    let dir = setup("[signal]\nd = 2\nmagnitudes = [1, 1]\n[source]\nemission_efficiency = 1.2\n[analysis]\nmax_tau_ns = -1\n");
    let err = stderr(&timebin(dir.path(), &["simulate", "--config", "exp.toml"]));
    assert!(err.contains("emission_efficiency") && err.contains("max_tau"), "{err}");
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "missing.toml"])), 1);
}

#[test]
fn analyze_and_tomo_after_simulate() {
    let dir = setup(QUBIT_PI);
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml"])), 0);
    let out = timebin(dir.path(), &["analyze", "--config", "exp.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let out_dir = dir.path().join("out");
    let rcp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("rcp.json")).unwrap()).unwrap();
    assert_eq!(rcp["d"], 2);
    assert_eq!(rcp["rcp"][0][0].as_f64(), Some(0.0));
    assert!((rcp["rcp"][0][1].as_f64().unwrap() - 2.0).abs() < 0.2);
    assert!(rcp["counts_parallel"][0][1].as_u64().unwrap() > 0);

    let hist = fs::read_to_string(out_dir.join("histogram_parallel.csv")).unwrap();
    assert!(hist.lines().any(|l| l == "tau_ns,density,windowed_density"));
    assert!(out_dir.join("side_peaks.csv").exists());

    let out = timebin(dir.path(), &["tomo", "--config", "exp.toml"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("tomography.json")).unwrap()).unwrap();
    let f = report["fidelity"].as_f64().unwrap();
    assert!(f > 0.98 && f <= 1.0, "F = {f}");
    assert!(report["std_error"].as_f64().unwrap() > 0.0);
    assert!(!report["assumptions"].as_array().unwrap().is_empty());
}

#[test]
fn broken_event_files_exit_2_with_line_numbers() {
    let dir = setup(QUBIT_PI);
    fs::write(
        dir.path().join("events.csv"),
        "trial,detector,timestamp_ns,origin\n0,C,1.0,photon\n0,D,oops,photon\n",
    )
    .unwrap();
    let out = timebin(dir.path(), &["analyze", "--config", "exp.toml", "events.csv", "events.csv"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("events.csv:3"), "{}", stderr(&out));

    let out = timebin(dir.path(), &["tomo", "--config", "exp.toml", "absent.csv", "absent.csv"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn ideal_phase_sweep_follows_one_minus_cosine() {
    let dir = setup(QUBIT_PI);
    let out = timebin(dir.path(), &["sweep-phase", "--config", "exp.toml", "--phases", "0,pi/2,pi"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("out/side_peaks.csv")).unwrap();
    let rows: Vec<Vec<f64>> = table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    for (row, want) in rows.iter().zip([0.0, 1.0, 2.0]) {
        let (strength, sigma) = (row[1], row[2]);
        assert!((strength - want).abs() <= 3.0 * sigma, "{row:?}");
    }
    assert!(dir.path().join("out/sweep_chi2.json").exists());
}

#[test]
fn empty_phase_list_is_a_config_error() {
    let dir = setup(QUBIT_PI);
    let out = timebin(dir.path(), &["sweep-phase", "--config", "exp.toml", "--phases", ""]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("empty"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn kernel_flag_overrides_the_file() {
    let dir = setup(QUBIT_PI);
    let out = timebin(dir.path(), &["simulate", "--config", "exp.toml", "--kernel", "exponential"]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(dir.path().join("out/events_parallel.csv")).unwrap();
    assert!(text.contains("# kernel: exponential\n"));
    assert_eq!(code(&timebin(dir.path(), &["simulate", "--config", "exp.toml", "--kernel", "boxcar"])), 1);
}
