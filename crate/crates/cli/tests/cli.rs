use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use robust_consensus::scenario::{builtin_example_text, ScenarioFile};
use robust_consensus::simulate::simulate_deterministic;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_robust-consensus"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {:?} stderr {:?}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn example_with(from: &str, to: &str) -> String {
    let text = builtin_example_text().replace(from, to);
    assert_ne!(text, builtin_example_text(), "replacement of {from:?} had no effect");
    text
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap()
}

#[test]
fn analyze_example_reports_spectrum_and_condition() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ex.toml", builtin_example_text());
    let out = run(&["analyze", path.to_str().unwrap(), "--format", "json"]);
    assert!(out.status.success());
    let v = json(&out);
    assert!((f(&v["lambda_low"]) - 1.0).abs() < 1e-9);
    assert!((f(&v["lambda_high"]) - 4.0).abs() < 1e-9);
    assert!((f(&v["eigenratio"]) - 0.25).abs() < 1e-9);
    assert_eq!(f(&v["mahler"]), 1.0);
    assert_eq!(f(&v["sigma_effective"]), 3.0);
    assert!((f(&v["alpha_star"]) - 0.25).abs() < 1e-15);
    assert!((f(&v["condition"]["lhs_max"]) - 0.75).abs() < 1e-12);
    assert_eq!(v["condition"]["holds"], Value::Bool(true));
    assert_eq!(v["ideal_channel_condition"], Value::Null);

    let text = run(&["analyze", path.to_str().unwrap()]);
    assert!(text.status.success());
    let s = String::from_utf8(text.stdout).unwrap();
    assert!(s.contains("condition: lhs 0.750000 vs rhs 1.000000 -> holds"), "{s}");
}

#[test]
fn analyze_disconnected_graph_names_the_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let text = example_with("    [3, 4, 1.5],\n", "").replace("    [6, 1, 1.5],\n", "");
    let path = write(dir.path(), "split.toml", &text);
    let out = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("A3"), "{err}");
}

#[test]
fn analyze_noise_free_file_reports_ideal_channel_test() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ideal.toml", &builtin_example_text().replace(", 1.5]", ", 0.0]"));
    let v = json(&run(&["analyze", path.to_str().unwrap(), "--format", "json"]));
    assert_eq!(v["noise_free"], Value::Bool(true));
    assert_eq!(v["ideal_channel_condition"], Value::Bool(true));
    assert!((f(&v["alpha_star"]) - 0.4).abs() < 1e-15);
}

#[test]
fn synthesize_example_gain() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ex.toml", builtin_example_text());
    let out_path = dir.path().join("gain.json");
    let out = run(&["synthesize", path.to_str().unwrap(), "-o", out_path.to_str().unwrap()]);
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert!((f(&v["K"][0]) + 0.1038).abs() < 1e-3);
    assert!((f(&v["K"][1]) + 1.1038).abs() < 1e-3);
    assert_eq!(f(&v["alpha"]), 0.25);
    assert_eq!(f(&v["delta_sq"]), 0.81);
    assert!((f(&v["P"][1][1]) - 1464.3).abs() / 1464.3 < 0.01);
}

#[test]
fn synthesize_condition_failure_exits_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "noisy.toml", &builtin_example_text().replace(", 1.5]", ", 2.5]"));
    let out = run(&["synthesize", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let v = json(&out);
    assert!((f(&v["lhs_max"]) - 1.25).abs() < 1e-12);
    assert_eq!(v["holds"], Value::Bool(false));
}

#[test]
fn synthesize_scalar_gain_cancels_the_pole() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[model]
A = [[2.0]]
B = [1.0]

[topology]
n_nodes = 2
mode = "undirected"
edges = [[1, 2, 0.01]]

[simulation]
initial_states = [[1.0], [0.0]]
"#;
    let path = write(dir.path(), "scalar.toml", text);
    let v = json(&run(&["synthesize", path.to_str().unwrap()]));
    assert!((f(&v["K"][0]) + 2.0).abs() < 1e-12);
}

#[test]
fn simulate_single_noise_free_trial_matches_deterministic_recursion() {
    let dir = tempfile::tempdir().unwrap();
    let text = builtin_example_text().replace(", 1.5]", ", 0.0]").replace("delta_sq = 0.81\n", "");
    let path = write(dir.path(), "ideal.toml", &text);
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", path.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--trials", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("final msd: "));

    let s = ScenarioFile::parse(&text).unwrap().scenario().unwrap();
    let path_states = simulate_deterministic(&s);
    let mut rdr = csv::Reader::from_path(out_dir.join("trajectories.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["trial", "k", "agent", "state_component_index", "value"]
    );
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let k: usize = rec[1].parse().unwrap();
        let agent: usize = rec[2].parse().unwrap();
        let c: usize = rec[3].parse().unwrap();
        let value: f64 = rec[4].parse().unwrap();
        let expected = path_states[k][(agent - 1) * 2 + (c - 1)];
        assert!((value - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        rows += 1;
    }
    assert_eq!(rows, 61 * 6 * 2);

    let mut rdr = csv::Reader::from_path(out_dir.join("summary.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(&header[..4], ["k", "msd", "msd_stderr", "rel_2_1"]);
    assert_eq!(header.len(), 3 + 5 * 2);
    assert_eq!(rdr.records().count(), 61);
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ex.toml", builtin_example_text());
    let sim = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let args = ["simulate", path.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--trials", "50", "--horizon", "20", "--seed", seed];
        assert!(run(&args).status.success());
        (std::fs::read(out_dir.join("trajectories.csv")).unwrap(), std::fs::read(out_dir.join("summary.csv")).unwrap())
    };
    let a = sim("a", "5");
    let b = sim("b", "5");
    let c = sim("c", "6");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}

#[test]
fn verify_example_and_scaled_variant() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "ex.toml", builtin_example_text());
    let v = json(&run(&["verify", path.to_str().unwrap()]));
    assert_eq!(v["is_ms_stable"], Value::Bool(true));
    assert_eq!(v["condition_holds"], Value::Bool(true));
    assert_eq!(v["conservative_flag"], Value::Bool(false));
    assert_eq!(v["gain_source"], "synthesized");
    assert!(f(&v["spectral_radius"]) < 1.0);

    let path = write(dir.path(), "fast.toml", &example_with("alpha = 0.25", "alpha = 2.5"));
    let out = run(&["verify", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["is_ms_stable"], Value::Bool(false));
    assert_eq!(v["condition_holds"], Value::Bool(false));
    assert_eq!(v["gain_source"], "riccati-fallback");
    assert!(f(&v["spectral_radius"]) > 1.0);
}

#[test]
fn verify_flags_a_conservative_verdict() {
    // σ²_max = 4.1 puts the condition at the upper eigenvalue just past 1
    let dir = tempfile::tempdir().unwrap();
    let text = builtin_example_text().replace(", 1.5]", ", 2.05]").replace("delta_sq = 0.81", "K = [-0.1038, -1.1038]");
    let path = write(dir.path(), "edge.toml", &text);
    let v = json(&run(&["verify", path.to_str().unwrap()]));
    assert_eq!(v["condition_holds"], Value::Bool(false));
    assert_eq!(v["is_ms_stable"], Value::Bool(true));
    assert_eq!(v["conservative_flag"], Value::Bool(true));
    assert_eq!(v["gain_source"], "fixed");
}

#[test]
fn reproduce_writes_a_stable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&["reproduce-paper", "-o", out_dir.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        for file in ["scenario.toml", "analysis.json", "gain.json", "trajectories.csv", "summary.csv", "moments.csv", "verify.json"] {
            assert!(out_dir.join(file).exists(), "{file}");
        }
        std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()
    };
    let first = manifest("a");
    assert_eq!(first, manifest("b"));
    let v: Value = serde_json::from_str(&first).unwrap();
    for c in v["comparisons"].as_array().unwrap() {
        assert_eq!(c["pass"], Value::Bool(true), "{c}");
    }
    assert_eq!(v["msd_vs_oracle"]["pass"], Value::Bool(true));
    assert_eq!(v["mean_relative_decay"]["pass"], Value::Bool(true));
    assert_eq!(v["riccati_at_stated_delta_sq"]["pass"], Value::Bool(false));
    assert_eq!(v["is_ms_stable"], Value::Bool(true));
    let thresholds = v["complete_graph_thresholds"].as_array().unwrap();
    assert_eq!(thresholds.len(), 3);
    // at α = 1/2, K = −1 the two-agent moment factor is σ̄²/2
    assert!((f(&thresholds[0]["measured"]) - 2.0).abs() < 1e-8);
}

#[test]
fn input_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&["analyze", missing.to_str().unwrap()]).status.code(), Some(1));

    let path = write(dir.path(), "extra.toml", &example_with("[noise]\n", "[noise]\ncolour = \"pink\"\n"));
    let out = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let path = write(dir.path(), "delta.toml", &example_with("delta_sq = 0.81", "delta_sq = 0.5"));
    assert_eq!(run(&["synthesize", path.to_str().unwrap()]).status.code(), Some(4));
}
