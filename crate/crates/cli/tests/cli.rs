use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use brainalign::datamodel::{write_activations, write_benchmark};
use brainalign::synthetic::{self, SharedSignal};
use brainalign::{ActivationSet, Modality};
use brainalign_cli::fixture;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn brainalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brainalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One benchmark, one model with two checkpoints, no localizer.
fn small_tree(root: &Path, n_groups: usize, subjects: usize) -> PathBuf {
    let stimuli = synthetic::grouped_stimuli(n_groups, 24 / n_groups);
    let spec = SharedSignal {
        n_subjects: subjects,
        units_per_subject: 6,
        latent_dim: 3,
        noise: 1.0,
    };
    let (latent, neural) = synthetic::shared_signal_dataset(&stimuli, &spec, 5).unwrap();
    let subj: Vec<(String, DMatrix<f64>)> = neural
        .subjects()
        .iter()
        .map(|s| (s.subject_id.clone(), s.matrix.clone()))
        .collect();
    write_benchmark(root.join("bench"), "small", Modality::Fmri, &stimuli, &subj).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut checkpoints = Vec::new();
    for tokens in [1000u64, 2000] {
        let m = synthetic::features_from_latent(&latent, 8, 0.5, &mut rng);
        let acts = ActivationSet::new(m, stimuli.ids(), "m", tokens, "L0", None).unwrap();
        write_activations(root.join("acts"), &format!("c{tokens}"), &acts).unwrap();
        checkpoints.push(json!({
            "checkpoint_tokens": tokens,
            "layers": {"small": [format!("acts/c{tokens}.json")]}
        }));
    }
    let config = json!({
        "seed": 11,
        "benchmarks": [{"dir": "bench", "folds": {"scheme": "grouped", "k": 4}, "ceiling": {"draws": 3}}],
        "models": [{"model_id": "m", "checkpoints": checkpoints}]
    });
    let path = root.join("config.json");
    fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    path
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn two_checkpoints_two_rows_then_up_to_date() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let out = tmp.path().join("out");
    let first = brainalign(&["run", "--config", path(&config), "--out", path(&out)]);
    assert!(first.status.success(), "{}", stderr(&first));
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 3, "{scores}");
    assert!(scores.starts_with("benchmark_id,model_id,checkpoint_tokens,raw_r,ceiling,normalized,n_folds"));

    let folds = read_json(&out.join("small/folds.json"));
    assert_eq!(folds["scheme"], "grouped");
    assert_eq!(folds["k"], 4);

    // two subjects: the ceiling is the full-pool value
    let ceiling = read_json(&out.join("small/ceiling.json"));
    assert_eq!(ceiling["method"], "fixed");
    assert!(ceiling["note"].as_str().unwrap().contains("without extrapolation"));

    let manifest = read_json(&out.join("run_manifest.json"));
    assert_eq!(manifest["seed"], 11);
    assert!(manifest["stages"]["score"]["outputs"]["scores.csv"].is_string());

    let again = brainalign(&["run", "--config", path(&config), "--out", path(&out)]);
    assert!(again.status.success());
    assert!(stdout(&again).contains("up-to-date"), "{}", stdout(&again));
    assert_eq!(fs::read_to_string(out.join("scores.csv")).unwrap(), scores);
}

#[test]
fn single_group_cannot_be_split() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 1, 3);
    let o = brainalign(&["run", "--config", path(&config), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("make_grouped_folds"), "{}", stderr(&o));
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    fs::remove_file(tmp.path().join("acts/c2000.npy")).unwrap();
    let o = brainalign(&["run", "--config", path(&config), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("c2000.npy"), "{}", stderr(&o));

    let o = brainalign(&["run", "--config", path(&tmp.path().join("nope.json")), "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn score_before_ceiling_is_a_missing_input() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let o = brainalign(&["score", "--config", path(&config), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ceiling.json"), "{}", stderr(&o));
}

#[test]
fn tampered_upstream_artifact_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let out = tmp.path().join("out");
    assert!(brainalign(&["ceiling", "--config", path(&config), "--out", path(&out)]).status.success());
    let ceiling = out.join("small/ceiling.json");
    let text = fs::read_to_string(&ceiling).unwrap().replace("\"fixed\"", "\"theoretical\"");
    fs::write(&ceiling, text).unwrap();
    let o = brainalign(&["score", "--config", path(&config), "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("digest mismatch"), "{}", stderr(&o));
}

#[test]
fn constant_responses_are_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let stimuli = synthetic::grouped_stimuli(6, 4);
    let flat = vec![
        ("a".to_string(), DMatrix::from_element(24, 3, 1.0)),
        ("b".to_string(), DMatrix::from_element(24, 3, 2.0)),
    ];
    write_benchmark(tmp.path().join("bench"), "flat", Modality::Fmri, &stimuli, &flat).unwrap();
    let config = tmp.path().join("config.json");
    fs::write(&config, r#"{"seed": 1, "benchmarks": [{"dir": "bench", "folds": {"scheme": "grouped", "k": 3}}]}"#).unwrap();
    let o = brainalign(&["ceiling", "--config", path(&config), "--out", path(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn validate_flags_corrupt_matrix() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let ok = brainalign(&["validate", "--config", path(&config)]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("benchmark small"));

    let npy = tmp.path().join("acts/c1000.npy");
    fs::write(&npy, b"not a matrix").unwrap();
    let o = brainalign(&["validate", path(&npy)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("FormatError"), "{}", stderr(&o));
    let o = brainalign(&["validate", "--config", path(&config)]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn analyze_from_tables_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let mut csv = String::from("checkpoint_tokens,series_id,value\n");
    for i in 1..=12u64 {
        let x = i as f64;
        csv += &format!("{},brain_alignment,{}\n", i * 1000, 0.1 + 0.02 * x);
        csv += &format!("{},formal_score,{}\n", i * 1000, 0.3 + 0.05 * x);
    }
    fs::write(tmp.path().join("table.csv"), csv).unwrap();
    let config = tmp.path().join("config.json");
    fs::write(
        &config,
        r#"{"seed": 2, "analysis": {"k": 4, "tables": [{"model_id": "m", "path": "table.csv"}],
            "windows": [{"name": "early", "after": 0, "up_to": 6000}]}}"#,
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = brainalign(&["analyze", "--config", path(&config), "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = read_json(&out.join("analysis_report.json"));
    let fit = &report["models"][0]["fits"][0];
    assert_eq!(fit["predictor_series"], "formal_score");
    assert!((fit["mean_r2"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    let window = &report["models"][0]["windows"][0]["result"];
    assert!((window["statistic"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn seed_override_needs_an_empty_output() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let out = tmp.path().join("out");
    let o = brainalign(&["ceiling", "--config", path(&config), "--out", path(&out), "--seed-override", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_json(&out.join("run_manifest.json"))["seed"], 5);
    let o = brainalign(&["ceiling", "--config", path(&config), "--out", path(&out), "--seed-override", "6"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("seed-override"));
}

#[test]
fn unknown_stage_and_config_keys_are_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_tree(tmp.path(), 6, 2);
    let o = brainalign(&["run", "--config", path(&config), "--out", "x", "--stage", "plot"]);
    assert_eq!(o.status.code(), Some(3));
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"benchmarks": []}"#).unwrap();
    let o = brainalign(&["run", "--config", path(&bad), "--out", "x"]);
    assert_eq!(o.status.code(), Some(3), "seed is mandatory");
}

#[test]
fn fixture_tree_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let config = fixture::write_fixture(&tmp.path().join("in"), 1).unwrap();
    let out = tmp.path().join("out");
    let o = brainalign(&["run", "--config", path(&config), "--out", path(&out), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "scores.csv",
        "localizer.json",
        "behavioral.json",
        "analysis_report.json",
        "topics/ceiling.json",
        "topics/folds.json",
        "stories/ceiling.json",
        "stories/folds.json",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let topics = read_json(&out.join("topics/ceiling.json"));
    assert_eq!(topics["method"], "extrapolated");
    let report = read_json(&out.join("analysis_report.json"));
    let control = &report["controls"][0];
    assert_eq!(control["pretrained_above_random"], true);
    let localizer = read_json(&out.join("localizer.json"));
    // the trained model's planted units are the ones selected
    let units = localizer["checkpoints"][0]["selected_units"].as_array().unwrap();
    assert!(units.iter().all(|u| u["unit_index"].as_u64().unwrap() < 6));
}
