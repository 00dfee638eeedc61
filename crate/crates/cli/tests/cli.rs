//! End-to-end tests of the `survbank` binary: reproducibility, exit codes,
//! and the documented behavior of each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_survbank"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("survbank-cli-{tag}-{}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, contents: &str) {
    std::fs::write(path, contents).unwrap();
}

fn gen_spec(n: usize, missingness: f64, seed: u64) -> String {
    format!(
        r#"{{
  "hidden_states": 3,
  "prior": [0.4, 0.3, 0.3],
  "features": [
    {{"name": "age", "kind": "continuous", "representatives": [50.0, 60.0, 70.0],
     "emissions": [[0.7,0.2,0.1],[0.2,0.6,0.2],[0.1,0.2,0.7]], "always_observed": true}},
    {{"name": "sex", "kind": "categorical", "labels": ["m","f"],
     "emissions": [[0.6,0.4],[0.4,0.6],[0.5,0.5]], "always_observed": true}},
    {{"name": "smoking", "kind": "categorical", "labels": ["never","ex","current"],
     "emissions": [[0.7,0.2,0.1],[0.15,0.7,0.15],[0.1,0.2,0.7]], "missingness": {missingness}}},
    {{"name": "dlco", "kind": "continuous", "representatives": [35.0, 55.0, 75.0],
     "emissions": [[0.1,0.2,0.7],[0.2,0.6,0.2],[0.7,0.2,0.1]], "missingness": {missingness}}}
  ],
  "risk_weights": [-0.5,0.0,0.5, 0.0,0.1, 0.0,0.3,0.6, 0.7,0.0,-0.7],
  "baseline_rate": 0.01,
  "censoring_rate": 0.008,
  "n": {n},
  "seed": {seed}
}}"#
    )
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

fn simulate_into(dir: &Path, n: usize, missingness: f64, seed: u64) {
    let spec = dir.join("gen.json");
    write(&spec, &gen_spec(n, missingness, seed));
    run_ok(
        bin()
            .arg("simulate")
            .arg("--spec")
            .arg(&spec)
            .arg("--output")
            .arg(dir.join("data")),
    );
}

// ── simulate ────────────────────────────────────────────────────────────

#[test]
fn simulate_is_byte_for_byte_reproducible() {
    let dir = workdir("sim-repro");
    let spec = dir.join("gen.json");
    write(&spec, &gen_spec(500, 0.3, 7));
    for out in ["a", "b"] {
        run_ok(
            bin()
                .arg("simulate")
                .arg("--spec")
                .arg(&spec)
                .arg("--output")
                .arg(dir.join(out)),
        );
    }
    for file in ["cohort.csv", "schema.json", "truth.json"] {
        let a = std::fs::read(dir.join("a").join(file)).unwrap();
        let b = std::fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn simulate_honors_the_masking_rate() {
    let dir = workdir("sim-mask");
    simulate_into(&dir, 10_000, 0.3, 11);
    let text = std::fs::read_to_string(dir.join("data/cohort.csv")).unwrap();
    let mut total = 0usize;
    let mut empty = 0usize;
    for line in text.lines().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        // Columns: patient_id, age, sex, smoking, dlco, time, event.
        for &cell in &cells[3..5] {
            total += 1;
            if cell.is_empty() {
                empty += 1;
            }
        }
    }
    let frac = empty as f64 / total as f64;
    assert!(
        (frac - 0.3).abs() < 0.03,
        "masking fraction {frac} should be ~0.30"
    );
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn simulate_rejects_invalid_specs() {
    let dir = workdir("sim-invalid");
    let spec = dir.join("gen.json");
    write(
        &spec,
        &gen_spec(100, 0.3, 7).replace("\"baseline_rate\": 0.01", "\"baseline_rate\": -1.0"),
    );
    let out = bin()
        .arg("simulate")
        .arg("--spec")
        .arg(&spec)
        .arg("--output")
        .arg(dir.join("data"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "config errors exit 1");
    std::fs::remove_dir_all(dir).ok();
}

// ── train-imputer + impute ──────────────────────────────────────────────

#[test]
fn imputer_training_is_deterministic_and_single_state_converges_fast() {
    let dir = workdir("imputer");
    simulate_into(&dir, 300, 0.0, 13);
    for name in ["m1.json", "m2.json"] {
        run_ok(
            bin()
                .arg("train-imputer")
                .arg("--cohort")
                .arg(dir.join("data/cohort.csv"))
                .arg("--schema")
                .arg(dir.join("data/schema.json"))
                .arg("--output")
                .arg(dir.join(name))
                .args(["--latent-states", "1", "--seed", "4"]),
        );
    }
    assert_eq!(
        std::fs::read(dir.join("m1.json")).unwrap(),
        std::fs::read(dir.join("m2.json")).unwrap(),
        "same seed must produce identical model files"
    );
    let report = stdout_json(&run_ok(
        bin()
            .arg("train-imputer")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--output")
            .arg(dir.join("m3.json"))
            .args(["--latent-states", "1", "--seed", "4"]),
    ));
    assert!(
        report["iterations"].as_u64().unwrap() <= 2,
        "a single-state model on complete data converges immediately"
    );
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn impute_fills_every_missing_cell() {
    let dir = workdir("impute");
    simulate_into(&dir, 300, 0.3, 17);
    run_ok(
        bin()
            .arg("train-imputer")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--output")
            .arg(dir.join("imputer.json"))
            .args(["--latent-states", "3", "--seed", "4", "--max-iters", "40"]),
    );
    for mode in ["map", "expectation", "sample"] {
        let out_csv = dir.join(format!("completed-{mode}.csv"));
        run_ok(
            bin()
                .arg("impute")
                .arg("--cohort")
                .arg(dir.join("data/cohort.csv"))
                .arg("--schema")
                .arg(dir.join("data/schema.json"))
                .arg("--imputer")
                .arg(dir.join("imputer.json"))
                .arg("--output")
                .arg(&out_csv)
                .args(["--mode", mode, "--seed", "9"]),
        );
        let text = std::fs::read_to_string(&out_csv).unwrap();
        for (i, line) in text.lines().enumerate().skip(1) {
            assert!(
                !line.split(',').any(str::is_empty),
                "{mode}: row {i} still has an empty cell: {line}"
            );
        }
    }
    std::fs::remove_dir_all(dir).ok();
}

// ── impute-eval ─────────────────────────────────────────────────────────

#[test]
fn impute_eval_beats_mean_and_handles_edge_drop_counts() {
    let dir = workdir("impute-eval");
    simulate_into(&dir, 1200, 0.25, 19);
    let report = stdout_json(&run_ok(
        bin()
            .arg("impute-eval")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--output")
            .arg(dir.join("ie"))
            .args([
                "--latent-states",
                "5",
                "--seed",
                "3",
                "--repeats",
                "3",
                "--drop-counts",
                "0,1,2",
            ]),
    ));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    // Nothing dropped: trivially perfect for both imputers.
    assert_eq!(rows[0]["lc_accuracy"].as_f64().unwrap(), 1.0);
    assert_eq!(rows[0]["lc_nrmse"].as_f64().unwrap(), 0.0);
    for row in &rows[1..] {
        assert!(
            row["lc_accuracy"].as_f64().unwrap() > row["mean_accuracy"].as_f64().unwrap(),
            "latent-class should beat the mean baseline on this correlated cohort"
        );
    }
    assert!(dir.join("ie/impute_eval.csv").exists());

    // More drops than maskable features is a validation error.
    let out = bin()
        .arg("impute-eval")
        .arg("--cohort")
        .arg(dir.join("data/cohort.csv"))
        .arg("--schema")
        .arg(dir.join("data/schema.json"))
        .arg("--output")
        .arg(dir.join("ie2"))
        .args(["--drop-counts", "7", "--latent-states", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    std::fs::remove_dir_all(dir).ok();
}

// ── train-survival + evaluate ───────────────────────────────────────────

fn train_imputer_quick(dir: &Path) {
    run_ok(
        bin()
            .arg("train-imputer")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--output")
            .arg(dir.join("imputer.json"))
            .args(["--latent-states", "3", "--seed", "4", "--max-iters", "30"]),
    );
}

#[test]
fn survival_training_and_evaluation_report_the_contracted_fields() {
    let dir = workdir("survival");
    simulate_into(&dir, 400, 0.2, 23);
    train_imputer_quick(&dir);

    let summary = stdout_json(&run_ok(
        bin()
            .arg("train-survival")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--imputer")
            .arg(dir.join("imputer.json"))
            .arg("--output")
            .arg(dir.join("risk.json"))
            .arg("--log")
            .arg(dir.join("train.jsonl"))
            .args(["--epochs", "8", "--seed", "5", "--arch", "linear"]),
    ));
    assert_eq!(summary["memory_bank"], true);
    assert_eq!(summary["total_skips"], 0);

    // The training log is JSON lines with the contracted fields.
    let log = std::fs::read_to_string(dir.join("train.jsonl")).unwrap();
    let lines: Vec<&str> = log.trim_end().split('\n').collect();
    assert_eq!(lines.len(), 8);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "lr", "fresh_loss", "skip_count"] {
            assert!(v.get(key).is_some(), "log line missing {key}: {line}");
        }
    }

    let eval = stdout_json(&run_ok(
        bin()
            .arg("evaluate")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--imputer")
            .arg(dir.join("imputer.json"))
            .arg("--model")
            .arg(dir.join("risk.json"))
            .arg("--output")
            .arg(dir.join("eval.json")),
    ));
    assert!(eval["summary"]["tau"].as_f64().is_some(), "tau provenance");
    assert!(
        !eval["summary"]["ibs_grid"].as_array().unwrap().is_empty(),
        "grid provenance"
    );
    let c = eval["summary"]["harrell"].as_f64().unwrap();
    assert!(
        c > 0.55,
        "trained model should rank better than chance, got {c}"
    );
    for metric in eval["metrics"].as_array().unwrap() {
        assert!(metric.get("metric").is_some() && metric.get("value").is_some());
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn no_memory_bank_flag_switches_trainers_and_counts_skips() {
    let dir = workdir("nobank");
    simulate_into(&dir, 200, 0.2, 29);
    // Censor hard so batches of 4 often carry no deaths.
    let spec = dir.join("gen.json");
    write(
        &spec,
        &gen_spec(200, 0.2, 29).replace("\"censoring_rate\": 0.008", "\"censoring_rate\": 0.08"),
    );
    run_ok(
        bin()
            .arg("simulate")
            .arg("--spec")
            .arg(&spec)
            .arg("--output")
            .arg(dir.join("data")),
    );
    train_imputer_quick(&dir);
    let summary = stdout_json(&run_ok(
        bin()
            .arg("train-survival")
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--imputer")
            .arg(dir.join("imputer.json"))
            .arg("--output")
            .arg(dir.join("risk.json"))
            .args([
                "--epochs",
                "4",
                "--batch-size",
                "4",
                "--seed",
                "5",
                "--no-memory-bank",
            ]),
    ));
    assert_eq!(summary["memory_bank"], false);
    assert!(
        summary["total_skips"].as_u64().unwrap() > 0,
        "all-censored batches must be skipped and counted"
    );
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn all_censored_cohorts_fail_with_exit_one() {
    let dir = workdir("allcensored");
    simulate_into(&dir, 60, 0.0, 31);
    // Rewrite every event to censored.
    let cohort_path = dir.join("data/cohort.csv");
    let text = std::fs::read_to_string(&cohort_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    for line in lines.iter_mut().skip(1) {
        let mut cells: Vec<&str> = line.split(',').collect();
        let last = cells.len() - 1;
        cells[last] = "0";
        *line = cells.join(",");
    }
    write(&cohort_path, &(lines.join("\n") + "\n"));
    train_imputer_quick(&dir);

    let out = bin()
        .arg("train-survival")
        .arg("--cohort")
        .arg(&cohort_path)
        .arg("--schema")
        .arg(dir.join("data/schema.json"))
        .arg("--imputer")
        .arg(dir.join("imputer.json"))
        .arg("--output")
        .arg(dir.join("risk.json"))
        .args(["--epochs", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("censored"),
        "the all-censored failure mode should be named"
    );
    std::fs::remove_dir_all(dir).ok();
}

// ── cross-validate ──────────────────────────────────────────────────────

#[test]
fn cross_validation_is_reproducible_and_formats_like_a_results_table() {
    let dir = workdir("cv");
    simulate_into(&dir, 150, 0.2, 37);
    let run = |out: &str| -> serde_json::Value {
        stdout_json(&run_ok(
            bin()
                .arg("cross-validate")
                .arg("--cohort")
                .arg(dir.join("data/cohort.csv"))
                .arg("--schema")
                .arg(dir.join("data/schema.json"))
                .arg("--output")
                .arg(dir.join(out))
                .args([
                    "--folds",
                    "3",
                    "--latent-states",
                    "3",
                    "--max-iters",
                    "10",
                    "--epochs",
                    "4",
                    "--seed",
                    "5",
                ]),
        ))
    };
    let a = run("cv-a");
    let _ = run("cv-b");
    let bytes_a = std::fs::read(dir.join("cv-a/cv_report.json")).unwrap();
    let bytes_b = std::fs::read(dir.join("cv-b/cv_report.json")).unwrap();
    assert_eq!(
        bytes_a, bytes_b,
        "identical seed must give identical reports"
    );

    let formatted = a["ipcw_formatted"].as_str().unwrap();
    assert!(
        formatted.contains('\u{b1}'),
        "expected mean\u{b1}std formatting, got {formatted}"
    );
    assert_eq!(a["folds"].as_array().unwrap().len(), 3);
    assert!(dir.join("cv-a/cv_report.csv").exists());
    std::fs::remove_dir_all(dir).ok();
}

// ── exit codes and config file ──────────────────────────────────────────

#[test]
fn missing_input_files_exit_two_and_bad_rows_exit_one() {
    let dir = workdir("exitcodes");
    simulate_into(&dir, 60, 0.0, 41);

    let out = bin()
        .arg("train-imputer")
        .arg("--cohort")
        .arg(dir.join("does-not-exist.csv"))
        .arg("--schema")
        .arg(dir.join("data/schema.json"))
        .arg("--output")
        .arg(dir.join("m.json"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "missing input file is an I/O error"
    );

    // Negative time in a data row: validation error with the row number.
    let cohort_path = dir.join("data/cohort.csv");
    let text = std::fs::read_to_string(&cohort_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<&str> = lines[2].split(',').collect();
    let time_col = cells.len() - 2;
    cells[time_col] = "-4";
    lines[2] = cells.join(",");
    write(&cohort_path, &(lines.join("\n") + "\n"));
    let out = bin()
        .arg("train-imputer")
        .arg("--cohort")
        .arg(&cohort_path)
        .arg("--schema")
        .arg(dir.join("data/schema.json"))
        .arg("--output")
        .arg(dir.join("m.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("row 3"),
        "errors must carry the offending row number"
    );
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_file_supplies_defaults_and_flags_override_it() {
    let dir = workdir("config");
    simulate_into(&dir, 200, 0.2, 43);
    train_imputer_quick(&dir);
    let cfg = dir.join("run.cfg");
    write(&cfg, "epochs=3\nseed=5\narch=linear\n");

    let summary = stdout_json(&run_ok(
        bin()
            .arg("train-survival")
            .arg("--config")
            .arg(&cfg)
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--imputer")
            .arg(dir.join("imputer.json"))
            .arg("--output")
            .arg(dir.join("risk.json")),
    ));
    assert_eq!(summary["epochs"], 3, "config file value applies");

    let summary = stdout_json(&run_ok(
        bin()
            .arg("train-survival")
            .arg("--config")
            .arg(&cfg)
            .arg("--cohort")
            .arg(dir.join("data/cohort.csv"))
            .arg("--schema")
            .arg(dir.join("data/schema.json"))
            .arg("--imputer")
            .arg(dir.join("imputer.json"))
            .arg("--output")
            .arg(dir.join("risk2.json"))
            .args(["--epochs", "2"]),
    ));
    assert_eq!(summary["epochs"], 2, "flags override the config file");
    std::fs::remove_dir_all(dir).ok();
}
