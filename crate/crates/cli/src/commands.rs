//! Subcommand implementations. Each command loads its inputs, delegates to
//! the library, and writes JSON reports (tables additionally as CSV).

use std::path::Path;

use clap::ValueEnum;
use serde::Serialize;
use serde_json::json;

use survbank::data::{
    fit_binning_for_cohort, load_cohort, load_schema, save_schema, write_cohort_csv, Cohort,
    Feature, FeatureKind,
};
use survbank::defaults;
use survbank::experiment::{
    cross_validate, evaluate_survival, fit_survival, impute_eval, pipeline_artifact, CvConfig,
    EvalReport, ImputeEvalConfig, LcImputeMode, SurvivalFitConfig, SurvivalPipeline,
};
use survbank::imputer::{
    fit_em, impute_expectation, impute_map, impute_sample, EmConfig, LatentClassModel, PointValue,
};
use survbank::metrics::{CensoringDistribution, MetricReport};
use survbank::risk::{Architecture, RiskArtifact};
use survbank::synthgen::{generate, oracle_cindex, GeneratorSpec};
use survbank::trainer::{TrainConfig, TrainImputeMode};
use survbank::{Error, Result};

use crate::args::*;
use crate::config::{resolve, ConfigMap};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Parse a mode name coming from a config file through clap's value enum.
fn enum_from_config<T: ValueEnum>(cfg: &ConfigMap, key: &str) -> Result<Option<T>> {
    match cfg.string(key) {
        None => Ok(None),
        Some(raw) => T::from_str(&raw, true)
            .map(Some)
            .map_err(|_| Error::Config(format!("config key `{key}`: unknown value `{raw}`"))),
    }
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("cannot parse `{part}` as an integer")))
        })
        .collect()
}

fn em_config(args: &EmArgs, cfg: &ConfigMap, seed: u64) -> Result<EmConfig> {
    Ok(EmConfig {
        max_iters: resolve(
            args.max_iters,
            cfg.usize("max_iters"),
            defaults::EM_MAX_ITERS,
        )?,
        rel_tol: resolve(args.rel_tol, cfg.f64("rel_tol"), defaults::EM_REL_TOL)?,
        smoothing: resolve(args.smoothing, cfg.f64("smoothing"), defaults::EM_SMOOTHING)?,
        seed,
    })
}

// ── simulate ────────────────────────────────────────────────────────────

pub fn simulate(args: SimulateArgs, cfg: &ConfigMap) -> Result<()> {
    let mut spec = GeneratorSpec::load(&args.spec)?;
    spec.n = resolve(args.n, cfg.usize("n"), spec.n)?;
    spec.seed = resolve(args.seed, cfg.u64("seed"), spec.seed)?;
    spec.validate()?;
    let (cohort, truth) = generate(&spec)?;

    ensure_dir(&args.output)?;
    write_cohort_csv(&cohort, &args.output.join("cohort.csv"))?;
    save_schema(&cohort.schema, &args.output.join("schema.json"))?;
    truth.save(&args.output.join("truth.json"))?;

    let deaths = cohort.outcomes()?.iter().filter(|o| o.event).count();
    print_json(&json!({
        "n": cohort.len(),
        "deaths": deaths,
        "censored": cohort.len() - deaths,
        "oracle_cindex": oracle_cindex(&truth, &cohort)?,
        "output": args.output,
    }))
}

// ── train-imputer ───────────────────────────────────────────────────────

pub fn train_imputer(args: TrainImputerArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let raw = load_cohort(&args.cohort, &schema)?;
    let binning = fit_binning_for_cohort(&raw)?;
    let cohort = Cohort::from_raw(&raw, binning)?;

    let latent = resolve(
        args.latent_states,
        cfg.usize("latent_states"),
        defaults::LATENT_STATES,
    )?;
    let seed = resolve(args.seed, cfg.u64("seed"), 0)?;
    let em = em_config(&args.em, cfg, seed)?;
    let (model, report) = fit_em(&cohort, latent, &em)?;
    model.save(&args.output)?;

    let summary = json!({
        "n": cohort.len(),
        "latent_states": latent,
        "iterations": report.iterations,
        "converged": report.converged,
        "final_mean_log_likelihood": report.final_mean_log_likelihood,
        "warnings": report.warnings,
        "model": args.output,
    });
    if let Some(path) = &args.report {
        write_json(path, &summary)?;
    }
    print_json(&summary)
}

// ── impute ──────────────────────────────────────────────────────────────

fn cell_for_state(cohort: &Cohort, feature: &Feature, k: usize, state: usize) -> String {
    match &feature.kind {
        FeatureKind::Categorical { labels } => labels[state].clone(),
        FeatureKind::Continuous { .. } => format!("{}", cohort.representative(k, state).unwrap()),
    }
}

pub fn impute(args: ImputeArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let model = LatentClassModel::load(&args.imputer, &schema)?;
    let raw = load_cohort(&args.cohort, &schema)?;
    let cohort = Cohort::from_raw(&raw, model.binning().clone())?;

    let mode = resolve(args.mode, enum_from_config(cfg, "mode"), ImputeMode::Map)?;
    match mode {
        ImputeMode::Expectation => {
            // Continuous cells get expected values rather than bin
            // representatives, so this mode writes its own CSV.
            let mut writer = csv::Writer::from_path(&args.output)?;
            let mut header = vec!["patient_id".to_string()];
            header.extend(schema.features().iter().map(|f| f.name.clone()));
            if cohort.outcomes.is_some() {
                header.push("time".into());
                header.push("event".into());
            }
            writer.write_record(&header)?;
            for (idx, rec) in cohort.records.iter().enumerate() {
                let expectations = impute_expectation(&model, rec)?;
                let mut row = vec![rec.patient_id.clone()];
                for (k, state) in rec.states.iter().enumerate() {
                    let feature = schema.feature(k);
                    let cell = match state {
                        Some(s) => cell_for_state(&cohort, feature, k, *s),
                        None => {
                            let fe = expectations
                                .iter()
                                .find(|fe| fe.feature == k)
                                .expect("missing feature must carry an expectation");
                            match &fe.point {
                                PointValue::Value(v) => format!("{v}"),
                                PointValue::State(s) => cell_for_state(&cohort, feature, k, *s),
                            }
                        }
                    };
                    row.push(cell);
                }
                if let Some(outcomes) = &cohort.outcomes {
                    row.push(format!("{}", outcomes[idx].time));
                    row.push(if outcomes[idx].event { "1" } else { "0" }.into());
                }
                writer.write_record(&row)?;
            }
            writer.flush()?;
        }
        ImputeMode::Map | ImputeMode::Sample => {
            let records: Result<Vec<_>> = match mode {
                ImputeMode::Map => cohort
                    .records
                    .iter()
                    .map(|rec| impute_map(&model, rec))
                    .collect(),
                ImputeMode::Sample => {
                    let seed = resolve(args.seed, cfg.u64("seed"), rand::random::<u64>())?;
                    let mut rng = survbank::rng::stream(seed, "cli-impute-sample");
                    cohort
                        .records
                        .iter()
                        .map(|rec| impute_sample(&model, rec, &mut rng))
                        .collect()
                }
                ImputeMode::Expectation => unreachable!(),
            };
            let completed = Cohort {
                schema: cohort.schema.clone(),
                binning: cohort.binning.clone(),
                records: records?,
                outcomes: cohort.outcomes.clone(),
            };
            write_cohort_csv(&completed, &args.output)?;
        }
    }

    let missing_cells: usize = cohort
        .records
        .iter()
        .map(|r| r.missing_features().len())
        .sum();
    print_json(&json!({
        "n": cohort.len(),
        "imputed_cells": missing_cells,
        "mode": format!("{mode:?}").to_lowercase(),
        "output": args.output,
    }))
}

// ── impute-eval ─────────────────────────────────────────────────────────

pub fn impute_eval_cmd(args: ImputeEvalArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let raw = load_cohort(&args.cohort, &schema)?;
    let seed = resolve(args.seed, cfg.u64("seed"), 0)?;

    let complete: Vec<usize> = (0..raw.records.len())
        .filter(|&i| raw.records[i].values.iter().all(Option::is_some))
        .collect();
    let default_test = (complete.len() / 4).max(1);
    let test_size = resolve(args.test_size, cfg.usize("test_size"), default_test)?;
    if test_size == 0 || test_size > complete.len() {
        return Err(Error::Config(format!(
            "test size {test_size} is out of range; {} complete records exist",
            complete.len()
        )));
    }
    use rand::seq::SliceRandom;
    let mut pool = complete;
    pool.shuffle(&mut survbank::rng::stream(seed, "complete-test-split"));
    let mut test_idx: Vec<usize> = pool[..test_size].to_vec();
    test_idx.sort_unstable();
    let train_idx: Vec<usize> = (0..raw.records.len())
        .filter(|i| !test_idx.contains(i))
        .collect();

    // Binning comes from the training portion only.
    let train_raw = raw.subset(&train_idx);
    let test_raw = raw.subset(&test_idx);
    let binning = fit_binning_for_cohort(&train_raw)?;
    let train = Cohort::from_raw(&train_raw, binning.clone())?;
    let test = Cohort::from_raw(&test_raw, binning)?;

    let drop_string = resolve(
        args.drop_counts.clone(),
        Ok(cfg.string("drop_counts")),
        defaults::DROP_COUNTS
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(","),
    )?;
    let lc_mode = resolve(
        args.lc_mode,
        enum_from_config(cfg, "lc_mode"),
        LcMode::Expectation,
    )?;
    let config = ImputeEvalConfig {
        latent_states: resolve(
            args.latent_states,
            cfg.usize("latent_states"),
            defaults::LATENT_STATES,
        )?,
        em: em_config(&args.em, cfg, seed)?,
        drop_counts: parse_usize_list(&drop_string)?,
        repeats: resolve(args.repeats, cfg.usize("repeats"), defaults::REPEATS)?,
        lc_mode: match lc_mode {
            LcMode::Map => LcImputeMode::Map,
            LcMode::Expectation => LcImputeMode::Expectation,
        },
        seed,
    };
    let (rows, _) = impute_eval(&train, &test, &config)?;

    ensure_dir(&args.output)?;
    let report = json!({
        "n_train": train.len(),
        "n_test": test.len(),
        "repeats": config.repeats,
        "lc_mode": format!("{:?}", config.lc_mode).to_lowercase(),
        "rows": rows,
    });
    write_json(&args.output.join("impute_eval.json"), &report)?;

    let mut writer = csv::Writer::from_path(args.output.join("impute_eval.csv"))?;
    writer.write_record([
        "drop_count",
        "lc_accuracy",
        "mean_accuracy",
        "lc_nrmse",
        "mean_nrmse",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for row in &rows {
        writer.write_record([
            row.drop_count.to_string(),
            fmt(row.lc_accuracy),
            fmt(row.mean_accuracy),
            fmt(row.lc_nrmse),
            fmt(row.mean_nrmse),
        ])?;
    }
    writer.flush()?;
    print_json(&report)
}

// ── train-survival ──────────────────────────────────────────────────────

fn architecture_of(params: &TrainParams, cfg: &ConfigMap) -> Result<Architecture> {
    let arch = resolve(params.arch.clone(), Ok(cfg.string("arch")), "linear".into())?;
    match arch.as_str() {
        "linear" => Ok(Architecture::Linear),
        "mlp" => {
            let hidden = match &params.hidden {
                Some(h) => parse_usize_list(h)?,
                None => match cfg.string("hidden") {
                    Some(h) => parse_usize_list(&h)?,
                    None => defaults::MLP_HIDDEN.to_vec(),
                },
            };
            Ok(Architecture::Mlp { hidden })
        }
        other => Err(Error::Config(format!(
            "unknown architecture `{other}` (expected linear or mlp)"
        ))),
    }
}

fn train_config(params: &TrainParams, cfg: &ConfigMap) -> Result<TrainConfig> {
    let impute_mode = resolve(
        params.impute_mode,
        enum_from_config(cfg, "impute_mode"),
        TrainImpute::Sample,
    )?;
    Ok(TrainConfig {
        epochs: resolve(params.epochs, cfg.usize("epochs"), defaults::EPOCHS)?,
        batch_size: resolve(
            params.batch_size,
            cfg.usize("batch_size"),
            defaults::BATCH_SIZE,
        )?,
        lr: resolve(params.lr, cfg.f64("lr"), defaults::LEARNING_RATE)?,
        lr_decay_epoch: resolve(
            params.lr_decay_epoch,
            cfg.usize("lr_decay_epoch"),
            defaults::LR_DECAY_EPOCH,
        )?,
        lr_decay_factor: resolve(
            params.lr_decay_factor,
            cfg.f64("lr_decay_factor"),
            defaults::LR_DECAY_FACTOR,
        )?,
        seed: resolve(params.seed, cfg.u64("seed"), 0)?,
        imputation_mode: match impute_mode {
            TrainImpute::Sample => TrainImputeMode::Sample,
            TrainImpute::Map => TrainImputeMode::Map,
        },
    })
}

fn use_bank(params: &TrainParams, cfg: &ConfigMap) -> Result<bool> {
    if params.no_memory_bank {
        return Ok(false);
    }
    Ok(!cfg.bool("no_memory_bank")?.unwrap_or(false))
}

pub fn train_survival(args: TrainSurvivalArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let imputer = LatentClassModel::load(&args.imputer, &schema)?;
    let raw = load_cohort(&args.cohort, &schema)?;
    let cohort = Cohort::from_raw(&raw, imputer.binning().clone())?;

    let train = train_config(&args.params, cfg)?;
    let config = SurvivalFitConfig {
        architecture: architecture_of(&args.params, cfg)?,
        use_memory_bank: use_bank(&args.params, cfg)?,
        model_seed: train.seed,
        train,
    };
    let pipeline = fit_survival(&cohort, &imputer, &config)?;
    for k in pipeline.standardizer.degenerate_features() {
        eprintln!(
            "warning: feature `{}` has zero training variance; its standardized coordinate is emitted as 0",
            schema.feature(k).name
        );
    }

    let artifact = pipeline_artifact(&pipeline, &cohort);
    artifact.save(&args.output)?;
    if let Some(log_path) = &args.log {
        std::fs::write(log_path, pipeline.log.to_jsonl())?;
    }
    print_json(&json!({
        "n": cohort.len(),
        "memory_bank": config.use_memory_bank,
        "epochs": config.train.epochs,
        "final_fresh_loss": pipeline.log.epochs.last().map(|e| e.fresh_loss),
        "total_skips": pipeline.log.total_skips,
        "model": args.output,
    }))
}

// ── evaluate ────────────────────────────────────────────────────────────

fn report_metrics(report: &EvalReport) -> Vec<MetricReport> {
    let mut out = Vec::new();
    if let Some(v) = report.ipcw {
        out.push(MetricReport {
            metric: "ipcw_cindex".into(),
            value: v,
            tau: report.tau,
            grid: None,
            n: report.n,
            fold: None,
        });
    }
    if let Some(v) = report.harrell {
        out.push(MetricReport {
            metric: "harrell_cindex".into(),
            value: v,
            tau: None,
            grid: None,
            n: report.n,
            fold: None,
        });
    }
    out.push(MetricReport {
        metric: "integrated_brier".into(),
        value: report.ibs,
        tau: None,
        grid: Some(report.ibs_grid.clone()),
        n: report.n,
        fold: None,
    });
    out
}

pub fn evaluate(args: EvaluateArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let imputer = LatentClassModel::load(&args.imputer, &schema)?;
    let artifact = RiskArtifact::load(&args.model, &schema)?;
    if artifact.binning_digest != imputer.binning().digest() {
        return Err(Error::Config(
            "risk model was trained under a different binning than this imputer".into(),
        ));
    }
    let raw = load_cohort(&args.cohort, &schema)?;
    let cohort = Cohort::from_raw(&raw, imputer.binning().clone())?;

    let baseline_hazard = artifact
        .baseline_hazard
        .clone()
        .ok_or_else(|| Error::Config("risk artifact lacks the training baseline hazard".into()))?;
    let censoring_km = artifact
        .censoring_km
        .clone()
        .ok_or_else(|| Error::Config("risk artifact lacks the training censoring curve".into()))?;
    let pipeline = SurvivalPipeline {
        imputer,
        standardizer: artifact.standardizer.clone(),
        model: artifact.to_model()?,
        baseline_hazard,
        censoring: CensoringDistribution::from_curve(censoring_km),
        log: Default::default(),
    };

    let tau = match args.tau {
        Some(t) => Some(t),
        None => cfg.f64("tau")?,
    };
    let graf = args.graf_brier || cfg.bool("graf_brier")?.unwrap_or(false);
    let report = evaluate_survival(&pipeline, &cohort, tau, graf)?;
    let full = json!({ "summary": report, "metrics": report_metrics(&report) });
    if let Some(path) = &args.output {
        write_json(path, &full)?;
    }
    print_json(&full)
}

// ── cross-validate ──────────────────────────────────────────────────────

pub fn cross_validate_cmd(args: CrossValidateArgs, cfg: &ConfigMap) -> Result<()> {
    let schema = load_schema(&args.schema)?;
    let raw = load_cohort(&args.cohort, &schema)?;

    let train = train_config(&args.params, cfg)?;
    let seed = train.seed;
    let config = CvConfig {
        folds: resolve(args.folds, cfg.usize("folds"), defaults::FOLDS)?,
        latent_states: resolve(
            args.latent_states,
            cfg.usize("latent_states"),
            defaults::LATENT_STATES,
        )?,
        em: em_config(&args.em, cfg, seed)?,
        survival: SurvivalFitConfig {
            architecture: architecture_of(&args.params, cfg)?,
            use_memory_bank: use_bank(&args.params, cfg)?,
            model_seed: seed,
            train,
        },
        tau: match args.tau {
            Some(t) => Some(t),
            None => cfg.f64("tau")?,
        },
        graf_weighting: args.graf_brier || cfg.bool("graf_brier")?.unwrap_or(false),
        seed,
    };
    let report = cross_validate(&raw, &config)?;
    let fold_metrics: Vec<MetricReport> = report
        .folds
        .iter()
        .enumerate()
        .flat_map(|(i, fold)| {
            let mut ms = report_metrics(fold);
            for m in &mut ms {
                m.fold = Some(i);
            }
            ms
        })
        .collect();

    ensure_dir(&args.output)?;
    write_json(
        &args.output.join("cv_report.json"),
        &serde_json::json!({ "summary": report, "metrics": fold_metrics }),
    )?;
    let mut writer = csv::Writer::from_path(args.output.join("cv_report.csv"))?;
    writer.write_record([
        "fold",
        "n_test",
        "test_deaths",
        "ipcw",
        "harrell",
        "ibs",
        "tau",
        "flagged",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for (i, fold) in report.folds.iter().enumerate() {
        writer.write_record([
            i.to_string(),
            fold.n.to_string(),
            fold.test_deaths.to_string(),
            fmt(fold.ipcw),
            fmt(fold.harrell),
            format!("{}", fold.ibs),
            fmt(fold.tau),
            fold.flagged.to_string(),
        ])?;
    }
    writer.flush()?;
    print_json(&report)
}
