//! End-to-end experiment harnesses: the imputation-degradation protocol,
//! the survival training/evaluation pipeline, and stratified cross-validation.
//! The CLI wraps these with file I/O; tests drive them directly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{fit_binning_for_cohort, Cohort, RawCohort};
use crate::error::{Error, Result};
use crate::exec;
use crate::imputer::{
    fit_em, impute_expectation, impute_map, EmConfig, LatentClassModel, MeanFill, MeanImputer,
    PointValue,
};
use crate::metrics::{
    harrell_cindex, imputation_accuracy, integrated_brier, integrated_brier_ipcw,
    ipcw_cindex_with, nrmse, predict_survival_curves, CensoringDistribution, CumulativeHazard,
};
use crate::risk::{input_width, vectorize, Architecture, RiskArtifact, RiskModel, Standardizer};
use crate::trainer::{train, train_without_bank, TrainConfig, TrainLog};
use crate::{defaults, rng};

// ── imputation-degradation experiment ───────────────────────────────────

/// Which latent-class read-out fills the masked cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LcImputeMode {
    /// Highest-joint-probability completion.
    Map,
    /// Per-feature marginal argmax for categorical features, marginal
    /// expectation over representatives for continuous ones.
    Expectation,
}

#[derive(Debug, Clone)]
pub struct ImputeEvalConfig {
    pub latent_states: usize,
    pub em: EmConfig,
    pub drop_counts: Vec<usize>,
    pub repeats: usize,
    pub lc_mode: LcImputeMode,
    pub seed: u64,
}

impl Default for ImputeEvalConfig {
    fn default() -> Self {
        Self {
            latent_states: defaults::LATENT_STATES,
            em: EmConfig::default(),
            drop_counts: defaults::DROP_COUNTS.to_vec(),
            repeats: defaults::REPEATS,
            lc_mode: LcImputeMode::Expectation,
            seed: 0,
        }
    }
}

/// Mean metrics over repeats at one drop count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImputeEvalRow {
    pub drop_count: usize,
    pub lc_accuracy: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub lc_nrmse: Option<f64>,
    pub mean_nrmse: Option<f64>,
}

/// One imputer's collected predictions for one (repeat, drop) cell.
#[derive(Default)]
struct CellOutcome {
    cat_truth: Vec<usize>,
    cat_imputed: Vec<usize>,
    /// Per continuous feature: (true values, imputed values).
    cont: std::collections::BTreeMap<usize, (Vec<f64>, Vec<f64>)>,
}

impl CellOutcome {
    fn accuracy(&self) -> Option<f64> {
        imputation_accuracy(&self.cat_truth, &self.cat_imputed).ok()
    }

    /// Macro-average of per-feature NRMSE, skipping features whose truth has
    /// zero range in this cell.
    fn mean_nrmse(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .cont
            .values()
            .filter_map(|(t, i)| nrmse(t, i).ok())
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Mask `drop` randomly chosen maskable features of each complete test
/// record, impute with the latent-class model and with the mean baseline,
/// and score both against the held-out truth. Repeats are averaged.
pub fn impute_eval(
    train: &Cohort,
    test: &Cohort,
    config: &ImputeEvalConfig,
) -> Result<(Vec<ImputeEvalRow>, LatentClassModel)> {
    if train.schema != test.schema {
        return Err(Error::Schema("train and test schemas differ".into()));
    }
    if let Some(rec) = test.records.iter().find(|r| !r.is_complete()) {
        return Err(Error::Config(format!(
            "test record `{}` is incomplete; the protocol masks complete records",
            rec.patient_id
        )));
    }
    let maskable = train.schema.maskable_features();
    for &d in &config.drop_counts {
        if d > maskable.len() {
            return Err(Error::Config(format!(
                "cannot drop {d} features; only {} are maskable",
                maskable.len()
            )));
        }
    }

    let (lc, _) = fit_em(train, config.latent_states, &config.em)?;
    let mean = MeanImputer::fit(train)?;

    let mut rows = Vec::with_capacity(config.drop_counts.len());
    for &drop in &config.drop_counts {
        if drop == 0 {
            // Nothing is masked, so nothing is imputed: trivially perfect.
            rows.push(ImputeEvalRow {
                drop_count: 0,
                lc_accuracy: Some(1.0),
                mean_accuracy: Some(1.0),
                lc_nrmse: Some(0.0),
                mean_nrmse: Some(0.0),
            });
            continue;
        }
        let mut lc_acc = Vec::new();
        let mut mean_acc = Vec::new();
        let mut lc_nr = Vec::new();
        let mut mean_nr = Vec::new();
        for repeat in 0..config.repeats {
            let mut lc_cell = CellOutcome::default();
            let mut mean_cell = CellOutcome::default();
            for (i, record) in test.records.iter().enumerate() {
                let mask_index = ((repeat as u64) << 48) ^ ((drop as u64) << 40) ^ (i as u64);
                let mut r = rng::stream_indexed(config.seed, "impute-eval-mask", mask_index);
                let mut pool = maskable.clone();
                pool.shuffle(&mut r);
                let masked_features = &pool[..drop];

                let mut masked = record.clone();
                for &k in masked_features {
                    masked.states[k] = None;
                }

                // Latent-class read-outs.
                match config.lc_mode {
                    LcImputeMode::Expectation => {
                        for fe in impute_expectation(&lc, &masked)? {
                            let truth_state = record.states[fe.feature].unwrap();
                            match fe.point {
                                PointValue::State(s) => {
                                    lc_cell.cat_truth.push(truth_state);
                                    lc_cell.cat_imputed.push(s);
                                }
                                PointValue::Value(v) => {
                                    let truth_val =
                                        test.representative(fe.feature, truth_state).unwrap();
                                    let entry = lc_cell.cont.entry(fe.feature).or_default();
                                    entry.0.push(truth_val);
                                    entry.1.push(v);
                                }
                            }
                        }
                    }
                    LcImputeMode::Map => {
                        let filled = impute_map(&lc, &masked)?;
                        for &k in masked_features {
                            let truth_state = record.states[k].unwrap();
                            let got = filled.states[k].unwrap();
                            match test.representative(k, truth_state) {
                                None => {
                                    lc_cell.cat_truth.push(truth_state);
                                    lc_cell.cat_imputed.push(got);
                                }
                                Some(truth_val) => {
                                    let entry = lc_cell.cont.entry(k).or_default();
                                    entry.0.push(truth_val);
                                    entry.1.push(test.representative(k, got).unwrap());
                                }
                            }
                        }
                    }
                }

                // Mean baseline.
                for &k in masked_features {
                    let truth_state = record.states[k].unwrap();
                    match (mean.fill_for(k), test.representative(k, truth_state)) {
                        (MeanFill::Mode(s), None) => {
                            mean_cell.cat_truth.push(truth_state);
                            mean_cell.cat_imputed.push(*s);
                        }
                        (MeanFill::Mean { value, .. }, Some(truth_val)) => {
                            let entry = mean_cell.cont.entry(k).or_default();
                            entry.0.push(truth_val);
                            entry.1.push(*value);
                        }
                        _ => unreachable!("fill kind always matches feature kind"),
                    }
                }
            }
            if let Some(a) = lc_cell.accuracy() {
                lc_acc.push(a);
            }
            if let Some(a) = mean_cell.accuracy() {
                mean_acc.push(a);
            }
            if let Some(v) = lc_cell.mean_nrmse() {
                lc_nr.push(v);
            }
            if let Some(v) = mean_cell.mean_nrmse() {
                mean_nr.push(v);
            }
        }
        let avg = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        rows.push(ImputeEvalRow {
            drop_count: drop,
            lc_accuracy: avg(&lc_acc),
            mean_accuracy: avg(&mean_acc),
            lc_nrmse: avg(&lc_nr),
            mean_nrmse: avg(&mean_nr),
        });
    }
    Ok((rows, lc))
}

// ── survival pipeline ───────────────────────────────────────────────────

/// Everything the survival stage fits on the training split.
pub struct SurvivalPipeline {
    pub imputer: LatentClassModel,
    pub standardizer: Standardizer,
    pub model: RiskModel,
    pub baseline_hazard: CumulativeHazard,
    pub censoring: CensoringDistribution,
    pub log: TrainLog,
}

#[derive(Debug, Clone)]
pub struct SurvivalFitConfig {
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub use_memory_bank: bool,
    pub model_seed: u64,
}

impl Default for SurvivalFitConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Linear,
            train: TrainConfig::default(),
            use_memory_bank: true,
            model_seed: 0,
        }
    }
}

/// Train the risk model on an already-discretized training cohort using an
/// already-fitted imputer, then derive the baseline hazard and censoring
/// curve from the same training data.
pub fn fit_survival(
    train_cohort: &Cohort,
    imputer: &LatentClassModel,
    config: &SurvivalFitConfig,
) -> Result<SurvivalPipeline> {
    let standardizer = Standardizer::fit(train_cohort);
    let width = input_width(&train_cohort.schema);
    let model = RiskModel::new(config.architecture.clone(), width, config.model_seed)?;
    let (model, log) = if config.use_memory_bank {
        train(train_cohort, imputer, &standardizer, model, &config.train)?
    } else {
        train_without_bank(train_cohort, imputer, &standardizer, model, &config.train)?
    };

    let train_scores = score_cohort(&model, imputer, &standardizer, train_cohort)?;
    let outcomes = train_cohort.outcomes()?;
    let baseline_hazard = crate::metrics::breslow_baseline(&train_scores, outcomes)?;
    let censoring = CensoringDistribution::fit(outcomes)?;
    Ok(SurvivalPipeline {
        imputer: imputer.clone(),
        standardizer,
        model,
        baseline_hazard,
        censoring,
        log,
    })
}

/// MAP-impute, vectorize, and score every record of a cohort.
pub fn score_cohort(
    model: &RiskModel,
    imputer: &LatentClassModel,
    standardizer: &Standardizer,
    cohort: &Cohort,
) -> Result<Vec<f64>> {
    let inputs: Result<Vec<_>> = exec::map(&cohort.records, |rec| {
        let completed = impute_map(imputer, rec)?;
        vectorize(&completed, &cohort.schema, &cohort.binning, standardizer)
    })
    .into_iter()
    .collect();
    model.forward(&inputs?)
}

/// Discrimination and calibration of one scored test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub test_deaths: usize,
    /// IPCW horizon; absent when the split has no deaths to anchor it.
    pub tau: Option<f64>,
    pub harrell: Option<f64>,
    pub ipcw: Option<f64>,
    pub ibs: f64,
    /// Time grid the IBS integrated over.
    pub ibs_grid: Vec<f64>,
    pub ibs_skipped: usize,
    /// True when the split had no deaths, so concordance is undefined and
    /// the fold must be excluded from C-index averages.
    pub flagged: bool,
    pub brier_weighting: String,
}

/// Evaluate a fitted pipeline on a test cohort (already discretized with the
/// training binning). `tau` defaults to the largest death time in the test
/// split.
///
/// A split without deaths is flagged rather than failed, and a concordance
/// index that is undefined on the split (no comparable pairs — typical for
/// tiny folds) is reported as absent; both cases drop out of C-index
/// averages naturally.
pub fn evaluate_survival(
    pipeline: &SurvivalPipeline,
    test: &Cohort,
    tau: Option<f64>,
    graf_weighting: bool,
) -> Result<EvalReport> {
    let outcomes = test.outcomes()?;
    let scores = score_cohort(
        &pipeline.model,
        &pipeline.imputer,
        &pipeline.standardizer,
        test,
    )?;
    let test_deaths = outcomes.iter().filter(|o| o.event).count();
    let max_death = outcomes
        .iter()
        .filter(|o| o.event)
        .map(|o| o.time)
        .fold(f64::NEG_INFINITY, f64::max);
    let tau = tau.or(max_death.is_finite().then_some(max_death));

    let undefined_is_none = |r: Result<f64>| -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::UndefinedMetric(_)) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let (harrell, ipcw, flagged) = if test_deaths == 0 {
        (None, None, true)
    } else {
        let harrell = undefined_is_none(harrell_cindex(&scores, outcomes))?;
        let ipcw = undefined_is_none(ipcw_cindex_with(
            &pipeline.censoring,
            &scores,
            outcomes,
            tau.expect("deaths exist, so tau is set"),
        ))?;
        (harrell, ipcw, false)
    };

    let curves = predict_survival_curves(&pipeline.baseline_hazard, &scores);
    let ibs = if graf_weighting {
        integrated_brier_ipcw(&curves, outcomes, &pipeline.censoring)?
    } else {
        integrated_brier(&curves, outcomes)?
    };

    Ok(EvalReport {
        n: test.len(),
        test_deaths,
        tau,
        harrell,
        ipcw,
        ibs: ibs.value,
        ibs_grid: ibs.grid,
        ibs_skipped: ibs.skipped,
        flagged,
        brier_weighting: if graf_weighting { "ipcw" } else { "literal" }.into(),
    })
}

/// Bundle a fitted pipeline into the serializable risk artifact.
pub fn pipeline_artifact(pipeline: &SurvivalPipeline, train_cohort: &Cohort) -> RiskArtifact {
    let mut artifact = pipeline.model.to_artifact(
        &pipeline.standardizer,
        &train_cohort.schema,
        &train_cohort.binning,
    );
    artifact.baseline_hazard = Some(pipeline.baseline_hazard.clone());
    artifact.censoring_km = Some(pipeline.censoring.curve().clone());
    artifact
}

// ── cross-validation ────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CvConfig {
    pub folds: usize,
    pub latent_states: usize,
    pub em: EmConfig,
    pub survival: SurvivalFitConfig,
    pub tau: Option<f64>,
    pub graf_weighting: bool,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: defaults::FOLDS,
            latent_states: defaults::LATENT_STATES,
            em: EmConfig::default(),
            survival: SurvivalFitConfig::default(),
            tau: None,
            graf_weighting: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<EvalReport>,
    /// mean and sample standard deviation over non-flagged folds.
    pub ipcw_mean: Option<f64>,
    pub ipcw_std: Option<f64>,
    pub harrell_mean: Option<f64>,
    pub harrell_std: Option<f64>,
    pub ibs_mean: f64,
    pub ibs_std: f64,
    /// C-index x100 formatted as `mean±std`, e.g. `77.68±4.51`.
    pub ipcw_formatted: Option<String>,
    pub ibs_formatted: String,
    pub flagged_folds: Vec<usize>,
}

/// Deterministic fold assignment stratified by the event indicator, so each
/// fold receives its share of deaths.
pub fn stratified_folds(
    outcomes: &[crate::data::SurvivalOutcome],
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if folds > outcomes.len() {
        return Err(Error::Config(format!(
            "{folds} folds for {} patients",
            outcomes.len()
        )));
    }
    let mut deaths: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].event).collect();
    let mut censored: Vec<usize> = (0..outcomes.len())
        .filter(|&i| !outcomes[i].event)
        .collect();
    let mut r = rng::stream(seed, "fold-split");
    deaths.shuffle(&mut r);
    censored.shuffle(&mut r);
    let mut assignment = vec![Vec::new(); folds];
    for (pos, &i) in deaths.iter().chain(censored.iter()).enumerate() {
        assignment[pos % folds].push(i);
    }
    for fold in &mut assignment {
        fold.sort_unstable();
    }
    Ok(assignment)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

/// Full k-fold cross-validation from a raw cohort. Binning, standardization,
/// the imputer, and the censoring curve are fitted on each fold's training
/// portion only.
pub fn cross_validate(raw: &RawCohort, config: &CvConfig) -> Result<CvReport> {
    let outcomes = raw
        .outcomes
        .as_deref()
        .ok_or_else(|| Error::Schema("cross-validation needs survival outcomes".into()))?;
    let assignment = stratified_folds(outcomes, config.folds, config.seed)?;

    let fold_results: Vec<Result<EvalReport>> = exec::map_indexed(&assignment, |fold, test_idx| {
        let train_idx: Vec<usize> = (0..raw.records.len())
            .filter(|i| !test_idx.contains(i))
            .collect();
        let train_raw = raw.subset(&train_idx);
        let test_raw = raw.subset(test_idx);

        let binning = fit_binning_for_cohort(&train_raw)?;
        let train_cohort = Cohort::from_raw(&train_raw, binning.clone())?;
        let test_cohort = Cohort::from_raw(&test_raw, binning)?;

        let mut em = config.em;
        em.seed = rng::mix_seed(config.seed, &format!("fold-{fold}-em"));
        let (imputer, _) = fit_em(&train_cohort, config.latent_states, &em)?;

        let mut survival = config.survival.clone();
        survival.train.seed = rng::mix_seed(config.seed, &format!("fold-{fold}-train"));
        survival.model_seed = rng::mix_seed(config.seed, &format!("fold-{fold}-model"));
        let pipeline = fit_survival(&train_cohort, &imputer, &survival)?;
        evaluate_survival(&pipeline, &test_cohort, config.tau, config.graf_weighting)
    });

    let mut folds = Vec::with_capacity(fold_results.len());
    for r in fold_results {
        folds.push(r?);
    }

    let usable: Vec<&EvalReport> = folds.iter().filter(|f| !f.flagged).collect();
    let flagged_folds: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.flagged.then_some(i))
        .collect();
    let ipcw: Vec<f64> = usable.iter().filter_map(|f| f.ipcw).collect();
    let harrell: Vec<f64> = usable.iter().filter_map(|f| f.harrell).collect();
    let ibs: Vec<f64> = folds.iter().map(|f| f.ibs).collect();

    let (ibs_mean, ibs_std) = mean_std(&ibs);
    let (ipcw_stats, ipcw_formatted) = if ipcw.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&ipcw);
        (
            Some((m, s)),
            Some(format!("{:.2}\u{b1}{:.2}", m * 100.0, s * 100.0)),
        )
    };
    let harrell_stats = (!harrell.is_empty()).then(|| mean_std(&harrell));

    Ok(CvReport {
        folds,
        ipcw_mean: ipcw_stats.map(|s| s.0),
        ipcw_std: ipcw_stats.map(|s| s.1),
        harrell_mean: harrell_stats.map(|s| s.0),
        harrell_std: harrell_stats.map(|s| s.1),
        ibs_mean,
        ibs_std,
        ipcw_formatted,
        ibs_formatted: format!("{ibs_mean:.2}\u{b1}{ibs_std:.2}"),
        flagged_folds,
    })
}
