use super::*;
use crate::data::Cohort;
use crate::imputer::{fit_em, EmConfig};
use crate::risk::{Architecture, RiskModel, Standardizer};
use crate::synthgen::{generate, GeneratorSpec};

fn outcome(time: f64, event: bool) -> SurvivalOutcome {
    SurvivalOutcome { time, event }
}

// ── cox loss ────────────────────────────────────────────────────────────

#[test]
fn two_deaths_with_equal_scores_give_half_log_two() {
    let outcomes = vec![outcome(1.0, true), outcome(2.0, true)];
    let index = RiskSetIndex::build(&outcomes);
    let (loss, grad) = cox_loss(&[0.0, 0.0], &index).unwrap();
    assert!((loss - 2.0f64.ln() / 2.0).abs() < 1e-12, "loss {loss}");
    // d/dg1 = -(1/2)(1 - 0.5) = -0.25 ; d/dg2 = -(1/2)(1 - (0.5 + 1)) = 0.25
    assert!((grad[0] + 0.25).abs() < 1e-12);
    assert!((grad[1] - 0.25).abs() < 1e-12);
}

#[test]
fn lone_death_with_singleton_risk_set_has_zero_loss() {
    let outcomes = vec![
        outcome(3.0, false),
        outcome(5.0, false),
        outcome(10.0, true),
    ];
    let index = RiskSetIndex::build(&outcomes);
    let (loss, _) = cox_loss(&[0.3, -0.2, 1.7], &index).unwrap();
    assert!(loss.abs() < 1e-12);
}

#[test]
fn adding_a_constant_to_every_score_changes_nothing() {
    let outcomes: Vec<SurvivalOutcome> = (0..30)
        .map(|i| outcome(1.0 + i as f64 * 0.7, i % 3 != 1))
        .collect();
    let index = RiskSetIndex::build(&outcomes);
    let scores: Vec<f64> = (0..30).map(|i| ((i * 13) % 7) as f64 * 0.3 - 1.0).collect();
    let (l0, g0) = cox_loss(&scores, &index).unwrap();
    for c in [-5.0, 0.001, 42.0] {
        let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
        let (l1, g1) = cox_loss(&shifted, &index).unwrap();
        assert!((l0 - l1).abs() < 1e-10, "c={c}: {l0} vs {l1}");
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn all_censored_input_is_a_clean_error() {
    let outcomes = vec![outcome(1.0, false), outcome(2.0, false)];
    let index = RiskSetIndex::build(&outcomes);
    assert!(matches!(
        cox_loss(&[0.0, 0.0], &index),
        Err(crate::error::Error::AllCensored)
    ));
}

#[test]
fn cox_gradient_matches_finite_differences() {
    use rand::Rng;
    let mut r = crate::rng::stream(31, "cox-fd");
    for _ in 0..20 {
        let n = 12;
        let outcomes: Vec<SurvivalOutcome> = (0..n)
            .map(|_| outcome(r.random::<f64>() * 50.0, r.random::<f64>() < 0.6))
            .collect();
        if !outcomes.iter().any(|o| o.event) {
            continue;
        }
        let index = RiskSetIndex::build(&outcomes);
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 3.0 - 1.5).collect();
        let (_, grad) = cox_loss(&scores, &index).unwrap();
        let h = 1e-6;
        for j in 0..n {
            let mut plus = scores.clone();
            plus[j] += h;
            let mut minus = scores.clone();
            minus[j] -= h;
            let fd = (cox_loss(&plus, &index).unwrap().0 - cox_loss(&minus, &index).unwrap().0)
                / (2.0 * h);
            assert!(
                (grad[j] - fd).abs() < 1e-6,
                "patient {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }
}

#[test]
fn tied_deaths_share_one_risk_set() {
    // Two deaths at the same time: both see the full trio in the denominator.
    let outcomes = vec![outcome(2.0, true), outcome(2.0, true), outcome(5.0, false)];
    let index = RiskSetIndex::build(&outcomes);
    let (loss, _) = cox_loss(&[0.0, 0.0, 0.0], &index).unwrap();
    // Each death term: 0 - ln 3; loss = ln 3.
    assert!((loss - 3.0f64.ln()).abs() < 1e-12);
}

// ── relative death risk ─────────────────────────────────────────────────

#[test]
fn relative_risk_examples() {
    let scores = [1.0, 0.0, 2.0];
    assert_eq!(relative_death_risk(&scores, &[2], 2).unwrap(), 1.0);
    assert!((relative_death_risk(&[0.4, 0.4], &[0, 1], 0).unwrap() - 0.5).abs() < 1e-12);
    let e = std::f64::consts::E;
    let expected = e / (e + 1.0);
    assert!((relative_death_risk(&scores, &[0, 1], 0).unwrap() - expected).abs() < 1e-12);
    assert!(relative_death_risk(&scores, &[0, 1], 2).is_err());
}

// ── risk set index ──────────────────────────────────────────────────────

#[test]
fn risk_sets_contain_their_death_and_nest() {
    use rand::Rng;
    let mut r = crate::rng::stream(47, "risksets");
    let outcomes: Vec<SurvivalOutcome> = (0..50)
        .map(|_| outcome((r.random::<f64>() * 20.0).round(), r.random::<f64>() < 0.5))
        .collect();
    let index = RiskSetIndex::build(&outcomes);
    let mut previous: Option<Vec<usize>> = None;
    for d in 0..index.death_count() {
        let set: Vec<usize> = index.risk_set(d).to_vec();
        assert!(set.contains(&index.death_patient(d)));
        // Later deaths have subset risk sets.
        if let Some(prev) = &previous {
            assert!(set.iter().all(|p| prev.contains(p)));
            assert!(set.len() <= prev.len());
        }
        // Membership is exactly {m : t_m >= t_d}.
        let t_d = outcomes[index.death_patient(d)].time;
        for (m, o) in outcomes.iter().enumerate() {
            assert_eq!(set.contains(&m), o.time >= t_d);
        }
        previous = Some(set);
    }
}

// ── memory bank ─────────────────────────────────────────────────────────

fn small_pipeline(n: usize, seed: u64) -> (Cohort, crate::imputer::LatentClassModel, Standardizer) {
    let mut spec = GeneratorSpec::correlated_six_feature(n, 0.25, seed);
    spec.censoring_rate = 0.01;
    let (cohort, _) = generate(&spec).unwrap();
    let (imputer, _) = fit_em(
        &cohort,
        2,
        &EmConfig {
            max_iters: 8,
            seed,
            ..EmConfig::default()
        },
    )
    .unwrap();
    let stdz = Standardizer::fit(&cohort);
    (cohort, imputer, stdz)
}

#[test]
fn bank_covers_every_patient_and_updates_only_the_batch() {
    let (cohort, _, _) = small_pipeline(30, 3);
    let mut bank = MemoryBank::init(&cohort, 5);
    assert_eq!(bank.len(), 30);
    assert!(bank.scores().iter().all(|s| (0.0..1.0).contains(s)));
    let before = bank.scores().to_vec();
    bank.write(&[3, 7, 11], &[10.0, 20.0, 30.0]);
    for (i, (&now, &was)) in bank.scores().iter().zip(&before).enumerate() {
        match i {
            3 => assert_eq!(now, 10.0),
            7 => assert_eq!(now, 20.0),
            11 => assert_eq!(now, 30.0),
            _ => assert_eq!(now, was),
        }
    }
    assert_eq!(bank.score_of(&cohort.records[7].patient_id), Some(20.0));
}

#[test]
fn full_batch_training_is_bitwise_identical_with_and_without_the_bank() {
    let (cohort, imputer, stdz) = small_pipeline(40, 13);
    let width = crate::risk::input_width(&cohort.schema);
    let config = TrainConfig {
        epochs: 6,
        batch_size: cohort.len(),
        lr: 0.05,
        seed: 21,
        ..TrainConfig::default()
    };
    let init = RiskModel::new(Architecture::Mlp { hidden: vec![8] }, width, 77).unwrap();
    let (with_bank, log_a) = train(&cohort, &imputer, &stdz, init.clone(), &config).unwrap();
    let (without, log_b) = train_without_bank(&cohort, &imputer, &stdz, init, &config).unwrap();
    for (la, lb) in with_bank.layers().iter().zip(without.layers()) {
        for (x, y) in la.weights.iter().zip(&lb.weights) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        for (x, y) in la.bias.iter().zip(&lb.bias) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
    for (ea, eb) in log_a.epochs.iter().zip(&log_b.epochs) {
        assert_eq!(ea.fresh_loss.to_bits(), eb.fresh_loss.to_bits());
    }
    assert_eq!(log_b.total_skips, 0);
}

#[test]
fn bank_step_parameter_gradients_match_finite_differences() {
    // One memory-bank step by hand: stale entries are constants, so the
    // analytic parameter gradient (backward through the batch's live scores
    // only) must match finite differences of the step loss as a function of
    // the parameters.
    let (cohort, imputer, stdz) = small_pipeline(20, 29);
    let outcomes = cohort.outcomes().unwrap();
    let index = RiskSetIndex::build(outcomes);
    let width = crate::risk::input_width(&cohort.schema);
    let model = RiskModel::new(Architecture::Mlp { hidden: vec![4] }, width, 5).unwrap();
    let bank = MemoryBank::init(&cohort, 9);
    let batch: Vec<usize> = vec![2, 5, 6, 11, 17];

    // Deterministic inputs for the batch (MAP imputation).
    let inputs: Vec<crate::risk::FeatureVector> = batch
        .iter()
        .map(|&p| {
            let completed = crate::imputer::impute_map(&imputer, &cohort.records[p]).unwrap();
            crate::risk::vectorize(&completed, &cohort.schema, &cohort.binning, &stdz).unwrap()
        })
        .collect();

    let step_loss = |m: &RiskModel| -> f64 {
        let live = m.forward(&inputs).unwrap();
        let mut scores = bank.scores().to_vec();
        for (&p, &s) in batch.iter().zip(&live) {
            scores[p] = s;
        }
        cox_loss(&scores, &index).unwrap().0
    };

    let (live, cache) = model.forward_cached(&inputs).unwrap();
    let mut scores = bank.scores().to_vec();
    for (&p, &s) in batch.iter().zip(&live) {
        scores[p] = s;
    }
    let (_, grad_full) = cox_loss(&scores, &index).unwrap();
    let upstream: Vec<f64> = batch.iter().map(|&p| grad_full[p]).collect();
    let analytic = model.backward(&cache, &upstream).unwrap();

    let h = 1e-5;
    for l in 0..model.layers().len() {
        for i in 0..model.layers()[l].weights.len() {
            let mut plus = model.clone();
            plus.layers_mut()[l].weights[i] += h;
            let mut minus = model.clone();
            minus.layers_mut()[l].weights[i] -= h;
            let fd = (step_loss(&plus) - step_loss(&minus)) / (2.0 * h);
            let a = analytic.layers[l].weights[i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "layer {l} weight {i}: analytic {a} vs fd {fd}");
        }
    }
}

#[test]
fn high_censoring_small_batches_skip_without_the_bank_but_not_with_it() {
    let mut spec = GeneratorSpec::correlated_six_feature(120, 0.2, 71);
    // Censor hard: roughly 80% of patients leave alive.
    spec.censoring_rate = 0.05;
    spec.baseline_rate = 0.012;
    let (cohort, _) = generate(&spec).unwrap();
    let outcomes = cohort.outcomes().unwrap();
    let deaths = outcomes.iter().filter(|o| o.event).count();
    let censored_frac = 1.0 - deaths as f64 / cohort.len() as f64;
    assert!(
        censored_frac > 0.7,
        "want high censoring, got {censored_frac}"
    );

    let (imputer, _) = fit_em(
        &cohort,
        2,
        &EmConfig {
            max_iters: 5,
            ..EmConfig::default()
        },
    )
    .unwrap();
    let stdz = Standardizer::fit(&cohort);
    let width = crate::risk::input_width(&cohort.schema);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr: 0.01,
        seed: 2,
        ..TrainConfig::default()
    };
    let init = RiskModel::new(Architecture::Linear, width, 1).unwrap();
    let (_, no_bank_log) =
        train_without_bank(&cohort, &imputer, &stdz, init.clone(), &config).unwrap();
    assert!(
        no_bank_log.total_skips > 0,
        "all-censored batches must be skipped and counted"
    );

    let (_, bank_log) = train(&cohort, &imputer, &stdz, init, &config).unwrap();
    assert_eq!(bank_log.total_skips, 0);
    for e in &bank_log.epochs {
        assert_eq!(e.skip_count, 0);
        assert_eq!(e.min_step_deaths, deaths, "every step sees all deaths");
    }
}

#[test]
fn training_an_all_censored_cohort_fails_loudly() {
    let mut spec = GeneratorSpec::correlated_six_feature(25, 0.2, 83);
    spec.censoring_rate = 1e6; // censor everyone almost immediately
    let (cohort, _) = generate(&spec).unwrap();
    assert!(cohort.outcomes().unwrap().iter().all(|o| !o.event));
    let (imputer, _) = fit_em(
        &cohort,
        1,
        &EmConfig {
            max_iters: 2,
            ..EmConfig::default()
        },
    )
    .unwrap();
    let stdz = Standardizer::fit(&cohort);
    let width = crate::risk::input_width(&cohort.schema);
    let model = RiskModel::new(Architecture::Linear, width, 0).unwrap();
    let err = train(&cohort, &imputer, &stdz, model, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, crate::error::Error::AllCensored));
}

#[test]
fn pinned_training_defaults() {
    let config = TrainConfig::default();
    assert_eq!(config.epochs, 100);
    assert_eq!(config.lr_decay_epoch, 30);
    assert_eq!(config.lr_decay_factor, 0.1);
    assert!(crate::defaults::LEARNING_RATES.contains(&config.lr));
    // Decay applies from epoch 31 on.
    assert_eq!(config.lr_for_epoch(30), config.lr);
    assert!((config.lr_for_epoch(31) - config.lr * 0.1).abs() < 1e-15);
}

#[test]
fn epoch_log_serializes_one_json_object_per_line() {
    let log = TrainLog {
        epochs: vec![
            EpochLog {
                epoch: 1,
                lr: 0.01,
                fresh_loss: 1.25,
                skip_count: 0,
                min_step_deaths: 7,
            },
            EpochLog {
                epoch: 2,
                lr: 0.01,
                fresh_loss: 1.10,
                skip_count: 2,
                min_step_deaths: 7,
            },
        ],
        total_skips: 2,
    };
    let jsonl = log.to_jsonl();
    let lines: Vec<&str> = jsonl.trim_end().split('\n').collect();
    assert_eq!(lines.len(), 2);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("epoch").is_some());
        assert!(v.get("lr").is_some());
        assert!(v.get("fresh_loss").is_some());
        assert!(v.get("skip_count").is_some());
    }
}
