//! Breslow baseline hazard, per-patient survival curves, and the Brier
//! score with its time integral.

use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::concordance::CensoringDistribution;
use crate::metrics::km::{CumulativeHazard, SurvivalCurve};
use crate::trainer::RiskSetIndex;

/// Breslow estimator of the cumulative baseline hazard under fitted risk
/// scores:
///
/// ```text
/// H0(t) = Σ_{death times u <= t} d_u / Σ_{j in R_u} exp(g_j)
/// ```
///
/// With all scores zero this is exactly the Nelson-Aalen estimator.
pub fn breslow_baseline(scores: &[f64], outcomes: &[SurvivalOutcome]) -> Result<CumulativeHazard> {
    if scores.len() != outcomes.len() {
        return Err(Error::Numeric(
            "scores and outcomes differ in length".into(),
        ));
    }
    let index = RiskSetIndex::build(outcomes);
    if index.death_count() == 0 {
        return Err(Error::AllCensored);
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    let mut d = 0;
    while d < index.death_count() {
        let patient = index.death_patient(d);
        let time = outcomes[patient].time;
        let risk_set = index.risk_set(d);
        // Count the deaths tied at this time; they share the risk set.
        let mut tied = 0usize;
        while d + tied < index.death_count() && outcomes[index.death_patient(d + tied)].time == time
        {
            tied += 1;
        }
        let logs: Vec<f64> = risk_set.iter().map(|&j| scores[j]).collect();
        let lse = crate::imputer::log_sum_exp(&logs);
        h += tied as f64 * (-lse).exp();
        times.push(time);
        values.push(h);
        d += tied;
    }
    Ok(CumulativeHazard { times, values })
}

/// Predicted survival curve of one patient:
/// `p(t) = exp(-H0(t) · exp(score))`.
pub fn survival_curve_for(h0: &CumulativeHazard, score: f64) -> SurvivalCurve {
    let scale = score.exp();
    let probs: Vec<f64> = h0.values.iter().map(|&v| (-v * scale).exp()).collect();
    SurvivalCurve::new(h0.times.clone(), probs).expect("breslow curve is monotone by construction")
}

/// Survival curves for a batch of scores.
pub fn predict_survival_curves(h0: &CumulativeHazard, scores: &[f64]) -> Vec<SurvivalCurve> {
    exec::map(scores, |&s| survival_curve_for(h0, s))
}

/// Patients whose status at `t` is known: everyone uncensored, plus patients
/// censored strictly after `t`.
fn status_known_at(outcome: &SurvivalOutcome, t: f64) -> bool {
    outcome.event || outcome.time > t
}

/// Brier score at time `t`:
/// `BS(t) = (1/|N*|) Σ_{i in N*} (1(T_i > t) - p_i(t))^2`, where `N*` are the
/// patients whose survival status at `t` is known. No censoring reweighting
/// is applied; see [`brier_score_ipcw`] for the weighted variant.
pub fn brier_score(curves: &[SurvivalCurve], outcomes: &[SurvivalOutcome], t: f64) -> Result<f64> {
    if curves.len() != outcomes.len() {
        return Err(Error::Numeric(
            "curves and outcomes differ in length".into(),
        ));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (curve, outcome) in curves.iter().zip(outcomes) {
        if !status_known_at(outcome, t) {
            continue;
        }
        let alive = if outcome.time > t { 1.0 } else { 0.0 };
        let p = curve.eval(t);
        total += (alive - p) * (alive - p);
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric(format!(
            "no patient's survival status is known at t={t}"
        )));
    }
    Ok(total / n as f64)
}

/// Censoring-weighted Brier score (inverse-probability-of-censoring
/// weights): observed deaths before `t` weigh `1/G(t_i-)`, survivors weigh
/// `1/G(t)`, censored-before-`t` patients drop out, and the normalizer is
/// the full cohort size.
pub fn brier_score_ipcw(
    curves: &[SurvivalCurve],
    outcomes: &[SurvivalOutcome],
    g: &CensoringDistribution,
    t: f64,
) -> Result<f64> {
    if curves.len() != outcomes.len() {
        return Err(Error::Numeric(
            "curves and outcomes differ in length".into(),
        ));
    }
    if curves.is_empty() {
        return Err(Error::UndefinedMetric("empty evaluation set".into()));
    }
    let mut total = 0.0;
    for (curve, outcome) in curves.iter().zip(outcomes) {
        let p = curve.eval(t);
        if outcome.event && outcome.time <= t {
            let w = g.survival_before(outcome.time);
            if w <= 0.0 {
                return Err(Error::UndefinedMetric(format!(
                    "censoring survival G is 0 just before t={}",
                    outcome.time
                )));
            }
            total += p * p / w;
        } else if outcome.time > t {
            let w = g.curve().eval(t);
            if w <= 0.0 {
                return Err(Error::UndefinedMetric(format!(
                    "censoring survival G is 0 at t={t}"
                )));
            }
            total += (1.0 - p) * (1.0 - p) / w;
        }
    }
    Ok(total / curves.len() as f64)
}

/// Integrated Brier score and its provenance.
#[derive(Debug, Clone)]
pub struct IbsResult {
    pub value: f64,
    /// Grid points the integral used.
    pub grid: Vec<f64>,
    /// Grid points dropped because BS was undefined there.
    pub skipped: usize,
}

fn unique_times(outcomes: &[SurvivalOutcome]) -> Vec<f64> {
    let mut times: Vec<f64> = outcomes.iter().map(|o| o.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    times
}

fn integrate_brier<F>(outcomes: &[SurvivalOutcome], eval: F) -> Result<IbsResult>
where
    F: Fn(f64) -> Result<f64>,
{
    let candidates = unique_times(outcomes);
    let mut grid = Vec::with_capacity(candidates.len());
    let mut values = Vec::with_capacity(candidates.len());
    let mut skipped = 0usize;
    for &t in &candidates {
        match eval(t) {
            Ok(v) => {
                grid.push(t);
                values.push(v);
            }
            Err(Error::UndefinedMetric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if grid.len() < 2 {
        return Err(Error::UndefinedMetric(
            "need at least two usable evaluation times to integrate".into(),
        ));
    }
    let span = grid.last().unwrap() - grid.first().unwrap();
    if span <= 0.0 {
        return Err(Error::UndefinedMetric(
            "degenerate integration interval (all evaluation times equal)".into(),
        ));
    }
    let mut area = 0.0;
    for w in grid.windows(2).zip(values.windows(2)) {
        let (ts, vs) = w;
        area += (ts[1] - ts[0]) * (vs[0] + vs[1]) / 2.0;
    }
    Ok(IbsResult {
        value: area / span,
        grid,
        skipped,
    })
}

/// Integrated Brier score: trapezoidal integral of BS(t) over the unique
/// outcome times of the evaluation set, normalized by the spanned interval.
pub fn integrated_brier(
    curves: &[SurvivalCurve],
    outcomes: &[SurvivalOutcome],
) -> Result<IbsResult> {
    integrate_brier(outcomes, |t| brier_score(curves, outcomes, t))
}

/// Integrated censoring-weighted Brier score.
pub fn integrated_brier_ipcw(
    curves: &[SurvivalCurve],
    outcomes: &[SurvivalOutcome],
    g: &CensoringDistribution,
) -> Result<IbsResult> {
    integrate_brier(outcomes, |t| brier_score_ipcw(curves, outcomes, g, t))
}
