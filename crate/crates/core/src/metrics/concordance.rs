//! Concordance indices: Harrell's C and the censoring-weighted variant.
//!
//! A pair is comparable when the earlier patient's event is a death, so the
//! ordering of the two survival times is known. Concordance means the model
//! scored the earlier death higher; score ties count one half.

use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::km::{kaplan_meier, KmTarget, SurvivalCurve};

/// Patients sorted by time ascending, with group boundaries at distinct
/// times; comparable partners of a death are exactly the later groups.
struct SortedTimes {
    order: Vec<usize>,
    /// End (exclusive) of the tied-time group starting at each position.
    group_end: Vec<usize>,
}

impl SortedTimes {
    fn new(outcomes: &[SurvivalOutcome]) -> Self {
        let mut order: Vec<usize> = (0..outcomes.len()).collect();
        order.sort_by(|&a, &b| outcomes[a].time.partial_cmp(&outcomes[b].time).unwrap());
        let n = order.len();
        let mut group_end = vec![0usize; n];
        let mut pos = 0;
        while pos < n {
            let mut end = pos;
            while end < n && outcomes[order[end]].time == outcomes[order[pos]].time {
                end += 1;
            }
            for slot in &mut group_end[pos..end] {
                *slot = end;
            }
            pos = end;
        }
        Self { order, group_end }
    }
}

fn pair_score(si: f64, sj: f64) -> f64 {
    if si > sj {
        1.0
    } else if si == sj {
        0.5
    } else {
        0.0
    }
}

/// Harrell's concordance index.
pub fn harrell_cindex(scores: &[f64], outcomes: &[SurvivalOutcome]) -> Result<f64> {
    if scores.len() != outcomes.len() {
        return Err(Error::Numeric(
            "scores and outcomes differ in length".into(),
        ));
    }
    let sorted = SortedTimes::new(outcomes);
    let positions: Vec<usize> = (0..sorted.order.len()).collect();
    let per_anchor: Vec<(f64, u64)> = exec::map(&positions, |&pos| {
        let i = sorted.order[pos];
        if !outcomes[i].event {
            return (0.0, 0);
        }
        let mut concordant = 0.0;
        let mut pairs = 0u64;
        for &j in &sorted.order[sorted.group_end[pos]..] {
            concordant += pair_score(scores[i], scores[j]);
            pairs += 1;
        }
        (concordant, pairs)
    });
    let concordant: f64 = per_anchor.iter().map(|p| p.0).sum();
    let pairs: u64 = per_anchor.iter().map(|p| p.1).sum();
    if pairs == 0 {
        return Err(Error::UndefinedMetric(
            "no comparable pairs (every ordering is ambiguous under censoring)".into(),
        ));
    }
    Ok(concordant / pairs as f64)
}

/// Kaplan-Meier estimate of the censoring survival function `G`, fitted on
/// training outcomes.
#[derive(Debug, Clone)]
pub struct CensoringDistribution {
    curve: SurvivalCurve,
}

impl CensoringDistribution {
    pub fn fit(outcomes: &[SurvivalOutcome]) -> Result<Self> {
        Ok(Self {
            curve: kaplan_meier(outcomes, KmTarget::Censoring)?,
        })
    }

    pub fn from_curve(curve: SurvivalCurve) -> Self {
        Self { curve }
    }

    pub fn curve(&self) -> &SurvivalCurve {
        &self.curve
    }

    /// `G(t-)`: probability of remaining uncensored just before `t`.
    pub fn survival_before(&self, t: f64) -> f64 {
        self.curve.eval_before(t)
    }
}

/// Censoring-weighted concordance: death-anchored comparable pairs with
/// `t_i < tau` weighted by `1 / G(t_i-)^2`, with `G` fitted on the training
/// split. Reduces to Harrell's C (restricted to `t_i < tau`) when nothing is
/// censored.
pub fn ipcw_cindex(
    scores: &[f64],
    train_outcomes: &[SurvivalOutcome],
    test_outcomes: &[SurvivalOutcome],
    tau: f64,
) -> Result<f64> {
    let g = CensoringDistribution::fit(train_outcomes)?;
    ipcw_cindex_with(&g, scores, test_outcomes, tau)
}

/// Censoring-weighted concordance against an already-fitted `G`.
pub fn ipcw_cindex_with(
    g: &CensoringDistribution,
    scores: &[f64],
    outcomes: &[SurvivalOutcome],
    tau: f64,
) -> Result<f64> {
    if scores.len() != outcomes.len() {
        return Err(Error::Numeric(
            "scores and outcomes differ in length".into(),
        ));
    }
    let max_time = outcomes
        .iter()
        .map(|o| o.time)
        .fold(f64::NEG_INFINITY, f64::max);
    if tau > max_time {
        return Err(Error::Config(format!(
            "tau {tau} exceeds the largest observed time {max_time}"
        )));
    }
    let sorted = SortedTimes::new(outcomes);
    let positions: Vec<usize> = (0..sorted.order.len()).collect();
    let per_anchor: Vec<Result<(f64, f64)>> = exec::map(&positions, |&pos| {
        let i = sorted.order[pos];
        if !outcomes[i].event || outcomes[i].time >= tau {
            return Ok((0.0, 0.0));
        }
        let later = &sorted.order[sorted.group_end[pos]..];
        if later.is_empty() {
            return Ok((0.0, 0.0));
        }
        let g_at = g.survival_before(outcomes[i].time);
        if g_at <= 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "censoring survival G is 0 just before t={}; choose a smaller tau",
                outcomes[i].time
            )));
        }
        let w = 1.0 / (g_at * g_at);
        let mut num = 0.0;
        let mut den = 0.0;
        for &j in later {
            num += w * pair_score(scores[i], scores[j]);
            den += w;
        }
        Ok((num, den))
    });
    let mut num = 0.0;
    let mut den = 0.0;
    for r in per_anchor {
        let (a, b) = r?;
        num += a;
        den += b;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "no comparable pairs below tau".into(),
        ));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(time: f64, event: bool) -> SurvivalOutcome {
        SurvivalOutcome { time, event }
    }

    #[test]
    fn perfect_anti_ordering_scores_one() {
        let outcomes: Vec<_> = (0..10).map(|i| outcome(i as f64 + 1.0, true)).collect();
        let scores: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
        assert_eq!(harrell_cindex(&scores, &outcomes).unwrap(), 1.0);
    }

    #[test]
    fn constant_scores_give_half() {
        let outcomes: Vec<_> = (0..8).map(|i| outcome(i as f64 + 1.0, true)).collect();
        let scores = vec![3.0; 8];
        assert_eq!(harrell_cindex(&scores, &outcomes).unwrap(), 0.5);
    }

    #[test]
    fn all_censored_has_no_comparable_pairs() {
        let outcomes: Vec<_> = (0..4).map(|i| outcome(i as f64 + 1.0, false)).collect();
        let err = harrell_cindex(&[1.0, 2.0, 3.0, 4.0], &outcomes).unwrap_err();
        assert!(matches!(err, Error::UndefinedMetric(_)));
    }

    #[test]
    fn negating_scores_flips_the_index() {
        let outcomes = vec![
            outcome(1.0, true),
            outcome(2.0, false),
            outcome(3.0, true),
            outcome(4.0, true),
            outcome(5.0, false),
        ];
        let scores = vec![0.3, -1.0, 2.5, 0.1, 0.4];
        let c = harrell_cindex(&scores, &outcomes).unwrap();
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let c_neg = harrell_cindex(&neg, &outcomes).unwrap();
        assert!((c + c_neg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tied_times_are_not_comparable() {
        // Both die at t=1; no ordering information in the pair.
        let outcomes = vec![outcome(1.0, true), outcome(1.0, true)];
        assert!(harrell_cindex(&[1.0, 0.0], &outcomes).is_err());
    }

    #[test]
    fn ipcw_without_censoring_equals_harrell() {
        let outcomes: Vec<_> = [4.0, 1.0, 3.0, 2.0, 5.0]
            .iter()
            .map(|&t| outcome(t, true))
            .collect();
        let scores = vec![0.1, 0.9, 0.3, 0.7, -0.2];
        let tau = 5.0; // all deaths except the last anchor below tau
        let harrell_below: f64 = harrell_cindex(&scores, &outcomes).unwrap();
        let uno = ipcw_cindex(&scores, &outcomes, &outcomes, tau).unwrap();
        // With no censoring every weight is 1; anchors below tau are the
        // same set Harrell uses here (the t=5 anchor has no later partner).
        assert!((uno - harrell_below).abs() < 1e-12);
    }

    #[test]
    fn ipcw_perfect_ordering_is_one() {
        let outcomes: Vec<_> = (0..6).map(|i| outcome(i as f64 + 1.0, true)).collect();
        let scores: Vec<f64> = (0..6).map(|i| 10.0 - i as f64).collect();
        assert_eq!(
            ipcw_cindex(&scores, &outcomes, &outcomes, 6.0).unwrap(),
            1.0
        );
    }

    #[test]
    fn ipcw_rejects_tau_beyond_follow_up() {
        let outcomes = vec![outcome(1.0, true), outcome(2.0, true)];
        assert!(ipcw_cindex(&[1.0, 0.0], &outcomes, &outcomes, 10.0).is_err());
    }

    /// Direct transcription of the definition: enumerate every ordered pair.
    fn brute_force_harrell(scores: &[f64], outcomes: &[SurvivalOutcome]) -> Option<f64> {
        let n = scores.len();
        let mut concordant = 0.0;
        let mut pairs = 0u64;
        for i in 0..n {
            for j in 0..n {
                if i == j || !outcomes[i].event || outcomes[i].time >= outcomes[j].time {
                    continue;
                }
                pairs += 1;
                concordant += pair_score(scores[i], scores[j]);
            }
        }
        (pairs > 0).then(|| concordant / pairs as f64)
    }

    fn brute_force_ipcw(
        g: &CensoringDistribution,
        scores: &[f64],
        outcomes: &[SurvivalOutcome],
        tau: f64,
    ) -> Option<f64> {
        let n = scores.len();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j
                    || !outcomes[i].event
                    || outcomes[i].time >= tau
                    || outcomes[i].time >= outcomes[j].time
                {
                    continue;
                }
                let gi = g.survival_before(outcomes[i].time);
                let w = 1.0 / (gi * gi);
                num += w * pair_score(scores[i], scores[j]);
                den += w;
            }
        }
        (den > 0.0).then(|| num / den)
    }

    #[test]
    fn harrell_matches_pair_enumeration_on_random_inputs() {
        use rand::Rng;
        let mut r = crate::rng::stream(71, "harrell-oracle");
        for trial in 0..50 {
            let n = 5 + (trial * 3) % 120;
            // Coarse times and scores force plenty of ties through both paths.
            let outcomes: Vec<SurvivalOutcome> = (0..n)
                .map(|_| outcome((r.random::<f64>() * 12.0).round(), r.random::<f64>() < 0.65))
                .collect();
            let scores: Vec<f64> = (0..n)
                .map(|_| (r.random::<f64>() * 6.0).round() * 0.5)
                .collect();
            match brute_force_harrell(&scores, &outcomes) {
                Some(expected) => {
                    let got = harrell_cindex(&scores, &outcomes).unwrap();
                    assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
                }
                None => assert!(harrell_cindex(&scores, &outcomes).is_err()),
            }
        }
    }

    #[test]
    fn ipcw_matches_direct_formula_on_random_inputs() {
        use rand::Rng;
        let mut r = crate::rng::stream(72, "ipcw-oracle");
        for trial in 0..50 {
            let n = 8 + (trial * 5) % 150;
            let train: Vec<SurvivalOutcome> = (0..n)
                .map(|_| outcome(r.random::<f64>() * 20.0, r.random::<f64>() < 0.6))
                .collect();
            let test: Vec<SurvivalOutcome> = (0..n)
                .map(|_| outcome(r.random::<f64>() * 15.0, r.random::<f64>() < 0.6))
                .collect();
            let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
            let tau = test
                .iter()
                .filter(|o| o.event)
                .map(|o| o.time)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(1.0);
            let g = CensoringDistribution::fit(&train).unwrap();
            match (
                brute_force_ipcw(&g, &scores, &test, tau),
                ipcw_cindex_with(&g, &scores, &test, tau),
            ) {
                (Some(expected), Ok(got)) => {
                    assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}")
                }
                (None, Err(_)) => {}
                (a, b) => panic!("oracle {a:?} disagrees with implementation {b:?}"),
            }
        }
    }

    #[test]
    fn concordance_is_invariant_under_monotone_score_transforms() {
        use rand::Rng;
        let mut r = crate::rng::stream(73, "monotone");
        let n = 60;
        let outcomes: Vec<SurvivalOutcome> = (0..n)
            .map(|_| outcome(r.random::<f64>() * 30.0, r.random::<f64>() < 0.7))
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
        let transformed: Vec<f64> = scores.iter().map(|s| (2.5 * s).exp() + 7.0).collect();
        let a = harrell_cindex(&scores, &outcomes).unwrap();
        let b = harrell_cindex(&transformed, &outcomes).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ipcw_errors_when_g_hits_zero() {
        // Training: the last observation is a censoring, so G reaches 0 at
        // t=2 and any anchor needing G(t-) beyond that is unusable.
        let train = vec![outcome(1.0, false), outcome(2.0, false)];
        let test = vec![outcome(2.5, true), outcome(3.0, true), outcome(4.0, false)];
        let err = ipcw_cindex(&[2.0, 1.0, 0.0], &train, &test, 3.5).unwrap_err();
        assert!(err.to_string().contains("smaller tau"), "{err}");
    }
}
