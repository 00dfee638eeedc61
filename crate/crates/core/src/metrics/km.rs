//! Kaplan-Meier and Nelson-Aalen estimators.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalOutcome;
use crate::error::{Error, Result};

/// Step survival function: `probs[i]` is the survival probability from
/// `times[i]` (inclusive) until the next step time. Before the first step
/// the probability is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    times: Vec<f64>,
    probs: Vec<f64>,
}

impl SurvivalCurve {
    pub fn new(times: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if times.len() != probs.len() {
            return Err(Error::Numeric(
                "times and probabilities differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Numeric(
                "curve times must be strictly increasing".into(),
            ));
        }
        let mut prev = 1.0;
        for &p in &probs {
            if !(0.0..=1.0).contains(&p) || p > prev {
                return Err(Error::Numeric(
                    "survival probabilities must be nonincreasing within [0, 1]".into(),
                ));
            }
            prev = p;
        }
        Ok(Self { times, probs })
    }

    /// A flat curve at probability `p` from time 0 on.
    pub fn constant(p: f64) -> Self {
        Self::new(vec![0.0], vec![p]).expect("constant probability must lie in [0, 1]")
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Right-continuous lookup: the probability after the last step at or
    /// before `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            1.0
        } else {
            self.probs[idx - 1]
        }
    }

    /// Left limit: the probability just before `t`.
    pub fn eval_before(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u < t);
        if idx == 0 {
            1.0
        } else {
            self.probs[idx - 1]
        }
    }
}

/// Nondecreasing cumulative hazard step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CumulativeHazard {
    /// Right-continuous lookup; 0 before the first event time.
    pub fn eval(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&u| u <= t);
        if idx == 0 {
            0.0
        } else {
            self.values[idx - 1]
        }
    }
}

/// Which indicator the product-limit estimator treats as the event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KmTarget {
    /// Deaths are events; censorings leave the risk set silently.
    Event,
    /// Censorings are events (estimates the censoring survival function G).
    Censoring,
}

/// Product-limit estimator. At each distinct time with at least one target
/// event: `S *= 1 - d/n`, where `n` counts everyone whose time is >= that
/// time.
pub fn kaplan_meier(outcomes: &[SurvivalOutcome], target: KmTarget) -> Result<SurvivalCurve> {
    let walk = TimeWalk::new(outcomes, target)?;
    let mut times = Vec::new();
    let mut probs = Vec::new();
    let mut s = 1.0;
    for step in walk {
        s *= 1.0 - step.events as f64 / step.at_risk as f64;
        times.push(step.time);
        probs.push(s);
    }
    SurvivalCurve::new(times, probs)
}

/// Nelson-Aalen cumulative hazard of the death events:
/// `H(t) = Σ_{u <= t} d_u / n_u`.
pub fn nelson_aalen(outcomes: &[SurvivalOutcome]) -> Result<CumulativeHazard> {
    let walk = TimeWalk::new(outcomes, KmTarget::Event)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    for step in walk {
        h += step.events as f64 / step.at_risk as f64;
        times.push(step.time);
        values.push(h);
    }
    Ok(CumulativeHazard { times, values })
}

struct WalkStep {
    time: f64,
    at_risk: usize,
    events: usize,
}

/// Distinct times with at least one target event, ascending, with the risk
/// set size at each.
struct TimeWalk {
    steps: std::vec::IntoIter<WalkStep>,
}

impl TimeWalk {
    fn new(outcomes: &[SurvivalOutcome], target: KmTarget) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::UndefinedMetric(
                "no outcomes to estimate from".into(),
            ));
        }
        let mut order: Vec<usize> = (0..outcomes.len()).collect();
        order.sort_by(|&a, &b| outcomes[a].time.partial_cmp(&outcomes[b].time).unwrap());
        let is_event = |i: usize| match target {
            KmTarget::Event => outcomes[i].event,
            KmTarget::Censoring => !outcomes[i].event,
        };
        let n = order.len();
        let mut steps = Vec::new();
        let mut pos = 0;
        while pos < n {
            let time = outcomes[order[pos]].time;
            let mut end = pos;
            let mut events = 0;
            while end < n && outcomes[order[end]].time == time {
                if is_event(order[end]) {
                    events += 1;
                }
                end += 1;
            }
            if events > 0 {
                steps.push(WalkStep {
                    time,
                    at_risk: n - pos,
                    events,
                });
            }
            pos = end;
        }
        Ok(Self {
            steps: steps.into_iter(),
        })
    }
}

impl Iterator for TimeWalk {
    type Item = WalkStep;
    fn next(&mut self) -> Option<WalkStep> {
        self.steps.next()
    }
}
