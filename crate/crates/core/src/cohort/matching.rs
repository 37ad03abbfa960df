use std::collections::{BTreeMap, BTreeSet};

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::design::{DesignError, Encoding};
use super::EligibleCohort;
use crate::ehr::PatientStore;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("cannot match with an empty arm (treated {treated}, control {control})")]
    EmptyArm { treated: usize, control: usize },
    #[error("no propensity score for patient `{0}`")]
    MissingScore(String),
    #[error("balance needs at least 2 matched pairs, got {0}")]
    TooFewPairs(usize),
    #[error("patient `{0}` not in store")]
    MissingPatient(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// How the caliper is derived from the eligible patients' scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CaliperRule {
    /// Unscaled median absolute deviation, distances on the probability scale.
    #[default]
    Mad,
    /// `multiplier` times the standard deviation of logit scores, distances
    /// on the logit scale.
    LogitSd { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated_id: String,
    pub control_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedCohort {
    pub pairs: Vec<MatchedPair>,
    pub caliper: f64,
    pub discarded_treated: usize,
}

impl MatchedCohort {
    pub fn treated_ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.treated_id.as_str())
    }

    pub fn control_ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.control_id.as_str())
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Greedy 1:1 nearest-neighbour matching without replacement.
pub fn match_cohort(
    cohort: &EligibleCohort,
    scores: &BTreeMap<String, f64>,
    rule: CaliperRule,
) -> Result<MatchedCohort, MatchError> {
    let (nt, nc) = (cohort.treated_ids.len(), cohort.control_ids.len());
    if nt == 0 || nc == 0 {
        return Err(MatchError::EmptyArm { treated: nt, control: nc });
    }
    let transform = |p: f64| match rule {
        CaliperRule::Mad => p,
        CaliperRule::LogitSd { .. } => logit(p),
    };
    let lookup = |id: &String| scores.get(id).copied().map(transform).ok_or_else(|| MatchError::MissingScore(id.clone()));
    let treated: Vec<f64> = cohort.treated_ids.iter().map(lookup).collect::<Result<_, _>>()?;
    let control: Vec<f64> = cohort.control_ids.iter().map(lookup).collect::<Result<_, _>>()?;

    let mut all: Vec<f64> = treated.iter().chain(&control).copied().collect();
    let caliper = match rule {
        CaliperRule::Mad => {
            let m = median(&mut all);
            let mut dev: Vec<f64> = all.iter().map(|e| (e - m).abs()).collect();
            median(&mut dev)
        }
        CaliperRule::LogitSd { multiplier } => {
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let var = if all.len() > 1 { all.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            multiplier * var.sqrt()
        }
    };

    // Control ids are sorted, so the index doubles as the id tie-breaker.
    let mut pool: BTreeSet<(OrderedFloat<f64>, usize)> =
        control.iter().enumerate().map(|(i, &s)| (OrderedFloat(s), i)).collect();
    let mut pairs = Vec::new();
    for (t_idx, &s) in treated.iter().enumerate() {
        let key = (OrderedFloat(s), 0);
        let above = pool.range(key..).next().copied();
        let below = pool
            .range(..key)
            .next_back()
            .and_then(|&(score, _)| pool.range((score, 0)..).next().copied());
        let best = match (below, above) {
            (None, None) => break,
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (Some(b), Some(a)) => {
                let (db, da) = ((s - b.0 .0).abs(), (a.0 .0 - s).abs());
                if db < da || (db == da && b.1 < a.1) {
                    b
                } else {
                    a
                }
            }
        };
        let distance = (s - best.0 .0).abs();
        if distance <= caliper {
            pool.remove(&best);
            pairs.push(MatchedPair {
                treated_id: cohort.treated_ids[t_idx].clone(),
                control_id: cohort.control_ids[best.1].clone(),
                distance,
            });
        }
    }
    // Treated patients left over once controls run out count as discarded.
    let discarded_treated = nt - pairs.len();
    Ok(MatchedCohort { pairs, caliper, discarded_treated })
}

/// Standardized mean difference; `+inf` when the pooled SD is zero but the
/// means differ.
pub type Smd = f64;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// SMD per encoded confounder column over the matched arms.
pub fn balance_diagnostics(
    store: &PatientStore,
    matched: &MatchedCohort,
    confounders: &[String],
) -> Result<BTreeMap<String, Smd>, MatchError> {
    if matched.pairs.len() < 2 {
        return Err(MatchError::TooFewPairs(matched.pairs.len()));
    }
    let fetch = |id: &str| store.get(id).ok_or_else(|| MatchError::MissingPatient(id.to_string()));
    let treated = matched.treated_ids().map(fetch).collect::<Result<Vec<_>, _>>()?;
    let control = matched.control_ids().map(fetch).collect::<Result<Vec<_>, _>>()?;
    let everyone: Vec<_> = treated.iter().chain(&control).copied().collect();
    let enc = Encoding::fit(&everyone, confounders, false)?;
    let mut out = BTreeMap::new();
    for (j, col) in enc.columns.iter().enumerate() {
        let t: Vec<f64> = treated.iter().map(|p| enc.row(p)[j]).collect();
        let c: Vec<f64> = control.iter().map(|p| enc.row(p)[j]).collect();
        out.insert(col.name(), smd(&t, &c));
    }
    Ok(out)
}

/// `(mean_t - mean_c) / sqrt((var_t + var_c) / 2)` with sample variances.
pub fn smd(treated: &[f64], control: &[f64]) -> Smd {
    let (mt, vt) = mean_var(treated);
    let (mc, vc) = mean_var(control);
    let pooled = ((vt + vc) / 2.0).sqrt();
    if pooled == 0.0 {
        if mt == mc {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (mt - mc) / pooled
    }
}
