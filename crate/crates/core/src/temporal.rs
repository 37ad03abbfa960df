//! Per-arm detail profiles for one candidate, and their aggregation over a
//! group of candidates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::MatchedCohort;
use crate::ehr::{Gender, PatientRecord, PatientStore};
use crate::grid::CandidateId;
use crate::metrics::{age_bin, age_bin_label, daily_counts, CoxFit, Organ, OutcomeVector, AGE_BINS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerArm<T> {
    pub treated: T,
    pub control: T,
}

/// `(day, abnormal fraction)`; the fraction is absent when nobody in the arm
/// is alive with a usable series that day.
pub type Curve = Vec<(u32, Option<f64>)>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrCi {
    pub hr: f64,
    pub lo: f64,
    pub hi: f64,
    pub p: f64,
}

impl From<&CoxFit> for HrCi {
    fn from(f: &CoxFit) -> Self {
        HrCi { hr: f.hr, lo: f.ci95.0, hi: f.ci95.1, p: f.p_value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalProfile {
    pub candidate_id: CandidateId,
    pub age_bins: Vec<String>,
    pub gender_dist: PerArm<BTreeMap<String, f64>>,
    pub age_hist: PerArm<Vec<f64>>,
    pub kidney_curve: PerArm<Option<Curve>>,
    pub liver_curve: PerArm<Option<Curve>>,
    pub hr_with_ci: Option<HrCi>,
}

fn gender_dist(patients: &[&PatientRecord]) -> BTreeMap<String, f64> {
    if patients.is_empty() {
        return BTreeMap::new();
    }
    let n = patients.len() as f64;
    [Gender::Male, Gender::Female]
        .into_iter()
        .map(|g| (g.as_str().to_string(), patients.iter().filter(|p| p.gender == g).count() as f64 / n))
        .collect()
}

fn age_hist(patients: &[&PatientRecord]) -> Vec<f64> {
    let mut h = vec![0.0; AGE_BINS];
    if patients.is_empty() {
        return h;
    }
    for p in patients {
        h[age_bin(p.age)] += 1.0;
    }
    let n = patients.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

fn curve(store: &PatientStore, patients: &[&PatientRecord], organ: Organ, horizon: f64) -> Option<Curve> {
    if patients.is_empty() {
        return None;
    }
    let range = store.range(organ.indicator())?;
    let counts = daily_counts(patients.iter().copied(), organ.indicator(), horizon, range);
    Some(counts.iter().enumerate().map(|(d, c)| (d as u32, c.fraction())).collect())
}

pub fn profile_candidate(
    store: &PatientStore,
    candidate_id: CandidateId,
    matched: &MatchedCohort,
    cox: Option<&CoxFit>,
    horizon: f64,
) -> TemporalProfile {
    let treated: Vec<_> = matched.treated_ids().filter_map(|id| store.get(id)).collect();
    let control: Vec<_> = matched.control_ids().filter_map(|id| store.get(id)).collect();
    TemporalProfile {
        candidate_id,
        age_bins: (0..AGE_BINS).map(age_bin_label).collect(),
        gender_dist: PerArm { treated: gender_dist(&treated), control: gender_dist(&control) },
        age_hist: PerArm { treated: age_hist(&treated), control: age_hist(&control) },
        kidney_curve: PerArm {
            treated: curve(store, &treated, Organ::Kidney, horizon),
            control: curve(store, &control, Organ::Kidney, horizon),
        },
        liver_curve: PerArm {
            treated: curve(store, &treated, Organ::Liver, horizon),
            control: curve(store, &control, Organ::Liver, horizon),
        },
        hr_with_ci: cox.map(HrCi::from),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stat { mean, sd: var.sqrt(), n: values.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    pub member_ids: Vec<CandidateId>,
    pub age_bins: Vec<String>,
    pub gender_dist: PerArm<BTreeMap<String, Option<Stat>>>,
    pub age_hist: PerArm<Vec<Option<Stat>>>,
    pub kidney_curve: PerArm<Vec<(u32, Option<Stat>)>>,
    pub liver_curve: PerArm<Vec<(u32, Option<Stat>)>>,
    /// Keys: `n`, `diversity`, `hr`, `kidney_rr`, `liver_rr`. Degenerate
    /// members are left out.
    pub metrics: BTreeMap<String, Option<Stat>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroupError {
    #[error("group has no members")]
    Empty,
    #[error("{profiles} profiles but {outcomes} outcomes")]
    Misaligned { profiles: usize, outcomes: usize },
    #[error("profile for candidate {profile} paired with outcome for {outcome}")]
    IdMismatch { profile: CandidateId, outcome: CandidateId },
}

fn pointwise_curve(curves: Vec<&Option<Curve>>) -> Vec<(u32, Option<Stat>)> {
    let days = curves.iter().filter_map(|c| c.as_ref().map(Vec::len)).max().unwrap_or(0);
    (0..days)
        .map(|d| {
            let vals: Vec<f64> =
                curves.iter().filter_map(|c| c.as_ref().and_then(|c| c.get(d)).and_then(|&(_, v)| v)).collect();
            (d as u32, Stat::of(&vals))
        })
        .collect()
}

fn pointwise_map(maps: Vec<&BTreeMap<String, f64>>) -> BTreeMap<String, Option<Stat>> {
    let keys: std::collections::BTreeSet<&String> = maps.iter().flat_map(|m| m.keys()).collect();
    keys.into_iter()
        .map(|k| {
            let vals: Vec<f64> = maps.iter().filter_map(|m| m.get(k).copied()).collect();
            (k.clone(), Stat::of(&vals))
        })
        .collect()
}

fn pointwise_hist(hists: Vec<(&Vec<f64>, bool)>) -> Vec<Option<Stat>> {
    (0..AGE_BINS)
        .map(|b| {
            let vals: Vec<f64> = hists.iter().filter(|(_, present)| *present).map(|(h, _)| h[b]).collect();
            Stat::of(&vals)
        })
        .collect()
}

/// Pointwise mean and population SD across members; absent points are
/// skipped per point.
pub fn aggregate_group(profiles: &[TemporalProfile], outcomes: &[OutcomeVector]) -> Result<GroupProfile, GroupError> {
    if profiles.is_empty() {
        return Err(GroupError::Empty);
    }
    if profiles.len() != outcomes.len() {
        return Err(GroupError::Misaligned { profiles: profiles.len(), outcomes: outcomes.len() });
    }
    for (p, o) in profiles.iter().zip(outcomes) {
        if p.candidate_id != o.candidate_id {
            return Err(GroupError::IdMismatch { profile: p.candidate_id, outcome: o.candidate_id });
        }
    }
    let ok: Vec<&OutcomeVector> = outcomes.iter().filter(|o| o.status.is_ok()).collect();
    let metric = |f: &dyn Fn(&OutcomeVector) -> Option<f64>| Stat::of(&ok.iter().filter_map(|o| f(o)).collect::<Vec<_>>());
    let mut metrics = BTreeMap::new();
    metrics.insert("n".to_string(), metric(&|o| Some(o.n_patients as f64)));
    metrics.insert("diversity".to_string(), metric(&|o| o.diversity));
    metrics.insert("hr".to_string(), metric(&|o| o.hazard.as_ref().map(|h| h.hr)));
    metrics.insert("kidney_rr".to_string(), metric(&|o| o.kidney_rr));
    metrics.insert("liver_rr".to_string(), metric(&|o| o.liver_rr));

    let mut member_ids: Vec<CandidateId> = profiles.iter().map(|p| p.candidate_id).collect();
    member_ids.sort_unstable();
    Ok(GroupProfile {
        member_ids,
        age_bins: (0..AGE_BINS).map(age_bin_label).collect(),
        gender_dist: PerArm {
            treated: pointwise_map(profiles.iter().map(|p| &p.gender_dist.treated).collect()),
            control: pointwise_map(profiles.iter().map(|p| &p.gender_dist.control).collect()),
        },
        age_hist: PerArm {
            treated: pointwise_hist(
                profiles.iter().map(|p| (&p.age_hist.treated, !p.gender_dist.treated.is_empty())).collect(),
            ),
            control: pointwise_hist(
                profiles.iter().map(|p| (&p.age_hist.control, !p.gender_dist.control.is_empty())).collect(),
            ),
        },
        kidney_curve: PerArm {
            treated: pointwise_curve(profiles.iter().map(|p| &p.kidney_curve.treated).collect()),
            control: pointwise_curve(profiles.iter().map(|p| &p.kidney_curve.control).collect()),
        },
        liver_curve: PerArm {
            treated: pointwise_curve(profiles.iter().map(|p| &p.liver_curve.treated).collect()),
            control: pointwise_curve(profiles.iter().map(|p| &p.liver_curve.control).collect()),
        },
        metrics,
    })
}
