//! One candidate from bindings to outcome metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{
    balance_diagnostics, fit_propensity, match_cohort, select_eligible, CaliperRule, EligibleCohort, MatchedCohort,
    PropensityError, PropensityModel,
};
use crate::dsl::{CriterionSpec, EvalError};
use crate::ehr::PatientStore;
use crate::grid::CandidateAssignment;
use crate::metrics::{
    build_survival, diversity_entropy, fit_cox, organ_risk_ratio, CoxError, CoxFit, DegenerateReason, Organ,
    OutcomeVector, RiskSeries, Status, Ties,
};
use crate::temporal::{profile_candidate, TemporalProfile};

pub const DEFAULT_HORIZON_DAYS: u32 = 28;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub horizon_days: u32,
    pub ties: Ties,
    pub caliper: CaliperRule,
    /// Cox covariates beyond treatment.
    pub cox_covariates: Vec<String>,
    /// Overrides the store's confounder list when set.
    pub confounders: Option<Vec<String>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            horizon_days: DEFAULT_HORIZON_DAYS,
            ties: Ties::Breslow,
            caliper: CaliperRule::Mad,
            cox_covariates: Vec::new(),
            confounders: None,
        }
    }
}

impl EvalConfig {
    pub fn horizon_hours(&self) -> f64 {
        f64::from(self.horizon_days) * crate::ehr::HOURS_PER_DAY
    }

    pub fn confounders<'a>(&'a self, store: &'a PatientStore) -> &'a [String] {
        self.confounders.as_deref().unwrap_or(&store.confounders)
    }
}

/// Outcome plus the intermediate artifacts the views drill into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateEvaluation {
    pub outcome: OutcomeVector,
    pub cohort: EligibleCohort,
    pub propensity: Option<PropensityModel>,
    pub matched: Option<MatchedCohort>,
    pub smd: Option<BTreeMap<String, f64>>,
    pub cox: Option<CoxFit>,
    pub kidney: Option<RiskSeries>,
    pub liver: Option<RiskSeries>,
    pub profile: Option<TemporalProfile>,
}

/// Runs the full pipeline. Statistical failures become a degenerate status;
/// only evaluation errors in the criteria themselves are returned as `Err`.
pub fn evaluate_candidate(
    store: &PatientStore,
    spec: &CriterionSpec,
    assignment: &CandidateAssignment,
    config: &EvalConfig,
    with_profile: bool,
) -> Result<CandidateEvaluation, EvalError> {
    let cohort = select_eligible(store, spec, &assignment.bindings, assignment.candidate_id)?;
    let eligible: Vec<_> = cohort.all_ids().into_iter().filter_map(|id| store.get(id)).collect();
    let mut eval = CandidateEvaluation {
        outcome: OutcomeVector {
            candidate_id: assignment.candidate_id,
            bindings: assignment.bindings.clone(),
            n_patients: cohort.len(),
            diversity: diversity_entropy(&eligible),
            hazard: None,
            kidney_rr: None,
            liver_rr: None,
            status: Status::Ok,
        },
        cohort,
        propensity: None,
        matched: None,
        smd: None,
        cox: None,
        kidney: None,
        liver: None,
        profile: None,
    };
    let degenerate = |mut e: CandidateEvaluation, r| {
        e.outcome.status = Status::Degenerate(r);
        Ok(e)
    };
    if eval.cohort.treated_ids.is_empty() || eval.cohort.control_ids.is_empty() {
        return degenerate(eval, DegenerateReason::EmptyArm);
    }

    let confounders = config.confounders(store);
    let model = match fit_propensity(store, &eval.cohort, confounders) {
        Ok(m) => m,
        Err(PropensityError::EmptyArm { .. }) => return degenerate(eval, DegenerateReason::EmptyArm),
        Err(_) => return degenerate(eval, DegenerateReason::SingularDesign),
    };
    let scores = model.scores(store, &eval.cohort);
    eval.propensity = Some(model);
    let matched = match match_cohort(&eval.cohort, &scores, config.caliper) {
        Ok(m) => m,
        Err(_) => return degenerate(eval, DegenerateReason::EmptyArm),
    };
    eval.smd = balance_diagnostics(store, &matched, confounders).ok();
    let horizon = config.horizon_hours();
    if matched.pairs.is_empty() {
        eval.matched = Some(matched);
        return degenerate(eval, DegenerateReason::NoMatchedPairs);
    }

    let mut reason = None;
    match build_survival(store, &matched, horizon, &config.cox_covariates) {
        Ok((records, _)) => match fit_cox(&records, config.ties) {
            Ok(fit) => {
                if !fit.converged {
                    reason = Some(DegenerateReason::CoxNonconvergence);
                }
                eval.outcome.hazard = Some(fit.clone());
                eval.cox = Some(fit);
            }
            Err(CoxError::NoEvents) => reason = Some(DegenerateReason::NoEvents),
            Err(CoxError::SingleArm) => reason = Some(DegenerateReason::EmptyArm),
            Err(_) => reason = Some(DegenerateReason::SingularDesign),
        },
        Err(_) => reason = Some(DegenerateReason::SingularDesign),
    }

    for organ in Organ::ALL {
        let series = organ_risk_ratio(store, &matched, organ, horizon).ok();
        let rr = series.as_ref().and_then(|s| s.mean_ratio);
        if rr.is_none() && reason.is_none() {
            reason = Some(DegenerateReason::NoRiskDays);
        }
        match organ {
            Organ::Kidney => {
                eval.outcome.kidney_rr = rr;
                eval.kidney = series;
            }
            Organ::Liver => {
                eval.outcome.liver_rr = rr;
                eval.liver = series;
            }
        }
    }
    if with_profile {
        eval.profile = Some(profile_candidate(store, assignment.candidate_id, &matched, eval.cox.as_ref(), horizon));
    }
    eval.matched = Some(matched);
    if let Some(r) = reason {
        return degenerate(eval, r);
    }
    Ok(eval)
}
