//! Eligible-cohort selection, propensity scores, caliper matching and
//! covariate balance.

mod design;
mod matching;
mod propensity;

pub use design::{ColumnSpec, DesignError, Encoding};
pub use matching::{balance_diagnostics, match_cohort, smd, CaliperRule, MatchError, MatchedCohort, MatchedPair, Smd};
pub use propensity::{fit_propensity, PropensityError, PropensityModel, SCORE_CLIP};

use serde::{Deserialize, Serialize};

use crate::dsl::{eligibility, Bindings, CriterionSpec, Eligibility, EvalError};
use crate::ehr::PatientStore;
use crate::grid::CandidateId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibleCohort {
    pub candidate_id: CandidateId,
    /// Sorted ascending.
    pub treated_ids: Vec<String>,
    /// Sorted ascending.
    pub control_ids: Vec<String>,
}

impl EligibleCohort {
    pub fn len(&self) -> usize {
        self.treated_ids.len() + self.control_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All eligible ids, sorted.
    pub fn all_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .treated_ids
            .iter()
            .chain(&self.control_ids)
            .map(String::as_str)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Applies the bound criteria to every patient in the store.
pub fn select_eligible(
    store: &PatientStore,
    spec: &CriterionSpec,
    bindings: &Bindings,
    candidate_id: CandidateId,
) -> Result<EligibleCohort, EvalError> {
    let mut cohort = EligibleCohort { candidate_id, treated_ids: Vec::new(), control_ids: Vec::new() };
    // Store order is ascending by id, so both lists come out sorted.
    for p in store.patients() {
        match eligibility(p, spec, bindings)? {
            Eligibility::Treatment => cohort.treated_ids.push(p.patient_id.clone()),
            Eligibility::Control => cohort.control_ids.push(p.patient_id.clone()),
            Eligibility::Ineligible => {}
        }
    }
    Ok(cohort)
}
