use serde::{Deserialize, Serialize};

use crate::cohort::{DesignError, Encoding, MatchedCohort};
use crate::ehr::PatientStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub patient_id: String,
    /// Hours to death or censoring.
    pub time: f64,
    /// True when death is observed within the horizon.
    pub event: bool,
    pub treated: bool,
    pub covariates: Vec<f64>,
}

/// One record per matched patient, treated first in pair order. Returns the
/// encoded covariate column names alongside.
pub fn build_survival(
    store: &PatientStore,
    matched: &MatchedCohort,
    horizon: f64,
    covariate_names: &[String],
) -> Result<(Vec<SurvivalRecord>, Vec<String>), DesignError> {
    let members: Vec<(&str, bool)> =
        matched.treated_ids().map(|id| (id, true)).chain(matched.control_ids().map(|id| (id, false))).collect();
    let patients: Vec<_> = members.iter().filter_map(|(id, _)| store.get(id)).collect();
    let enc = Encoding::fit(&patients, covariate_names, true)?;
    let records = members
        .iter()
        .zip(&patients)
        .map(|(&(id, treated), p)| {
            let (time, event) = match p.death_time {
                Some(d) if d <= horizon => (d, true),
                _ => (p.discharge_time.map_or(horizon, |t| t.min(horizon)), false),
            };
            SurvivalRecord { patient_id: id.to_string(), time, event, treated, covariates: enc.row(p) }
        })
        .collect();
    Ok((records, enc.names()))
}
