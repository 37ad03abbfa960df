//! The five per-candidate outcome metrics.

mod cox;
mod entropy;
mod risk;
mod survival;

pub use cox::{cox_log_likelihood, cox_score, fit_cox, CoxError, CoxFit, Ties, BETA_CAP};
pub use entropy::{age_bin, age_bin_label, diversity_entropy, AGE_BINS};
pub use risk::{
    corrected_ratio, daily_counts, impute_patient, impute_series, last_day, organ_risk_ratio, risk_from_counts,
    DayCount, Organ, RiskError, RiskSeries, MAX_GAP_DAYS, MAX_MISSING_SHARE,
};
pub use survival::{build_survival, SurvivalRecord};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dsl::Bindings;
use crate::grid::CandidateId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DegenerateReason {
    EmptyArm,
    SingularDesign,
    NoMatchedPairs,
    NoEvents,
    CoxNonconvergence,
    NoRiskDays,
}

impl DegenerateReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DegenerateReason::EmptyArm => "empty_arm",
            DegenerateReason::SingularDesign => "singular_design",
            DegenerateReason::NoMatchedPairs => "no_matched_pairs",
            DegenerateReason::NoEvents => "no_events",
            DegenerateReason::CoxNonconvergence => "cox_nonconvergence",
            DegenerateReason::NoRiskDays => "no_risk_days",
        }
    }

    const ALL: [DegenerateReason; 6] = [
        DegenerateReason::EmptyArm,
        DegenerateReason::SingularDesign,
        DegenerateReason::NoMatchedPairs,
        DegenerateReason::NoEvents,
        DegenerateReason::CoxNonconvergence,
        DegenerateReason::NoRiskDays,
    ];
}

/// Serialized as `ok` or `degenerate:<reason>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    Degenerate(DegenerateReason),
}

impl Status {
    pub fn is_ok(self) -> bool {
        self == Status::Ok
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::Degenerate(r) => write!(f, "degenerate:{}", r.as_str()),
        }
    }
}

impl FromStr for Status {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "ok" {
            return Ok(Status::Ok);
        }
        let reason = s.strip_prefix("degenerate:").ok_or_else(|| format!("bad status `{s}`"))?;
        DegenerateReason::ALL
            .into_iter()
            .find(|r| r.as_str() == reason)
            .map(Status::Degenerate)
            .ok_or_else(|| format!("unknown degenerate reason `{reason}`"))
    }
}

impl Serialize for Status {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Status {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeVector {
    pub candidate_id: CandidateId,
    pub bindings: Bindings,
    /// Eligible patients, both arms.
    pub n_patients: usize,
    /// Over all eligible patients; `None` when nobody is eligible.
    pub diversity: Option<f64>,
    pub hazard: Option<CoxFit>,
    pub kidney_rr: Option<f64>,
    pub liver_rr: Option<f64>,
    pub status: Status,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_round_trip() {
        for s in [Status::Ok, Status::Degenerate(DegenerateReason::NoRiskDays)] {
            let j = serde_json::to_string(&s).unwrap();
            assert_eq!(serde_json::from_str::<Status>(&j).unwrap(), s);
        }
        assert_eq!(Status::Degenerate(DegenerateReason::EmptyArm).to_string(), "degenerate:empty_arm");
        assert!("degenerate:nope".parse::<Status>().is_err());
    }
}
