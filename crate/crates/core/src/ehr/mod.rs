//! Patient data model, CSV ingestion and the seeded synthetic generator.
//!
//! Times are hours since admission. Pre-admission history (a prior surgery,
//! say) is stored as an event with a negative `start_time`.

mod io;
mod synthetic;

pub use io::{load_store, load_store_dir, write_store, IngestError, StoreCounts};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticError};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hours per day used for daily aggregation.
pub const HOURS_PER_DAY: f64 = 24.0;

/// Attribute names accepted by [`derived_attribute`].
pub const NUMERIC_ATTRIBUTES: &[&str] = &["age", "bmi", "gender_code", "height", "weight"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// Numeric encoding used for matching: male = 0, female = 1.
    pub fn code(self) -> f64 {
        match self {
            Gender::Male => 0.0,
            Gender::Female => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }

    pub fn parse(s: &str) -> Option<Gender> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Some(Gender::Male),
            "female" | "f" => Some(Gender::Female),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Diagnosis,
    Procedure,
    Medication,
    Device,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Diagnosis => "diagnosis",
            EventKind::Procedure => "procedure",
            EventKind::Medication => "medication",
            EventKind::Device => "device",
        }
    }

    pub fn parse(s: &str) -> Option<EventKind> {
        match s.trim() {
            "diagnosis" => Some(EventKind::Diagnosis),
            "procedure" => Some(EventKind::Procedure),
            "medication" => Some(EventKind::Medication),
            "device" => Some(EventKind::Device),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalEvent {
    pub kind: EventKind,
    pub code: String,
    pub start_time: f64,
    /// Absent for point events.
    pub end_time: Option<f64>,
}

/// Time-ordered observations of one indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabSeries {
    pub indicator: String,
    pub points: Vec<(f64, f64)>,
}

impl LabSeries {
    pub fn new(indicator: impl Into<String>) -> Self {
        Self { indicator: indicator.into(), points: Vec::new() }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRange {
    pub lower: f64,
    pub upper: f64,
}

impl ReferenceRange {
    pub fn new(lower: f64, upper: f64) -> Result<Self, RecordError> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(RecordError::BadRange { lower, upper });
        }
        Ok(Self { lower, upper })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn is_abnormal(&self, value: f64) -> bool {
        value < self.lower || value > self.upper
    }
}

/// How a stay ended, as far as the record tells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StayStatus {
    Discharged,
    Died,
    InHospital,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: u32,
    pub gender: Gender,
    pub race: String,
    /// Meters.
    pub height: Option<f64>,
    /// Kilograms.
    pub weight: Option<f64>,
    pub discharge_time: Option<f64>,
    pub death_time: Option<f64>,
    pub events: Vec<ClinicalEvent>,
    pub labs: BTreeMap<String, LabSeries>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RecordError {
    #[error("patient {id}: death at {death}h after discharge at {discharge}h")]
    DeathAfterDischarge { id: String, death: f64, discharge: f64 },
    #[error("patient {id}: {what} at {time}h outside the stay")]
    OutsideStay { id: String, what: String, time: f64 },
    #[error("patient {id}: lab series {indicator} is not strictly increasing in time")]
    NonMonotoneLab { id: String, indicator: String },
    #[error("patient {id}: non-finite value in {what}")]
    NonFinite { id: String, what: String },
    #[error("patient {id}: event {code} ends before it starts")]
    EventEndsEarly { id: String, code: String },
    #[error("patient {id}: {field} must be positive")]
    NonPositive { id: String, field: &'static str },
    #[error("reference range [{lower}, {upper}] is empty")]
    BadRange { lower: f64, upper: f64 },
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, age: u32, gender: Gender) -> Self {
        Self {
            patient_id: patient_id.into(),
            age,
            gender,
            race: String::new(),
            height: None,
            weight: None,
            discharge_time: None,
            death_time: None,
            events: Vec::new(),
            labs: BTreeMap::new(),
        }
    }

    pub fn status(&self) -> StayStatus {
        match (self.death_time, self.discharge_time) {
            (Some(_), _) => StayStatus::Died,
            (None, Some(_)) => StayStatus::Discharged,
            (None, None) => StayStatus::InHospital,
        }
    }

    /// The time that ends the stay: death if recorded, else discharge.
    pub fn terminator(&self) -> Option<f64> {
        self.death_time.or(self.discharge_time)
    }

    /// Alive at `t` hours means no death at or before `t`.
    pub fn alive_at(&self, t: f64) -> bool {
        self.death_time.is_none_or(|d| d > t)
    }

    pub fn bmi(&self) -> Option<f64> {
        match (self.weight, self.height) {
            (Some(w), Some(h)) if h > 0.0 => Some(w / (h * h)),
            _ => None,
        }
    }

    pub fn lab(&self, indicator: &str) -> Option<&LabSeries> {
        self.labs.get(indicator)
    }

    pub fn push_lab(&mut self, indicator: &str, time: f64, value: f64) {
        self.labs
            .entry(indicator.to_string())
            .or_insert_with(|| LabSeries::new(indicator))
            .points
            .push((time, value));
    }

    pub fn validate(&self) -> Result<(), RecordError> {
        let id = || self.patient_id.clone();
        for (field, v) in [("height", self.height), ("weight", self.weight)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(RecordError::NonFinite { id: id(), what: field.into() });
                }
                if v <= 0.0 {
                    return Err(RecordError::NonPositive { id: id(), field });
                }
            }
        }
        for (what, v) in [("discharge_time", self.discharge_time), ("death_time", self.death_time)] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(RecordError::NonFinite { id: id(), what: what.into() });
                }
                if v < 0.0 {
                    return Err(RecordError::OutsideStay { id: id(), what: what.into(), time: v });
                }
            }
        }
        if let (Some(death), Some(discharge)) = (self.death_time, self.discharge_time) {
            if death > discharge {
                return Err(RecordError::DeathAfterDischarge { id: id(), death, discharge });
            }
        }
        let end = self.terminator();
        let after_end = |t: f64| end.is_some_and(|e| t > e);
        for ev in &self.events {
            if !ev.start_time.is_finite() || ev.end_time.is_some_and(|t| !t.is_finite()) {
                return Err(RecordError::NonFinite { id: id(), what: format!("event {}", ev.code) });
            }
            if let Some(e) = ev.end_time {
                if e < ev.start_time {
                    return Err(RecordError::EventEndsEarly { id: id(), code: ev.code.clone() });
                }
            }
            let last = ev.end_time.unwrap_or(ev.start_time);
            if after_end(ev.start_time) || after_end(last) {
                return Err(RecordError::OutsideStay {
                    id: id(),
                    what: format!("event {}", ev.code),
                    time: last,
                });
            }
        }
        for series in self.labs.values() {
            for w in series.points.windows(2) {
                if w[1].0 <= w[0].0 {
                    return Err(RecordError::NonMonotoneLab {
                        id: id(),
                        indicator: series.indicator.clone(),
                    });
                }
            }
            for &(t, v) in &series.points {
                if !t.is_finite() || !v.is_finite() {
                    return Err(RecordError::NonFinite {
                        id: id(),
                        what: format!("lab {}", series.indicator),
                    });
                }
                if t < 0.0 || after_end(t) {
                    return Err(RecordError::OutsideStay {
                        id: id(),
                        what: format!("lab {}", series.indicator),
                        time: t,
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AttributeError {
    #[error("unknown attribute `{0}`")]
    Unknown(String),
}

/// Numeric attribute lookup; `Ok(None)` when an ingredient is missing.
pub fn derived_attribute(p: &PatientRecord, name: &str) -> Result<Option<f64>, AttributeError> {
    match name {
        "age" => Ok(Some(f64::from(p.age))),
        "bmi" => Ok(p.bmi()),
        "gender_code" => Ok(Some(p.gender.code())),
        "height" => Ok(p.height),
        "weight" => Ok(p.weight),
        other => Err(AttributeError::Unknown(other.to_string())),
    }
}

/// An immutable, validated collection of patients plus the lab dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientStore {
    patients: Vec<PatientRecord>,
    index: BTreeMap<String, usize>,
    pub dictionary: BTreeMap<String, ReferenceRange>,
    pub confounders: Vec<String>,
}

/// Indicators the organ-risk metrics need ranges for.
pub const KIDNEY_INDICATOR: &str = "SCr";
pub const LIVER_INDICATOR: &str = "AST";

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("duplicate patient_id `{0}`")]
    DuplicateId(String),
    #[error("no reference range for required indicator {0}")]
    MissingRange(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

impl PatientStore {
    /// Sorts patients by id and validates every invariant.
    pub fn new(
        mut patients: Vec<PatientRecord>,
        dictionary: BTreeMap<String, ReferenceRange>,
        confounders: Vec<String>,
    ) -> Result<Self, StoreError> {
        for ind in [KIDNEY_INDICATOR, LIVER_INDICATOR] {
            if !dictionary.contains_key(ind) {
                return Err(StoreError::MissingRange(ind.to_string()));
            }
        }
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        let mut index = BTreeMap::new();
        for (i, p) in patients.iter().enumerate() {
            p.validate()?;
            if index.insert(p.patient_id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(p.patient_id.clone()));
            }
        }
        Ok(Self { patients, index, dictionary, confounders })
    }

    /// Patients in ascending id order.
    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PatientRecord> {
        self.index.get(id).map(|&i| &self.patients[i])
    }

    pub fn range(&self, indicator: &str) -> Option<ReferenceRange> {
        self.dictionary.get(indicator).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranges() -> BTreeMap<String, ReferenceRange> {
        let mut m = BTreeMap::new();
        m.insert("SCr".into(), ReferenceRange::new(0.6, 1.3).unwrap());
        m.insert("AST".into(), ReferenceRange::new(8.0, 40.0).unwrap());
        m
    }

    #[test]
    fn bmi_formula_and_missing() {
        let mut p = PatientRecord::new("p1", 50, Gender::Male);
        p.weight = Some(70.0);
        p.height = Some(1.75);
        let bmi = derived_attribute(&p, "bmi").unwrap().unwrap();
        assert!((bmi - 22.857_142_857).abs() < 1e-8);
        p.height = None;
        assert_eq!(derived_attribute(&p, "bmi").unwrap(), None);
        assert_eq!(
            derived_attribute(&p, "xyz"),
            Err(AttributeError::Unknown("xyz".into()))
        );
    }

    #[test]
    fn status_rules() {
        let mut p = PatientRecord::new("p", 40, Gender::Female);
        assert_eq!(p.status(), StayStatus::InHospital);
        p.discharge_time = Some(100.0);
        assert_eq!(p.status(), StayStatus::Discharged);
        p.death_time = Some(50.0);
        assert_eq!(p.status(), StayStatus::Died);
        assert_eq!(p.terminator(), Some(50.0));
        assert!(p.validate().is_ok());
        p.death_time = Some(150.0);
        assert!(matches!(p.validate(), Err(RecordError::DeathAfterDischarge { .. })));
    }

    #[test]
    fn lab_after_stay_rejected() {
        let mut p = PatientRecord::new("p", 40, Gender::Female);
        p.discharge_time = Some(48.0);
        p.push_lab("SCr", 10.0, 1.0);
        assert!(p.validate().is_ok());
        p.push_lab("SCr", 60.0, 1.0);
        assert!(matches!(p.validate(), Err(RecordError::OutsideStay { .. })));
    }

    #[test]
    fn pre_admission_events_allowed() {
        let mut p = PatientRecord::new("p", 40, Gender::Female);
        p.events.push(ClinicalEvent {
            kind: EventKind::Procedure,
            code: "cardiac_surgery".into(),
            start_time: -2000.0,
            end_time: None,
        });
        assert!(p.validate().is_ok());
    }

    #[test]
    fn store_rejects_duplicates_and_missing_ranges() {
        let a = PatientRecord::new("p1", 40, Gender::Female);
        let b = PatientRecord::new("p1", 41, Gender::Male);
        assert_eq!(
            PatientStore::new(vec![a.clone(), b], ranges(), vec![]),
            Err(StoreError::DuplicateId("p1".into()))
        );
        assert_eq!(
            PatientStore::new(vec![a], BTreeMap::new(), vec![]),
            Err(StoreError::MissingRange("SCr".into()))
        );
    }

    #[test]
    fn store_sorted_by_id() {
        let ps = ["c", "a", "b"].map(|id| PatientRecord::new(id, 30, Gender::Male));
        let store = PatientStore::new(ps.to_vec(), ranges(), vec![]).unwrap();
        let ids: Vec<_> = store.patients().iter().map(|p| p.patient_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(store.get("b").unwrap().patient_id, "b");
    }
}
