use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ehr::{derived_attribute, Gender, PatientRecord};

/// Categorical confounders, one-hot encoded by level.
const CATEGORICAL: &[&str] = &["race", "gender"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("unknown confounder `{0}`")]
    UnknownConfounder(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnSpec {
    /// Missing values are replaced by `fill`, the cohort mean.
    Numeric { attr: String, fill: f64 },
    Indicator { attr: String, level: String },
}

impl ColumnSpec {
    pub fn name(&self) -> String {
        match self {
            ColumnSpec::Numeric { attr, .. } => attr.clone(),
            ColumnSpec::Indicator { attr, level } => format!("{attr}={level}"),
        }
    }

    fn value(&self, p: &PatientRecord) -> f64 {
        match self {
            ColumnSpec::Numeric { attr, fill } => derived_attribute(p, attr).ok().flatten().unwrap_or(*fill),
            ColumnSpec::Indicator { attr, level } => f64::from(u8::from(categorical(p, attr) == level.as_str())),
        }
    }
}

fn categorical<'a>(p: &'a PatientRecord, attr: &str) -> &'a str {
    match attr {
        "race" => &p.race,
        "gender" => p.gender.as_str(),
        _ => unreachable!("checked in Encoding::fit"),
    }
}

/// Numeric encoding of a confounder list over a fixed cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub columns: Vec<ColumnSpec>,
}

impl Encoding {
    /// With `drop_reference`, the first sorted level of each categorical is
    /// left out so the columns stay independent of an intercept.
    pub fn fit(patients: &[&PatientRecord], confounders: &[String], drop_reference: bool) -> Result<Self, DesignError> {
        let mut columns = Vec::new();
        for name in confounders {
            if CATEGORICAL.contains(&name.as_str()) {
                let levels: BTreeSet<&str> = patients.iter().map(|p| categorical(p, name)).collect();
                let skip = usize::from(drop_reference);
                for level in levels.into_iter().skip(skip) {
                    columns.push(ColumnSpec::Indicator { attr: name.clone(), level: level.to_string() });
                }
                continue;
            }
            let mut sum = 0.0;
            let mut n = 0usize;
            for p in patients {
                let v = derived_attribute(p, name).map_err(|_| DesignError::UnknownConfounder(name.clone()))?;
                if let Some(v) = v {
                    sum += v;
                    n += 1;
                }
            }
            if patients.is_empty() {
                derived_attribute(&PatientRecord::new("", 0, Gender::Male), name)
                    .map_err(|_| DesignError::UnknownConfounder(name.clone()))?;
            }
            let fill = if n > 0 { sum / n as f64 } else { 0.0 };
            columns.push(ColumnSpec::Numeric { attr: name.clone(), fill });
        }
        Ok(Encoding { columns })
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(ColumnSpec::name).collect()
    }

    pub fn row(&self, p: &PatientRecord) -> Vec<f64> {
        self.columns.iter().map(|c| c.value(p)).collect()
    }
}
