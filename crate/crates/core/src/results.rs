//! Results table: one record per candidate plus a header describing how the
//! table was produced.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{serialize_spec, Bindings, CriterionSpec};
use crate::ehr::PatientStore;
use crate::grid::{CandidateId, GridManifest};
use crate::metrics::{OutcomeVector, Status};
use crate::pipeline::EvalConfig;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_COLUMNS: [&str; 11] =
    ["candidate_id", "bindings", "n", "diversity", "hr", "hr_lo", "hr_hi", "p", "kidney_rr", "liver_rr", "status"];

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("results I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("results JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("results CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub candidate_id: CandidateId,
    pub bindings: Bindings,
    pub n: usize,
    pub diversity: Option<f64>,
    pub hr: Option<f64>,
    pub hr_lo: Option<f64>,
    pub hr_hi: Option<f64>,
    pub p: Option<f64>,
    pub kidney_rr: Option<f64>,
    pub liver_rr: Option<f64>,
    pub status: Status,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&OutcomeVector> for ResultRecord {
    fn from(o: &OutcomeVector) -> Self {
        let h = o.hazard.as_ref();
        ResultRecord {
            candidate_id: o.candidate_id,
            bindings: o.bindings.clone(),
            n: o.n_patients,
            diversity: o.diversity,
            hr: h.and_then(|h| finite(h.hr)),
            hr_lo: h.and_then(|h| finite(h.ci95.0)),
            hr_hi: h.and_then(|h| finite(h.ci95.1)),
            p: h.and_then(|h| finite(h.p_value)),
            kidney_rr: o.kidney_rr,
            liver_rr: o.liver_rr,
            status: o.status,
        }
    }
}

impl ResultRecord {
    /// Metric by axis name, as used by the scatter plot and region queries.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "n" | "n_patients" => Some(self.n as f64),
            "diversity" => self.diversity,
            "hr" => self.hr,
            "hr_lo" => self.hr_lo,
            "hr_hi" => self.hr_hi,
            "p" => self.p,
            "kidney_rr" => self.kidney_rr,
            "liver_rr" => self.liver_rr,
            _ => None,
        }
    }
}

/// Axis names accepted by [`ResultRecord::metric`].
pub const METRICS: [&str; 5] = ["n", "diversity", "hr", "kidney_rr", "liver_rr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub engine_version: String,
    pub spec_hash: String,
    pub data_fingerprint: String,
    pub config: EvalConfig,
    pub grid: GridManifest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub header: ResultsHeader,
    /// Ascending by candidate id.
    pub records: Vec<ResultRecord>,
}

impl ResultsTable {
    pub fn get(&self, id: CandidateId) -> Option<&ResultRecord> {
        self.records.binary_search_by_key(&id, |r| r.candidate_id).ok().map(|i| &self.records[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("results serialize")
    }

    pub fn write_json(&self, mut w: impl Write) -> Result<(), ResultsError> {
        w.write_all(self.to_json().as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_json(mut r: impl Read) -> Result<Self, ResultsError> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Ok(serde_json::from_str(&s)?)
    }

    /// CSV with [`CSV_COLUMNS`]; bindings are a compact JSON object, absent
    /// values are empty cells.
    pub fn write_csv(&self, w: impl Write) -> Result<(), ResultsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_COLUMNS)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.candidate_id.to_string(),
                serde_json::to_string(&r.bindings)?,
                r.n.to_string(),
                cell(r.diversity),
                cell(r.hr),
                cell(r.hr_lo),
                cell(r.hr_hi),
                cell(r.p),
                cell(r.kidney_rr),
                cell(r.liver_rr),
                r.status.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

/// Content hash of everything in the store that affects results.
pub fn data_fingerprint(store: &PatientStore) -> String {
    let json = serde_json::to_vec(store).expect("store serializes");
    sha256_hex(&[&json])
}

/// Key for cached sweeps: engine version, canonical spec text, evaluation
/// config and data fingerprint.
pub fn cache_key(spec: &CriterionSpec, config: &EvalConfig, data_fingerprint: &str) -> String {
    let spec_text = serialize_spec(spec);
    let config_json = serde_json::to_vec(config).expect("config serializes");
    sha256_hex(&[ENGINE_VERSION.as_bytes(), spec_text.as_bytes(), &config_json, data_fingerprint.as_bytes()])
}
