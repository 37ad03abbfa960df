//! Staged exploration history, persisted as one JSON document.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsl::{AdjustableParam, Literal};
use crate::grid::{CandidateId, Constraints};
use crate::results::{ResultsTable, METRICS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("importance {0} outside 1..=5")]
    Importance(u8),
    #[error("unknown stage {0}")]
    UnknownStage(u32),
    #[error("candidate {id} outside grid of {count}")]
    OutOfGrid { id: CandidateId, count: u64 },
    #[error("results table is for spec {results}, session is for {session}")]
    SpecMismatch { session: String, results: String },
    #[error("record timestamp {given} precedes the stage's last record at {last}")]
    OutOfOrder { given: u64, last: u64 },
    #[error("unknown metric axis `{0}`")]
    UnknownAxis(String),
    #[error("session file: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt session file: {0}")]
    Corrupt(String),
    #[error("session schema version {found} is newer than supported version {supported}")]
    Version { found: u64, supported: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    CriterionAdjust,
    LassoSelect,
    AxisChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub x: String,
    pub y: String,
}

impl Default for Axes {
    fn default() -> Self {
        Axes { x: "n".into(), y: "hr".into() }
    }
}

/// Visible data window of the scatter plot when the record was taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Thumbnail metadata: enough to redraw the scatter plot client-side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thumbnail {
    pub axes: Axes,
    pub selected: Vec<CandidateId>,
    pub viewport: Option<Viewport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRecord {
    pub record_id: u32,
    pub kind: RecordKind,
    pub bindings_constraints: Constraints,
    pub selected_candidates: Vec<CandidateId>,
    pub axes: Axes,
    pub viewport: Option<Viewport>,
    /// Mean of each outcome over selected, non-degenerate candidates.
    pub metric_means: BTreeMap<String, Option<f64>>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

impl ExplorationRecord {
    pub fn thumbnail(&self) -> Thumbnail {
        Thumbnail { axes: self.axes.clone(), selected: self.selected_candidates.clone(), viewport: self.viewport }
    }
}

/// Client-supplied part of a record; means are always recomputed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RecordInput {
    pub kind: Option<RecordKind>,
    pub bindings_constraints: Constraints,
    pub selected_candidates: Vec<CandidateId>,
    pub axes: Axes,
    pub viewport: Option<Viewport>,
    pub timestamp: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub importance: u8,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub stage_id: u32,
    pub importance: u8,
    pub keywords: Vec<String>,
    pub description: String,
    pub records: Vec<ExplorationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub schema_version: u32,
    pub session_id: String,
    pub spec_hash: String,
    pub stages: Vec<Stage>,
    pub current_stage: Option<u32>,
    next_record_id: u32,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

/// Means of the five outcomes over `ids`, skipping degenerate candidates and
/// absent values.
pub fn metric_means(table: &ResultsTable, ids: &[CandidateId]) -> BTreeMap<String, Option<f64>> {
    let rows: Vec<_> = ids.iter().filter_map(|&id| table.get(id)).filter(|r| r.status.is_ok()).collect();
    METRICS
        .iter()
        .map(|&m| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.metric(m)).collect();
            let mean = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
            (m.to_string(), mean)
        })
        .collect()
}

fn check_meta(meta: &StageMeta) -> Result<(), SessionError> {
    if (1..=5).contains(&meta.importance) {
        Ok(())
    } else {
        Err(SessionError::Importance(meta.importance))
    }
}

impl Session {
    pub fn new(session_id: impl Into<String>, spec_hash: impl Into<String>) -> Self {
        Session {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            spec_hash: spec_hash.into(),
            stages: Vec::new(),
            current_stage: None,
            next_record_id: 1,
        }
    }

    pub fn stage(&self, id: u32) -> Option<&Stage> {
        self.stages.iter().find(|s| s.stage_id == id)
    }

    fn stage_mut(&mut self, id: u32) -> Result<&mut Stage, SessionError> {
        self.stages.iter_mut().find(|s| s.stage_id == id).ok_or(SessionError::UnknownStage(id))
    }

    /// Appends a stage and makes it current. Ids start at 1.
    pub fn create_stage(&mut self, meta: StageMeta) -> Result<u32, SessionError> {
        check_meta(&meta)?;
        let id = self.stages.iter().map(|s| s.stage_id).max().unwrap_or(0) + 1;
        self.stages.push(Stage {
            stage_id: id,
            importance: meta.importance,
            keywords: meta.keywords,
            description: meta.description,
            records: Vec::new(),
        });
        self.current_stage = Some(id);
        Ok(id)
    }

    pub fn update_stage(&mut self, id: u32, meta: StageMeta) -> Result<(), SessionError> {
        check_meta(&meta)?;
        let stage = self.stage_mut(id)?;
        stage.importance = meta.importance;
        stage.keywords = meta.keywords;
        stage.description = meta.description;
        Ok(())
    }

    pub fn set_current(&mut self, id: u32) -> Result<(), SessionError> {
        self.stage_mut(id)?;
        self.current_stage = Some(id);
        Ok(())
    }

    /// Stores a record with means recomputed from `table`.
    pub fn append_record(
        &mut self,
        stage_id: u32,
        input: RecordInput,
        table: &ResultsTable,
    ) -> Result<u32, SessionError> {
        if table.header.spec_hash != self.spec_hash {
            return Err(SessionError::SpecMismatch {
                session: self.spec_hash.clone(),
                results: table.header.spec_hash.clone(),
            });
        }
        let count = table.header.grid.count;
        if let Some(&id) = input.selected_candidates.iter().find(|&&id| id >= count) {
            return Err(SessionError::OutOfGrid { id, count });
        }
        for axis in [&input.axes.x, &input.axes.y] {
            if !METRICS.contains(&axis.as_str()) {
                return Err(SessionError::UnknownAxis(axis.clone()));
            }
        }
        let record_id = self.next_record_id;
        let stage = self.stage_mut(stage_id)?;
        let last = stage.records.last().map_or(0, |r| r.timestamp);
        let timestamp = input.timestamp.unwrap_or_else(|| now_ms().max(last));
        if timestamp < last {
            return Err(SessionError::OutOfOrder { given: timestamp, last });
        }
        let metric_means = metric_means(table, &input.selected_candidates);
        stage.records.push(ExplorationRecord {
            record_id,
            kind: input.kind.unwrap_or(RecordKind::CriterionAdjust),
            bindings_constraints: input.bindings_constraints,
            selected_candidates: input.selected_candidates,
            axes: input.axes,
            viewport: input.viewport,
            metric_means,
            timestamp,
        });
        self.next_record_id += 1;
        Ok(record_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("session serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| SessionError::Corrupt("missing schema_version".into()))?;
        if found > u64::from(SCHEMA_VERSION) {
            return Err(SessionError::Version { found, supported: SCHEMA_VERSION });
        }
        serde_json::from_value(value).map_err(|e| SessionError::Corrupt(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub adjustable: String,
    pub role: String,
}

/// Rows are adjustables, columns are the stage's records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixData {
    pub stage_id: u32,
    pub rows: Vec<MatrixRow>,
    pub record_ids: Vec<u32>,
    /// `cells[row][column]`; absent when a constraint permits no value.
    pub cells: Vec<Vec<Option<f64>>>,
}

/// Mean of the permitted values, booleans counted as 0/1.
fn representative(values: &[Literal]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().map(|v| v.numeric_value()).sum::<f64>() / values.len() as f64)
}

pub fn matrix_data(stage: &Stage, adjustables: &[AdjustableParam]) -> MatrixData {
    let rows = adjustables.iter().map(|a| MatrixRow { adjustable: a.name.clone(), role: a.role.clone() }).collect();
    let cells = adjustables
        .iter()
        .map(|a| {
            stage
                .records
                .iter()
                .map(|r| representative(r.bindings_constraints.get(&a.name).unwrap_or(&a.values)))
                .collect()
        })
        .collect();
    MatrixData { stage_id: stage.stage_id, rows, record_ids: stage.records.iter().map(|r| r.record_id).collect(), cells }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Markdown export: per stage, its metadata and the metric trend across its
/// records.
pub fn report(session: &Session, adjustables: Option<&[AdjustableParam]>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Exploration report\n");
    let _ = writeln!(out, "- Session: `{}`", session.session_id);
    let _ = writeln!(out, "- Spec hash: `{}`", session.spec_hash);
    let _ = writeln!(out, "- Stages: {}\n", session.stages.len());
    for stage in &session.stages {
        let _ = writeln!(out, "## Stage {} (importance {})\n", stage.stage_id, stage.importance);
        if !stage.keywords.is_empty() {
            let _ = writeln!(out, "Keywords: {}\n", stage.keywords.join(", "));
        }
        if !stage.description.is_empty() {
            let _ = writeln!(out, "{}\n", stage.description);
        }
        if stage.records.is_empty() {
            let _ = writeln!(out, "No records.\n");
            continue;
        }
        let _ = writeln!(out, "| record | kind | selected | {} |", METRICS.join(" | "));
        let _ = writeln!(out, "|---|---|---|{}", "---|".repeat(METRICS.len()));
        for r in &stage.records {
            let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            let means: Vec<String> = METRICS.iter().map(|m| fmt_opt(r.metric_means.get(*m).copied().flatten())).collect();
            let _ = writeln!(out, "| {} | {} | {} | {} |", r.record_id, kind, r.selected_candidates.len(), means.join(" | "));
        }
        out.push('\n');
        if let Some(adjustables) = adjustables {
            let m = matrix_data(stage, adjustables);
            let _ = writeln!(out, "Criterion values per record:\n");
            let header: Vec<String> = m.record_ids.iter().map(|id| format!("r{id}")).collect();
            let _ = writeln!(out, "| adjustable | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(m.record_ids.len()));
            for (row, cells) in m.rows.iter().zip(&m.cells) {
                let cells: Vec<String> = cells.iter().map(|c| fmt_opt(*c)).collect();
                let _ = writeln!(out, "| ${} ({}) | {} |", row.adjustable, row.role, cells.join(" | "));
            }
            out.push('\n');
        }
    }
    out
}
