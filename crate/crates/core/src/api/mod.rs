//! JSON-over-HTTP service for the exploration UI and scripts.
//!
//! Evaluation runs as a background job; everything else is a pure query over
//! a finished results table or a session document.

mod error;
mod handlers;
mod region;

pub use error::ApiError;
pub use region::{point_in_polygon, Region};

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};

use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::dsl::CriterionSpec;
use crate::ehr::PatientStore;
use crate::grid::{CandidateGrid, CandidateId, DEFAULT_MAX_CANDIDATES};
use crate::pipeline::{CandidateEvaluation, EvalConfig};
use crate::results::{data_fingerprint, ResultsTable};
use crate::session::Session;
use crate::sweep::Progress;

pub const DEFAULT_PORT: u16 = 8787;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub eval: EvalConfig,
    pub max_candidates: u64,
    /// Sweep worker threads; 0 lets the pool decide.
    pub threads: usize,
    /// Finished grids and sessions are written here when set.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { eval: EvalConfig::default(), max_candidates: DEFAULT_MAX_CANDIDATES, threads: 0, cache_dir: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

pub(crate) struct Job {
    pub grid_id: String,
    pub spec_hash: String,
    pub state: JobState,
    pub progress: Arc<Progress>,
    pub error: Option<String>,
    pub cached: bool,
}

pub(crate) struct GridEntry {
    pub spec: CriterionSpec,
    pub grid: CandidateGrid,
    pub table: ResultsTable,
}

/// Cached artifact written next to each finished grid.
#[derive(Serialize, Deserialize)]
pub(crate) struct GridFile {
    pub spec_text: String,
    pub table: ResultsTable,
}

pub(crate) struct SessionEntry {
    pub grid_id: String,
    pub session: Session,
}

#[derive(Default)]
pub(crate) struct Registry {
    pub grids: HashMap<String, Arc<GridEntry>>,
    pub jobs: HashMap<u64, Job>,
    pub next_job: u64,
    pub sessions: HashMap<String, SessionEntry>,
    pub next_session: u64,
    pub details: HashMap<(String, CandidateId), Arc<CandidateEvaluation>>,
}

pub struct AppState {
    pub store: Arc<PatientStore>,
    pub fingerprint: String,
    pub config: ServerConfig,
    pub(crate) registry: Mutex<Registry>,
}

impl AppState {
    pub fn new(store: PatientStore, config: ServerConfig) -> Arc<Self> {
        let fingerprint = data_fingerprint(&store);
        Arc::new(AppState { store: Arc::new(store), fingerprint, config, registry: Mutex::new(Registry::default()) })
    }

    pub(crate) fn lock(&self) -> std::sync::MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// `(state, done, total)` of a job.
    pub fn job_state(&self, job_id: u64) -> Option<(JobState, u64, u64)> {
        let reg = self.lock();
        reg.jobs.get(&job_id).map(|j| {
            (j.state, j.progress.done.load(Ordering::Relaxed), j.progress.total.load(Ordering::Relaxed))
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    use handlers::*;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/spec", post(parse_spec_handler))
        .route("/api/grid/evaluate", post(evaluate_grid))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/grid/{id}", get(grid_summary))
        .route("/api/grid/{id}/results", get(grid_results))
        .route("/api/grid/{id}/candidates", get(grid_candidates))
        .route("/api/grid/{id}/ticks", get(grid_ticks))
        .route("/api/candidates/{grid}/{cid}", get(candidate_outcome))
        .route("/api/candidates/{grid}/{cid}/profile", get(candidate_profile))
        .route("/api/candidates/{grid}/{cid}/matches", get(candidate_matches))
        .route("/api/groups/compare", post(compare_groups))
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session).patch(patch_session))
        .route("/api/sessions/{id}/stages", post(create_stage))
        .route("/api/sessions/{id}/stages/{sid}", axum::routing::patch(patch_stage))
        .route("/api/sessions/{id}/stages/{sid}/records", post(append_record))
        .route("/api/sessions/{id}/stages/{sid}/matrix", get(stage_matrix))
        .route("/api/sessions/{id}/report", get(session_report))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
