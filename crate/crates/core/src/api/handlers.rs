use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use serde::Deserialize;
use serde_json::{json, Value};

use super::region::Region;
use super::{ApiError, AppState, GridEntry, GridFile, Job, JobState, SessionEntry};
use crate::dsl::{parse_spec, serialize_spec, CriterionSpec};
use crate::grid::{enumerate, grid_size, CandidateId, Constraints};
use crate::pipeline::{evaluate_candidate, CandidateEvaluation, EvalConfig};
use crate::results::{cache_key, ResultRecord, ENGINE_VERSION};
use crate::session::{matrix_data, report, RecordInput, Session, StageMeta};
use crate::sweep::{run_sweep, Progress, SweepOptions};
use crate::temporal::aggregate_group;

type ApiResult<T> = Result<T, ApiError>;

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
}

pub async fn health(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "engine_version": ENGINE_VERSION,
        "data_fingerprint": st.fingerprint,
        "patients": st.store.patients().len(),
    }))
}

#[derive(Deserialize)]
pub struct SpecRequest {
    spec: String,
}

pub async fn parse_spec_handler(State(st): State<Arc<AppState>>, Json(req): Json<SpecRequest>) -> ApiResult<Json<Value>> {
    let spec = parse_spec(&req.spec)?;
    let size = grid_size(&spec);
    Ok(Json(json!({
        "spec_hash": spec.hash(),
        "canonical": serialize_spec(&spec),
        "adjustables": spec.adjustables,
        "ast": spec,
        "grid_size": size.to_string(),
        "within_limit": size <= u128::from(st.config.max_candidates),
    })))
}

#[derive(Deserialize)]
pub struct EvaluateRequest {
    spec: String,
    #[serde(default)]
    config: Option<EvalConfig>,
}

fn grid_file(dir: &std::path::Path, grid_id: &str) -> PathBuf {
    dir.join("grids").join(format!("{grid_id}.json"))
}

/// Reads a cached grid; anything unreadable or inconsistent is a miss.
fn load_cached_grid(st: &AppState, grid_id: &str) -> Option<GridEntry> {
    let path = grid_file(st.config.cache_dir.as_ref()?, grid_id);
    let text = std::fs::read_to_string(&path).ok()?;
    let file: GridFile = serde_json::from_str(&text).ok()?;
    let spec = parse_spec(&file.spec_text).ok()?;
    if file.table.header.spec_hash != spec.hash() || file.table.header.data_fingerprint != st.fingerprint {
        log::warn!("ignoring stale cache file {}", path.display());
        return None;
    }
    let grid = enumerate(&spec, u64::MAX).ok()?;
    (grid.len() == file.table.records.len() as u64).then_some(GridEntry { spec, grid, table: file.table })
}

fn store_cached_grid(st: &AppState, grid_id: &str, entry: &GridEntry) {
    let Some(dir) = st.config.cache_dir.as_ref() else { return };
    let path = grid_file(dir, grid_id);
    let file = GridFile { spec_text: serialize_spec(&entry.spec), table: entry.table.clone() };
    let res = std::fs::create_dir_all(dir.join("grids"))
        .and_then(|_| std::fs::write(&path, serde_json::to_vec(&file).expect("grid file serializes")));
    if let Err(e) = res {
        log::warn!("cannot write cache file {}: {e}", path.display());
    }
}

fn job_json(id: u64, job: &Job) -> Value {
    json!({
        "job_id": id,
        "grid_id": job.grid_id,
        "spec_hash": job.spec_hash,
        "state": job.state,
        "done": job.progress.done.load(Ordering::Relaxed),
        "total": job.progress.total.load(Ordering::Relaxed),
        "cached": job.cached,
        "error": job.error,
    })
}

pub async fn evaluate_grid(
    State(st): State<Arc<AppState>>,
    Json(req): Json<EvaluateRequest>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let spec = parse_spec(&req.spec)?;
    let size = grid_size(&spec);
    if size > u128::from(st.config.max_candidates) {
        return Err(crate::grid::GridError::TooLarge { size, limit: st.config.max_candidates }.into());
    }
    let config = req.config.unwrap_or_else(|| st.config.eval.clone());
    let grid_id = cache_key(&spec, &config, &st.fingerprint);

    let mut cached = st.lock().grids.contains_key(&grid_id);
    if !cached {
        if let Some(entry) = load_cached_grid(&st, &grid_id) {
            st.lock().grids.insert(grid_id.clone(), Arc::new(entry));
            cached = true;
        }
    }

    let mut reg = st.lock();
    if !cached {
        // An identical sweep already in flight is shared rather than repeated.
        if let Some((&id, job)) =
            reg.jobs.iter().find(|(_, j)| j.grid_id == grid_id && matches!(j.state, JobState::Queued | JobState::Running))
        {
            return Ok((StatusCode::ACCEPTED, Json(job_json(id, job))));
        }
    }
    reg.next_job += 1;
    let job_id = reg.next_job;
    let progress = Arc::new(Progress::default());
    if cached {
        progress.total.store(size as u64, Ordering::Relaxed);
        progress.done.store(size as u64, Ordering::Relaxed);
    }
    let job = Job {
        grid_id: grid_id.clone(),
        spec_hash: spec.hash(),
        state: if cached { JobState::Done } else { JobState::Queued },
        progress: progress.clone(),
        error: None,
        cached,
    };
    let body = job_json(job_id, &job);
    reg.jobs.insert(job_id, job);
    drop(reg);

    if !cached {
        let st = st.clone();
        tokio::task::spawn_blocking(move || run_job(&st, job_id, grid_id, spec, config, &progress));
    }
    Ok((StatusCode::ACCEPTED, Json(body)))
}

fn run_job(st: &AppState, job_id: u64, grid_id: String, spec: CriterionSpec, config: EvalConfig, progress: &Progress) {
    let set_state = |state: JobState, error: Option<String>| {
        if let Some(job) = st.lock().jobs.get_mut(&job_id) {
            job.state = state;
            job.error = error;
        }
    };
    set_state(JobState::Running, None);
    let options = SweepOptions { threads: st.config.threads, max_candidates: st.config.max_candidates, keep_details: false };
    match run_sweep(&st.store, &spec, &config, &options, Some(progress)) {
        Ok(out) => {
            let entry = GridEntry { spec, grid: out.grid, table: out.table };
            store_cached_grid(st, &grid_id, &entry);
            st.lock().grids.insert(grid_id, Arc::new(entry));
            set_state(JobState::Done, None);
        }
        Err(e) => {
            log::error!("job {job_id} failed: {e}");
            set_state(JobState::Failed, Some(e.to_string()));
        }
    }
}

pub async fn job_status(State(st): State<Arc<AppState>>, Path(id): Path<u64>) -> ApiResult<Json<Value>> {
    let reg = st.lock();
    let job = reg.jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("job {id}")))?;
    Ok(Json(job_json(id, job)))
}

fn grid_entry(st: &AppState, id: &str) -> ApiResult<Arc<GridEntry>> {
    if let Some(e) = st.lock().grids.get(id) {
        return Ok(e.clone());
    }
    let entry = Arc::new(load_cached_grid(st, id).ok_or_else(|| ApiError::not_found(format!("grid {id}")))?);
    st.lock().grids.insert(id.to_string(), entry.clone());
    Ok(entry)
}

pub async fn grid_summary(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let g = grid_entry(&st, &id)?;
    let degenerate = g.table.records.iter().filter(|r| !r.status.is_ok()).count();
    Ok(Json(json!({
        "grid_id": id,
        "header": g.table.header,
        "canonical_spec": serialize_spec(&g.spec),
        "count": g.grid.len(),
        "degenerate": degenerate,
    })))
}

pub async fn grid_results(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let g = grid_entry(&st, &id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], g.table.to_json()))
}

#[derive(Deserialize, Default)]
pub struct CandidateQuery {
    /// JSON object: adjustable name to permitted values.
    constraints: Option<String>,
    /// JSON region, see [`Region`].
    region: Option<String>,
}

fn parse_constraints(raw: Option<&str>) -> ApiResult<Constraints> {
    match raw {
        None | Some("") => Ok(Constraints::new()),
        Some(s) => serde_json::from_str(s).map_err(|e| ApiError::bad_request(format!("constraints: {e}"))),
    }
}

pub async fn grid_candidates(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Json<Value>> {
    let g = grid_entry(&st, &id)?;
    let constraints = parse_constraints(q.constraints.as_deref())?;
    let region: Option<Region> = match q.region.as_deref() {
        None | Some("") => None,
        Some(s) => Some(serde_json::from_str(s).map_err(|e| ApiError::bad_request(format!("region: {e}")))?),
    };
    if let Some(r) = &region {
        for axis in [&r.x, &r.y] {
            if !crate::results::METRICS.contains(&axis.as_str()) {
                return Err(ApiError::bad_request(format!("unknown metric axis `{axis}`")));
            }
        }
    }
    let ids = g.grid.filter_by_binding(&constraints)?;
    let records: Vec<&ResultRecord> = ids
        .iter()
        .filter_map(|&cid| g.table.get(cid))
        .filter(|r| region.as_ref().is_none_or(|reg| reg.contains(r)))
        .collect();
    Ok(Json(json!({ "count": records.len(), "candidates": records })))
}

pub async fn grid_ticks(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<CandidateQuery>,
) -> ApiResult<Json<Value>> {
    let g = grid_entry(&st, &id)?;
    let constraints = parse_constraints(q.constraints.as_deref())?;
    let counts = g.grid.tick_counts(&constraints)?;
    let values: BTreeMap<&str, _> = g.grid.adjustables().iter().map(|a| (a.name.as_str(), &a.values)).collect();
    Ok(Json(json!({ "values": values, "counts": counts })))
}

/// Full evaluation of one candidate including its profile, memoized.
async fn detail(st: &Arc<AppState>, grid_id: &str, cid: CandidateId) -> ApiResult<Arc<CandidateEvaluation>> {
    let g = grid_entry(st, grid_id)?;
    let key = (grid_id.to_string(), cid);
    if let Some(d) = st.lock().details.get(&key) {
        return Ok(d.clone());
    }
    let assignment = g.grid.assignment(cid)?;
    let st2 = st.clone();
    let eval = tokio::task::spawn_blocking(move || {
        evaluate_candidate(&st2.store, &g.spec, &assignment, &g.table.header.config, true)
    })
    .await
    .map_err(internal)?
    .map_err(internal)?;
    let eval = Arc::new(eval);
    st.lock().details.insert(key, eval.clone());
    Ok(eval)
}

pub async fn candidate_outcome(
    State(st): State<Arc<AppState>>,
    Path((grid, cid)): Path<(String, CandidateId)>,
) -> ApiResult<Json<Value>> {
    let g = grid_entry(&st, &grid)?;
    let rec = g.table.get(cid).ok_or_else(|| ApiError::not_found(format!("candidate {cid}")))?;
    Ok(Json(json!(rec)))
}

pub async fn candidate_profile(
    State(st): State<Arc<AppState>>,
    Path((grid, cid)): Path<(String, CandidateId)>,
) -> ApiResult<Json<Value>> {
    let d = detail(&st, &grid, cid).await?;
    Ok(Json(json!({ "status": d.outcome.status, "profile": d.profile })))
}

pub async fn candidate_matches(
    State(st): State<Arc<AppState>>,
    Path((grid, cid)): Path<(String, CandidateId)>,
) -> ApiResult<Json<Value>> {
    let d = detail(&st, &grid, cid).await?;
    Ok(Json(json!({
        "candidate_id": cid,
        "status": d.outcome.status,
        "eligible_treated": d.cohort.treated_ids.len(),
        "eligible_control": d.cohort.control_ids.len(),
        "propensity": d.propensity,
        "matched": d.matched,
        "smd": d.smd,
    })))
}

#[derive(Deserialize)]
pub struct CompareRequest {
    grid_id: String,
    group_a: Vec<CandidateId>,
    group_b: Vec<CandidateId>,
}

async fn group_profile(st: &Arc<AppState>, grid_id: &str, name: &str, ids: &[CandidateId]) -> ApiResult<Value> {
    let mut profiles = Vec::with_capacity(ids.len());
    let mut outcomes = Vec::with_capacity(ids.len());
    for &cid in ids {
        let d = detail(st, grid_id, cid).await?;
        // Members without a matched cohort contribute an empty profile.
        profiles.push(d.profile.clone().unwrap_or_else(|| empty_profile(cid)));
        outcomes.push(d.outcome.clone());
    }
    let group = aggregate_group(&profiles, &outcomes)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "group_error", format!("{name}: {e}")))?;
    Ok(json!(group))
}

pub async fn compare_groups(State(st): State<Arc<AppState>>, Json(req): Json<CompareRequest>) -> ApiResult<Json<Value>> {
    let a = group_profile(&st, &req.grid_id, "group_a", &req.group_a).await?;
    let b = group_profile(&st, &req.grid_id, "group_b", &req.group_b).await?;
    Ok(Json(json!({ "group_a": a, "group_b": b })))
}

fn empty_profile(cid: CandidateId) -> crate::temporal::TemporalProfile {
    use crate::metrics::{age_bin_label, AGE_BINS};
    use crate::temporal::{PerArm, TemporalProfile};
    TemporalProfile {
        candidate_id: cid,
        age_bins: (0..AGE_BINS).map(age_bin_label).collect(),
        gender_dist: PerArm { treated: BTreeMap::new(), control: BTreeMap::new() },
        age_hist: PerArm { treated: vec![0.0; AGE_BINS], control: vec![0.0; AGE_BINS] },
        kidney_curve: PerArm { treated: None, control: None },
        liver_curve: PerArm { treated: None, control: None },
        hr_with_ci: None,
    }
}

#[derive(Deserialize)]
pub struct CreateSession {
    grid_id: String,
    /// Previously exported session to resume.
    #[serde(default)]
    session: Option<Value>,
}

fn persist_session(st: &AppState, entry: &SessionEntry) {
    let Some(dir) = st.config.cache_dir.as_ref() else { return };
    let dir = dir.join("sessions");
    let path = dir.join(format!("{}.json", entry.session.session_id));
    let res = std::fs::create_dir_all(&dir).map_err(Into::into).and_then(|_| entry.session.save(&path));
    if let Err(e) = res {
        log::warn!("cannot write session {}: {e}", path.display());
    }
}

fn session_json(entry: &SessionEntry) -> Value {
    json!({ "grid_id": entry.grid_id, "session": entry.session })
}

pub async fn create_session(
    State(st): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let g = grid_entry(&st, &req.grid_id)?;
    let mut reg = st.lock();
    let session = match req.session {
        Some(v) => {
            let s = Session::from_json(&v.to_string())?;
            if s.spec_hash != g.table.header.spec_hash {
                return Err(crate::session::SessionError::SpecMismatch {
                    session: s.spec_hash,
                    results: g.table.header.spec_hash.clone(),
                }
                .into());
            }
            if reg.sessions.contains_key(&s.session_id) {
                return Err(ApiError::new(StatusCode::CONFLICT, "conflict", format!("session {} exists", s.session_id)));
            }
            s
        }
        None => {
            reg.next_session += 1;
            let mut id = format!("session-{}", reg.next_session);
            while reg.sessions.contains_key(&id) {
                reg.next_session += 1;
                id = format!("session-{}", reg.next_session);
            }
            Session::new(id, g.table.header.spec_hash.clone())
        }
    };
    let entry = SessionEntry { grid_id: req.grid_id, session };
    persist_session(&st, &entry);
    let body = session_json(&entry);
    reg.sessions.insert(entry.session.session_id.clone(), entry);
    Ok((StatusCode::CREATED, Json(body)))
}

pub async fn list_sessions(State(st): State<Arc<AppState>>) -> Json<Value> {
    let reg = st.lock();
    let mut ids: Vec<&String> = reg.sessions.keys().collect();
    ids.sort();
    Json(json!({ "sessions": ids }))
}

/// Runs `f` on a session under the lock and persists it afterwards.
fn with_session<T>(
    st: &AppState,
    id: &str,
    f: impl FnOnce(&mut SessionEntry) -> ApiResult<T>,
) -> ApiResult<(T, Value)> {
    let mut reg = st.lock();
    let entry = reg.sessions.get_mut(id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    let out = f(entry)?;
    persist_session(st, entry);
    Ok((out, session_json(entry)))
}

pub async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let reg = st.lock();
    let entry = reg.sessions.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    Ok(Json(session_json(entry)))
}

#[derive(Deserialize)]
pub struct PatchSession {
    current_stage: u32,
}

pub async fn patch_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PatchSession>,
) -> ApiResult<Json<Value>> {
    let ((), body) = with_session(&st, &id, |e| Ok(e.session.set_current(req.current_stage)?))?;
    Ok(Json(body))
}

pub async fn create_stage(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(meta): Json<StageMeta>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let (stage_id, _) = with_session(&st, &id, |e| Ok(e.session.create_stage(meta)?))?;
    Ok((StatusCode::CREATED, Json(json!({ "stage_id": stage_id }))))
}

pub async fn patch_stage(
    State(st): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, u32)>,
    Json(meta): Json<StageMeta>,
) -> ApiResult<Json<Value>> {
    let ((), body) = with_session(&st, &id, |e| Ok(e.session.update_stage(sid, meta)?))?;
    Ok(Json(body))
}

pub async fn append_record(
    State(st): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, u32)>,
    Json(input): Json<RecordInput>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let grid_id = {
        let reg = st.lock();
        reg.sessions.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?.grid_id.clone()
    };
    let g = grid_entry(&st, &grid_id)?;
    let (record, _) = with_session(&st, &id, |e| {
        let rid = e.session.append_record(sid, input, &g.table)?;
        let stage = e.session.stage(sid).expect("stage exists after append");
        Ok(stage.records.iter().find(|r| r.record_id == rid).cloned().expect("record just appended"))
    })?;
    Ok((StatusCode::CREATED, Json(json!({ "record": record, "thumbnail": record.thumbnail() }))))
}

pub async fn stage_matrix(
    State(st): State<Arc<AppState>>,
    Path((id, sid)): Path<(String, u32)>,
) -> ApiResult<Json<Value>> {
    let (stage, grid_id) = {
        let reg = st.lock();
        let e = reg.sessions.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
        let stage = e.session.stage(sid).ok_or(crate::session::SessionError::UnknownStage(sid))?.clone();
        (stage, e.grid_id.clone())
    };
    let g = grid_entry(&st, &grid_id)?;
    Ok(Json(json!(matrix_data(&stage, g.grid.adjustables()))))
}

pub async fn session_report(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let (session, grid_id) = {
        let reg = st.lock();
        let e = reg.sessions.get(&id).ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
        (e.session.clone(), e.grid_id.clone())
    };
    let g = grid_entry(&st, &grid_id)?;
    let text = report(&session, Some(g.grid.adjustables()));
    Ok(([(header::CONTENT_TYPE, "text/markdown; charset=utf-8")], text))
}
