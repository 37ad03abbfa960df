use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use eligo::api::{router, AppState, ServerConfig};
use eligo::ehr::{generate_synthetic, SyntheticConfig};
use eligo::results::ResultsTable;

const CASE_I: &str = include_str!("../specs/case_i_3x4x2.tcl");
const CASE_II: &str = include_str!("../specs/case_ii.tcl");

fn state(cache_dir: Option<std::path::PathBuf>, max_candidates: u64) -> Arc<AppState> {
    let store = generate_synthetic(&SyntheticConfig { n_patients: 500, ..Default::default() }, 17).unwrap();
    AppState::new(store, ServerConfig { cache_dir, max_candidates, threads: 2, ..Default::default() })
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn wait_done(app: &Router, job_id: u64) -> Value {
    for _ in 0..600 {
        let (s, v) = call(app, "GET", &format!("/api/jobs/{job_id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        match v["state"].as_str().unwrap() {
            "done" => return v,
            "failed" => panic!("job failed: {v}"),
            _ => tokio::time::sleep(Duration::from_millis(20)).await,
        }
    }
    panic!("job {job_id} did not finish");
}

async fn evaluate(app: &Router, spec: &str) -> (String, Value) {
    let (s, v) = call(app, "POST", "/api/grid/evaluate", Some(json!({ "spec": spec }))).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = wait_done(app, v["job_id"].as_u64().unwrap()).await;
    (job["grid_id"].as_str().unwrap().to_string(), job)
}

fn uri_query(base: &str, pairs: &[(&str, Value)]) -> String {
    let mut s = base.to_string();
    for (i, (k, v)) in pairs.iter().enumerate() {
        s.push(if i == 0 { '?' } else { '&' });
        s.push_str(k);
        s.push('=');
        for b in v.to_string().bytes() {
            if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) {
                s.push(b as char);
            } else {
                s.push_str(&format!("%{b:02X}"));
            }
        }
    }
    s
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn spec_endpoint() {
    let app = router(state(None, 100_000));
    let (s, v) = call(&app, "POST", "/api/spec", Some(json!({ "spec": CASE_II }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["adjustables"].as_array().unwrap().len(), 5);
    assert_eq!(v["grid_size"], "324");

    let bad = "INTERVENTION: has_event(\"x\")\nINCLUDE a: age >= 1\nINCLUDE b: age >=\n";
    let (s, v) = call(&app, "POST", "/api/spec", Some(json!({ "spec": bad }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["location"]["line"], 3, "{v}");
    assert!(v["code"].is_string() && v["message"].is_string());

    let unbound = "INTERVENTION: has_event(\"x\")\nINCLUDE a: age >= $x\n";
    let (s, v) = call(&app, "POST", "/api/spec", Some(json!({ "spec": unbound }))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["message"].as_str().unwrap().contains("$x"), "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn evaluation_job_and_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let st = state(Some(tmp.path().to_path_buf()), 100);
    let app = router(st.clone());

    let (grid_id, job) = evaluate(&app, CASE_I).await;
    assert_eq!(job["total"], 24);
    assert_eq!(job["done"], 24);
    assert_eq!(job["cached"], false);
    let (_, first) = call(&app, "GET", &format!("/api/grid/{grid_id}/results"), None).await;
    assert_eq!(first["records"].as_array().unwrap().len(), 24);

    let (grid2, job2) = evaluate(&app, CASE_I).await;
    assert_eq!(grid2, grid_id);
    assert_eq!(job2["cached"], true);
    assert_ne!(job2["job_id"], job["job_id"]);

    // A fresh server over the same data reads the disk cache.
    let app2 = router(state(Some(tmp.path().to_path_buf()), 100));
    let (grid3, job3) = evaluate(&app2, CASE_I).await;
    assert_eq!(grid3, grid_id);
    assert_eq!(job3["cached"], true);
    let (_, again) = call(&app2, "GET", &format!("/api/grid/{grid_id}/results"), None).await;
    assert_eq!(first, again);

    let (s, v) = call(&app, "POST", "/api/grid/evaluate", Some(json!({ "spec": CASE_II }))).await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert!(v["message"].as_str().unwrap().contains("324"), "{v}");

    let (s, _) = call(&app, "GET", "/api/jobs/999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "GET", "/api/grid/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn candidate_queries_are_pure_functions_of_the_table() {
    let app = router(state(None, 100_000));
    let (grid_id, _) = evaluate(&app, CASE_I).await;
    let (_, raw) = call(&app, "GET", &format!("/api/grid/{grid_id}/results"), None).await;
    let table: ResultsTable = serde_json::from_value(raw).unwrap();
    let ok_ids: Vec<u64> = table.records.iter().filter(|r| r.status.is_ok()).map(|r| r.candidate_id).collect();
    let ids = |v: &Value| -> Vec<u64> {
        v["candidates"].as_array().unwrap().iter().map(|c| c["candidate_id"].as_u64().unwrap()).collect()
    };

    let base = format!("/api/grid/{grid_id}/candidates");
    let (s, v) = call(&app, "GET", &base, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["count"], 24);

    let everything = json!({"x": "n", "y": "hr", "rect": {"x_min": -1e300, "x_max": 1e300, "y_min": -1e300, "y_max": 1e300}});
    let (_, v) = call(&app, "GET", &uri_query(&base, &[("region", everything)]), None).await;
    assert_eq!(ids(&v), ok_ids);

    let below = json!({"x": "n", "y": "hr", "rect": {"x_min": 0, "x_max": 1e300, "y_min": 0, "y_max": 1.0}});
    let (_, v) = call(&app, "GET", &uri_query(&base, &[("region", below)]), None).await;
    let expect: Vec<u64> = table
        .records
        .iter()
        .filter(|r| r.status.is_ok() && r.hr.is_some_and(|h| h <= 1.0))
        .map(|r| r.candidate_id)
        .collect();
    assert_eq!(ids(&v), expect);

    let poly = json!({"x": "n", "y": "hr", "polygon": [[-1e9, -1e9], [1e9, -1e9], [1e9, 1e9], [-1e9, 1e9]]});
    let (_, v) = call(&app, "GET", &uri_query(&base, &[("region", poly)]), None).await;
    assert_eq!(ids(&v), ok_ids);

    let cons = json!({"age_min": [60], "ventilated": [true]});
    let (_, v) = call(&app, "GET", &uri_query(&base, &[("constraints", cons.clone())]), None).await;
    assert_eq!(ids(&v), vec![8, 10, 12, 14]);
    let (_, v) = call(&app, "GET", &uri_query(&format!("/api/grid/{grid_id}/ticks"), &[("constraints", cons)]), None).await;
    assert_eq!(v["counts"]["surgery_months"], json!([1, 1, 1, 1]));

    let conflicting = json!({"age_min": []});
    let (s, v) = call(&app, "GET", &uri_query(&base, &[("constraints", conflicting)]), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["count"], 0);

    let (s, _) = call(&app, "GET", &format!("{base}?region=notjson"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn profiles_matches_and_groups() {
    let app = router(state(None, 100_000));
    let (grid_id, _) = evaluate(&app, CASE_I).await;
    let (s, v) = call(&app, "GET", &format!("/api/candidates/{grid_id}/0/profile"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let p = &v["profile"];
    let sum: f64 = p["gender_dist"]["treated"].as_object().unwrap().values().map(|x| x.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);
    assert_eq!(p["kidney_curve"]["treated"].as_array().unwrap().len(), 29);

    let (s, v) = call(&app, "GET", &format!("/api/candidates/{grid_id}/0/matches"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!v["matched"]["pairs"].as_array().unwrap().is_empty());
    let (s, _) = call(&app, "GET", &format!("/api/candidates/{grid_id}/99/matches"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let body = json!({"grid_id": grid_id, "group_a": [0], "group_b": [2, 4]});
    let (s, v) = call(&app, "POST", "/api/groups/compare", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["group_a"]["metrics"]["hr"]["sd"], 0.0);
    assert_eq!(v["group_b"]["member_ids"], json!([2, 4]));

    let body = json!({"grid_id": grid_id, "group_a": [], "group_b": [1]});
    let (s, _) = call(&app, "POST", "/api/groups/compare", Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn session_lifecycle() {
    let tmp = tempfile::tempdir().unwrap();
    let app = router(state(Some(tmp.path().to_path_buf()), 100_000));
    let (grid_id, _) = evaluate(&app, CASE_I).await;

    let (s, v) = call(&app, "POST", "/api/sessions", Some(json!({ "grid_id": grid_id }))).await;
    assert_eq!(s, StatusCode::CREATED);
    let sid = v["session"]["session_id"].as_str().unwrap().to_string();

    let meta = json!({"importance": 3, "keywords": ["age"], "description": "first pass"});
    let (s, v) = call(&app, "POST", &format!("/api/sessions/{sid}/stages"), Some(meta)).await;
    assert_eq!(s, StatusCode::CREATED);
    let stage = v["stage_id"].as_u64().unwrap();

    let (s, _) = call(&app, "POST", &format!("/api/sessions/{sid}/stages"), Some(json!({"importance": 9}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let rec = json!({
        "kind": "lasso_select",
        "bindings_constraints": {"age_min": [60, 65]},
        "selected_candidates": [8, 9, 16],
        "axes": {"x": "n", "y": "kidney_rr"},
        "timestamp": 100,
        // Client-side means are ignored.
        "metric_means": {"n": 1e9}
    });
    let (s, v) = call(&app, "POST", &format!("/api/sessions/{sid}/stages/{stage}/records"), Some(rec)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert!(v["record"]["metric_means"]["n"].as_f64().unwrap() < 1e6);
    assert_eq!(v["thumbnail"]["selected"], json!([8, 9, 16]));

    let late = json!({"selected_candidates": [1], "timestamp": 50});
    let (s, _) = call(&app, "POST", &format!("/api/sessions/{sid}/stages/{stage}/records"), Some(late)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let outside = json!({"selected_candidates": [24]});
    let (s, _) = call(&app, "POST", &format!("/api/sessions/{sid}/stages/{stage}/records"), Some(outside)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let patch = json!({"importance": 5, "keywords": ["age", "key"], "description": "revised"});
    let (s, v) = call(&app, "PATCH", &format!("/api/sessions/{sid}/stages/{stage}"), Some(patch)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["session"]["stages"][0]["importance"], 5);

    let (s, v) = call(&app, "GET", &format!("/api/sessions/{sid}/stages/{stage}/matrix"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    assert_eq!(v["cells"][0][0], 62.5);

    let (s, v) = call(&app, "GET", &format!("/api/sessions/{sid}/report"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.as_str().unwrap().contains("revised"));

    // Persisted copy resumes on a new server.
    let (_, exported) = call(&app, "GET", &format!("/api/sessions/{sid}"), None).await;
    let saved = std::fs::read_to_string(tmp.path().join("sessions").join(format!("{sid}.json"))).unwrap();
    let saved: Value = serde_json::from_str(&saved).unwrap();
    assert_eq!(saved, exported["session"]);
    let app2 = router(state(Some(tmp.path().to_path_buf()), 100_000));
    let body = json!({"grid_id": grid_id, "session": saved});
    let (s, v) = call(&app2, "POST", "/api/sessions", Some(body)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    assert_eq!(v["session"], exported["session"]);

    let (s, _) = call(&app, "GET", "/api/sessions/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
