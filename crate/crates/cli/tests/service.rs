use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use saog_cli::service::{router, AppState, ErrorBody, Health, InferResponse, SessionView};
use saog_cli::session::SceneSession;
use saog_core::energy::{term_sums, total_energy};
use saog_core::grammar::{GrammarSpec, ObjectInstance, ParseGraph};
use saog_core::projection::{rasterize_instance_map, InstanceMap};
use saog_eval::criteria::{brute_force_map, pinned_scene};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> Arc<AppState> {
    Arc::new(AppState::new(GrammarSpec::clevr_default()))
}

async fn call(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(state.clone())
        .oneshot(req.body(body).unwrap())
        .await
        .unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, bytes.to_vec())
}

async fn call_json<T: DeserializeOwned>(
    state: &Arc<AppState>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, T) {
    let (status, bytes) = call(state, method, uri, body).await;
    let parsed = serde_json::from_slice(&bytes)
        .unwrap_or_else(|e| panic!("{status}: {e}: {}", String::from_utf8_lossy(&bytes)));
    (status, parsed)
}

fn fixture_objects() -> Vec<ObjectInstance> {
    serde_json::from_str(include_str!("fixtures/three_objects.json")).unwrap()
}

#[tokio::test]
async fn health_reports_version() {
    let st = state();
    let (status, h): (_, Health) = call_json(&st, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(h.status, "ok");
    assert_eq!(h.version, env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn created_session_energy_matches_local_recomputation() {
    let st = state();
    let (status, created): (_, SessionView) =
        call_json(&st, "POST", "/sessions", Some(json!({"seed": 11}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let (status, got): (_, SessionView) =
        call_json(&st, "GET", &format!("/sessions/{}", created.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got.graph, created.graph);
    let local = total_energy(&got.graph, &st.spec).unwrap();
    assert_eq!(got.energy.total, local.total);
    assert_eq!(got.boxes.len(), got.graph.objects.len());
    assert_eq!(got.revision, 0);
}

#[tokio::test]
async fn unknown_session_is_404() {
    let st = state();
    for (method, uri, body) in [
        ("GET", "/sessions/nope", None),
        ("GET", "/sessions/nope/instance-map", None),
        (
            "POST",
            "/sessions/nope/edits",
            Some(json!({"revision": 0, "edit": {"op": "remove", "index": 0}})),
        ),
        (
            "POST",
            "/sessions/nope/resample",
            Some(json!({"revision": 0})),
        ),
    ] {
        let (status, _) = call(&st, method, uri, body).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
    }
}

async fn upload(st: &Arc<AppState>, g: &ParseGraph) -> SessionView {
    let (status, v): (_, SessionView) =
        call_json(st, "POST", "/sessions", Some(json!({ "graph": g }))).await;
    assert_eq!(status, StatusCode::CREATED);
    v
}

#[tokio::test]
async fn edits_round_trip_and_track_revisions() {
    let st = state();
    let start = ParseGraph::new(fixture_objects(), vec![]);
    let v = upload(&st, &start).await;
    let uri = format!("/sessions/{}/edits", v.id);

    let mv = |rev: u64, d: f64| json!({"revision": rev, "edit": {"op": "move", "index": 1, "delta": [d, 0.3, 0.0]}});
    let (status, a): (_, SessionView) = call_json(&st, "POST", &uri, Some(mv(0, 0.7))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(a.revision, 1);
    assert_eq!(a.energy, total_energy(&a.graph, &st.spec).unwrap());

    let (_, b): (_, SessionView) = call_json(
        &st,
        "POST",
        &uri,
        Some(
            json!({"revision": 1, "edit": {"op": "move", "index": 1, "delta": [-0.7, -0.3, -0.0]}}),
        ),
    )
    .await;
    assert_eq!(b.graph, start);
    assert_eq!(b.revision, 2);
    assert_eq!(b.history_len, 2);

    let (status, err): (_, ErrorBody) = call_json(&st, "POST", &uri, Some(mv(1, 0.1))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err.revision, Some(2));

    // Relation toggles show up in diagnostics when violated.
    let (_, c): (_, SessionView) = call_json(
        &st,
        "POST",
        &uri,
        Some(json!({"revision": 2, "edit": {"op": "set_relation", "relation": {"type": 1, "subject": 2, "object": 1}, "present": true}})),
    )
    .await;
    let violated = term_sums(&c.graph, &st.spec).unwrap().relation > 0.0;
    assert_eq!(
        c.diagnostics.iter().any(|d| d.message.contains("violated")),
        violated
    );

    let (_, d): (_, SessionView) = call_json(
        &st,
        "POST",
        &format!("/sessions/{}/undo", v.id),
        Some(json!({"revision": 3})),
    )
    .await;
    assert_eq!(d.graph, start);
    assert_eq!(d.revision, 4);

    // The recorded history replays to the served graph.
    let session = st.session(&v.id).unwrap();
    let s = session.read().unwrap();
    let ops: Vec<_> = s.history.iter().map(|h| h.op.clone()).collect();
    let again = SceneSession::replay("x", s.initial.clone(), &ops, &st.resample, &st.spec).unwrap();
    assert_eq!(again.graph, s.graph);
}

#[tokio::test]
async fn invalid_bodies_name_the_field() {
    let st = state();
    let v = upload(&st, &ParseGraph::new(fixture_objects(), vec![])).await;
    let uri = format!("/sessions/{}/edits", v.id);

    let (status, err): (_, ErrorBody) = call_json(
        &st,
        "POST",
        &uri,
        Some(json!({"revision": 0, "edit": {"op": "move", "delta": [1, 0, 0]}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(err.fields[0].field.starts_with("edit"), "{err:?}");
    assert!(err.fields[0].message.contains("index"), "{err:?}");

    let (status, err): (_, ErrorBody) = call_json(
        &st,
        "POST",
        &uri,
        Some(json!({"revision": 0, "edit": {"op": "retype", "index": 0, "label": 99}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.fields[0].field, "graph.objects[0]");

    let (status, err): (_, ErrorBody) = call_json(
        &st,
        "POST",
        &uri,
        Some(json!({"revision": 0, "edit": {"op": "remove", "index": 7}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.fields[0].field, "edit.index");

    let mut bad = ParseGraph::new(fixture_objects(), vec![]);
    bad.objects[2].half_extent = 0.5;
    let (status, err): (_, ErrorBody) =
        call_json(&st, "POST", "/sessions", Some(json!({ "graph": bad }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err.fields[0].field, "graph.objects[2]");

    let (status, _) = call(&st, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);

    // Rejected edits do not move the revision.
    let (_, now): (_, SessionView) =
        call_json(&st, "GET", &format!("/sessions/{}", v.id), None).await;
    assert_eq!(now.revision, 0);
}

#[tokio::test]
async fn add_beyond_limit_names_it() {
    let st = state();
    let limit = st.spec.max_objects();
    let object = fixture_objects()[0].clone();
    let full = ParseGraph::new(vec![object.clone(); limit], vec![]);
    let v = upload(&st, &full).await;
    let (status, err): (_, ErrorBody) = call_json(
        &st,
        "POST",
        &format!("/sessions/{}/edits", v.id),
        Some(json!({"revision": 0, "edit": {"op": "add", "object": object}})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(
        err.error.contains(&format!("at most {limit}")),
        "{}",
        err.error
    );
}

#[tokio::test]
async fn instance_map_download_matches_local_raster() {
    let st = state();
    let v = upload(&st, &ParseGraph::new(fixture_objects(), vec![])).await;
    let (status, bytes) = call(
        &st,
        "GET",
        &format!("/sessions/{}/instance-map", v.id),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let local = rasterize_instance_map(&v.graph, &st.spec).unwrap();
    assert_eq!(bytes, local.to_simap_bytes());
    assert_eq!(InstanceMap::from_simap_bytes(&bytes).unwrap().channels(), 9);
}

#[tokio::test]
async fn infer_matches_exhaustive_map() {
    let mut spec = GrammarSpec::clevr_default();
    for r in &mut spec.relations {
        r.prior = 0.7;
    }
    spec.weights.relation = 2.0;
    let st = Arc::new(AppState::new(spec));
    let objects = fixture_objects();
    let truth = brute_force_map(&objects, &st.spec).unwrap();
    for method in ["map", "gibbs"] {
        let (status, r): (_, InferResponse) = call_json(
            &st,
            "POST",
            "/infer",
            Some(json!({"objects": objects, "method": method})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(r.relations, truth, "{method}");
    }
    let (status, _) = call(&st, "POST", "/infer", Some(json!({"objects": []}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn resample_keeps_pinned_relations() {
    let st = state();
    let mut satisfied = 0;
    for k in 0..100u64 {
        let g = pinned_scene(&st.spec, 70_000 + k);
        let v = upload(&st, &g).await;
        let (status, out): (_, SessionView) = call_json(
            &st,
            "POST",
            &format!("/sessions/{}/resample", v.id),
            Some(json!({"revision": 0, "seed": k, "relation_weight": 2.0})),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(out.graph.relations, g.relations);
        assert_eq!(
            out.graph
                .objects
                .iter()
                .map(|o| (o.label, o.size))
                .collect::<Vec<_>>(),
            g.objects
                .iter()
                .map(|o| (o.label, o.size))
                .collect::<Vec<_>>()
        );
        if !g.objects.is_empty() {
            assert_ne!(out.graph.objects, g.objects, "layout was not resampled");
        }
        satisfied += (out.energy.sum_relation == 0.0) as usize;
    }
    eprintln!("resample: {satisfied}/100 runs satisfied every pinned relation");
    assert!(satisfied >= 95, "{satisfied}/100");
}

#[tokio::test]
async fn sessions_are_independent_under_concurrency() {
    let st = state();
    let a = upload(&st, &ParseGraph::new(fixture_objects(), vec![])).await;
    let b = upload(&st, &ParseGraph::new(fixture_objects(), vec![])).await;
    let mut tasks = Vec::new();
    for id in [a.id.clone(), b.id.clone()] {
        let st = st.clone();
        tasks.push(tokio::spawn(async move {
            for rev in 0..20u64 {
                let (status, _) = call(
                    &st,
                    "POST",
                    &format!("/sessions/{id}/edits"),
                    Some(json!({"revision": rev, "edit": {"op": "rotate", "index": 0, "delta": 5.0}})),
                )
                .await;
                assert_eq!(status, StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    for id in [a.id, b.id] {
        let (_, v): (_, SessionView) =
            call_json(&st, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(v.revision, 20);
        assert!((v.graph.objects[0].rotation - 100.0).abs() < 1e-9);
    }
}

#[tokio::test]
async fn snapshots_restore_sessions() {
    let st = state();
    let v = upload(&st, &ParseGraph::new(fixture_objects(), vec![])).await;
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(st.snapshot(dir.path()).unwrap(), 1);

    let fresh = state();
    assert_eq!(fresh.restore(dir.path()).unwrap(), 1);
    let (status, got): (_, SessionView) =
        call_json(&fresh, "GET", &format!("/sessions/{}", v.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(got.graph.objects.len(), 3);
    // New sessions do not reuse restored ids.
    let next = upload(&fresh, &ParseGraph::empty()).await;
    assert_ne!(next.id, v.id);
}
