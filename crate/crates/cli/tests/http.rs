mod common;

use std::sync::Arc;

use adoirt_cli::server::router;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{fixture_manager, HORIZON};

fn app() -> Router {
    router(Arc::new(fixture_manager(None)))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn create(app: &Router) -> String {
    let (status, s) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    s["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn healthz_reports_ok() {
    let (status, v) = call(&app(), Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!({ "status": "ok" }));
}

#[tokio::test]
async fn full_session_completes_and_rejects_extra_response() {
    let app = app();
    let (_, s) = call(&app, Method::POST, "/sessions", None).await;
    assert_eq!(s["status"], "active");
    assert_eq!(s["horizon"], HORIZON);
    assert!(s["recommended_item"]["index"].is_u64());
    let id = s["id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{id}/responses");

    for t in 0..HORIZON {
        let (status, s) = call(&app, Method::POST, &uri, Some(json!({ "outcome": t % 2 }))).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(s["history"].as_array().unwrap().len(), t + 1);
        assert_eq!(s["trajectory"].as_array().unwrap().len(), t + 1);
    }
    let (_, done) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(done["status"], "completed");
    assert!(done["recommended_item"].is_null());

    let (status, err) = call(&app, Method::POST, &uri, Some(json!({ "outcome": 1 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");
    let (_, after) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(after, done);
}

#[tokio::test]
async fn invalid_outcomes_are_unprocessable() {
    let app = app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/responses");
    for body in [
        json!({ "outcome": 2 }),
        json!({ "outcome": -1 }),
        json!({ "outcome": "yes" }),
        json!({}),
    ] {
        let (status, err) = call(&app, Method::POST, &uri, Some(body)).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(err["code"], "validation");
    }
    let (_, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert!(s["history"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn malformed_json_is_bad_request() {
    let app = app();
    let id = create(&app).await;
    let req = Request::post(format!("/sessions/{id}/responses"))
        .header("content-type", "application/json")
        .body(Body::from("{outcome"))
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert_eq!(res.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn unknown_session_and_route_are_not_found() {
    let app = app();
    let (status, err) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions/nope/responses",
        Some(json!({ "outcome": 1 })),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, err) = call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
}

#[tokio::test]
async fn stale_step_is_a_conflict_and_changes_nothing() {
    let app = app();
    let id = create(&app).await;
    let uri = format!("/sessions/{id}/responses");
    let (status, _) = call(&app, Method::POST, &uri, Some(json!({ "outcome": 1, "step": 0 }))).await;
    assert_eq!(status, StatusCode::OK);
    // a double submit of the same step
    let (status, err) = call(&app, Method::POST, &uri, Some(json!({ "outcome": 1, "step": 0 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "conflict");
    let (_, s) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn recommended_items_come_from_the_bank() {
    let app = app();
    let (_, mut s) = call(&app, Method::POST, "/sessions", None).await;
    let id = s["id"].as_str().unwrap().to_string();
    let bank = common::fixture_bank().values();
    for t in 0..HORIZON {
        let item = &s["recommended_item"];
        let i = item["index"].as_u64().unwrap() as usize;
        assert_eq!(item["difficulty"].as_f64().unwrap(), bank[i]);
        let (_, next) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/responses"),
            Some(json!({ "outcome": 1, "step": t })),
        )
        .await;
        assert_eq!(next["history"][t]["item"].as_u64().unwrap() as usize, i);
        s = next;
    }
}

#[tokio::test]
async fn concurrent_sessions_are_independent() {
    let app = app();
    let a = create(&app).await;
    let b = create(&app).await;
    assert_ne!(a, b);
    for _ in 0..3 {
        call(
            &app,
            Method::POST,
            &format!("/sessions/{a}/responses"),
            Some(json!({ "outcome": 1 })),
        )
        .await;
    }
    let (_, sb) = call(&app, Method::GET, &format!("/sessions/{b}"), None).await;
    assert!(sb["history"].as_array().unwrap().is_empty());
}
