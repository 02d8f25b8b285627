use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use vtp_cli::api::{router, Shared};
use vtp_core::domain::canonical_serialize;
use vtp_core::runner::{contains_key_material, run_deployment, shipped_scenarios, RunConfig};

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    let value: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    assert_eq!(canonical_serialize(&value).unwrap(), bytes, "{uri} body is not canonical");
    (status, value, bytes)
}

fn scenario(name: &str) -> RunConfig {
    shipped_scenarios()[name].clone()
}

fn body(config: &RunConfig) -> Option<Vec<u8>> {
    Some(serde_json::to_vec(config).unwrap())
}

#[tokio::test]
async fn task_lifecycle_and_reads() {
    let app = router(Shared::default());
    let (s, v, _) = call(&app, "POST", "/tasks", body(&scenario("ecommerce_shopper"))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["outcome"]["outcome"], "settled");
    let escrow = v["escrow_id"].as_str().unwrap().to_string();
    let workflow = v["workflow_id"].as_str().unwrap().to_string();

    let (s, v, _) = call(&app, "GET", &format!("/escrows/{escrow}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "SETTLED");

    let (s, v, _) = call(&app, "GET", &format!("/workflows/{workflow}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["escrow_id"], escrow.as_str());

    let (s, v, _) = call(&app, "GET", &format!("/explorer?escrow_id={escrow}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!v["records"].as_array().unwrap().is_empty());

    let (_, v, _) = call(&app, "GET", "/explorer?tx_id=00", None).await;
    assert!(v["records"].as_array().unwrap().is_empty());

    let (s, v, _) = call(&app, "GET", "/audit/verify", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["valid"], true);
    assert!(v["events"].as_u64().unwrap() > 10);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let app = router(Shared::default());
    let (s, _, _) = call(&app, "GET", "/escrows/unknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    call(&app, "POST", "/tasks", body(&scenario("ecommerce_shopper"))).await;
    for uri in ["/escrows/unknown", "/workflows/unknown", "/nowhere"] {
        let (s, v, _) = call(&app, "GET", uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert!(v["error"].is_string());
    }
    let (s, _, _) = call(&app, "POST", "/attacks/unknown", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_and_invalid_configs() {
    let app = router(Shared::default());
    let (s, _, _) = call(&app, "POST", "/tasks", Some(b"{".to_vec())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut config = scenario("ecommerce_shopper");
    config.validators.n = 5;
    let (s, v, _) = call(&app, "POST", "/tasks", body(&config)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "config_invalid");
}

#[tokio::test]
async fn attack_endpoint_reports_blocked() {
    let app = router(Shared::default());
    let (s, v, _) = call(&app, "POST", "/attacks/unverified_payout", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["blocked"], true);
    assert_eq!(v["mechanism"], "pote_gate");
}

#[tokio::test]
async fn direct_settle_on_open_escrow_is_412() {
    let app = router(Shared::default());
    let (s, v, _) = call(&app, "POST", "/tasks?until=funded", body(&scenario("ecommerce_shopper"))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["escrows"]["esc-000001"], "OPEN");

    let (s, v, _) = call(&app, "POST", "/escrows/esc-000001/settle", None).await;
    assert_eq!(s, StatusCode::PRECONDITION_FAILED);
    assert_eq!(v["error"], "pote_missing");
    let (_, v, _) = call(&app, "GET", "/escrows/esc-000001", None).await;
    assert_eq!(v["status"], "OPEN");
    assert!(v["settlement_tx_ids"].as_array().unwrap().is_empty());

    let (s, _, _) = call(&app, "POST", "/escrows/unknown/settle", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn settle_after_settlement_is_conflict() {
    let app = router(Shared::default());
    call(&app, "POST", "/tasks", body(&scenario("ecommerce_shopper"))).await;
    let (s, v, _) = call(&app, "POST", "/escrows/esc-000001/settle", None).await;
    assert_eq!(s, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn signalled_events() {
    let app = router(Shared::default());
    call(&app, "POST", "/tasks?until=funded", body(&scenario("ecommerce_shopper"))).await;

    let kernel_only = Some(br#"{"event":"SettlementConfirmed"}"#.to_vec());
    let (s, _, _) = call(&app, "POST", "/escrows/esc-000001/events", kernel_only).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let raise = || Some(br#"{"event":"ChallengeRaised"}"#.to_vec());
    let (s, v, _) = call(&app, "POST", "/escrows/esc-000001/events", raise()).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "escrow");

    let timeout = Some(br#"{"event":"Timeout"}"#.to_vec());
    let (s, v, _) = call(&app, "POST", "/escrows/esc-000001/events", timeout).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "REFUND_PENDING");
    let (_, v, _) = call(&app, "GET", "/escrows/esc-000001", None).await;
    assert_eq!(v["refund_tx_ids"].as_array().unwrap().len(), 1);

    let (s, _, _) = call(&app, "POST", "/escrows/unknown/events", Some(br#"{"event":"Timeout"}"#.to_vec())).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn responses_never_carry_key_material() {
    let config = scenario("ecommerce_shopper");
    let keys = run_deployment(config.clone()).unwrap().known_secret_keys();
    let app = router(Shared::default());
    let mut seen = Vec::new();
    seen.extend(call(&app, "POST", "/tasks", body(&config)).await.2);
    for uri in ["/escrows/esc-000001", "/workflows/wf-000001", "/explorer", "/audit/verify"] {
        seen.extend(call(&app, "GET", uri, None).await.2);
    }
    seen.extend(call(&app, "POST", "/attacks/key_exfiltration", None).await.2);
    assert!(!keys.is_empty());
    for key in &keys {
        assert!(!contains_key_material(&seen, key.expose_bytes()));
    }
}
