//! HTTP JSON API. All bodies are canonical JSON.
//!
//! Runs execute one at a time on a blocking worker and replace the current
//! deployment when they finish; read endpoints only take a short read lock.

use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use vtp_core::domain::canonical_serialize;
use vtp_core::runner::{run_attack, AttackError, Deployment, Halt, RunConfig, RunError, SignalError};
use vtp_core::settlement::{EscrowError, EscrowEvent, ExplorerFilter, SettleError};
use vtp_core::verification::verify_audit_jsonl;

#[derive(Default)]
pub struct AppState {
    current: RwLock<Option<Deployment>>,
    run_slot: Mutex<()>,
}

pub type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/tasks", post(submit_task))
        .route("/escrows/{id}", get(get_escrow))
        .route("/escrows/{id}/settle", post(settle_escrow))
        .route("/escrows/{id}/events", post(signal_escrow))
        .route("/workflows/{id}", get(get_workflow))
        .route("/attacks/{scenario}", post(attack))
        .route("/explorer", get(explorer))
        .route("/audit/verify", get(audit_verify))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

pub async fn serve(port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Shared::default())).await?;
    Ok(())
}

fn canonical<T: Serialize>(status: StatusCode, value: &T) -> Response {
    match canonical_serialize(value) {
        Ok(body) => (status, [(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "encoding", &e.to_string()),
    }
}

fn error(status: StatusCode, code: &str, message: &str) -> Response {
    let body = json!({ "error": code, "message": message });
    (status, [(header::CONTENT_TYPE, "application/json")], canonical_serialize(&body).unwrap_or_default())
        .into_response()
}

#[derive(Debug, Default, Deserialize)]
pub struct TaskQuery {
    /// `funded` stops the run once the escrow is open, before execution.
    until: Option<String>,
}

async fn submit_task(State(state): State<Shared>, Query(q): Query<TaskQuery>, body: Bytes) -> Response {
    let config: RunConfig = match serde_json::from_slice(&body) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_config", &e.to_string()),
    };
    let stop_funded = match q.until.as_deref() {
        None | Some("done") => false,
        Some("funded") => true,
        Some(other) => return error(StatusCode::BAD_REQUEST, "bad_query", &format!("unknown phase {other}")),
    };
    let _slot = state.run_slot.lock().await;
    let joined = tokio::task::spawn_blocking(move || run(config, stop_funded)).await;
    let d = match joined {
        Ok(Ok(d)) => d,
        Ok(Err(RunError::ConfigInvalid(e))) => {
            return error(StatusCode::UNPROCESSABLE_ENTITY, "config_invalid", &e.to_string())
        }
        Ok(Err(e)) => return error(StatusCode::INTERNAL_SERVER_ERROR, "run_failed", &e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "run_failed", &e.to_string()),
    };
    let t = d.transcript();
    let body = json!({
        "workflow_id": t.workflow_id,
        "escrow_id": t.escrow_id,
        "tier": t.tier,
        "outcome": d.outcome(),
        "escrows": t.escrows,
        "tick": t.final_tick,
        "transcript_digest": t.digest(),
        "audit_head": t.audit_head,
    });
    *state.current.write().expect("state lock") = Some(d);
    canonical(StatusCode::CREATED, &body)
}

fn run(config: RunConfig, stop_funded: bool) -> Result<Deployment, RunError> {
    let mut d = Deployment::new(config)?;
    if !stop_funded {
        d.execute()?;
        return Ok(d);
    }
    let fs = match d.intake() {
        Ok(fs) => fs,
        Err(Halt::Done(o)) => {
            d.set_outcome(o);
            return Ok(d);
        }
        Err(Halt::Err(e)) => return Err(e),
    };
    d.deposit(&fs, false)?;
    d.wait_funded(&fs)?;
    Ok(d)
}

fn with_current(state: &Shared, f: impl FnOnce(&Deployment) -> Response) -> Response {
    match state.current.read().expect("state lock").as_ref() {
        Some(d) => f(d),
        None => error(StatusCode::NOT_FOUND, "no_run", "no run has been submitted"),
    }
}

async fn get_escrow(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    with_current(&state, |d| match d.escrows.get(&id) {
        Ok(r) => canonical(StatusCode::OK, r),
        Err(e) => error(StatusCode::NOT_FOUND, "unknown_escrow", &e.to_string()),
    })
}

async fn get_workflow(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    with_current(&state, |d| match d.facilitator.workflow(&id) {
        Ok(w) => canonical(StatusCode::OK, w),
        Err(e) => error(StatusCode::NOT_FOUND, "unknown_workflow", &e.to_string()),
    })
}

fn escrow_status(e: &EscrowError) -> StatusCode {
    match e {
        EscrowError::UnknownEscrow(_) => StatusCode::NOT_FOUND,
        EscrowError::IllegalTransition { .. } => StatusCode::CONFLICT,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

fn settle_status(e: &SettleError) -> (StatusCode, &'static str) {
    match e {
        SettleError::PoteMissing(_) => (StatusCode::PRECONDITION_FAILED, "pote_missing"),
        SettleError::RootMismatch => (StatusCode::PRECONDITION_FAILED, "root_mismatch"),
        SettleError::WrongState(_) => (StatusCode::CONFLICT, "wrong_state"),
        SettleError::ChallengeWindowOpen => (StatusCode::CONFLICT, "challenge_window_open"),
        SettleError::AlreadySubmitted => (StatusCode::CONFLICT, "already_submitted"),
        SettleError::Escrow(inner) => (escrow_status(inner), "escrow"),
        _ => (StatusCode::UNPROCESSABLE_ENTITY, "settlement"),
    }
}

async fn settle_escrow(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let _slot = state.run_slot.lock().await;
    let mut guard = state.current.write().expect("state lock");
    let Some(d) = guard.as_mut() else {
        return error(StatusCode::NOT_FOUND, "no_run", "no run has been submitted");
    };
    if !d.escrows.contains(&id) {
        return error(StatusCode::NOT_FOUND, "unknown_escrow", &format!("unknown escrow {id}"));
    }
    let tick = d.tick();
    match d.adapter.settle(&mut d.escrows, &d.verification.anchors, &mut d.audit, &id, tick) {
        Ok(tx) => canonical(StatusCode::OK, &json!({ "escrow_id": id, "tx_id": tx })),
        Err(e) => {
            let (status, code) = settle_status(&e);
            error(status, code, &e.to_string())
        }
    }
}

async fn signal_escrow(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    let event: EscrowEvent = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_event", &e.to_string()),
    };
    let _slot = state.run_slot.lock().await;
    let mut guard = state.current.write().expect("state lock");
    let Some(d) = guard.as_mut() else {
        return error(StatusCode::NOT_FOUND, "no_run", "no run has been submitted");
    };
    match d.signal(&id, event) {
        Ok(status) => canonical(StatusCode::OK, &json!({ "escrow_id": id, "status": status })),
        Err(SignalError::KernelOnly(name)) => {
            error(StatusCode::FORBIDDEN, "kernel_only", &format!("{name} is raised by the kernel only"))
        }
        Err(SignalError::Escrow(e)) => error(escrow_status(&e), "escrow", &e.to_string()),
        Err(SignalError::Run(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "run_failed", &e.to_string()),
    }
}

#[derive(Debug, Default, Deserialize)]
struct AttackQuery {
    seed: Option<u64>,
}

async fn attack(Path(scenario): Path<String>, Query(q): Query<AttackQuery>) -> Response {
    let seed = q.seed.unwrap_or(1);
    let name = scenario.clone();
    match tokio::task::spawn_blocking(move || run_attack(&name, seed)).await {
        Ok(Ok(report)) => canonical(StatusCode::OK, &report),
        Ok(Err(AttackError::UnknownScenario(_))) => {
            error(StatusCode::NOT_FOUND, "unknown_scenario", &format!("unknown scenario {scenario}"))
        }
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "attack_failed", &e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "attack_failed", &e.to_string()),
    }
}

async fn explorer(State(state): State<Shared>, Query(filter): Query<ExplorerFilter>) -> Response {
    let guard = state.current.read().expect("state lock");
    let records = guard.as_ref().map(|d| d.explorer.query(&filter)).unwrap_or_default();
    canonical(StatusCode::OK, &json!({ "records": records }))
}

async fn audit_verify(State(state): State<Shared>) -> Response {
    let guard = state.current.read().expect("state lock");
    let (bytes, events, head) = match guard.as_ref() {
        Some(d) => (d.audit.export_jsonl(), d.audit.len(), Some(d.audit.head_hash())),
        None => (Vec::new(), 0, None),
    };
    canonical(StatusCode::OK, &json!({ "valid": verify_audit_jsonl(&bytes), "events": events, "head": head }))
}
