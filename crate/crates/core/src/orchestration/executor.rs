use serde::{Deserialize, Serialize};

use super::facilitator::TickWindow;
use crate::domain::{canonical_serialize, Amount, Digest, Tick};
use crate::identity::{AJwt, AJwtClaims, AgentRegistry, AuthorizationService, PopProof, TokenError};
use crate::settlement::{EscrowBook, EscrowStatus};
use crate::verification::{
    notarize_exchange, AuditLedger, AuditRefs, Notary, NotaryError, NotaryReceipt, ReceiptKind,
    TelemetrySample, TelemetryStore,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub budget: Amount,
    pub capability: String,
    pub validity: TickWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionEnvelope {
    pub task_id: String,
    pub workflow_id: String,
    pub escrow_id: String,
    pub agent_id: String,
    pub scope: ScopeSummary,
    pub ajwt: String,
    pub intent_hash: Digest,
}

impl ExecutionEnvelope {
    pub fn token(&self) -> Result<AJwt, TokenError> {
        AJwt::decode(&self.ajwt).map_err(|_| TokenError::BadIssuerSig)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecutionHandle {
    pub task_id: String,
    pub workflow_id: String,
    pub escrow_id: String,
    pub agent_id: String,
    pub claims: AJwtClaims,
    pub executor_receipt: NotaryReceipt,
    pub started_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DelegateError {
    #[error("escrow {escrow_id} is {status}, not OPEN")]
    EscrowNotOpen { escrow_id: String, status: String },
    #[error("token rejected: {0}")]
    BadToken(#[from] TokenError),
    #[error("envelope does not match token: {0}")]
    EnvelopeMismatch(&'static str),
    #[error(transparent)]
    Notary(#[from] NotaryError),
}

/// Everything delegation touches besides the envelope itself.
pub struct DelegationContext<'a> {
    pub escrows: &'a EscrowBook,
    pub authz: &'a mut AuthorizationService,
    pub registry: &'a AgentRegistry,
    pub notaries: &'a [&'a Notary],
    pub telemetry: &'a mut TelemetryStore,
    pub audit: &'a mut AuditLedger,
    pub session_id: &'a str,
}

#[derive(Serialize)]
struct Ack<'a> {
    task_id: &'a str,
    agent_id: &'a str,
    accepted: bool,
}

/// Hands the task to the service agent. The escrow gate is checked before
/// anything else, so no token is consumed for an unfunded escrow.
pub fn delegate(
    envelope: &ExecutionEnvelope,
    pop: &PopProof,
    ctx: DelegationContext<'_>,
    tick: Tick,
) -> Result<ExecutionHandle, DelegateError> {
    let status = ctx.escrows.status(&envelope.escrow_id).map(|s| s.as_str()).unwrap_or("UNKNOWN");
    if status != EscrowStatus::Open.as_str() {
        return Err(DelegateError::EscrowNotOpen { escrow_id: envelope.escrow_id.clone(), status: status.into() });
    }
    let token = envelope.token()?;
    if token.claims.sub != envelope.agent_id {
        return Err(DelegateError::EnvelopeMismatch("agent_id"));
    }
    if !envelope.scope.validity.contains(tick) {
        return Err(DelegateError::BadToken(TokenError::Expired));
    }
    let claims = ctx.authz.verify_ajwt(&token, pop, tick, ctx.registry)?;

    let request = canonical_serialize(envelope).expect("envelope is canonical");
    let response = canonical_serialize(&Ack { task_id: &envelope.task_id, agent_id: &envelope.agent_id, accepted: true })
        .expect("ack is canonical");
    let receipt = notarize_exchange(
        ReceiptKind::Executor,
        ctx.session_id,
        &envelope.workflow_id,
        &request,
        &response,
        ctx.notaries,
        tick,
    )?;
    ctx.telemetry.record(TelemetrySample {
        workflow_id: envelope.workflow_id.clone(),
        step_label: "executor.delegate".into(),
        latency_ms: 5,
        tokens: 0,
        cost: Amount::zero(envelope.scope.budget.currency_code.clone()),
        tick,
    });
    ctx.audit.append(
        "task.delegated",
        AuditRefs::escrow(&envelope.workflow_id, &envelope.escrow_id),
        &serde_json::json!({
            "task_id": envelope.task_id,
            "agent_id": envelope.agent_id,
            "jti": claims.jti,
            "receipt_request": receipt.request_commitment,
        }),
        tick,
    );
    Ok(ExecutionHandle {
        task_id: envelope.task_id.clone(),
        workflow_id: envelope.workflow_id.clone(),
        escrow_id: envelope.escrow_id.clone(),
        agent_id: envelope.agent_id.clone(),
        claims,
        executor_receipt: receipt,
        started_at: tick,
    })
}
