use std::collections::BTreeSet;

use vtp_core::domain::Amount;
use vtp_core::orchestration::{
    delegate, evaluate_performance, DelegateError, DelegationContext, Facilitator, NoTelemetry, OrchestrationError,
    TaskRequest, TickWindow, WorkflowState,
};
use vtp_core::runner::{run_flow, shipped_scenarios, Deployment, FlowState, Halt, Outcome, RunConfig};
use vtp_core::identity::TokenError;
use vtp_core::settlement::EscrowStatus;
use vtp_core::verification::{AuditLedger, ReceiptKind, TelemetrySample, TelemetryStore};

fn ecommerce() -> RunConfig {
    shipped_scenarios()["ecommerce_shopper"].clone()
}

fn request(end: u64) -> TaskRequest {
    TaskRequest {
        user_id: "alice".into(),
        intent_text: "buy shoes".into(),
        required_capability: "shopping".into(),
        budget_cap: Amount::usd(5_000),
        rail_preference: None,
        validity_window: TickWindow { start: 0, end },
    }
}

#[test]
fn submit_task_ids() {
    let mut f = Facilitator::default();
    let mut audit = AuditLedger::default();
    let a = f.submit_task(request(100), &mut audit, 1).unwrap();
    let b = f.submit_task(request(100), &mut audit, 2).unwrap();
    let ids = [&a.session_id, &a.workflow_id, &a.escrow_id, &b.session_id, &b.workflow_id, &b.escrow_id];
    assert_eq!(ids.iter().collect::<BTreeSet<_>>().len(), 6);
    assert_eq!(f.state(&a.workflow_id).unwrap(), WorkflowState::Created);
    let err = f.submit_task(request(5), &mut audit, 7).unwrap_err();
    assert!(matches!(err, OrchestrationError::WindowExpired { end: 5, now: 7 }));
    assert_eq!(audit.events().iter().filter(|e| e.event_type == "task.created").count(), 2);
}

fn intake(config: RunConfig) -> (Deployment, Result<FlowState, Halt>) {
    let mut d = Deployment::new(config).unwrap();
    let fs = d.intake();
    (d, fs)
}

#[test]
fn mandates_sum_the_cart_under_the_cap() {
    let (d, fs) = intake(ecommerce());
    let fs = fs.unwrap();
    assert_eq!(fs.mandates.payment.amount, Amount::usd(4_999));
    assert_eq!(fs.mandates.payment.cart_hash, fs.mandates.cart.hash);
    assert_eq!(fs.mandates.cart.intent_hash, fs.mandates.intent.hash);
    assert!(fs.mandates.verify_chain().is_ok());
    assert_eq!(d.facilitator.state(&fs.handle.workflow_id).unwrap(), WorkflowState::Authorized);
}

#[test]
fn cart_over_budget_is_rejected() {
    let mut config = ecommerce();
    config.quote.items[1].price = Amount::usd(702);
    let (d, fs) = intake(config);
    let Err(Halt::Done(Outcome::Aborted(reason))) = fs else { panic!("expected abort") };
    assert!(reason.contains("5001"), "{reason}");
    assert_eq!(d.facilitator.workflows().next().unwrap().state, WorkflowState::Failed);
    assert!(d.escrows.records().next().is_none(), "no escrow for a rejected cart");
}

#[test]
fn tampered_cart_breaks_the_chain() {
    let (d, fs) = intake(ecommerce());
    let fs = fs.unwrap();
    let fs_wf = fs.handle.workflow_id.clone();
    let mut set = fs.mandates;
    set.cart.items[0].price = Amount::usd(1);
    assert!(set.verify_chain().is_err());
    let stored = d.mandates.get(&fs_wf).unwrap();
    assert!(stored.verify_chain().is_ok());
}

#[test]
fn user_rejection_stops_the_workflow() {
    let mut config = ecommerce();
    config.user.approve_cart = false;
    let t = run_flow(config).unwrap();
    assert!(matches!(t.outcome, Outcome::Aborted(_)));
    assert!(t.escrows.is_empty());
}

#[test]
fn delegate_requires_open_escrow_and_valid_token() {
    let (mut d, fs) = intake(ecommerce());
    let fs = fs.unwrap();
    d.deposit(&fs, false).unwrap();
    d.advance(1).unwrap();
    assert_eq!(d.escrows.status(&fs.handle.escrow_id).unwrap(), EscrowStatus::FundingPending);

    let env = d.envelope(&fs);
    let pop = fs.pop_proof(&env);
    let notaries = d.notaries.take(1);
    let tick = d.tick();
    let err = delegate(
        &env,
        &pop,
        DelegationContext {
            escrows: &d.escrows,
            authz: &mut d.authz,
            registry: &d.registry,
            notaries: &notaries,
            telemetry: &mut d.telemetry,
            audit: &mut d.audit,
            session_id: &fs.handle.session_id,
        },
        tick,
    )
    .unwrap_err();
    assert!(matches!(err, DelegateError::EscrowNotOpen { ref status, .. } if status == "FUNDING_PENDING"));

    d.wait_funded(&fs).unwrap();
    let tick = d.tick();
    let notaries = d.notaries.take(1);
    let handle = delegate(
        &env,
        &pop,
        DelegationContext {
            escrows: &d.escrows,
            authz: &mut d.authz,
            registry: &d.registry,
            notaries: &notaries,
            telemetry: &mut d.telemetry,
            audit: &mut d.audit,
            session_id: &fs.handle.session_id,
        },
        tick,
    )
    .unwrap();
    assert_eq!(handle.executor_receipt.kind, ReceiptKind::Executor);
    assert_eq!(handle.executor_receipt.workflow_id, fs.handle.workflow_id);
    assert_eq!(d.telemetry.samples(&fs.handle.workflow_id).len(), 1);
}

#[test]
fn expired_token_is_bad_token() {
    let (mut d, fs) = intake(ecommerce());
    let fs = fs.unwrap();
    d.deposit(&fs, false).unwrap();
    d.wait_funded(&fs).unwrap();
    let exp = fs.token.claims.exp;
    let env = d.envelope(&fs);
    let pop = fs.pop_proof(&env);
    let notaries = d.notaries.take(1);
    let err = delegate(
        &env,
        &pop,
        DelegationContext {
            escrows: &d.escrows,
            authz: &mut d.authz,
            registry: &d.registry,
            notaries: &notaries,
            telemetry: &mut d.telemetry,
            audit: &mut d.audit,
            session_id: &fs.handle.session_id,
        },
        exp + 1,
    )
    .unwrap_err();
    assert_eq!(err, DelegateError::BadToken(TokenError::Expired));
}

fn sample(wf: &str, cost: u64, latency_ms: u64) -> TelemetrySample {
    TelemetrySample {
        workflow_id: wf.into(),
        step_label: "step".into(),
        latency_ms,
        tokens: 10,
        cost: Amount::usd(cost),
        tick: 1,
    }
}

#[test]
fn performance_examples() {
    let mut store = TelemetryStore::default();
    let mut audit = AuditLedger::default();
    store.record(sample("wf-1", 1_000, 30));
    store.record(sample("wf-1", 2_000, 10));
    store.record(sample("wf-2", 6_000, 10));
    let under = evaluate_performance("wf-1", &store, &Amount::usd(5_000), true, &mut audit, 2).unwrap();
    assert!(under.constraint_adherence);
    assert_eq!(under.total_cost, Amount::usd(3_000));
    assert_eq!(under.latency_p50, 10);
    let over = evaluate_performance("wf-2", &store, &Amount::usd(5_000), true, &mut audit, 2).unwrap();
    assert!(!over.constraint_adherence);
    let none = evaluate_performance("wf-3", &store, &Amount::usd(5_000), true, &mut audit, 2);
    assert_eq!(none.unwrap_err(), NoTelemetry::Missing("wf-3".into()));
}

#[test]
fn routing_prefers_cheaper_equally_rated_agent() {
    let t = run_flow(ecommerce()).unwrap();
    let routed = t.entries_of("agent.routed").next().unwrap();
    assert_eq!(routed.refs["agent_id"], "shopper-1");
    let ranked = t.entries_of("agents.ranked").next().unwrap();
    assert_eq!(ranked.refs["order"], "shopper-1,shopper-2", "portfolio agent is filtered out");
}

#[test]
fn workflow_reaches_settled() {
    let mut d = Deployment::new(ecommerce()).unwrap();
    d.execute().unwrap();
    let wf = d.facilitator.workflows().next().unwrap();
    assert_eq!(wf.state, WorkflowState::Settled);
    let states: Vec<String> = d
        .audit
        .events()
        .iter()
        .zip(d.audit.payloads())
        .filter(|(e, _)| e.event_type == "workflow.state")
        .map(|(_, p)| String::from_utf8(p.clone()).unwrap())
        .collect();
    assert_eq!(states.len(), 5, "{states:?}");
}
