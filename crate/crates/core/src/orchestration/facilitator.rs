use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::mandate::{
    CartApprover, CartMandate, IntentConstraints, IntentMandate, MandateSet, MandateStore,
    PaymentMandate, Quote,
};
use crate::domain::{Amount, AmountError, IdGenerator, RailId, Tick};
use crate::identity::AgentRegistry;
use crate::verification::{AuditLedger, AuditRefs};

/// Half-open tick range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickWindow {
    pub start: Tick,
    pub end: Tick,
}

impl TickWindow {
    pub fn contains(&self, tick: Tick) -> bool {
        self.start <= tick && tick < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRequest {
    pub user_id: String,
    pub intent_text: String,
    pub required_capability: String,
    pub budget_cap: Amount,
    #[serde(default)]
    pub rail_preference: Option<RailId>,
    pub validity_window: TickWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum WorkflowState {
    Created,
    Mandated,
    Authorized,
    Executing,
    Verifying,
    Settled,
    Refunded,
    Expired,
    Failed,
}

impl WorkflowState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            WorkflowState::Settled | WorkflowState::Refunded | WorkflowState::Expired | WorkflowState::Failed
        )
    }

    fn may_advance_to(self, to: WorkflowState) -> bool {
        use WorkflowState::*;
        if self.is_terminal() {
            return false;
        }
        matches!(
            (self, to),
            (Created, Mandated)
                | (Mandated, Authorized)
                | (Authorized, Executing)
                | (Executing, Verifying)
                | (Verifying, Settled)
                | (_, Refunded)
                | (_, Expired)
                | (_, Failed)
        )
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskHandle {
    pub session_id: String,
    pub workflow_id: String,
    pub escrow_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkflowRecord {
    pub session_id: String,
    pub workflow_id: String,
    pub escrow_id: String,
    pub request: TaskRequest,
    pub state: WorkflowState,
    pub created_at: Tick,
    pub assigned_agent: Option<String>,
    pub task_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrchestrationError {
    #[error("validity window ended at tick {end}, now {now}")]
    WindowExpired { end: Tick, now: Tick },
    #[error("invalid task request: {0}")]
    InvalidRequest(&'static str),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown workflow {0}")]
    UnknownWorkflow(String),
    #[error("cart total {total} exceeds budget cap {cap}")]
    BudgetExceeded { total: u64, cap: u64 },
    #[error("merchant agent {0} is not registered")]
    UnknownMerchant(String),
    #[error("user rejected the cart")]
    ApprovalRejected,
    #[error("cart is empty")]
    EmptyCart,
    #[error(transparent)]
    Amount(#[from] AmountError),
    #[error("workflow cannot move from {from} to {to}")]
    IllegalWorkflowTransition { from: WorkflowState, to: WorkflowState },
}

#[derive(Serialize)]
struct TaskCreated<'a> {
    session_id: &'a str,
    user_id: &'a str,
    required_capability: &'a str,
    budget_cap: &'a Amount,
    validity_window: TickWindow,
}

#[derive(Debug, Default)]
pub struct Facilitator {
    ids: IdGenerator,
    workflows: BTreeMap<String, WorkflowRecord>,
    sessions: BTreeMap<String, String>,
}

impl Facilitator {
    pub fn submit_task(
        &mut self,
        req: TaskRequest,
        audit: &mut AuditLedger,
        now: Tick,
    ) -> Result<TaskHandle, OrchestrationError> {
        if req.budget_cap.minor_units == 0 {
            return Err(OrchestrationError::InvalidRequest("budget_cap must be positive"));
        }
        if req.validity_window.start >= req.validity_window.end {
            return Err(OrchestrationError::InvalidRequest("validity window is empty"));
        }
        if req.validity_window.end <= now {
            return Err(OrchestrationError::WindowExpired { end: req.validity_window.end, now });
        }
        let handle = TaskHandle {
            session_id: self.ids.next("sess"),
            workflow_id: self.ids.next("wf"),
            escrow_id: self.ids.next("esc"),
        };
        audit.append(
            "task.created",
            AuditRefs::escrow(&handle.workflow_id, &handle.escrow_id),
            &TaskCreated {
                session_id: &handle.session_id,
                user_id: &req.user_id,
                required_capability: &req.required_capability,
                budget_cap: &req.budget_cap,
                validity_window: req.validity_window,
            },
            now,
        );
        self.sessions.insert(handle.session_id.clone(), handle.workflow_id.clone());
        self.workflows.insert(
            handle.workflow_id.clone(),
            WorkflowRecord {
                session_id: handle.session_id.clone(),
                workflow_id: handle.workflow_id.clone(),
                escrow_id: handle.escrow_id.clone(),
                request: req,
                state: WorkflowState::Created,
                created_at: now,
                assigned_agent: None,
                task_id: None,
            },
        );
        Ok(handle)
    }

    pub fn workflow(&self, workflow_id: &str) -> Result<&WorkflowRecord, OrchestrationError> {
        self.workflows
            .get(workflow_id)
            .ok_or_else(|| OrchestrationError::UnknownWorkflow(workflow_id.to_string()))
    }

    pub fn workflows(&self) -> impl Iterator<Item = &WorkflowRecord> {
        self.workflows.values()
    }

    pub fn workflow_of_session(&self, session_id: &str) -> Result<&WorkflowRecord, OrchestrationError> {
        let wf = self
            .sessions
            .get(session_id)
            .ok_or_else(|| OrchestrationError::UnknownSession(session_id.to_string()))?;
        self.workflow(wf)
    }

    pub fn state(&self, workflow_id: &str) -> Result<WorkflowState, OrchestrationError> {
        Ok(self.workflow(workflow_id)?.state)
    }

    pub fn advance(
        &mut self,
        workflow_id: &str,
        to: WorkflowState,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<(), OrchestrationError> {
        let wf = self
            .workflows
            .get_mut(workflow_id)
            .ok_or_else(|| OrchestrationError::UnknownWorkflow(workflow_id.to_string()))?;
        if !wf.state.may_advance_to(to) {
            return Err(OrchestrationError::IllegalWorkflowTransition { from: wf.state, to });
        }
        wf.state = to;
        audit.append(
            "workflow.state",
            AuditRefs::escrow(&wf.workflow_id, &wf.escrow_id),
            &BTreeMap::from([("state", to)]),
            tick,
        );
        Ok(())
    }

    pub fn assign(&mut self, workflow_id: &str, agent_id: &str) -> Result<String, OrchestrationError> {
        let task_id = self.ids.next("task");
        let wf = self
            .workflows
            .get_mut(workflow_id)
            .ok_or_else(|| OrchestrationError::UnknownWorkflow(workflow_id.to_string()))?;
        wf.assigned_agent = Some(agent_id.to_string());
        wf.task_id = Some(task_id.clone());
        Ok(task_id)
    }

    /// Builds the Intent, Cart and Payment mandates for a session, obtains
    /// the user's signed cart approval, and persists the chained set.
    #[allow(clippy::too_many_arguments)]
    pub fn generate_mandates(
        &mut self,
        session_id: &str,
        quote: &Quote,
        rail_id: &RailId,
        payer_wallet_ref: &str,
        registry: &AgentRegistry,
        approver: &dyn CartApprover,
        store: &mut MandateStore,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<MandateSet, OrchestrationError> {
        let wf = self.workflow_of_session(session_id)?.clone();
        let req = &wf.request;
        if registry.manifest(&quote.merchant_agent_id).is_none() {
            return Err(OrchestrationError::UnknownMerchant(quote.merchant_agent_id.clone()));
        }
        if quote.items.is_empty() {
            return Err(OrchestrationError::EmptyCart);
        }
        let total = Amount::checked_sum(&req.budget_cap.currency_code, quote.items.iter().map(|i| &i.price))?;
        if total.minor_units > req.budget_cap.minor_units {
            return Err(OrchestrationError::BudgetExceeded {
                total: total.minor_units,
                cap: req.budget_cap.minor_units,
            });
        }
        let intent = IntentMandate::new(
            &req.user_id,
            &req.intent_text,
            IntentConstraints {
                required_capability: req.required_capability.clone(),
                budget_cap: req.budget_cap.clone(),
                rail_preference: req.rail_preference.clone(),
                validity_window: req.validity_window,
            },
        );
        let cart = CartMandate::new(quote.items.clone(), &quote.merchant_agent_id, intent.hash);
        let approval = approver.approve(&cart, tick);
        audit.append("mandate.cart_approval", AuditRefs::workflow(&wf.workflow_id), &approval, tick);
        if !approval.approved || !approval.verify() {
            self.advance(&wf.workflow_id, WorkflowState::Failed, audit, tick)?;
            return Err(OrchestrationError::ApprovalRejected);
        }
        let payment = PaymentMandate::new(
            total,
            rail_id.clone(),
            payer_wallet_ref,
            &quote.merchant_agent_id,
            &wf.escrow_id,
            cart.hash,
        );
        let set = MandateSet { intent, cart, payment, approval };
        for (kind, hash) in [("intent", set.intent.hash), ("cart", set.cart.hash), ("payment", set.payment.hash)] {
            audit.append(
                "mandate.anchored",
                AuditRefs::escrow(&wf.workflow_id, &wf.escrow_id),
                &BTreeMap::from([("kind", kind.to_string()), ("hash", hash.to_hex())]),
                tick,
            );
        }
        store.persist(&wf.workflow_id, set.clone());
        self.advance(&wf.workflow_id, WorkflowState::Mandated, audit, tick)?;
        Ok(set)
    }
}
