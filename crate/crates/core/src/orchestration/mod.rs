//! Facilitator logic: task intake, mandates, discovery, delegation,
//! scripted service agents and performance evaluation.

mod agent;
mod discovery;
mod executor;
mod facilitator;
mod mandate;
mod performance;

pub use agent::{AgentOutcome, AgentStep, Behavior, OrderReceipt, ServiceAgent};
pub use discovery::{rank_agents, retrieve_agents, route, NoAgentFound, RankedAgent};
pub use executor::{delegate, DelegateError, DelegationContext, ExecutionEnvelope, ExecutionHandle, ScopeSummary};
pub use facilitator::{
    Facilitator, OrchestrationError, TaskHandle, TaskRequest, TickWindow, WorkflowRecord, WorkflowState,
};
pub use mandate::{
    CartApproval, CartApprover, CartItem, CartMandate, ChainBreak, IntentConstraints, IntentMandate,
    MandateSet, MandateStore, PaymentMandate, Quote, UserAgent,
};
pub use performance::{evaluate_performance, NoTelemetry, PerformanceReport};
