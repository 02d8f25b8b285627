//! End-to-end harness: configuration, the deterministic scheduler that drives
//! every plane, run transcripts and scripted attacks.

mod attacks;
mod config;
mod deployment;
mod transcript;

pub use attacks::{contains_key_material, run_attack, AttackError, AttackReport, ATTACKS};
pub use config::{
    randomized_config, shipped_scenarios, AgentSpec, ConfigInvalid, ContractSpec, FaultSpec, QuoteSpec, RunConfig,
    TierOverrides, UserSpec, ValidatorSpec, ECOMMERCE_SHOPPER, PORTFOLIO_MANAGER, PREDICATES,
};
pub use deployment::{
    agent_code, agent_wallet_ref, run_deployment, run_flow, soundness_violations, user_wallet_ref, Deployment,
    FlowState, Halt, RunError, SignalError, INJECTED_PROMPT,
};
pub use transcript::{Outcome, RunTranscript, TranscriptEntry};
