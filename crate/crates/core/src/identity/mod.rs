//! Agent registration and naming, manifest anchoring, A-JWT issuance and
//! verification, and Agent Contract evaluation.

mod ajwt;
mod contract;
mod registry;

pub use ajwt::{
    AJwt, AJwtClaims, AJwtHeader, AuthorizationService, IssueError, IssueRequest,
    PaymentMandateLookup, PopProof, Scope, TokenDecodeError, TokenError, UserApproval,
    DEFAULT_TTL_TICKS,
};
pub use contract::{
    evaluate_agent_contract, tier_requirements, AgentContract, EvidenceKeys, NoPredicates,
    PredicateCheck, TierRequirements, Verdict,
};
pub use registry::{
    compute_agent_checksum, AgentManifest, AgentRegistry, OnChainAnchor, RegistryError,
    SuccessRate,
};
