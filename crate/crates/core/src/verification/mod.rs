//! Evidence, validator quorum, PoTE assembly and anchoring, the audit
//! ledger and telemetry persistence.

mod audit;
mod notary;
mod pote;
mod quorum;
mod tee;
mod telemetry;

pub use audit::{verify_audit_chain, verify_audit_jsonl, AuditEvent, AuditLedger, AuditRefs};
pub use notary::{
    notarize_exchange, Notary, NotaryError, NotaryPool, NotaryReceipt, ReceiptBody, ReceiptKind,
    Witness,
};
pub use pote::{
    assemble_pote, pote_leaves, AnchorError, AnchorLog, AnchorRecord, PoTEBundle, PoteError,
    ProofKind, SessionError, VerificationService, VerificationSession,
};
pub use quorum::{
    attest_proof_object, quorum_validate, verify_certificate, NoQuorum, QuorumCertificate,
    QuorumError, Validator, ValidatorKeys, ValidatorSet, Vote,
};
pub use tee::{attest_tee, verify_attestation, AttestationAuthority, TeeAttestation, TeeError};
pub use telemetry::{TelemetrySample, TelemetryStore};
