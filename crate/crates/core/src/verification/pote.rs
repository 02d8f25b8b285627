//! Proof of Task Execution: session evidence sealed under a Merkle root,
//! certified by the validator quorum and anchored per escrow.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::audit::{AuditLedger, AuditRefs};
use super::notary::{NotaryReceipt, ReceiptKind};
use super::quorum::{quorum_validate, NoQuorum, QuorumCertificate, ValidatorSet};
use super::tee::TeeAttestation;
use crate::domain::{canonical_serialize, hash256, merkle_root, Digest, Tick};
use crate::identity::Verdict;
use crate::orchestration::WorkflowState;
use crate::settlement::{EscrowBook, EscrowError, EscrowEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProofKind {
    NotaryReceiptExecutor,
    NotaryReceiptModel,
    NotaryReceiptTool,
    TeeAttestation,
    AJwtIntegrity,
    ApiReceipt,
    TelemetryHash,
}

impl ProofKind {
    pub fn for_receipt(kind: ReceiptKind) -> ProofKind {
        match kind {
            ReceiptKind::Executor => ProofKind::NotaryReceiptExecutor,
            ReceiptKind::Model => ProofKind::NotaryReceiptModel,
            ReceiptKind::Tool => ProofKind::NotaryReceiptTool,
            ReceiptKind::Api => ProofKind::ApiReceipt,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProofKind::NotaryReceiptExecutor => "NotaryReceiptExecutor",
            ProofKind::NotaryReceiptModel => "NotaryReceiptModel",
            ProofKind::NotaryReceiptTool => "NotaryReceiptTool",
            ProofKind::TeeAttestation => "TeeAttestation",
            ProofKind::AJwtIntegrity => "AJwtIntegrity",
            ProofKind::ApiReceipt => "ApiReceipt",
            ProofKind::TelemetryHash => "TelemetryHash",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoTEBundle {
    pub workflow_id: String,
    pub escrow_id: String,
    pub receipts: Vec<NotaryReceipt>,
    pub tee: Option<TeeAttestation>,
    pub ajwt_integrity_hash: Digest,
    pub telemetry_hash: Digest,
    pub merkle_root: Digest,
    pub quorum: QuorumCertificate,
}

#[derive(Serialize)]
struct HashLeaf<'a> {
    kind: &'a str,
    hash: &'a Digest,
}

/// Leaf byte strings in their fixed order: receipts, TEE report if any,
/// A-JWT integrity record, telemetry record.
pub fn pote_leaves(
    receipts: &[NotaryReceipt],
    tee: Option<&TeeAttestation>,
    ajwt_integrity_hash: &Digest,
    telemetry_hash: &Digest,
) -> Vec<Vec<u8>> {
    let mut leaves: Vec<Vec<u8>> = receipts.iter().map(enc).collect();
    if let Some(t) = tee {
        leaves.push(enc(t));
    }
    leaves.push(enc(&HashLeaf { kind: "ajwt_integrity", hash: ajwt_integrity_hash }));
    leaves.push(enc(&HashLeaf { kind: "telemetry", hash: telemetry_hash }));
    leaves
}

fn enc<T: Serialize>(value: &T) -> Vec<u8> {
    canonical_serialize(value).expect("proof objects are canonical")
}

fn receipt_rank(kind: ReceiptKind) -> u8 {
    match kind {
        ReceiptKind::Executor => 0,
        ReceiptKind::Model => 1,
        ReceiptKind::Tool => 2,
        ReceiptKind::Api => 3,
    }
}

impl PoTEBundle {
    pub fn leaves(&self) -> Vec<Vec<u8>> {
        pote_leaves(&self.receipts, self.tee.as_ref(), &self.ajwt_integrity_hash, &self.telemetry_hash)
    }

    pub fn recompute_root(&self) -> Digest {
        merkle_root(&self.leaves()).expect("a bundle always has at least two leaves")
    }

    pub fn receipts_in_canonical_order(&self) -> bool {
        self.receipts
            .windows(2)
            .all(|w| (receipt_rank(w[0].kind), w[0].tick) <= (receipt_rank(w[1].kind), w[1].tick))
    }

    /// Proof kinds physically present in the bundle.
    pub fn present_kinds(&self) -> BTreeSet<ProofKind> {
        let mut kinds: BTreeSet<ProofKind> =
            self.receipts.iter().map(|r| ProofKind::for_receipt(r.kind)).collect();
        if self.tee.is_some() {
            kinds.insert(ProofKind::TeeAttestation);
        }
        kinds.insert(ProofKind::AJwtIntegrity);
        kinds.insert(ProofKind::TelemetryHash);
        kinds
    }

    pub fn receipts_of(&self, kind: ReceiptKind) -> impl Iterator<Item = &NotaryReceipt> {
        self.receipts.iter().filter(move |r| r.kind == kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationSession {
    pub workflow_id: String,
    pub escrow_id: String,
    pub session_id: String,
    pub output_commitment: Digest,
    pub metadata: BTreeMap<String, String>,
    pub opened_at: Tick,
    receipts: Vec<NotaryReceipt>,
    tee: Option<TeeAttestation>,
}

impl VerificationSession {
    /// Inserts keeping the fixed kind order (executor, model, tool, api).
    pub fn add_receipt(&mut self, receipt: NotaryReceipt) {
        let key = (receipt_rank(receipt.kind), receipt.tick);
        let pos = self.receipts.partition_point(|r| (receipt_rank(r.kind), r.tick) <= key);
        self.receipts.insert(pos, receipt);
    }

    pub fn set_tee(&mut self, tee: TeeAttestation) {
        self.tee = Some(tee);
    }

    pub fn receipts(&self) -> &[NotaryReceipt] {
        &self.receipts
    }

    pub fn tee(&self) -> Option<&TeeAttestation> {
        self.tee.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("workflow is not executing (state {0:?})")]
    WrongState(WorkflowState),
    #[error("a verification session is already open for {0}")]
    AlreadyOpen(String),
    #[error("no verification session for {0}")]
    UnknownSession(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PoteError {
    #[error("missing proof object {}", .0.as_str())]
    MissingProofObject(ProofKind),
    #[error(transparent)]
    NoQuorum(#[from] NoQuorum),
}

/// Seals the session: Merkle root over the fixed leaf order, then a quorum
/// round over that root.
pub fn assemble_pote(
    session: &VerificationSession,
    ajwt_integrity_hash: Digest,
    telemetry_hash: Digest,
    required: &BTreeSet<ProofKind>,
    validators: &ValidatorSet,
    byzantine_mask: &BTreeSet<usize>,
) -> Result<PoTEBundle, PoteError> {
    let mut present: BTreeSet<ProofKind> =
        session.receipts.iter().map(|r| ProofKind::for_receipt(r.kind)).collect();
    if session.tee.is_some() {
        present.insert(ProofKind::TeeAttestation);
    }
    present.insert(ProofKind::AJwtIntegrity);
    present.insert(ProofKind::TelemetryHash);
    if let Some(missing) = required.iter().find(|k| !present.contains(k)) {
        return Err(PoteError::MissingProofObject(*missing));
    }
    let leaves = pote_leaves(&session.receipts, session.tee.as_ref(), &ajwt_integrity_hash, &telemetry_hash);
    let root = merkle_root(&leaves).expect("at least two leaves");
    let quorum = quorum_validate(&root, validators, byzantine_mask)?;
    Ok(PoTEBundle {
        workflow_id: session.workflow_id.clone(),
        escrow_id: session.escrow_id.clone(),
        receipts: session.receipts.clone(),
        tee: session.tee.clone(),
        ajwt_integrity_hash,
        telemetry_hash,
        merkle_root: root,
        quorum,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub workflow_id: String,
    pub escrow_id: String,
    pub merkle_root: Digest,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnchorError {
    #[error("agent contract failed: {0:?}")]
    ContractFailed(Vec<String>),
    #[error("escrow {escrow_id} already anchored with a different root")]
    Conflict { escrow_id: String, existing: Digest, attempted: Digest },
    #[error(transparent)]
    Escrow(#[from] EscrowError),
}

/// Append-only log of passing PoTE roots, one per escrow.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AnchorLog {
    records: Vec<AnchorRecord>,
}

impl AnchorLog {
    pub fn anchored_root(&self, escrow_id: &str) -> Option<&AnchorRecord> {
        self.records.iter().find(|r| r.escrow_id == escrow_id)
    }

    pub fn records(&self) -> &[AnchorRecord] {
        &self.records
    }

    /// Anchors a bundle whose contract verdict passed and moves the escrow
    /// to SETTLEMENT_PENDING. Re-anchoring the same root is a no-op.
    pub fn anchor_pote(
        &mut self,
        bundle: &PoTEBundle,
        verdict: &Verdict,
        escrows: &mut EscrowBook,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<AnchorRecord, AnchorError> {
        if let Verdict::Fail(reasons) = verdict {
            return Err(AnchorError::ContractFailed(reasons.clone()));
        }
        if let Some(existing) = self.anchored_root(&bundle.escrow_id) {
            if existing.merkle_root == bundle.merkle_root {
                return Ok(existing.clone());
            }
            return Err(AnchorError::Conflict {
                escrow_id: bundle.escrow_id.clone(),
                existing: existing.merkle_root,
                attempted: bundle.merkle_root,
            });
        }
        escrows.transition(&bundle.escrow_id, EscrowEvent::PoteAnchored(bundle.merkle_root), tick)?;
        let record = AnchorRecord {
            workflow_id: bundle.workflow_id.clone(),
            escrow_id: bundle.escrow_id.clone(),
            merkle_root: bundle.merkle_root,
            tick,
        };
        self.records.push(record.clone());
        audit.append(
            "pote.anchored",
            AuditRefs::escrow(&bundle.workflow_id, &bundle.escrow_id),
            &record,
            tick,
        );
        Ok(record)
    }

    pub fn export_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for r in &self.records {
            out.extend(canonical_serialize(r).expect("anchor record is canonical"));
            out.push(b'\n');
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct VerificationService {
    sessions: BTreeMap<String, VerificationSession>,
    pub anchors: AnchorLog,
}

impl VerificationService {
    #[allow(clippy::too_many_arguments)]
    pub fn open_verification_session(
        &mut self,
        workflow_id: &str,
        escrow_id: &str,
        session_id: &str,
        output: &[u8],
        metadata: BTreeMap<String, String>,
        state: WorkflowState,
        tick: Tick,
    ) -> Result<&mut VerificationSession, SessionError> {
        if state != WorkflowState::Executing {
            return Err(SessionError::WrongState(state));
        }
        if self.sessions.contains_key(workflow_id) {
            return Err(SessionError::AlreadyOpen(workflow_id.to_string()));
        }
        let session = VerificationSession {
            workflow_id: workflow_id.to_string(),
            escrow_id: escrow_id.to_string(),
            session_id: session_id.to_string(),
            output_commitment: hash256(output),
            metadata,
            opened_at: tick,
            receipts: Vec::new(),
            tee: None,
        };
        Ok(self.sessions.entry(workflow_id.to_string()).or_insert(session))
    }

    pub fn session(&self, workflow_id: &str) -> Result<&VerificationSession, SessionError> {
        self.sessions.get(workflow_id).ok_or_else(|| SessionError::UnknownSession(workflow_id.into()))
    }

    pub fn session_mut(&mut self, workflow_id: &str) -> Result<&mut VerificationSession, SessionError> {
        self.sessions
            .get_mut(workflow_id)
            .ok_or_else(|| SessionError::UnknownSession(workflow_id.into()))
    }
}
