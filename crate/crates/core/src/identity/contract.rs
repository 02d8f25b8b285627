use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{Digest, PublicKey};
use crate::settlement::Tier;
use crate::verification::{
    verify_attestation, verify_certificate, PoTEBundle, ProofKind, ReceiptKind, ValidatorKeys,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentContract {
    pub agent_id: String,
    pub required_proof_kinds: BTreeSet<ProofKind>,
    pub min_notary_witnesses: u32,
    #[serde(default)]
    pub extra_predicates: Vec<String>,
}

impl AgentContract {
    pub fn is_well_formed(&self) -> bool {
        !self.required_proof_kinds.is_empty() && self.min_notary_witnesses > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reasons", rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail(Vec<String>),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TierRequirements {
    pub proof_kinds: BTreeSet<ProofKind>,
    pub min_witnesses: u32,
}

/// Evidence floor per tier. Tier 1 is optimistic (API receipt plus token
/// hash), Tier 2 is the full glass-box set, Tier 3 adds the enclave report
/// and a second notary on every receipt.
pub fn tier_requirements(tier: Tier) -> TierRequirements {
    use ProofKind::*;
    let (kinds, min_witnesses): (&[ProofKind], u32) = match tier {
        Tier::Tier1 => (&[ApiReceipt, AJwtIntegrity], 1),
        Tier::Tier2 => (
            &[NotaryReceiptExecutor, NotaryReceiptModel, NotaryReceiptTool, AJwtIntegrity, TelemetryHash],
            1,
        ),
        Tier::Tier3 => (
            &[
                NotaryReceiptExecutor,
                NotaryReceiptModel,
                NotaryReceiptTool,
                TeeAttestation,
                AJwtIntegrity,
                TelemetryHash,
            ],
            2,
        ),
    };
    TierRequirements { proof_kinds: kinds.iter().copied().collect(), min_witnesses }
}

/// Public material the evaluator checks evidence against.
#[derive(Debug, Clone)]
pub struct EvidenceKeys {
    pub notary_keys: BTreeMap<String, PublicKey>,
    pub tee_authority: PublicKey,
    pub expected_measurement: Option<Digest>,
    pub validators: ValidatorKeys,
    pub expected_ajwt_hash: Option<Digest>,
    pub expected_telemetry_hash: Option<Digest>,
}

/// Evaluates named extra predicates. `None` means the name is unknown.
pub trait PredicateCheck {
    fn check(&self, name: &str, bundle: &PoTEBundle) -> Option<bool>;
}

impl<F: Fn(&str, &PoTEBundle) -> Option<bool>> PredicateCheck for F {
    fn check(&self, name: &str, bundle: &PoTEBundle) -> Option<bool> {
        self(name, bundle)
    }
}

pub struct NoPredicates;

impl PredicateCheck for NoPredicates {
    fn check(&self, _: &str, _: &PoTEBundle) -> Option<bool> {
        None
    }
}

fn receipt_kind(kind: ProofKind) -> Option<ReceiptKind> {
    match kind {
        ProofKind::NotaryReceiptExecutor => Some(ReceiptKind::Executor),
        ProofKind::NotaryReceiptModel => Some(ReceiptKind::Model),
        ProofKind::NotaryReceiptTool => Some(ReceiptKind::Tool),
        ProofKind::ApiReceipt => Some(ReceiptKind::Api),
        _ => None,
    }
}

/// Checks a bundle against the union of contract and tier requirements.
/// Every unmet requirement is reported.
pub fn evaluate_agent_contract(
    contract: &AgentContract,
    bundle: &PoTEBundle,
    tier: Tier,
    keys: &EvidenceKeys,
    predicates: &dyn PredicateCheck,
) -> Verdict {
    let mut reasons = Vec::new();
    let floor = tier_requirements(tier);
    let required: BTreeSet<ProofKind> =
        contract.required_proof_kinds.union(&floor.proof_kinds).copied().collect();
    let witnesses_needed = contract.min_notary_witnesses.max(floor.min_witnesses) as usize;

    if bundle.recompute_root() != bundle.merkle_root {
        reasons.push("merkle_root mismatch".to_string());
    }
    if !bundle.receipts_in_canonical_order() {
        reasons.push("receipts out of canonical order".to_string());
    }
    if bundle.quorum.subject_digest != bundle.merkle_root
        || !verify_certificate(&bundle.quorum, &keys.validators)
    {
        reasons.push("quorum certificate invalid".to_string());
    }

    let present = bundle.present_kinds();
    for kind in &required {
        if !present.contains(kind) {
            reasons.push(format!("{} missing", kind.as_str()));
            continue;
        }
        match kind {
            ProofKind::TeeAttestation => {
                let tee = bundle.tee.as_ref().expect("present");
                let ok = tee.agent_id == contract.agent_id
                    && verify_attestation(tee, &keys.tee_authority, keys.expected_measurement.as_ref());
                if !ok {
                    reasons.push("TeeAttestation invalid".to_string());
                }
            }
            ProofKind::AJwtIntegrity => {
                if keys.expected_ajwt_hash.is_some_and(|h| h != bundle.ajwt_integrity_hash) {
                    reasons.push("AJwtIntegrity mismatch".to_string());
                }
            }
            ProofKind::TelemetryHash => {
                if keys.expected_telemetry_hash.is_some_and(|h| h != bundle.telemetry_hash) {
                    reasons.push("TelemetryHash mismatch".to_string());
                }
            }
            receipt => {
                let rk = receipt_kind(*receipt).expect("remaining kinds are receipts");
                for r in bundle.receipts_of(rk) {
                    let got = r.valid_witnesses(&keys.notary_keys);
                    if got < witnesses_needed {
                        reasons.push(format!(
                            "{} has {got} valid witnesses, {witnesses_needed} required",
                            receipt.as_str()
                        ));
                    }
                }
            }
        }
    }

    for r in &bundle.receipts {
        let kind = ProofKind::for_receipt(r.kind).as_str();
        if r.workflow_id != bundle.workflow_id {
            reasons.push(format!("{kind} bound to another workflow"));
        } else if !required.contains(&ProofKind::for_receipt(r.kind))
            && r.valid_witnesses(&keys.notary_keys) == 0
        {
            reasons.push(format!("{kind} has no valid witness"));
        }
    }

    for name in &contract.extra_predicates {
        match predicates.check(name, bundle) {
            Some(true) => {}
            Some(false) => reasons.push(format!("predicate {name} failed")),
            None => reasons.push(format!("predicate {name} unknown")),
        }
    }

    if reasons.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(reasons)
    }
}
