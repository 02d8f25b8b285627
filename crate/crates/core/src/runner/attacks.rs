//! Scripted attacks against a live deployment. Each one reports whether it
//! was blocked and which mechanism stopped it.

use std::collections::BTreeMap;

use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, ECOMMERCE_SHOPPER};
use super::deployment::{Deployment, Halt, RunError};
use super::transcript::Outcome;
use crate::domain::{keygen, sign, Digest, RailId};
use crate::settlement::{
    address_of, escrow_wallet_ref, EscrowStatus, RailTxRef, SignedTx, TxBody, TxOutput,
};

pub const ATTACKS: [&str; 4] = ["phantom_deposit", "unverified_payout", "key_exfiltration", "cross_rail_replay"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackReport {
    pub scenario: String,
    pub blocked: bool,
    pub mechanism: String,
    pub evidence: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AttackError {
    #[error("unknown attack scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("attack setup stopped early: {0:?}")]
    Setup(Outcome),
}

impl From<Halt> for AttackError {
    fn from(h: Halt) -> Self {
        match h {
            Halt::Done(o) => AttackError::Setup(o),
            Halt::Err(e) => AttackError::Run(e),
        }
    }
}

fn base_config(seed: u64) -> RunConfig {
    let mut config = RunConfig::from_json(ECOMMERCE_SHOPPER.as_bytes()).expect("shipped scenario is valid");
    config.seed = seed;
    config.task.rail_preference = Some(RailId::new("sim:alpha").expect("static rail id"));
    config
}

pub fn run_attack(name: &str, seed: u64) -> Result<AttackReport, AttackError> {
    match name {
        "phantom_deposit" => phantom_deposit(seed),
        "unverified_payout" => unverified_payout(seed),
        "key_exfiltration" => key_exfiltration(seed),
        "cross_rail_replay" => cross_rail_replay(seed),
        other => Err(AttackError::UnknownScenario(other.to_string())),
    }
}

fn report(scenario: &str, blocked: bool, mechanism: &str, evidence: BTreeMap<String, String>) -> AttackReport {
    AttackReport { scenario: scenario.into(), blocked, mechanism: mechanism.into(), evidence }
}

/// The payer's deposit reverts on chain; the attacker then claims it (and a
/// made-up tx id) as proof of funding.
fn phantom_deposit(seed: u64) -> Result<AttackReport, AttackError> {
    let mut d = Deployment::new(base_config(seed))?;
    let fs = d.intake()?;
    let reverted = d.deposit(&fs, true)?;
    d.advance(4)?;
    let id = fs.handle.escrow_id.clone();
    let forged = Digest([0xab; 32]);
    let mut claims = Vec::new();
    for claim in [reverted, forged] {
        let tick = d.tick();
        let obs = d
            .adapter
            .observe_deposit(&mut d.escrows, &mut d.audit, &id, Some(claim), tick)
            .map_err(|e| RunError::Internal(e.to_string()))?;
        claims.push(obs.claim_matches == Some(false));
    }
    let outcome = d.conclude(&fs)?;
    d.set_outcome(outcome);
    let rec = d.escrows.get(&id).map_err(|e| RunError::Internal(e.to_string()))?;
    let ever_open = rec.history.iter().any(|(_, s)| *s == EscrowStatus::Open);
    let status = rec.status;
    let blocked = !ever_open && status == EscrowStatus::Expired && claims.iter().all(|c| *c);
    Ok(report(
        "phantom_deposit",
        blocked,
        "deposit_observation",
        BTreeMap::from([
            ("escrow_id".into(), id),
            ("final_status".into(), status.to_string()),
            ("ever_open".into(), ever_open.to_string()),
            ("reverted_tx".into(), reverted.to_hex()),
            ("claims_rejected".into(), claims.iter().filter(|c| **c).count().to_string()),
        ]),
    ))
}

/// A funded escrow is asked to pay out before any PoTE exists.
fn unverified_payout(seed: u64) -> Result<AttackReport, AttackError> {
    let mut d = Deployment::new(base_config(seed))?;
    let fs = d.intake()?;
    d.deposit(&fs, false)?;
    let status = d.wait_funded(&fs)?;
    let id = fs.handle.escrow_id.clone();
    let tick = d.tick();
    let err = d
        .adapter
        .settle(&mut d.escrows, &d.verification.anchors, &mut d.audit, &id, tick)
        .expect_err("payout without an anchor must fail");
    let outcome = d.conclude(&fs)?;
    d.set_outcome(outcome.clone());
    let escrow_addr = fs.escrow_address.clone();
    let payee_paid = d
        .adapter
        .chain(&d.rail)
        .map_err(|e| RunError::Internal(e.to_string()))?
        .transactions()
        .any(|t| t.tx.body.from == escrow_addr && t.tx.body.outputs.iter().any(|o| o.to == fs.payee_address));
    let blocked = matches!(err, crate::settlement::SettleError::PoteMissing(_)) && !payee_paid;
    Ok(report(
        "unverified_payout",
        blocked,
        "pote_gate",
        BTreeMap::from([
            ("escrow_id".into(), id),
            ("status_at_attempt".into(), status.to_string()),
            ("error".into(), err.to_string()),
            ("outcome".into(), format!("{outcome:?}")),
            ("payee_paid".into(), payee_paid.to_string()),
        ]),
    ))
}

/// The attacker tries to move escrow funds with a key it controls, then
/// looks for any key material in everything the control plane holds.
fn key_exfiltration(seed: u64) -> Result<AttackReport, AttackError> {
    let mut d = Deployment::new(base_config(seed))?;
    let fs = d.intake()?;
    d.deposit(&fs, false)?;
    d.wait_funded(&fs)?;
    let chain = d.adapter.chain(&d.rail).map_err(|e| RunError::Internal(e.to_string()))?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0xfeed);
    let attacker = keygen(&mut rng);
    let body = TxBody {
        chain_id: chain.config().chain_id,
        from: fs.escrow_address.clone(),
        sender_pk: attacker.public(),
        outputs: vec![TxOutput { to: address_of(&attacker.public()), amount: fs.mandates.payment.amount.minor_units / 2 }],
        fee: chain.config().flat_fee.minor_units,
        nonce: chain.expected_nonce(&fs.escrow_address),
        revert: false,
    };
    let signature = sign(&attacker, &body.signing_bytes());
    let rail = d.rail.clone();
    let forged = d.adapter.submit(&rail, SignedTx { body, signature }).map_err(|e| RunError::Internal(e.to_string()))?;
    d.advance(1)?;
    let rejection = d.adapter.rejection(&rail, &forged);

    if d.execute_and_verify(&fs)? {
        d.settle(&fs)?;
    }
    let outcome = d.conclude(&fs)?;
    d.set_outcome(outcome.clone());

    let snapshot = d.control_plane_snapshot();
    let keys = d.known_secret_keys();
    let leaks = keys.iter().filter(|k| contains_key_material(&snapshot, k.expose_bytes())).count();
    let forged_rejected = matches!(rejection, Some(crate::settlement::Rejection::SenderKeyMismatch) | Some(crate::settlement::Rejection::BadSignature));
    let blocked = forged_rejected && leaks == 0 && d.adapter.wallets().contains(&escrow_wallet_ref(&fs.handle.escrow_id));
    Ok(report(
        "key_exfiltration",
        blocked,
        "key_isolation",
        BTreeMap::from([
            ("forged_tx".into(), forged.to_hex()),
            ("rejection".into(), format!("{rejection:?}")),
            ("keys_scanned".into(), keys.len().to_string()),
            ("snapshot_bytes".into(), snapshot.len().to_string()),
            ("leaks".into(), leaks.to_string()),
            ("outcome".into(), format!("{outcome:?}")),
        ]),
    ))
}

/// Raw bytes, lowercase/uppercase hex, or any base64 form of the key.
pub fn contains_key_material(haystack: &[u8], key: &[u8; 32]) -> bool {
    let hex_lower = hex::encode(key);
    let hex_upper = hex_lower.to_uppercase();
    let engines = [
        base64::engine::general_purpose::STANDARD.encode(key),
        base64::engine::general_purpose::STANDARD_NO_PAD.encode(key),
        base64::engine::general_purpose::URL_SAFE.encode(key),
        base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(key),
    ];
    let needles: Vec<&[u8]> = std::iter::once(&key[..])
        .chain([hex_lower.as_bytes(), hex_upper.as_bytes()])
        .chain(engines.iter().map(|s| s.as_bytes()))
        .collect();
    needles.iter().any(|n| haystack.windows(n.len()).any(|w| w == *n))
}

/// A valid deposit on one rail is replayed on another, and its tx id is
/// offered as a settlement reference under the other rail.
fn cross_rail_replay(seed: u64) -> Result<AttackReport, AttackError> {
    let mut d = Deployment::new(base_config(seed))?;
    let fs = d.intake()?;
    let deposit = d.deposit(&fs, false)?;
    d.wait_funded(&fs)?;
    let source = d.rail.clone();
    let target = d
        .adapter
        .rails()
        .find(|r| **r != source)
        .cloned()
        .ok_or_else(|| RunError::Internal("needs two rails".into()))?;
    let original = d
        .adapter
        .chain(&source)
        .ok()
        .and_then(|c| c.included(&deposit))
        .map(|inc| inc.tx.clone())
        .ok_or_else(|| RunError::Internal("deposit not included".into()))?;
    let replayed = d.adapter.submit(&target, original).map_err(|e| RunError::Internal(e.to_string()))?;
    d.advance(1)?;
    let rejection = d.adapter.rejection(&target, &replayed);
    let mismatch = d
        .escrows
        .record_settlement_tx(&fs.handle.escrow_id, RailTxRef { rail_id: target.clone(), tx_id: deposit })
        .err();

    let outcome = d.conclude_after_execution(&fs)?;
    let blocked = matches!(rejection, Some(crate::settlement::Rejection::ChainIdMismatch { .. }))
        && matches!(mismatch, Some(crate::settlement::EscrowError::RailMismatch { .. }));
    Ok(report(
        "cross_rail_replay",
        blocked,
        "chain_id_scoping",
        BTreeMap::from([
            ("source_rail".into(), source.to_string()),
            ("target_rail".into(), target.to_string()),
            ("replayed_tx".into(), replayed.to_hex()),
            ("rejection".into(), format!("{rejection:?}")),
            ("ref_error".into(), mismatch.map(|e| e.to_string()).unwrap_or_default()),
            ("outcome".into(), format!("{outcome:?}")),
        ]),
    ))
}

impl Deployment {
    fn conclude_after_execution(&mut self, fs: &super::deployment::FlowState) -> Result<Outcome, AttackError> {
        if self.execute_and_verify(fs)? {
            self.settle(fs)?;
        }
        let outcome = self.conclude(fs)?;
        self.set_outcome(outcome.clone());
        Ok(outcome)
    }
}
