//! PoTE-gated escrow state machine.
//!
//! ```text
//! CREATED --DepositObserved--> FUNDING_PENDING --FinalityReached--> OPEN
//! OPEN --PoTEAnchored--> SETTLEMENT_PENDING --SettlementConfirmed--> SETTLED
//! OPEN --VerificationFailed|Timeout--> REFUND_PENDING --RefundConfirmed--> REFUNDED
//! SETTLEMENT_PENDING --ChallengeRaised (Tier 3)--> REFUND_PENDING
//! SETTLEMENT_PENDING --ChallengeWindowElapsed (Tier 3, once)--> SETTLEMENT_PENDING
//! CREATED|FUNDING_PENDING --Timeout--> EXPIRED
//! ```
//!
//! A Tier 3 escrow accepts `SettlementConfirmed` only after its challenge
//! window has elapsed. Every other pair is an illegal transition.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::chain::Address;
use super::tier::Tier;
use crate::domain::{Amount, Digest, RailId, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EscrowStatus {
    Created,
    FundingPending,
    Open,
    SettlementPending,
    Settled,
    RefundPending,
    Refunded,
    Expired,
}

impl EscrowStatus {
    pub const ALL: [EscrowStatus; 8] = [
        EscrowStatus::Created,
        EscrowStatus::FundingPending,
        EscrowStatus::Open,
        EscrowStatus::SettlementPending,
        EscrowStatus::Settled,
        EscrowStatus::RefundPending,
        EscrowStatus::Refunded,
        EscrowStatus::Expired,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, EscrowStatus::Settled | EscrowStatus::Refunded | EscrowStatus::Expired)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EscrowStatus::Created => "CREATED",
            EscrowStatus::FundingPending => "FUNDING_PENDING",
            EscrowStatus::Open => "OPEN",
            EscrowStatus::SettlementPending => "SETTLEMENT_PENDING",
            EscrowStatus::Settled => "SETTLED",
            EscrowStatus::RefundPending => "REFUND_PENDING",
            EscrowStatus::Refunded => "REFUNDED",
            EscrowStatus::Expired => "EXPIRED",
        }
    }
}

impl fmt::Display for EscrowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", content = "root")]
pub enum EscrowEvent {
    DepositObserved,
    FinalityReached,
    #[serde(rename = "PoTEAnchored")]
    PoteAnchored(Digest),
    VerificationFailed,
    Timeout,
    ChallengeRaised,
    ChallengeWindowElapsed,
    SettlementConfirmed,
    RefundConfirmed,
}

impl EscrowEvent {
    pub fn name(&self) -> &'static str {
        match self {
            EscrowEvent::DepositObserved => "DepositObserved",
            EscrowEvent::FinalityReached => "FinalityReached",
            EscrowEvent::PoteAnchored(_) => "PoTEAnchored",
            EscrowEvent::VerificationFailed => "VerificationFailed",
            EscrowEvent::Timeout => "Timeout",
            EscrowEvent::ChallengeRaised => "ChallengeRaised",
            EscrowEvent::ChallengeWindowElapsed => "ChallengeWindowElapsed",
            EscrowEvent::SettlementConfirmed => "SettlementConfirmed",
            EscrowEvent::RefundConfirmed => "RefundConfirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EscrowError {
    #[error("unknown escrow {0}")]
    UnknownEscrow(String),
    #[error("duplicate escrow {0}")]
    DuplicateEscrow(String),
    #[error("illegal transition: {event} in state {from}")]
    IllegalTransition { from: EscrowStatus, event: &'static str },
    #[error("transaction on {got} cannot be recorded against escrow bound to {expected}")]
    RailMismatch { expected: RailId, got: RailId },
}

/// A transaction id qualified by the rail it lives on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailTxRef {
    pub rail_id: RailId,
    pub tx_id: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowRecord {
    pub escrow_id: String,
    pub workflow_id: String,
    pub rail_id: RailId,
    pub amount: Amount,
    pub payer_ref: String,
    pub payer_address: Address,
    pub payee_agent_id: String,
    pub payee_address: Address,
    pub escrow_address: Address,
    pub deposit_tx_id: Option<Digest>,
    pub status: EscrowStatus,
    pub pote_root: Option<Digest>,
    pub settlement_tx_ids: Vec<RailTxRef>,
    pub refund_tx_ids: Vec<RailTxRef>,
    pub timeout_tick: Tick,
    pub tier: Tier,
    pub challenge_window_elapsed: bool,
    /// Every status the record has held, with the tick it was entered.
    pub history: Vec<(Tick, EscrowStatus)>,
}

/// Pure transition function over the record's status, tier and challenge flag.
pub fn next_status(
    status: EscrowStatus,
    tier: Tier,
    challenge_window_elapsed: bool,
    event: &EscrowEvent,
) -> Result<EscrowStatus, EscrowError> {
    use EscrowEvent as E;
    use EscrowStatus as S;
    let tier3 = tier == Tier::Tier3;
    let next = match (status, event) {
        (S::Created, E::DepositObserved) => Some(S::FundingPending),
        (S::FundingPending, E::FinalityReached) => Some(S::Open),
        (S::Open, E::PoteAnchored(_)) => Some(S::SettlementPending),
        (S::Open, E::VerificationFailed | E::Timeout) => Some(S::RefundPending),
        (S::SettlementPending, E::ChallengeRaised) if tier3 && !challenge_window_elapsed => {
            Some(S::RefundPending)
        }
        (S::SettlementPending, E::ChallengeWindowElapsed) if tier3 && !challenge_window_elapsed => {
            Some(S::SettlementPending)
        }
        (S::SettlementPending, E::SettlementConfirmed) if !tier3 || challenge_window_elapsed => {
            Some(S::Settled)
        }
        (S::RefundPending, E::RefundConfirmed) => Some(S::Refunded),
        (S::Created | S::FundingPending, E::Timeout) => Some(S::Expired),
        _ => None,
    };
    next.ok_or(EscrowError::IllegalTransition { from: status, event: event.name() })
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct EscrowBook {
    records: BTreeMap<String, EscrowRecord>,
}

impl EscrowBook {
    pub fn insert(&mut self, record: EscrowRecord) -> Result<(), EscrowError> {
        if self.records.contains_key(&record.escrow_id) {
            return Err(EscrowError::DuplicateEscrow(record.escrow_id));
        }
        self.records.insert(record.escrow_id.clone(), record);
        Ok(())
    }

    pub fn contains(&self, escrow_id: &str) -> bool {
        self.records.contains_key(escrow_id)
    }

    pub fn get(&self, escrow_id: &str) -> Result<&EscrowRecord, EscrowError> {
        self.records.get(escrow_id).ok_or_else(|| EscrowError::UnknownEscrow(escrow_id.into()))
    }

    fn get_mut(&mut self, escrow_id: &str) -> Result<&mut EscrowRecord, EscrowError> {
        self.records.get_mut(escrow_id).ok_or_else(|| EscrowError::UnknownEscrow(escrow_id.into()))
    }

    pub fn records(&self) -> impl Iterator<Item = &EscrowRecord> {
        self.records.values()
    }

    pub fn status(&self, escrow_id: &str) -> Result<EscrowStatus, EscrowError> {
        self.get(escrow_id).map(|r| r.status)
    }

    pub fn transition(
        &mut self,
        escrow_id: &str,
        event: EscrowEvent,
        tick: Tick,
    ) -> Result<EscrowStatus, EscrowError> {
        let rec = self.get_mut(escrow_id)?;
        let next = next_status(rec.status, rec.tier, rec.challenge_window_elapsed, &event)?;
        match event {
            EscrowEvent::PoteAnchored(root) => rec.pote_root = Some(root),
            EscrowEvent::ChallengeWindowElapsed => rec.challenge_window_elapsed = true,
            _ => {}
        }
        if next != rec.status {
            rec.status = next;
            rec.history.push((tick, next));
        }
        Ok(next)
    }

    pub fn set_deposit_tx(&mut self, escrow_id: &str, tx_id: Digest) -> Result<(), EscrowError> {
        self.get_mut(escrow_id)?.deposit_tx_id = Some(tx_id);
        Ok(())
    }

    /// Settlement ids are scoped to the escrow's own rail.
    pub fn record_settlement_tx(
        &mut self,
        escrow_id: &str,
        tx: RailTxRef,
    ) -> Result<(), EscrowError> {
        let rec = self.get_mut(escrow_id)?;
        if tx.rail_id != rec.rail_id {
            return Err(EscrowError::RailMismatch { expected: rec.rail_id.clone(), got: tx.rail_id });
        }
        rec.settlement_tx_ids.push(tx);
        Ok(())
    }

    pub fn record_refund_tx(&mut self, escrow_id: &str, tx: RailTxRef) -> Result<(), EscrowError> {
        let rec = self.get_mut(escrow_id)?;
        if tx.rail_id != rec.rail_id {
            return Err(EscrowError::RailMismatch { expected: rec.rail_id.clone(), got: tx.rail_id });
        }
        rec.refund_tx_ids.push(tx);
        Ok(())
    }
}
