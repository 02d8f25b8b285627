//! Rail adapter: the single settlement interface over every configured rail.
//!
//! The adapter owns the chains and the custody wallets. It never decides on
//! its own to pay out: `settle` and `settle_batch` refuse to move escrowed
//! funds unless the anchor log holds a root for that escrow and the escrow
//! machine sits in SETTLEMENT_PENDING with the same root.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::chain::{Address, RailConfig, Rejection, SignedTx, SimChain, TxOutput, TxStatus};
use super::escrow::{EscrowBook, EscrowError, EscrowEvent, EscrowRecord, EscrowStatus, RailTxRef};
use super::explorer::{ExplorerIndex, ExplorerRecord};
use super::tier::{classify_tier, Tier};
use super::wallet::{WalletError, WalletStore};
use crate::domain::{Amount, Digest, RailId, Tick};
use crate::verification::{AnchorLog, AuditLedger, AuditRefs};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SettleError {
    #[error("unknown rail {0}")]
    UnknownRail(RailId),
    #[error("rail {0} already configured")]
    DuplicateRail(RailId),
    #[error("chain id {0} already used by another rail")]
    DuplicateChainId(u64),
    #[error("no anchored PoTE root for escrow {0}")]
    PoteMissing(String),
    #[error("escrow in wrong state {0}")]
    WrongState(EscrowStatus),
    #[error("anchored root does not match the escrow's PoTE root")]
    RootMismatch,
    #[error("challenge window still open")]
    ChallengeWindowOpen,
    #[error("payout transaction already submitted")]
    AlreadySubmitted,
    #[error("fee {fee} exceeds escrowed amount {amount}")]
    FeeExceedsAmount { fee: u64, amount: u64 },
    #[error("escrow balance {balance} cannot cover {needed}")]
    InsufficientEscrow { balance: u64, needed: u64 },
    #[error("genesis funding after block 0")]
    GenesisClosed,
    #[error(transparent)]
    Escrow(#[from] EscrowError),
    #[error(transparent)]
    Wallet(#[from] WalletError),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("charge of {0} minor units is not Tier 1")]
    MixedTier(u64),
    #[error("charge on rail {0} in a batch for another rail")]
    MixedRail(RailId),
    #[error("batch total overflows")]
    Overflow,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReconcileError {
    #[error("escrow in wrong state {0}")]
    WrongState(EscrowStatus),
    #[error("settlement transaction not found on rail")]
    TxNotFound,
    #[error(transparent)]
    Escrow(#[from] EscrowError),
    #[error("unknown rail {0}")]
    UnknownRail(RailId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "fields", rename_all = "lowercase")]
pub enum ReconcileVerdict {
    Match,
    Mismatch(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscrowTerms {
    pub workflow_id: String,
    pub amount: Amount,
    pub payer_ref: String,
    pub payer_address: Address,
    pub payee_agent_id: String,
    pub payee_address: Address,
    pub tier: Tier,
    pub timeout_tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DepositObservation {
    pub seen: bool,
    pub confirmations: u64,
    #[serde(rename = "final")]
    pub is_final: bool,
    pub deposit_tx_id: Option<Digest>,
    /// Whether a caller-supplied deposit id matched what the rail shows.
    pub claim_matches: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charge {
    pub payee: Address,
    pub amount: Amount,
    pub rail_id: RailId,
}

/// Validated Tier 1 batch: per-payee totals and the grand total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub rail_id: RailId,
    pub per_payee: BTreeMap<Address, u64>,
    pub total: u64,
}

impl BatchPlan {
    pub fn new(charges: &[Charge], rail_id: &RailId) -> Result<Self, BatchError> {
        if charges.is_empty() {
            return Err(BatchError::EmptyBatch);
        }
        let mut per_payee = BTreeMap::new();
        let mut total = 0u64;
        for c in charges {
            if &c.rail_id != rail_id {
                return Err(BatchError::MixedRail(c.rail_id.clone()));
            }
            if classify_tier(&c.amount) != Ok(Tier::Tier1) {
                return Err(BatchError::MixedTier(c.amount.minor_units));
            }
            let slot: &mut u64 = per_payee.entry(c.payee.clone()).or_default();
            *slot = slot.checked_add(c.amount.minor_units).ok_or(BatchError::Overflow)?;
            total = total.checked_add(c.amount.minor_units).ok_or(BatchError::Overflow)?;
        }
        Ok(BatchPlan { rail_id: rail_id.clone(), per_payee, total })
    }

    fn outputs(&self) -> Vec<TxOutput> {
        self.per_payee.iter().map(|(to, amount)| TxOutput { to: to.clone(), amount: *amount }).collect()
    }
}

/// Splits `prices` into payouts that sum to `Σ prices − fee`, taking the fee
/// from the last charges first. `None` if the fee swallows everything.
pub fn net_charges(prices: &[u64], fee: u64) -> Option<Vec<u64>> {
    let total: u64 = prices.iter().sum();
    if total <= fee {
        return None;
    }
    let mut remaining = fee;
    let mut out = prices.to_vec();
    for p in out.iter_mut().rev() {
        let take = remaining.min(*p);
        *p -= take;
        remaining -= take;
    }
    out.retain(|p| *p > 0);
    Some(out)
}

/// Test and attack knobs. Never set in honest runs.
#[derive(Debug, Clone, Default)]
pub struct FaultInjection {
    pub substitute_payee: Option<Address>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WatchKind {
    Payout,
    Refund,
}

#[derive(Debug, Clone)]
struct Watch {
    escrow_id: String,
    rail_id: RailId,
    tx_id: Digest,
    kind: WatchKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalityEvent {
    pub escrow_id: String,
    pub event: EscrowEvent,
    pub status: EscrowStatus,
}

#[derive(Debug, Default)]
pub struct RailAdapter {
    chains: BTreeMap<RailId, SimChain>,
    wallets: WalletStore,
    pub faults: FaultInjection,
    watches: Vec<Watch>,
}

pub fn escrow_wallet_ref(escrow_id: &str) -> String {
    format!("escrow:{escrow_id}")
}

impl RailAdapter {
    pub fn add_rail(&mut self, config: RailConfig) -> Result<(), SettleError> {
        if self.chains.contains_key(&config.rail_id) {
            return Err(SettleError::DuplicateRail(config.rail_id));
        }
        if self.chains.values().any(|c| c.config().chain_id == config.chain_id) {
            return Err(SettleError::DuplicateChainId(config.chain_id));
        }
        self.chains.insert(config.rail_id.clone(), SimChain::new(config, BTreeMap::new()));
        Ok(())
    }

    pub fn rails(&self) -> impl Iterator<Item = &RailId> {
        self.chains.keys()
    }

    pub fn chain(&self, rail_id: &RailId) -> Result<&SimChain, SettleError> {
        self.chains.get(rail_id).ok_or_else(|| SettleError::UnknownRail(rail_id.clone()))
    }

    pub fn chains(&self) -> impl Iterator<Item = &SimChain> {
        self.chains.values()
    }

    fn chain_mut(&mut self, rail_id: &RailId) -> Result<&mut SimChain, SettleError> {
        self.chains.get_mut(rail_id).ok_or_else(|| SettleError::UnknownRail(rail_id.clone()))
    }

    pub fn wallets(&self) -> &WalletStore {
        &self.wallets
    }

    pub fn create_wallet<R: RngCore + ?Sized>(
        &mut self,
        wallet_ref: &str,
        rail_id: &RailId,
        rng: &mut R,
    ) -> Result<Address, SettleError> {
        let config = self.chain(rail_id)?.config().clone();
        Ok(self.wallets.create(wallet_ref, &config, rng)?)
    }

    /// Genesis allocation; only valid before the first block.
    pub fn fund_genesis(&mut self, rail_id: &RailId, address: &Address, amount: u64) -> Result<(), SettleError> {
        let chain = self.chain_mut(rail_id)?;
        if chain.height() != 0 {
            return Err(SettleError::GenesisClosed);
        }
        let mut genesis = chain.balances().clone();
        *genesis.entry(address.clone()).or_insert(0) += amount;
        *chain = SimChain::new(chain.config().clone(), genesis);
        Ok(())
    }

    pub fn submit(&mut self, rail_id: &RailId, tx: SignedTx) -> Result<Digest, SettleError> {
        Ok(self.chain_mut(rail_id)?.submit(tx))
    }

    /// Signs with the wallet's next on-chain nonce and submits to its own rail.
    pub fn transfer(
        &mut self,
        wallet_ref: &str,
        to: &Address,
        amount: u64,
        revert: bool,
    ) -> Result<Digest, SettleError> {
        self.transfer_outputs(wallet_ref, vec![TxOutput { to: to.clone(), amount }], revert)
    }

    fn transfer_outputs(
        &mut self,
        wallet_ref: &str,
        outputs: Vec<TxOutput>,
        revert: bool,
    ) -> Result<Digest, SettleError> {
        let rail_id = self.wallets.rail_of(wallet_ref)?.clone();
        let from = self.wallets.address(wallet_ref)?.clone();
        let nonce = self.chain(&rail_id)?.expected_nonce(&from);
        self.wallets.sync_nonce(wallet_ref, nonce)?;
        let tx = self.wallets.sign_outputs(wallet_ref, outputs, revert)?;
        self.submit(&rail_id, tx)
    }

    /// Produces one block on every rail.
    pub fn tick_all(&mut self, tick: Tick) {
        for chain in self.chains.values_mut() {
            chain.produce_block(tick);
        }
    }

    pub fn tick_rail(&mut self, rail_id: &RailId, n: u64, first_tick: Tick) -> Result<u64, SettleError> {
        Ok(self.chain_mut(rail_id)?.tick(n, first_tick))
    }

    pub fn provision_escrow<R: RngCore + ?Sized>(
        &mut self,
        book: &mut EscrowBook,
        rail_id: &RailId,
        escrow_id: &str,
        terms: EscrowTerms,
        rng: &mut R,
        tick: Tick,
    ) -> Result<Address, SettleError> {
        self.chain(rail_id)?;
        if book.contains(escrow_id) {
            return Err(SettleError::Escrow(EscrowError::DuplicateEscrow(escrow_id.into())));
        }
        let escrow_address = self.create_wallet(&escrow_wallet_ref(escrow_id), rail_id, rng)?;
        book.insert(EscrowRecord {
            escrow_id: escrow_id.to_string(),
            workflow_id: terms.workflow_id,
            rail_id: rail_id.clone(),
            amount: terms.amount,
            payer_ref: terms.payer_ref,
            payer_address: terms.payer_address,
            payee_agent_id: terms.payee_agent_id,
            payee_address: terms.payee_address,
            escrow_address: escrow_address.clone(),
            deposit_tx_id: None,
            status: EscrowStatus::Created,
            pote_root: None,
            settlement_tx_ids: Vec::new(),
            refund_tx_ids: Vec::new(),
            timeout_tick: terms.timeout_tick,
            tier: terms.tier,
            challenge_window_elapsed: false,
            history: vec![(tick, EscrowStatus::Created)],
        })?;
        Ok(escrow_address)
    }

    /// Reads the rail's own ledger for an inbound transfer to `escrow_address`.
    pub fn scan_deposit(
        &self,
        rail_id: &RailId,
        escrow_address: &Address,
        expected_amount: u64,
        finality_threshold: u64,
    ) -> Result<DepositObservation, SettleError> {
        let chain = self.chain(rail_id)?;
        let mut seen = false;
        let mut found = None;
        for inc in chain.transactions() {
            let paid: u64 = inc
                .tx
                .body
                .outputs
                .iter()
                .filter(|o| &o.to == escrow_address)
                .map(|o| o.amount)
                .sum();
            if !inc.tx.body.outputs.iter().any(|o| &o.to == escrow_address) {
                continue;
            }
            seen = true;
            if inc.status == TxStatus::Success && paid >= expected_amount && found.is_none() {
                found = Some(inc.tx_id);
            }
        }
        let confirmations = found.and_then(|id| chain.confirmations(&id)).unwrap_or(0);
        Ok(DepositObservation {
            seen,
            confirmations,
            is_final: found.is_some() && confirmations >= finality_threshold,
            deposit_tx_id: found,
            claim_matches: None,
        })
    }

    /// Observes the escrow's deposit and feeds DepositObserved / FinalityReached.
    /// A caller-supplied tx id is only cross-checked against what the rail shows.
    pub fn observe_deposit(
        &self,
        book: &mut EscrowBook,
        audit: &mut AuditLedger,
        escrow_id: &str,
        claimed_tx_id: Option<Digest>,
        tick: Tick,
    ) -> Result<DepositObservation, SettleError> {
        let rec = book.get(escrow_id)?.clone();
        let config = self.chain(&rec.rail_id)?.config();
        let threshold = if rec.tier == Tier::Tier3 {
            config.extended_finality_confirmations
        } else {
            config.finality_confirmations
        };
        let mut obs =
            self.scan_deposit(&rec.rail_id, &rec.escrow_address, rec.amount.minor_units, threshold)?;
        let refs = AuditRefs::escrow(&rec.workflow_id, escrow_id);
        if let Some(claim) = claimed_tx_id {
            let ok = obs.deposit_tx_id == Some(claim);
            obs.claim_matches = Some(ok);
            if !ok {
                audit.append("deposit.claim_rejected", refs.clone(), &claim, tick);
            }
        }
        if let Some(tx_id) = obs.deposit_tx_id {
            if rec.status == EscrowStatus::Created {
                book.set_deposit_tx(escrow_id, tx_id)?;
                book.transition(escrow_id, EscrowEvent::DepositObserved, tick)?;
                audit.append("deposit.observed", refs.clone(), &obs, tick);
            }
            if obs.is_final && book.status(escrow_id)? == EscrowStatus::FundingPending {
                book.transition(escrow_id, EscrowEvent::FinalityReached, tick)?;
                audit.append("escrow.open", refs, &obs, tick);
            }
        }
        Ok(obs)
    }

    fn payout_gate(
        &self,
        book: &EscrowBook,
        anchors: &AnchorLog,
        escrow_id: &str,
    ) -> Result<EscrowRecord, SettleError> {
        let rec = book.get(escrow_id)?;
        let anchor = anchors
            .anchored_root(escrow_id)
            .ok_or_else(|| SettleError::PoteMissing(escrow_id.into()))?;
        if rec.status != EscrowStatus::SettlementPending {
            return Err(SettleError::WrongState(rec.status));
        }
        if rec.pote_root != Some(anchor.merkle_root) {
            return Err(SettleError::RootMismatch);
        }
        if rec.tier == Tier::Tier3 && !rec.challenge_window_elapsed {
            return Err(SettleError::ChallengeWindowOpen);
        }
        if !rec.settlement_tx_ids.is_empty() {
            return Err(SettleError::AlreadySubmitted);
        }
        Ok(rec.clone())
    }

    /// Pays `amount − flat_fee` from the escrow to the payee on the escrow's rail.
    pub fn settle(
        &mut self,
        book: &mut EscrowBook,
        anchors: &AnchorLog,
        audit: &mut AuditLedger,
        escrow_id: &str,
        tick: Tick,
    ) -> Result<Digest, SettleError> {
        let rec = self.payout_gate(book, anchors, escrow_id)?;
        let fee = self.chain(&rec.rail_id)?.config().flat_fee.minor_units;
        let payout = rec
            .amount
            .minor_units
            .checked_sub(fee)
            .filter(|p| *p > 0)
            .ok_or(SettleError::FeeExceedsAmount { fee, amount: rec.amount.minor_units })?;
        let to = self.faults.substitute_payee.clone().unwrap_or(rec.payee_address.clone());
        let tx_id = self.transfer(&escrow_wallet_ref(escrow_id), &to, payout, false)?;
        self.track_payout(book, audit, &rec, tx_id, tick)?;
        Ok(tx_id)
    }

    /// One transaction paying every Tier 1 charge from a batch escrow.
    pub fn settle_batch(
        &mut self,
        book: &mut EscrowBook,
        anchors: &AnchorLog,
        audit: &mut AuditLedger,
        escrow_id: &str,
        plan: &BatchPlan,
        tick: Tick,
    ) -> Result<Digest, SettleError> {
        let rec = self.payout_gate(book, anchors, escrow_id)?;
        if plan.rail_id != rec.rail_id {
            return Err(SettleError::UnknownRail(plan.rail_id.clone()));
        }
        let chain = self.chain(&rec.rail_id)?;
        let fee = chain.config().flat_fee.minor_units;
        let balance = chain.balance(&rec.escrow_address);
        let needed = plan.total.saturating_add(fee);
        if balance < needed {
            return Err(SettleError::InsufficientEscrow { balance, needed });
        }
        let tx_id = self.transfer_outputs(&escrow_wallet_ref(escrow_id), plan.outputs(), false)?;
        self.track_payout(book, audit, &rec, tx_id, tick)?;
        Ok(tx_id)
    }

    fn track_payout(
        &mut self,
        book: &mut EscrowBook,
        audit: &mut AuditLedger,
        rec: &EscrowRecord,
        tx_id: Digest,
        tick: Tick,
    ) -> Result<(), SettleError> {
        book.record_settlement_tx(&rec.escrow_id, RailTxRef { rail_id: rec.rail_id.clone(), tx_id })?;
        self.watches.push(Watch {
            escrow_id: rec.escrow_id.clone(),
            rail_id: rec.rail_id.clone(),
            tx_id,
            kind: WatchKind::Payout,
        });
        audit.append(
            "settlement.submitted",
            AuditRefs::escrow(&rec.workflow_id, &rec.escrow_id),
            &tx_id,
            tick,
        );
        Ok(())
    }

    /// Returns the escrow balance less the flat fee to the payer.
    pub fn refund(
        &mut self,
        book: &mut EscrowBook,
        audit: &mut AuditLedger,
        escrow_id: &str,
        reason: &str,
        tick: Tick,
    ) -> Result<Digest, SettleError> {
        let rec = book.get(escrow_id)?.clone();
        if rec.status != EscrowStatus::RefundPending {
            return Err(SettleError::WrongState(rec.status));
        }
        if !rec.refund_tx_ids.is_empty() {
            return Err(SettleError::AlreadySubmitted);
        }
        let chain = self.chain(&rec.rail_id)?;
        let fee = chain.config().flat_fee.minor_units;
        let balance = chain.balance(&rec.escrow_address);
        let amount = balance
            .checked_sub(fee)
            .filter(|a| *a > 0)
            .ok_or(SettleError::FeeExceedsAmount { fee, amount: balance })?;
        let tx_id = self.transfer(&escrow_wallet_ref(escrow_id), &rec.payer_address, amount, false)?;
        book.record_refund_tx(escrow_id, RailTxRef { rail_id: rec.rail_id.clone(), tx_id })?;
        self.watches.push(Watch {
            escrow_id: escrow_id.to_string(),
            rail_id: rec.rail_id.clone(),
            tx_id,
            kind: WatchKind::Refund,
        });
        #[derive(Serialize)]
        struct RefundNote<'a> {
            reason: &'a str,
            tx_id: Digest,
        }
        audit.append(
            "refund.submitted",
            AuditRefs::escrow(&rec.workflow_id, escrow_id),
            &RefundNote { reason, tx_id },
            tick,
        );
        Ok(tx_id)
    }

    /// Confirms payouts and refunds that reached standard finality.
    pub fn poll_finality(
        &mut self,
        book: &mut EscrowBook,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<Vec<FinalityEvent>, SettleError> {
        let mut events = Vec::new();
        let mut keep = Vec::new();
        for w in std::mem::take(&mut self.watches) {
            let chain = self.chain(&w.rail_id)?;
            let threshold = chain.config().finality_confirmations;
            match chain.confirmations(&w.tx_id) {
                Some(c) if c >= threshold => {
                    let event = match w.kind {
                        WatchKind::Payout => EscrowEvent::SettlementConfirmed,
                        WatchKind::Refund => EscrowEvent::RefundConfirmed,
                    };
                    let status = book.transition(&w.escrow_id, event, tick)?;
                    let workflow_id = book.get(&w.escrow_id)?.workflow_id.clone();
                    audit.append(
                        if w.kind == WatchKind::Payout { "escrow.settled" } else { "escrow.refunded" },
                        AuditRefs::escrow(&workflow_id, &w.escrow_id),
                        &w.tx_id,
                        tick,
                    );
                    events.push(FinalityEvent { escrow_id: w.escrow_id, event, status });
                }
                _ => keep.push(w),
            }
        }
        self.watches = keep;
        Ok(events)
    }

    /// Compares the on-chain settlement against the escrow's terms and
    /// indexes the result.
    pub fn reconcile(
        &self,
        book: &EscrowBook,
        explorer: &mut ExplorerIndex,
        escrow_id: &str,
        mandate_amount: &Amount,
    ) -> Result<ReconcileVerdict, ReconcileError> {
        let rec = book.get(escrow_id)?;
        if rec.status != EscrowStatus::Settled {
            return Err(ReconcileError::WrongState(rec.status));
        }
        let tx_ref = rec.settlement_tx_ids.last().ok_or(ReconcileError::TxNotFound)?;
        let chain = self
            .chains
            .get(&tx_ref.rail_id)
            .ok_or_else(|| ReconcileError::UnknownRail(tx_ref.rail_id.clone()))?;
        let rows = chain.explorer_view(&tx_ref.tx_id);
        if rows.is_empty() {
            return Err(ReconcileError::TxNotFound);
        }
        let fee = chain.config().flat_fee.minor_units;
        let expected = mandate_amount.minor_units.saturating_sub(fee);
        let mut mismatched = Vec::new();
        if rows.iter().any(|r| r.from != rec.escrow_address) {
            mismatched.push("from".to_string());
        }
        if rows.iter().any(|r| r.to != rec.payee_address) {
            mismatched.push("to".to_string());
        }
        if rows.iter().map(|r| r.amount).sum::<u64>() != expected {
            mismatched.push("amount".to_string());
        }
        let verdict = if mismatched.is_empty() {
            ReconcileVerdict::Match
        } else {
            ReconcileVerdict::Mismatch(mismatched)
        };
        explorer.index(
            rows.into_iter()
                .map(|tx| ExplorerRecord {
                    tx,
                    escrow_id: Some(escrow_id.to_string()),
                    workflow_id: Some(rec.workflow_id.clone()),
                    reconciliation: Some(verdict.clone()),
                })
                .collect(),
        );
        Ok(verdict)
    }

    /// Explorer rows for an arbitrary tx, unindexed.
    pub fn explorer_tx(&self, rail_id: &RailId, tx_id: &Digest) -> Vec<super::chain::ExplorerTx> {
        self.chains.get(rail_id).map(|c| c.explorer_view(tx_id)).unwrap_or_default()
    }

    pub fn rejection(&self, rail_id: &RailId, tx_id: &Digest) -> Option<Rejection> {
        self.chains.get(rail_id).and_then(|c| c.rejection_of(tx_id).cloned())
    }
}
