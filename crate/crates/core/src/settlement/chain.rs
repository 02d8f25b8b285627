//! In-memory stand-in for an external settlement chain: signed transfers,
//! sequential nonces, chain-id replay protection, blocks and confirmations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{
    canonical_serialize, hash256, verify, Amount, Digest, PublicKey, RailId, Signature, Tick,
};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Address(pub String);

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `0x` + first 20 bytes of SHA-256(public key), hex.
pub fn address_of(pk: &PublicKey) -> Address {
    Address(format!("0x{}", hex::encode(&hash256(&pk.0).0[..20])))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RailConfig {
    pub rail_id: RailId,
    pub chain_id: u64,
    pub finality_confirmations: u64,
    pub extended_finality_confirmations: u64,
    pub flat_fee: Amount,
}

impl RailConfig {
    pub fn new(rail_id: RailId, chain_id: u64) -> Self {
        RailConfig {
            rail_id,
            chain_id,
            finality_confirmations: 3,
            extended_finality_confirmations: 12,
            flat_fee: Amount::usd(25),
        }
    }

    pub fn default_rails() -> Vec<RailConfig> {
        vec![
            RailConfig::new(RailId::new("sim:alpha").expect("static rail id"), 101),
            RailConfig::new(RailId::new("sim:beta").expect("static rail id"), 102),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub to: Address,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxBody {
    pub chain_id: u64,
    pub from: Address,
    pub sender_pk: PublicKey,
    pub outputs: Vec<TxOutput>,
    pub fee: u64,
    pub nonce: u64,
    /// Included but reverted: nonce and fee consumed, outputs not applied.
    pub revert: bool,
}

impl TxBody {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = b"vtp-tx:".to_vec();
        out.extend(canonical_serialize(self).expect("tx body is canonical"));
        out
    }

    pub fn total_out(&self) -> Option<u64> {
        self.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTx {
    pub body: TxBody,
    pub signature: Signature,
}

impl SignedTx {
    pub fn tx_id(&self) -> Digest {
        hash256(&canonical_serialize(self).expect("signed tx is canonical"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxStatus {
    Success,
    Reverted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncludedTx {
    pub tx_id: Digest,
    pub tx: SignedTx,
    pub status: TxStatus,
    pub block_height: u64,
    pub tick: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub tick: Tick,
    pub prev_hash: Digest,
    pub tx_ids: Vec<Digest>,
    pub hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rejection {
    BadSignature,
    SenderKeyMismatch,
    ChainIdMismatch { expected: u64, got: u64 },
    StaleNonce { expected: u64, got: u64 },
    InsufficientBalance,
    Overflow,
}

/// Per-transaction explorer view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorerTx {
    pub rail_id: RailId,
    pub tx_id: Digest,
    pub from: Address,
    pub to: Address,
    pub amount: u64,
    pub fee: u64,
    pub status: TxStatus,
    pub confirmations: u64,
    pub block_height: u64,
}

#[derive(Debug, Clone)]
pub struct SimChain {
    config: RailConfig,
    blocks: Vec<Block>,
    accounts: BTreeMap<Address, u64>,
    nonces: BTreeMap<Address, u64>,
    fees_collected: u64,
    genesis_supply: u64,
    pending: Vec<SignedTx>,
    included: BTreeMap<Digest, IncludedTx>,
    inclusion_order: Vec<Digest>,
    rejected: Vec<(Digest, Rejection, Tick)>,
    conservation_violations: u64,
    supply_trace: Vec<u64>,
}

impl SimChain {
    pub fn new(config: RailConfig, genesis: BTreeMap<Address, u64>) -> Self {
        let genesis_supply = genesis.values().sum();
        let genesis_block = Block {
            height: 0,
            tick: 0,
            prev_hash: Digest::ZERO,
            tx_ids: Vec::new(),
            hash: hash256(format!("genesis:{}:{}", config.rail_id, config.chain_id).as_bytes()),
        };
        SimChain {
            config,
            blocks: vec![genesis_block],
            accounts: genesis,
            nonces: BTreeMap::new(),
            fees_collected: 0,
            genesis_supply,
            pending: Vec::new(),
            included: BTreeMap::new(),
            inclusion_order: Vec::new(),
            rejected: Vec::new(),
            conservation_violations: 0,
            supply_trace: vec![genesis_supply],
        }
    }

    pub fn config(&self) -> &RailConfig {
        &self.config
    }

    pub fn rail_id(&self) -> &RailId {
        &self.config.rail_id
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn balance(&self, addr: &Address) -> u64 {
        self.accounts.get(addr).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<Address, u64> {
        &self.accounts
    }

    pub fn fees_collected(&self) -> u64 {
        self.fees_collected
    }

    pub fn genesis_supply(&self) -> u64 {
        self.genesis_supply
    }

    /// Σ balances + fees, once per produced block (index 0 is genesis).
    pub fn supply_trace(&self) -> &[u64] {
        &self.supply_trace
    }

    pub fn conservation_violations(&self) -> u64 {
        self.conservation_violations
    }

    pub fn nonce(&self, addr: &Address) -> u64 {
        self.nonces.get(addr).copied().unwrap_or(0)
    }

    /// Next nonce for `addr`, counting its still-pending transactions.
    pub fn expected_nonce(&self, addr: &Address) -> u64 {
        let queued = self.pending.iter().filter(|t| &t.body.from == addr).count() as u64;
        self.nonce(addr) + queued
    }

    pub fn submit(&mut self, tx: SignedTx) -> Digest {
        let id = tx.tx_id();
        self.pending.push(tx);
        id
    }

    pub fn pending(&self) -> &[SignedTx] {
        &self.pending
    }

    pub fn rejected(&self) -> &[(Digest, Rejection, Tick)] {
        &self.rejected
    }

    pub fn rejection_of(&self, tx_id: &Digest) -> Option<&Rejection> {
        self.rejected.iter().find(|(id, _, _)| id == tx_id).map(|(_, r, _)| r)
    }

    pub fn included(&self, tx_id: &Digest) -> Option<&IncludedTx> {
        self.included.get(tx_id)
    }

    /// Included transactions in inclusion order.
    pub fn transactions(&self) -> impl Iterator<Item = &IncludedTx> {
        self.inclusion_order.iter().map(|id| &self.included[id])
    }

    pub fn confirmations(&self, tx_id: &Digest) -> Option<u64> {
        self.included.get(tx_id).map(|t| self.height() - t.block_height + 1)
    }

    /// Produces `n` blocks stamped with consecutive ticks starting at `first_tick`.
    pub fn tick(&mut self, n: u64, first_tick: Tick) -> u64 {
        for i in 0..n {
            self.produce_block(first_tick + i);
        }
        self.height()
    }

    pub fn produce_block(&mut self, tick: Tick) {
        let height = self.height() + 1;
        let mut tx_ids = Vec::new();
        let mut still_pending = Vec::new();
        for tx in std::mem::take(&mut self.pending) {
            let id = tx.tx_id();
            match self.validate(&tx) {
                Ok(()) => {
                    let status = self.apply(&tx);
                    tx_ids.push(id);
                    self.inclusion_order.push(id);
                    self.included.insert(
                        id,
                        IncludedTx { tx_id: id, tx, status, block_height: height, tick },
                    );
                }
                // A nonce gap may still be filled by a later transaction.
                Err(Rejection::StaleNonce { expected, got }) if got > expected => {
                    still_pending.push(tx)
                }
                Err(reason) => self.rejected.push((id, reason, tick)),
            }
        }
        self.pending = still_pending;
        let prev_hash = self.blocks.last().expect("genesis exists").hash;
        let mut header = Vec::new();
        header.extend_from_slice(&height.to_be_bytes());
        header.extend_from_slice(prev_hash.as_bytes());
        for id in &tx_ids {
            header.extend_from_slice(id.as_bytes());
        }
        self.blocks.push(Block { height, tick, prev_hash, tx_ids, hash: hash256(&header) });

        let supply = self.accounts.values().sum::<u64>() + self.fees_collected;
        if supply != self.genesis_supply {
            self.conservation_violations += 1;
        }
        self.supply_trace.push(supply);
    }

    fn validate(&self, tx: &SignedTx) -> Result<(), Rejection> {
        let body = &tx.body;
        if !verify(&body.sender_pk, &body.signing_bytes(), &tx.signature) {
            return Err(Rejection::BadSignature);
        }
        if address_of(&body.sender_pk) != body.from {
            return Err(Rejection::SenderKeyMismatch);
        }
        if body.chain_id != self.config.chain_id {
            return Err(Rejection::ChainIdMismatch { expected: self.config.chain_id, got: body.chain_id });
        }
        let expected = self.nonce(&body.from);
        if body.nonce != expected {
            return Err(Rejection::StaleNonce { expected, got: body.nonce });
        }
        let needed = if body.revert {
            body.fee
        } else {
            body.total_out().and_then(|t| t.checked_add(body.fee)).ok_or(Rejection::Overflow)?
        };
        if self.balance(&body.from) < needed {
            return Err(Rejection::InsufficientBalance);
        }
        Ok(())
    }

    fn apply(&mut self, tx: &SignedTx) -> TxStatus {
        let body = &tx.body;
        *self.nonces.entry(body.from.clone()).or_insert(0) += 1;
        *self.accounts.entry(body.from.clone()).or_insert(0) -= body.fee;
        self.fees_collected += body.fee;
        if body.revert {
            return TxStatus::Reverted;
        }
        for out in &body.outputs {
            *self.accounts.entry(body.from.clone()).or_insert(0) -= out.amount;
            *self.accounts.entry(out.to.clone()).or_insert(0) += out.amount;
        }
        TxStatus::Success
    }

    /// Explorer rows for one transaction, one per output. A reverted or
    /// output-less transaction yields a single zero-amount row.
    pub fn explorer_view(&self, tx_id: &Digest) -> Vec<ExplorerTx> {
        let Some(inc) = self.included.get(tx_id) else {
            return Vec::new();
        };
        let confirmations = self.height() - inc.block_height + 1;
        let row = |to: Address, amount: u64| ExplorerTx {
            rail_id: self.config.rail_id.clone(),
            tx_id: *tx_id,
            from: inc.tx.body.from.clone(),
            to,
            amount,
            fee: inc.tx.body.fee,
            status: inc.status,
            confirmations,
            block_height: inc.block_height,
        };
        if inc.tx.body.outputs.is_empty() {
            return vec![row(inc.tx.body.from.clone(), 0)];
        }
        inc.tx
            .body
            .outputs
            .iter()
            .map(|o| row(o.to.clone(), if inc.status == TxStatus::Success { o.amount } else { 0 }))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::domain::{keygen, KeyPair};

    fn signed(kp: &KeyPair, chain_id: u64, to: &Address, amount: u64, nonce: u64, revert: bool) -> SignedTx {
        let body = TxBody {
            chain_id,
            from: address_of(&kp.public()),
            sender_pk: kp.public(),
            outputs: vec![TxOutput { to: to.clone(), amount }],
            fee: 25,
            nonce,
            revert,
        };
        SignedTx { signature: kp.sign(&body.signing_bytes()), body }
    }

    fn setup() -> (SimChain, KeyPair, Address) {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let kp = keygen(&mut rng);
        let dest = address_of(&keygen(&mut rng).public());
        let mut genesis = BTreeMap::new();
        genesis.insert(address_of(&kp.public()), 10_000);
        let chain = SimChain::new(RailConfig::default_rails().remove(0), genesis);
        (chain, kp, dest)
    }

    #[test]
    fn transfer_and_confirmations() {
        let (mut chain, kp, dest) = setup();
        let id = chain.submit(signed(&kp, 101, &dest, 1_000, 0, false));
        assert_eq!(chain.tick(0, 1), 0);
        assert_eq!(chain.confirmations(&id), None);
        chain.tick(1, 1);
        assert_eq!(chain.confirmations(&id), Some(1));
        chain.tick(2, 2);
        assert_eq!(chain.confirmations(&id), Some(3));
        assert_eq!(chain.balance(&dest), 1_000);
        assert_eq!(chain.fees_collected(), 25);
        assert!(chain.supply_trace().iter().all(|s| *s == 10_000));
    }

    #[test]
    fn reverted_tx_consumes_fee_only() {
        let (mut chain, kp, dest) = setup();
        let id = chain.submit(signed(&kp, 101, &dest, 1_000, 0, true));
        chain.tick(1, 1);
        assert_eq!(chain.included(&id).unwrap().status, TxStatus::Reverted);
        assert_eq!(chain.balance(&dest), 0);
        assert_eq!(chain.balance(&address_of(&kp.public())), 10_000 - 25);
        assert_eq!(chain.conservation_violations(), 0);
    }

    #[test]
    fn wrong_chain_id_rejected_at_inclusion() {
        let (mut chain, kp, dest) = setup();
        let id = chain.submit(signed(&kp, 102, &dest, 1_000, 0, false));
        chain.tick(5, 1);
        assert!(chain.included(&id).is_none());
        assert_eq!(
            chain.rejection_of(&id),
            Some(&Rejection::ChainIdMismatch { expected: 101, got: 102 })
        );
    }

    #[test]
    fn nonce_gap_never_included() {
        let (mut chain, kp, dest) = setup();
        let id = chain.submit(signed(&kp, 101, &dest, 1, 5, false));
        chain.tick(10, 1);
        assert!(chain.included(&id).is_none());
        assert_eq!(chain.pending().len(), 1);
    }

    #[test]
    fn forged_signature_and_overspend_rejected() {
        let (mut chain, kp, dest) = setup();
        let mut forged = signed(&kp, 101, &dest, 1, 0, false);
        forged.body.outputs[0].amount = 9_000;
        let forged_id = chain.submit(forged);
        let over_id = chain.submit(signed(&kp, 101, &dest, 10_000, 0, false));
        chain.tick(1, 1);
        assert_eq!(chain.rejection_of(&forged_id), Some(&Rejection::BadSignature));
        assert_eq!(chain.rejection_of(&over_id), Some(&Rejection::InsufficientBalance));
    }
}
