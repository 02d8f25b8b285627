//! Hash-chained Intent -> Cart -> Payment mandates.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::facilitator::TickWindow;
use crate::domain::{
    canonical_serialize, content_hash, keygen, verify, Amount, Digest, KeyPair, PublicKey, RailId,
    SecretKey, Signature, Tick,
};
use crate::identity::PaymentMandateLookup;

fn hash_of<T: Serialize>(record: &T) -> Digest {
    content_hash(record).expect("mandates are canonical")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentConstraints {
    pub required_capability: String,
    pub budget_cap: Amount,
    pub rail_preference: Option<RailId>,
    pub validity_window: TickWindow,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentMandate {
    pub user_id: String,
    pub intent_text: String,
    pub constraints: IntentConstraints,
    pub hash: Digest,
}

impl IntentMandate {
    pub fn new(user_id: &str, intent_text: &str, constraints: IntentConstraints) -> Self {
        let mut m = IntentMandate {
            user_id: user_id.to_string(),
            intent_text: intent_text.to_string(),
            constraints,
            hash: Digest::ZERO,
        };
        m.hash = hash_of(&m);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartItem {
    pub sku: String,
    pub description: String,
    pub price: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quote {
    pub items: Vec<CartItem>,
    pub merchant_agent_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartMandate {
    pub items: Vec<CartItem>,
    pub merchant_agent_id: String,
    pub intent_hash: Digest,
    pub hash: Digest,
}

impl CartMandate {
    pub fn new(items: Vec<CartItem>, merchant_agent_id: &str, intent_hash: Digest) -> Self {
        let mut m = CartMandate {
            items,
            merchant_agent_id: merchant_agent_id.to_string(),
            intent_hash,
            hash: Digest::ZERO,
        };
        m.hash = hash_of(&m);
        m
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentMandate {
    pub amount: Amount,
    pub rail_id: RailId,
    pub payer_wallet_ref: String,
    pub payee_agent_id: String,
    pub escrow_id: String,
    pub cart_hash: Digest,
    pub hash: Digest,
}

impl PaymentMandate {
    pub fn new(
        amount: Amount,
        rail_id: RailId,
        payer_wallet_ref: &str,
        payee_agent_id: &str,
        escrow_id: &str,
        cart_hash: Digest,
    ) -> Self {
        let mut m = PaymentMandate {
            amount,
            rail_id,
            payer_wallet_ref: payer_wallet_ref.to_string(),
            payee_agent_id: payee_agent_id.to_string(),
            escrow_id: escrow_id.to_string(),
            cart_hash,
            hash: Digest::ZERO,
        };
        m.hash = hash_of(&m);
        m
    }
}

/// The user's signed decision on a cart, recorded before the Payment
/// Mandate exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartApproval {
    pub user_id: String,
    pub user_pk: PublicKey,
    pub cart_hash: Digest,
    pub approved: bool,
    pub tick: Tick,
    pub signature: Signature,
}

#[derive(Serialize)]
struct ApprovalBody<'a> {
    user_id: &'a str,
    cart_hash: &'a Digest,
    approved: bool,
    tick: Tick,
}

fn approval_bytes(user_id: &str, cart_hash: &Digest, approved: bool, tick: Tick) -> Vec<u8> {
    canonical_serialize(&ApprovalBody { user_id, cart_hash, approved, tick }).expect("approval is canonical")
}

impl CartApproval {
    pub fn verify(&self) -> bool {
        verify(
            &self.user_pk,
            &approval_bytes(&self.user_id, &self.cart_hash, self.approved, self.tick),
            &self.signature,
        )
    }
}

pub trait CartApprover {
    fn approve(&self, cart: &CartMandate, tick: Tick) -> CartApproval;
}

/// User-side agent. Auto-approves in non-interactive runs unless told to reject.
#[derive(Debug)]
pub struct UserAgent {
    pub user_id: String,
    keypair: KeyPair,
    pub approve_carts: bool,
}

impl UserAgent {
    pub fn new<R: RngCore + ?Sized>(user_id: &str, approve_carts: bool, rng: &mut R) -> Self {
        UserAgent { user_id: user_id.to_string(), keypair: keygen(rng), approve_carts }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn secret_key(&self) -> SecretKey {
        self.keypair.secret()
    }
}

impl CartApprover for UserAgent {
    fn approve(&self, cart: &CartMandate, tick: Tick) -> CartApproval {
        let approved = self.approve_carts;
        CartApproval {
            user_id: self.user_id.clone(),
            user_pk: self.keypair.public(),
            cart_hash: cart.hash,
            approved,
            tick,
            signature: self.keypair.sign(&approval_bytes(&self.user_id, &cart.hash, approved, tick)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MandateSet {
    pub intent: IntentMandate,
    pub cart: CartMandate,
    pub payment: PaymentMandate,
    pub approval: CartApproval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ChainBreak {
    #[error("intent hash does not match its content")]
    IntentHash,
    #[error("cart hash does not match its content")]
    CartHash,
    #[error("payment hash does not match its content")]
    PaymentHash,
    #[error("cart does not reference the intent")]
    CartToIntent,
    #[error("payment does not reference the cart")]
    PaymentToCart,
    #[error("payment amount differs from the cart total")]
    AmountMismatch,
    #[error("approval does not cover this cart")]
    Approval,
}

impl MandateSet {
    /// Recomputes every hash and link from stored content.
    pub fn verify_chain(&self) -> Result<(), ChainBreak> {
        if hash_of(&self.intent) != self.intent.hash {
            return Err(ChainBreak::IntentHash);
        }
        if hash_of(&self.cart) != self.cart.hash {
            return Err(ChainBreak::CartHash);
        }
        if hash_of(&self.payment) != self.payment.hash {
            return Err(ChainBreak::PaymentHash);
        }
        if self.cart.intent_hash != self.intent.hash {
            return Err(ChainBreak::CartToIntent);
        }
        if self.payment.cart_hash != self.cart.hash {
            return Err(ChainBreak::PaymentToCart);
        }
        let total = Amount::checked_sum(
            &self.payment.amount.currency_code,
            self.cart.items.iter().map(|i| &i.price),
        );
        if total.as_ref() != Ok(&self.payment.amount) {
            return Err(ChainBreak::AmountMismatch);
        }
        if self.approval.cart_hash != self.cart.hash || !self.approval.approved || !self.approval.verify() {
            return Err(ChainBreak::Approval);
        }
        Ok(())
    }
}

/// Persisted mandate sets keyed by workflow id.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MandateStore {
    sets: BTreeMap<String, MandateSet>,
}

impl MandateStore {
    pub fn persist(&mut self, workflow_id: &str, set: MandateSet) {
        self.sets.insert(workflow_id.to_string(), set);
    }

    pub fn get(&self, workflow_id: &str) -> Option<&MandateSet> {
        self.sets.get(workflow_id)
    }

    /// Raw write access to stored mandates, for tamper tests.
    pub fn get_mut(&mut self, workflow_id: &str) -> Option<&mut MandateSet> {
        self.sets.get_mut(workflow_id)
    }

    pub fn sets(&self) -> impl Iterator<Item = &MandateSet> {
        self.sets.values()
    }
}

impl PaymentMandateLookup for MandateStore {
    fn payment_mandate_matches(&self, mandate_hash: &Digest) -> bool {
        self.sets
            .values()
            .any(|s| s.payment.hash == *mandate_hash && s.verify_chain().is_ok())
    }
}
