//! Witness-signed request/response commitments standing in for TLS
//! notarization. A notary never sees plaintext beyond what it hashes.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::{
    canonical_serialize, hash256, keygen, verify, Digest, KeyPair, PublicKey, SecretKey, Signature,
    Tick,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReceiptKind {
    Executor,
    Model,
    Tool,
    Api,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptBody {
    pub kind: ReceiptKind,
    pub session_id: String,
    pub workflow_id: String,
    pub request_commitment: Digest,
    pub response_commitment: Digest,
    pub tick: Tick,
}

impl ReceiptBody {
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = b"vtp-notary:".to_vec();
        out.extend(canonical_serialize(self).expect("receipt body is canonical"));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub notary_id: String,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotaryReceipt {
    pub kind: ReceiptKind,
    pub session_id: String,
    pub workflow_id: String,
    pub request_commitment: Digest,
    pub response_commitment: Digest,
    pub tick: Tick,
    pub witness_signatures: Vec<Witness>,
}

impl NotaryReceipt {
    pub fn body(&self) -> ReceiptBody {
        ReceiptBody {
            kind: self.kind,
            session_id: self.session_id.clone(),
            workflow_id: self.workflow_id.clone(),
            request_commitment: self.request_commitment,
            response_commitment: self.response_commitment,
            tick: self.tick,
        }
    }

    /// Distinct known notaries whose signature over the body verifies.
    pub fn valid_witnesses(&self, keys: &BTreeMap<String, PublicKey>) -> usize {
        let msg = self.body().signing_bytes();
        self.witness_signatures
            .iter()
            .filter(|w| keys.get(&w.notary_id).is_some_and(|pk| verify(pk, &msg, &w.signature)))
            .map(|w| w.notary_id.as_str())
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn matches_exchange(&self, request: &[u8], response: &[u8]) -> bool {
        self.request_commitment == hash256(request) && self.response_commitment == hash256(response)
    }
}

#[derive(Debug)]
pub struct Notary {
    pub id: String,
    keypair: KeyPair,
}

impl Notary {
    pub fn new<R: RngCore + ?Sized>(id: impl Into<String>, rng: &mut R) -> Self {
        Notary { id: id.into(), keypair: keygen(rng) }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn witness(&self, body: &ReceiptBody) -> Witness {
        Witness { notary_id: self.id.clone(), signature: self.keypair.sign(&body.signing_bytes()) }
    }
}

#[derive(Debug, Default)]
pub struct NotaryPool {
    notaries: Vec<Notary>,
}

impl NotaryPool {
    pub fn new<R: RngCore + ?Sized>(count: usize, rng: &mut R) -> Self {
        NotaryPool {
            notaries: (1..=count).map(|i| Notary::new(format!("notary-{i}"), rng)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.notaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.notaries.is_empty()
    }

    /// The first `n` notaries (fewer if the pool is smaller).
    pub fn take(&self, n: usize) -> Vec<&Notary> {
        self.notaries.iter().take(n).collect()
    }

    pub fn public_keys(&self) -> BTreeMap<String, PublicKey> {
        self.notaries.iter().map(|n| (n.id.clone(), n.public())).collect()
    }

    pub fn secret_keys(&self) -> Vec<SecretKey> {
        self.notaries.iter().map(|n| n.keypair.secret()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NotaryError {
    #[error("at least one notary is required")]
    NoNotary,
}

pub fn notarize_exchange(
    kind: ReceiptKind,
    session_id: &str,
    workflow_id: &str,
    request: &[u8],
    response: &[u8],
    notaries: &[&Notary],
    tick: Tick,
) -> Result<NotaryReceipt, NotaryError> {
    if notaries.is_empty() {
        return Err(NotaryError::NoNotary);
    }
    let body = ReceiptBody {
        kind,
        session_id: session_id.to_string(),
        workflow_id: workflow_id.to_string(),
        request_commitment: hash256(request),
        response_commitment: hash256(response),
        tick,
    };
    let witness_signatures = notaries.iter().map(|n| n.witness(&body)).collect();
    Ok(NotaryReceipt {
        kind: body.kind,
        session_id: body.session_id,
        workflow_id: body.workflow_id,
        request_commitment: body.request_commitment,
        response_commitment: body.response_commitment,
        tick,
        witness_signatures,
    })
}
