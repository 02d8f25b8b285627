//! In-process BFT validator quorum over a subject digest.
//!
//! With `n = 3f + 1` validators a certificate needs `2f + 1` matching votes.
//! Byzantine validators either vote for a corrupted digest (even index) or
//! abstain (odd index); only votes for the honest subject are collected.

use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::{hash256, keygen, verify, Digest, KeyPair, PublicKey, SecretKey, Signature};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub validator_id: String,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuorumCertificate {
    pub subject_digest: Digest,
    pub votes: Vec<Vote>,
    pub n_validators: u64,
    pub f_tolerated: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no quorum: {matching} matching votes, {needed} needed")]
pub struct NoQuorum {
    pub matching: u64,
    pub needed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QuorumError {
    #[error("validator count {n} is not 3f+1 for f={f}")]
    BadSize { n: u64, f: u64 },
}

fn vote_bytes(subject: &Digest) -> Vec<u8> {
    let mut out = b"vtp-vote:".to_vec();
    out.extend_from_slice(subject.as_bytes());
    out
}

#[derive(Debug)]
pub struct Validator {
    pub id: String,
    keypair: KeyPair,
}

#[derive(Debug)]
pub struct ValidatorSet {
    validators: Vec<Validator>,
    f: u64,
}

/// Public half of a validator set, enough to check certificates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidatorKeys {
    pub keys: BTreeMap<String, PublicKey>,
    pub f: u64,
}

impl ValidatorSet {
    pub fn new<R: RngCore + ?Sized>(
        prefix: &str,
        n: u64,
        f: u64,
        rng: &mut R,
    ) -> Result<Self, QuorumError> {
        if n != 3 * f + 1 || f == 0 {
            return Err(QuorumError::BadSize { n, f });
        }
        let validators = (1..=n)
            .map(|i| Validator { id: format!("{prefix}-{i}"), keypair: keygen(rng) })
            .collect();
        Ok(ValidatorSet { validators, f })
    }

    pub fn n(&self) -> u64 {
        self.validators.len() as u64
    }

    pub fn f(&self) -> u64 {
        self.f
    }

    pub fn quorum_size(&self) -> u64 {
        2 * self.f + 1
    }

    pub fn keys(&self) -> ValidatorKeys {
        ValidatorKeys {
            keys: self.validators.iter().map(|v| (v.id.clone(), v.keypair.public())).collect(),
            f: self.f,
        }
    }

    pub fn secret_keys(&self) -> Vec<SecretKey> {
        self.validators.iter().map(|v| v.keypair.secret()).collect()
    }
}

/// Runs one voting round. `byzantine_mask` holds validator indices (0-based).
pub fn quorum_validate(
    subject: &Digest,
    validators: &ValidatorSet,
    byzantine_mask: &BTreeSet<usize>,
) -> Result<QuorumCertificate, NoQuorum> {
    let honest_msg = vote_bytes(subject);
    let mut matching = Vec::new();
    for (i, v) in validators.validators.iter().enumerate() {
        if !byzantine_mask.contains(&i) {
            matching.push(Vote { validator_id: v.id.clone(), signature: v.keypair.sign(&honest_msg) });
            continue;
        }
        if i % 2 == 0 {
            let mut corrupt = subject.as_bytes().to_vec();
            corrupt.extend_from_slice(b"byzantine");
            let wrong = hash256(&corrupt);
            let vote = Vote { validator_id: v.id.clone(), signature: v.keypair.sign(&vote_bytes(&wrong)) };
            // Counted only if it verifies for the honest subject, which it never does.
            if verify(&v.keypair.public(), &honest_msg, &vote.signature) {
                matching.push(vote);
            }
        }
    }
    let needed = validators.quorum_size();
    if (matching.len() as u64) < needed {
        return Err(NoQuorum { matching: matching.len() as u64, needed });
    }
    Ok(QuorumCertificate {
        subject_digest: *subject,
        votes: matching,
        n_validators: validators.n(),
        f_tolerated: validators.f,
    })
}

#[allow(clippy::int_plus_one)]
pub fn verify_certificate(qc: &QuorumCertificate, keys: &ValidatorKeys) -> bool {
    if qc.n_validators != keys.keys.len() as u64 || qc.f_tolerated != keys.f {
        return false;
    }
    let msg = vote_bytes(&qc.subject_digest);
    let mut seen = BTreeSet::new();
    for vote in &qc.votes {
        let Some(pk) = keys.keys.get(&vote.validator_id) else {
            return false;
        };
        if !seen.insert(vote.validator_id.as_str()) || !verify(pk, &msg, &vote.signature) {
            return false;
        }
    }
    seen.len() as u64 >= 2 * keys.f + 1
}

/// Oracle attestation: the same quorum machinery over an external proof object.
pub fn attest_proof_object(
    proof_bytes: &[u8],
    oracles: &ValidatorSet,
    byzantine_mask: &BTreeSet<usize>,
) -> Result<QuorumCertificate, NoQuorum> {
    quorum_validate(&hash256(proof_bytes), oracles, byzantine_mask)
}
