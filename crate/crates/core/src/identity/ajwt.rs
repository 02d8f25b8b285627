//! Agent-scoped JWTs. External form is three base64url segments: canonical
//! header, canonical claims, Ed25519 signature over `header.claims`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::registry::AgentRegistry;
use crate::domain::{
    canonical_serialize, hash256, keygen, verify, Digest, IdGenerator, KeyPair, PublicKey,
    SecretKey, Signature, Tick,
};
use crate::verification::{AuditLedger, AuditRefs};

pub const DEFAULT_TTL_TICKS: Tick = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scope {
    #[serde(rename = "payment:escrow")]
    PaymentEscrow,
    #[serde(rename = "task:execute")]
    TaskExecute,
    #[serde(rename = "credentials:read")]
    CredentialsRead,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::PaymentEscrow => "payment:escrow",
            Scope::TaskExecute => "task:execute",
            Scope::CredentialsRead => "credentials:read",
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scope {
    type Err = IssueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "payment:escrow" => Ok(Scope::PaymentEscrow),
            "task:execute" => Ok(Scope::TaskExecute),
            "credentials:read" => Ok(Scope::CredentialsRead),
            other => Err(IssueError::InvalidScope(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AJwtHeader {
    pub alg: String,
    pub typ: String,
}

impl Default for AJwtHeader {
    fn default() -> Self {
        AJwtHeader { alg: "EdDSA".into(), typ: "A-JWT".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AJwtClaims {
    pub iss: String,
    pub sub: String,
    pub aud: String,
    pub scope: Scope,
    pub nbf: Tick,
    pub exp: Tick,
    pub jti: String,
    pub cnf: PublicKey,
    pub agent_checksum: Digest,
    pub delegation_chain: Vec<String>,
    pub mandate_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AJwt {
    pub header: AJwtHeader,
    pub claims: AJwtClaims,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenDecodeError {
    #[error("token must have three segments")]
    Segments,
    #[error("segment is not base64url")]
    Base64,
    #[error("segment is not canonical JSON: {0}")]
    Json(String),
    #[error("signature must be 64 bytes")]
    SignatureLength,
}

fn signing_input(header: &AJwtHeader, claims: &AJwtClaims) -> String {
    let h = canonical_serialize(header).expect("header is canonical");
    let c = canonical_serialize(claims).expect("claims are canonical");
    format!("{}.{}", URL_SAFE_NO_PAD.encode(h), URL_SAFE_NO_PAD.encode(c))
}

fn decode_segment<T: serde::de::DeserializeOwned + Serialize>(seg: &str) -> Result<T, TokenDecodeError> {
    let bytes = URL_SAFE_NO_PAD.decode(seg).map_err(|_| TokenDecodeError::Base64)?;
    let value: T = serde_json::from_slice(&bytes).map_err(|e| TokenDecodeError::Json(e.to_string()))?;
    // Only the canonical encoding is accepted, so one token has one form.
    if canonical_serialize(&value).ok().as_deref() != Some(bytes.as_slice()) {
        return Err(TokenDecodeError::Json("non-canonical encoding".into()));
    }
    Ok(value)
}

impl AJwt {
    pub fn encode(&self) -> String {
        format!(
            "{}.{}",
            signing_input(&self.header, &self.claims),
            URL_SAFE_NO_PAD.encode(self.signature.0)
        )
    }

    pub fn decode(token: &str) -> Result<AJwt, TokenDecodeError> {
        let parts: Vec<&str> = token.split('.').collect();
        let [h, c, s] = parts.as_slice() else {
            return Err(TokenDecodeError::Segments);
        };
        let header = decode_segment(h)?;
        let claims = decode_segment(c)?;
        let sig = URL_SAFE_NO_PAD.decode(s).map_err(|_| TokenDecodeError::Base64)?;
        let signature = Signature(sig.try_into().map_err(|_| TokenDecodeError::SignatureLength)?);
        Ok(AJwt { header, claims, signature })
    }

    /// Hash of the external form; this is what a PoTE commits to.
    pub fn integrity_hash(&self) -> Digest {
        hash256(self.encode().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserApproval {
    pub user_id: String,
    pub scope: String,
    pub mandate_hash: Digest,
    pub ttl_ticks: Tick,
}

/// Proof of possession for one request: the holder of the `cnf` key signs
/// `jti || request_digest`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopProof {
    pub jti: String,
    pub request_digest: Digest,
    pub signature: Signature,
}

fn pop_message(jti: &str, request_digest: &Digest) -> Vec<u8> {
    let mut msg = jti.as_bytes().to_vec();
    msg.extend_from_slice(request_digest.as_bytes());
    msg
}

impl PopProof {
    pub fn sign(pop_key: &KeyPair, jti: &str, request_digest: Digest) -> PopProof {
        PopProof {
            jti: jti.to_string(),
            request_digest,
            signature: pop_key.sign(&pop_message(jti, &request_digest)),
        }
    }
}

/// Answers whether a stored Payment Mandate with this hash exists and still
/// hashes to it.
pub trait PaymentMandateLookup {
    fn payment_mandate_matches(&self, mandate_hash: &Digest) -> bool;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IssueError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
    #[error("manifest of {0} does not match its anchor")]
    ManifestTampered(String),
    #[error("no stored payment mandate matches the approved hash")]
    ScopeMandateMismatch,
    #[error("scope {0} is not in the vocabulary")]
    InvalidScope(String),
    #[error("delegation chain must be non-empty and acyclic")]
    InvalidDelegationChain,
    #[error("ttl must be positive")]
    InvalidTtl,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("issuer signature invalid")]
    BadIssuerSig,
    #[error("token not yet valid")]
    NotYetValid,
    #[error("token expired")]
    Expired,
    #[error("proof of possession invalid")]
    BadPoP,
    #[error("token already presented for this request")]
    Replayed,
    #[error("agent checksum drifted since issuance")]
    ChecksumDrift,
    #[error("subject agent {0} is not registered")]
    UnknownAgent(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueRequest {
    pub approval: UserApproval,
    pub agent_id: String,
    pub pop_pk: PublicKey,
    pub delegation_chain: Vec<String>,
}

#[derive(Serialize)]
struct IssuedPayload<'a> {
    jti: &'a str,
    sub: &'a str,
    scope: Scope,
    mandate_hash: &'a Digest,
    integrity_hash: Digest,
}

/// Token issuer with its per-run replay cache.
#[derive(Debug)]
pub struct AuthorizationService {
    issuer: String,
    audience: String,
    keypair: KeyPair,
    jtis: IdGenerator,
    consumed: BTreeSet<(String, Digest)>,
}

impl AuthorizationService {
    pub fn new<R: RngCore + ?Sized>(issuer: &str, audience: &str, rng: &mut R) -> Self {
        AuthorizationService {
            issuer: issuer.to_string(),
            audience: audience.to_string(),
            keypair: keygen(rng),
            jtis: IdGenerator::default(),
            consumed: BTreeSet::new(),
        }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn secret_key(&self) -> SecretKey {
        self.keypair.secret()
    }

    pub fn issue_ajwt(
        &mut self,
        req: IssueRequest,
        registry: &AgentRegistry,
        mandates: &dyn PaymentMandateLookup,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<AJwt, IssueError> {
        let scope: Scope = req.approval.scope.parse()?;
        if req.approval.ttl_ticks == 0 {
            return Err(IssueError::InvalidTtl);
        }
        let manifest =
            registry.manifest(&req.agent_id).ok_or_else(|| IssueError::UnknownAgent(req.agent_id.clone()))?;
        if !registry.verify_manifest(&req.agent_id).unwrap_or(false) {
            return Err(IssueError::ManifestTampered(req.agent_id));
        }
        if scope == Scope::PaymentEscrow && !mandates.payment_mandate_matches(&req.approval.mandate_hash) {
            return Err(IssueError::ScopeMandateMismatch);
        }
        let distinct: BTreeSet<&String> = req.delegation_chain.iter().collect();
        if req.delegation_chain.is_empty() || distinct.len() != req.delegation_chain.len() {
            return Err(IssueError::InvalidDelegationChain);
        }
        let claims = AJwtClaims {
            iss: self.issuer.clone(),
            sub: req.agent_id.clone(),
            aud: self.audience.clone(),
            scope,
            nbf: tick,
            exp: tick.saturating_add(req.approval.ttl_ticks),
            jti: self.jtis.next("jti"),
            cnf: req.pop_pk,
            agent_checksum: super::compute_agent_checksum(manifest),
            delegation_chain: req.delegation_chain,
            mandate_hash: req.approval.mandate_hash,
        };
        let header = AJwtHeader::default();
        let signature = self.keypair.sign(signing_input(&header, &claims).as_bytes());
        let token = AJwt { header, claims, signature };
        audit.append(
            "ajwt.issued",
            AuditRefs::none(),
            &IssuedPayload {
                jti: &token.claims.jti,
                sub: &token.claims.sub,
                scope,
                mandate_hash: &token.claims.mandate_hash,
                integrity_hash: token.integrity_hash(),
            },
            tick,
        );
        Ok(token)
    }

    /// Full check of a presented token. Only a fully successful check
    /// consumes the `(jti, request_digest)` pair.
    pub fn verify_ajwt(
        &mut self,
        token: &AJwt,
        pop: &PopProof,
        now: Tick,
        registry: &AgentRegistry,
    ) -> Result<AJwtClaims, TokenError> {
        let claims = &token.claims;
        let signed = verify(
            &self.keypair.public(),
            signing_input(&token.header, claims).as_bytes(),
            &token.signature,
        );
        if !signed || token.header != AJwtHeader::default() || claims.iss != self.issuer {
            return Err(TokenError::BadIssuerSig);
        }
        if now < claims.nbf {
            return Err(TokenError::NotYetValid);
        }
        if now >= claims.exp {
            return Err(TokenError::Expired);
        }
        if pop.jti != claims.jti
            || !verify(&claims.cnf, &pop_message(&pop.jti, &pop.request_digest), &pop.signature)
        {
            return Err(TokenError::BadPoP);
        }
        let key = (claims.jti.clone(), pop.request_digest);
        if self.consumed.contains(&key) {
            return Err(TokenError::Replayed);
        }
        let live = registry
            .live_checksum(&claims.sub)
            .ok_or_else(|| TokenError::UnknownAgent(claims.sub.clone()))?;
        if live != claims.agent_checksum {
            return Err(TokenError::ChecksumDrift);
        }
        self.consumed.insert(key);
        Ok(claims.clone())
    }
}
