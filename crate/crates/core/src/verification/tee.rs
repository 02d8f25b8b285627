//! Signed enclave measurement stubs. The authority key plays the role of the
//! hardware vendor's attestation service.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::domain::{
    canonical_serialize, hash256, keygen, verify, Digest, KeyPair, PublicKey, SecretKey, Signature,
    Tick,
};
use crate::identity::AgentRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeeAttestation {
    pub agent_id: String,
    pub enclave_measurement: Digest,
    pub report_signature: Signature,
    pub tick: Tick,
}

#[derive(Serialize)]
struct ReportBody<'a> {
    agent_id: &'a str,
    enclave_measurement: &'a Digest,
    tick: Tick,
}

fn report_bytes(agent_id: &str, measurement: &Digest, tick: Tick) -> Vec<u8> {
    let mut out = b"vtp-tee:".to_vec();
    out.extend(
        canonical_serialize(&ReportBody { agent_id, enclave_measurement: measurement, tick })
            .expect("report is canonical"),
    );
    out
}

#[derive(Debug)]
pub struct AttestationAuthority {
    keypair: KeyPair,
}

impl AttestationAuthority {
    pub fn new<R: RngCore + ?Sized>(rng: &mut R) -> Self {
        AttestationAuthority { keypair: keygen(rng) }
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn secret_key(&self) -> SecretKey {
        self.keypair.secret()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TeeError {
    #[error("unknown agent {0}")]
    UnknownAgent(String),
}

pub fn attest_tee(
    authority: &AttestationAuthority,
    registry: &AgentRegistry,
    agent_id: &str,
    code_bytes: &[u8],
    tick: Tick,
) -> Result<TeeAttestation, TeeError> {
    if registry.manifest(agent_id).is_none() {
        return Err(TeeError::UnknownAgent(agent_id.to_string()));
    }
    let enclave_measurement = hash256(code_bytes);
    let report_signature = authority.keypair.sign(&report_bytes(agent_id, &enclave_measurement, tick));
    Ok(TeeAttestation { agent_id: agent_id.to_string(), enclave_measurement, report_signature, tick })
}

/// Signature check plus, when given, comparison with the expected measurement.
pub fn verify_attestation(
    att: &TeeAttestation,
    authority: &PublicKey,
    expected_measurement: Option<&Digest>,
) -> bool {
    let signed = verify(
        authority,
        &report_bytes(&att.agent_id, &att.enclave_measurement, att.tick),
        &att.report_signature,
    );
    signed && expected_measurement.is_none_or(|m| *m == att.enclave_measurement)
}
