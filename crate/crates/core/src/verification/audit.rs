//! Append-only, hash-chained receipt ledger.
//!
//! Each event carries `prev_hash = SHA-256(canonical(previous event))` and
//! an `event_hash` over its own remaining fields, so an exported file can be
//! checked line by line, including its last line, without outside input.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_serialize, hash256, Digest, Tick};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRefs {
    pub workflow_id: Option<String>,
    pub escrow_id: Option<String>,
}

impl AuditRefs {
    pub fn none() -> Self {
        AuditRefs::default()
    }

    pub fn workflow(workflow_id: &str) -> Self {
        AuditRefs { workflow_id: Some(workflow_id.into()), escrow_id: None }
    }

    pub fn escrow(workflow_id: &str, escrow_id: &str) -> Self {
        AuditRefs { workflow_id: Some(workflow_id.into()), escrow_id: Some(escrow_id.into()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEvent {
    pub seq: u64,
    pub event_type: String,
    pub workflow_id: Option<String>,
    pub escrow_id: Option<String>,
    pub payload_hash: Digest,
    pub prev_hash: Digest,
    pub tick: Tick,
    pub event_hash: Digest,
}

#[derive(Serialize)]
struct EventBody<'a> {
    seq: u64,
    event_type: &'a str,
    workflow_id: &'a Option<String>,
    escrow_id: &'a Option<String>,
    payload_hash: &'a Digest,
    prev_hash: &'a Digest,
    tick: Tick,
}

impl AuditEvent {
    fn body_hash(&self) -> Digest {
        let body = EventBody {
            seq: self.seq,
            event_type: &self.event_type,
            workflow_id: &self.workflow_id,
            escrow_id: &self.escrow_id,
            payload_hash: &self.payload_hash,
            prev_hash: &self.prev_hash,
            tick: self.tick,
        };
        hash256(&canonical_serialize(&body).expect("audit body is canonical"))
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_serialize(self).expect("audit event is canonical")
    }

    /// Link value the next event must carry.
    pub fn link_hash(&self) -> Digest {
        hash256(&self.canonical_bytes())
    }
}

#[derive(Debug, Clone, Default)]
pub struct AuditLedger {
    events: Vec<AuditEvent>,
    payloads: Vec<Vec<u8>>,
}

impl AuditLedger {
    pub fn append<P: Serialize + ?Sized>(
        &mut self,
        event_type: &str,
        refs: AuditRefs,
        payload: &P,
        tick: Tick,
    ) -> AuditEvent {
        let payload_bytes = canonical_serialize(payload).expect("audit payloads are canonical");
        let prev_hash = self.head_hash();
        let mut event = AuditEvent {
            seq: self.events.len() as u64,
            event_type: event_type.to_string(),
            workflow_id: refs.workflow_id,
            escrow_id: refs.escrow_id,
            payload_hash: hash256(&payload_bytes),
            prev_hash,
            tick,
            event_hash: Digest::ZERO,
        };
        event.event_hash = event.body_hash();
        self.events.push(event.clone());
        self.payloads.push(payload_bytes);
        event
    }

    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }

    /// Canonical payload bytes, index-aligned with `events()`.
    pub fn payloads(&self) -> &[Vec<u8>] {
        &self.payloads
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Link hash of the last event; zero for an empty ledger.
    pub fn head_hash(&self) -> Digest {
        self.events.last().map(AuditEvent::link_hash).unwrap_or(Digest::ZERO)
    }

    pub fn export_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.events {
            out.extend(e.canonical_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn export_to(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.export_jsonl())
    }
}

pub fn verify_audit_chain(events: &[AuditEvent]) -> bool {
    let mut prev = Digest::ZERO;
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 || e.prev_hash != prev || e.event_hash != e.body_hash() {
            return false;
        }
        prev = e.link_hash();
    }
    true
}

/// Verifies an exported JSON Lines ledger from its bytes alone. Every line
/// must be the exact canonical encoding of the event it parses to.
pub fn verify_audit_jsonl(bytes: &[u8]) -> bool {
    if bytes.is_empty() {
        return true;
    }
    let Some(body) = bytes.strip_suffix(b"\n") else {
        return false;
    };
    let mut events = Vec::new();
    for line in body.split(|b| *b == b'\n') {
        let Ok(event) = serde_json::from_slice::<AuditEvent>(line) else {
            return false;
        };
        if event.canonical_bytes() != line {
            return false;
        }
        events.push(event);
    }
    verify_audit_chain(&events)
}
