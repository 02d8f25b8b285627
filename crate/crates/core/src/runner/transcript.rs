use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_serialize, hash256, Digest, Tick};
use crate::settlement::{EscrowStatus, Tier};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub tick: Tick,
    pub module: String,
    pub event_type: String,
    pub refs: BTreeMap<String, String>,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "detail", rename_all = "snake_case")]
pub enum Outcome {
    Settled,
    Refunded(String),
    Expired,
    /// The run stopped before any escrow existed.
    Aborted(String),
    /// An escrow is still non-terminal when the run's tick budget ran out.
    Stalled(EscrowStatus),
}

impl Outcome {
    pub fn is_success(&self) -> bool {
        matches!(self, Outcome::Settled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTranscript {
    pub seed: u64,
    pub entries: Vec<TranscriptEntry>,
    pub workflow_id: Option<String>,
    pub escrow_id: Option<String>,
    pub tier: Option<Tier>,
    pub required_proofs: Vec<String>,
    pub escrows: BTreeMap<String, EscrowStatus>,
    pub balances: BTreeMap<String, BTreeMap<String, u64>>,
    pub fees: BTreeMap<String, u64>,
    pub audit_head: Digest,
    pub final_tick: Tick,
    pub outcome: Outcome,
}

impl RunTranscript {
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        canonical_serialize(self).expect("transcript is canonical")
    }

    pub fn digest(&self) -> Digest {
        hash256(&self.to_canonical_bytes())
    }

    pub fn entries_of<'a>(&'a self, event_type: &'a str) -> impl Iterator<Item = &'a TranscriptEntry> + 'a {
        self.entries.iter().filter(move |e| e.event_type == event_type)
    }
}
