use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_serialize, hash256, Amount, Digest, Tick};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub workflow_id: String,
    pub step_label: String,
    pub latency_ms: u64,
    pub tokens: u64,
    pub cost: Amount,
    pub tick: Tick,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TelemetryStore {
    samples: BTreeMap<String, Vec<TelemetrySample>>,
}

impl TelemetryStore {
    pub fn record(&mut self, sample: TelemetrySample) {
        self.samples.entry(sample.workflow_id.clone()).or_default().push(sample);
    }

    pub fn samples(&self, workflow_id: &str) -> &[TelemetrySample] {
        self.samples.get(workflow_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// SHA-256 over the canonical list of samples in arrival order.
    pub fn session_hash(&self, workflow_id: &str) -> Digest {
        hash256(&canonical_serialize(self.samples(workflow_id)).expect("samples are canonical"))
    }
}
