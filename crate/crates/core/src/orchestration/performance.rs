use serde::{Deserialize, Serialize};

use crate::domain::{Amount, AmountError, Tick};
use crate::verification::{AuditLedger, AuditRefs, TelemetryStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub workflow_id: String,
    pub samples: u64,
    pub latency_p50: u64,
    pub success: bool,
    pub constraint_adherence: bool,
    pub total_cost: Amount,
    /// Basis points: 6000 for success plus 4000 for staying within budget.
    pub quality_score: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NoTelemetry {
    #[error("no telemetry for workflow {0}")]
    Missing(String),
    #[error(transparent)]
    Amount(#[from] AmountError),
}

/// Aggregates the workflow's telemetry. p50 is the lower median.
pub fn evaluate_performance(
    workflow_id: &str,
    telemetry: &TelemetryStore,
    budget_cap: &Amount,
    success: bool,
    audit: &mut AuditLedger,
    tick: Tick,
) -> Result<PerformanceReport, NoTelemetry> {
    let samples = telemetry.samples(workflow_id);
    if samples.is_empty() {
        return Err(NoTelemetry::Missing(workflow_id.to_string()));
    }
    let mut latencies: Vec<u64> = samples.iter().map(|s| s.latency_ms).collect();
    latencies.sort_unstable();
    let latency_p50 = latencies[(latencies.len() - 1) / 2];
    let total_cost = Amount::checked_sum(&budget_cap.currency_code, samples.iter().map(|s| &s.cost))?;
    let constraint_adherence = total_cost.minor_units <= budget_cap.minor_units;
    let report = PerformanceReport {
        workflow_id: workflow_id.to_string(),
        samples: samples.len() as u64,
        latency_p50,
        success,
        constraint_adherence,
        total_cost,
        quality_score: 6_000 * success as u32 + 4_000 * constraint_adherence as u32,
    };
    audit.append("performance.evaluated", AuditRefs::workflow(workflow_id), &report, tick);
    Ok(report)
}
