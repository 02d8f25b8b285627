use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::json;
use vtp_core::domain::{canonical_serialize, Amount, Digest, RailId};
use vtp_core::identity::tier_requirements;
use vtp_core::runner::{run_attack, run_deployment, shipped_scenarios, AttackReport, Deployment, RunConfig};
use vtp_core::settlement::{classify_tier, ExplorerRecord};
use vtp_core::verification::verify_audit_jsonl;

/// Loads a run config from a JSON file, or by shipped scenario name.
pub fn load_config(source: &str, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut config = if Path::new(source).exists() {
        let text = std::fs::read(source).with_context(|| format!("reading {source}"))?;
        serde_json::from_slice(&text).with_context(|| format!("parsing {source}"))?
    } else if let Some(c) = shipped_scenarios().remove(source) {
        c
    } else {
        bail!("{source} is neither a file nor a shipped scenario");
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn canonical_line(value: &serde_json::Value) -> anyhow::Result<String> {
    Ok(String::from_utf8(canonical_serialize(value)?)?)
}

#[derive(Debug, Default)]
pub struct RunOutputs {
    pub transcript: Option<PathBuf>,
    pub audit: Option<PathBuf>,
}

/// Runs the full lifecycle. Returns the summary line and whether it settled.
pub fn run_flow(config: RunConfig, out: &RunOutputs) -> anyhow::Result<(String, bool)> {
    let d = run_deployment(config)?;
    let t = d.transcript();
    if let Some(path) = &out.transcript {
        std::fs::write(path, t.to_canonical_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &out.audit {
        d.audit.export_to(path).with_context(|| format!("writing {}", path.display()))?;
    }
    let summary = json!({
        "outcome": t.outcome,
        "tier": t.tier,
        "workflow_id": t.workflow_id,
        "escrow_id": t.escrow_id,
        "required_proofs": t.required_proofs,
        "final_tick": t.final_tick,
        "transcript_digest": t.digest(),
        "audit_head": t.audit_head,
    });
    Ok((canonical_line(&summary)?, t.outcome.is_success()))
}

pub fn attack(name: &str, seed: u64) -> anyhow::Result<AttackReport> {
    Ok(run_attack(name, seed)?)
}

pub fn tier(amount: u64, currency: &str) -> anyhow::Result<String> {
    let tier = classify_tier(&Amount::new(amount, currency))?;
    let req = tier_requirements(tier);
    let proofs: Vec<&str> = req.proof_kinds.iter().map(|k| k.as_str()).collect();
    canonical_line(&json!({
        "amount": amount,
        "currency": currency,
        "tier": tier,
        "required_proofs": proofs,
        "min_witnesses": req.min_witnesses,
    }))
}

pub fn audit_verify(path: &Path) -> anyhow::Result<bool> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(verify_audit_jsonl(&bytes))
}

/// Runs `config` and looks a transaction up in the resulting explorer index.
pub fn explorer_tx(config: RunConfig, rail: &str, tx: &str) -> anyhow::Result<Vec<ExplorerRecord>> {
    let d: Deployment = run_deployment(config)?;
    let tx_id: Digest = tx.parse().context("tx id must be 64 hex characters")?;
    let rail = RailId::new(rail)?;
    let rows: Vec<ExplorerRecord> =
        d.explorer.records().iter().filter(|r| r.tx.rail_id == rail && r.tx.tx_id == tx_id).cloned().collect();
    Ok(rows)
}
