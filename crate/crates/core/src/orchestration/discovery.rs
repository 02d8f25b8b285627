//! Retriever, Ranker and Router.
//!
//! score = 1/2 * jaccard(capabilities, {required}) + 3/10 * success_rate
//!       + 1/5 * clamp(1 - cost / budget_cap, 0, 1)
//!
//! Scores are exact rationals so ties are real ties.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use num_rational::Ratio;

use super::facilitator::TaskRequest;
use crate::identity::{AgentManifest, AgentRegistry, SuccessRate};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedAgent<S = Ratio<i128>> {
    pub agent_id: String,
    pub score: S,
    pub declared_cost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no agent found")]
pub struct NoAgentFound;

/// Registered agents advertising `capability` whose manifest still matches its anchor.
pub fn retrieve_agents(registry: &AgentRegistry, capability: &str) -> Vec<AgentManifest> {
    registry
        .manifests()
        .filter(|m| m.capabilities.iter().any(|c| c == capability))
        .filter(|m| registry.verify_manifest(&m.agent_id).unwrap_or(false))
        .cloned()
        .collect()
}

fn capability_match(manifest: &AgentManifest, required: &str) -> Ratio<i128> {
    let caps: BTreeSet<&str> = manifest.capabilities.iter().map(String::as_str).collect();
    let inter = caps.contains(required) as i128;
    let union = caps.len() as i128 + 1 - inter;
    Ratio::new(inter, union)
}

fn cost_score(manifest: &AgentManifest, req: &TaskRequest) -> Ratio<i128> {
    let cap = &req.budget_cap;
    if manifest.declared_cost.currency_code != cap.currency_code || cap.minor_units == 0 {
        return Ratio::from_integer(0);
    }
    let s = Ratio::from_integer(1)
        - Ratio::new(manifest.declared_cost.minor_units as i128, cap.minor_units as i128);
    s.clamp(Ratio::from_integer(0), Ratio::from_integer(1))
}

pub fn score(manifest: &AgentManifest, req: &TaskRequest) -> Ratio<i128> {
    let success = Ratio::new(
        manifest.declared_success_rate.bps() as i128,
        SuccessRate::DENOMINATOR as i128,
    );
    Ratio::new(1, 2) * capability_match(manifest, &req.required_capability)
        + Ratio::new(3, 10) * success
        + Ratio::new(1, 5) * cost_score(manifest, req)
}

/// Descending score, ties by agent id ascending.
pub fn rank_agents(candidates: &[AgentManifest], req: &TaskRequest) -> Vec<RankedAgent> {
    let mut ranked: Vec<RankedAgent> = candidates
        .iter()
        .map(|m| RankedAgent {
            agent_id: m.agent_id.clone(),
            score: score(m, req),
            declared_cost: m.declared_cost.minor_units,
        })
        .collect();
    ranked.sort_by(|a, b| b.score.cmp(&a.score).then_with(|| a.agent_id.cmp(&b.agent_id)));
    ranked
}

/// Chooses between the first two entries only: higher score, then lower
/// declared cost, then agent id.
pub fn route<S: Ord>(ranked: &[RankedAgent<S>]) -> Result<String, NoAgentFound> {
    let better = |a: &RankedAgent<S>, b: &RankedAgent<S>| -> Ordering {
        b.score
            .cmp(&a.score)
            .then(a.declared_cost.cmp(&b.declared_cost))
            .then_with(|| a.agent_id.cmp(&b.agent_id))
    };
    match ranked {
        [] => Err(NoAgentFound),
        [only] => Ok(only.agent_id.clone()),
        [a, b, ..] => Ok(if better(a, b) == Ordering::Greater { b } else { a }.agent_id.clone()),
    }
}
