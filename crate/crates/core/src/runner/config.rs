use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Amount, RailId, Tick};
use crate::identity::SuccessRate;
use crate::orchestration::{Behavior, CartItem, TaskRequest, TickWindow};
use crate::settlement::{classify_tier, RailConfig, Tier};
use crate::verification::ProofKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSpec {
    pub user_id: String,
    pub wallet_balance: u64,
    #[serde(default = "yes")]
    pub approve_cart: bool,
}

fn yes() -> bool {
    true
}

/// An agent manifest minus its owner key, which the run generates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub agent_id: String,
    pub domain_name: String,
    pub capabilities: Vec<String>,
    pub endpoint_ref: String,
    pub declared_cost: Amount,
    /// Basis points, 0..=10000.
    pub declared_success_rate: SuccessRate,
    pub system_prompt: String,
    pub tool_config: Vec<String>,
    pub version: String,
    #[serde(default = "honest")]
    pub behavior: Behavior,
}

fn honest() -> Behavior {
    Behavior::Honest
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteSpec {
    pub items: Vec<CartItem>,
}

/// Contract terms applied to whichever agent the router picks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub required_proof_kinds: BTreeSet<ProofKind>,
    pub min_notary_witnesses: u32,
    #[serde(default)]
    pub extra_predicates: Vec<String>,
}

impl Default for ContractSpec {
    fn default() -> Self {
        ContractSpec {
            required_proof_kinds: [ProofKind::ApiReceipt, ProofKind::AJwtIntegrity].into(),
            min_notary_witnesses: 1,
            extra_predicates: PREDICATES.iter().map(|p| p.to_string()).collect(),
        }
    }
}

/// Predicates the runner knows how to evaluate.
pub const PREDICATES: [&str; 4] = ["within-budget", "output-matches-cart", "reconcile-amounts", "notarized-output"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidatorSpec {
    pub n: u64,
    pub f: u64,
    #[serde(default)]
    pub byzantine_mask: BTreeSet<usize>,
}

impl Default for ValidatorSpec {
    fn default() -> Self {
        ValidatorSpec { n: 4, f: 1, byzantine_mask: BTreeSet::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierOverrides {
    /// Raises verification rigor above what the amount implies. Lowering is rejected.
    #[serde(default)]
    pub force_tier: Option<Tier>,
    #[serde(default = "default_window")]
    pub challenge_window_ticks: Tick,
}

fn default_window() -> Tick {
    10
}

impl Default for TierOverrides {
    fn default() -> Self {
        TierOverrides { force_tier: None, challenge_window_ticks: default_window() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Raise a challenge during the Tier 3 challenge window.
    #[serde(default)]
    pub raise_challenge: bool,
    /// Pay out to an address other than the mandate's payee.
    #[serde(default)]
    pub substitute_payee: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "RailConfig::default_rails")]
    pub rails: Vec<RailConfig>,
    pub user: UserSpec,
    pub agents: Vec<AgentSpec>,
    pub task: TaskRequest,
    pub quote: QuoteSpec,
    #[serde(default)]
    pub contract: ContractSpec,
    #[serde(default)]
    pub validators: ValidatorSpec,
    #[serde(default = "default_notaries")]
    pub notaries: usize,
    #[serde(default)]
    pub tier_overrides: TierOverrides,
    #[serde(default = "default_timeout")]
    pub escrow_timeout_ticks: Tick,
    #[serde(default)]
    pub faults: FaultSpec,
}

fn default_notaries() -> usize {
    3
}

fn default_timeout() -> Tick {
    60
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid run config: {0}")]
pub struct ConfigInvalid(pub String);

impl RunConfig {
    pub fn from_json(bytes: &[u8]) -> Result<RunConfig, ConfigInvalid> {
        let cfg: RunConfig = serde_json::from_slice(bytes).map_err(|e| ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The rail the task settles on: the user's preference or the first configured rail.
    pub fn task_rail(&self) -> Option<&RailId> {
        self.task.rail_preference.as_ref().or_else(|| self.rails.first().map(|r| &r.rail_id))
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        let bad = |m: String| Err(ConfigInvalid(m));
        if self.rails.is_empty() {
            return bad("at least one rail is required".into());
        }
        let mut ids = BTreeSet::new();
        let mut chains = BTreeSet::new();
        for r in &self.rails {
            if !ids.insert(&r.rail_id) || !chains.insert(r.chain_id) {
                return bad(format!("duplicate rail or chain id at {}", r.rail_id));
            }
            if r.finality_confirmations == 0 || r.extended_finality_confirmations < r.finality_confirmations {
                return bad(format!("bad finality depths on {}", r.rail_id));
            }
        }
        match self.task_rail() {
            Some(rail) if ids.contains(rail) => {}
            _ => return bad("preferred rail is not configured".into()),
        }
        let v = &self.validators;
        if v.f == 0 || v.n != 3 * v.f + 1 {
            return bad(format!("validators need n = 3f+1 with f >= 1, got n={} f={}", v.n, v.f));
        }
        if v.byzantine_mask.iter().any(|i| *i as u64 >= v.n) {
            return bad("byzantine mask index out of range".into());
        }
        if self.contract.required_proof_kinds.is_empty() || self.contract.min_notary_witnesses == 0 {
            return bad("contract needs at least one proof kind and one witness".into());
        }
        if let Some(p) = self.contract.extra_predicates.iter().find(|p| !PREDICATES.contains(&p.as_str())) {
            return bad(format!("unknown predicate {p}"));
        }
        let witnesses = self.contract.min_notary_witnesses.max(2) as usize;
        if self.notaries < witnesses {
            return bad(format!("{witnesses} notaries needed, {} configured", self.notaries));
        }
        if self.quote.items.is_empty() {
            return bad("quote has no items".into());
        }
        let mut agent_ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for a in &self.agents {
            if !agent_ids.insert(&a.agent_id) || !names.insert(&a.domain_name) {
                return bad(format!("duplicate agent {}", a.agent_id));
            }
        }
        if let Some(forced) = self.tier_overrides.force_tier {
            let total: u64 = self.quote.items.iter().map(|i| i.price.minor_units).sum();
            if let Ok(natural) = classify_tier(&Amount::new(total, self.task.budget_cap.currency_code.clone())) {
                if forced < natural {
                    return bad(format!("force_tier {forced:?} is below the amount's tier {natural:?}"));
                }
            }
        }
        Ok(())
    }
}

fn agent(i: usize, capability: &str, cost: u64, bps: u32, behavior: Behavior) -> AgentSpec {
    AgentSpec {
        agent_id: format!("agent-{i:02}"),
        domain_name: format!("agent-{i:02}.agents.test"),
        capabilities: vec![capability.to_string()],
        endpoint_ref: format!("sim://agent-{i:02}"),
        declared_cost: Amount::usd(cost),
        declared_success_rate: SuccessRate::from_bps(bps).expect("bps in range"),
        system_prompt: format!("You are shopping agent {i}. Buy exactly what the cart lists."),
        tool_config: vec!["catalog".into(), "checkout".into()],
        version: "1.0.0".into(),
        behavior,
    }
}

/// A random but valid configuration: agent roster and behaviours, cart
/// size across all tiers, validator set and byzantine mask of size <= f.
pub fn randomized_config(seed: u64) -> RunConfig {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed_c0f1);
    let total: u64 = match rng.random_range(0..4) {
        0 => rng.random_range(100..1_000),
        1 | 2 => rng.random_range(1_000..=100_000),
        _ => rng.random_range(100_001..400_000),
    };
    let n_items = rng.random_range(1..=3u64).min(total / 50);
    let mut items = Vec::new();
    let mut left = total;
    for i in 0..n_items.max(1) {
        let price = if i + 1 == n_items.max(1) { left } else { left / 2 };
        left -= price;
        items.push(CartItem {
            sku: format!("sku-{seed}-{i}"),
            description: format!("item {i}"),
            price: Amount::usd(price),
        });
    }
    let budget = total + rng.random_range(0..total / 4 + 1);
    let behaviors = Behavior::ALL;
    let agents = (0..rng.random_range(1..=4))
        .map(|i| {
            let behavior = if rng.random_bool(0.5) {
                Behavior::Honest
            } else {
                behaviors[rng.random_range(0..behaviors.len())]
            };
            agent(i, "shopping", rng.random_range(0..budget + 1), rng.random_range(0..=10_000), behavior)
        })
        .collect();
    let f = if rng.random_bool(0.75) { 1 } else { 2 };
    let n = 3 * f + 1;
    let mut byzantine_mask = BTreeSet::new();
    let bad = rng.random_range(0..=f);
    while (byzantine_mask.len() as u64) < bad {
        byzantine_mask.insert(rng.random_range(0..n as usize));
    }
    let mut required = BTreeSet::from([ProofKind::ApiReceipt, ProofKind::AJwtIntegrity]);
    if rng.random_bool(0.3) {
        required.insert(ProofKind::TelemetryHash);
    }
    RunConfig {
        seed,
        rails: RailConfig::default_rails(),
        user: UserSpec { user_id: "user-1".into(), wallet_balance: total + 10_000, approve_cart: true },
        agents,
        task: TaskRequest {
            user_id: "user-1".into(),
            intent_text: "buy the items in the cart".into(),
            required_capability: "shopping".into(),
            budget_cap: Amount::usd(budget),
            rail_preference: if rng.random_bool(0.5) { None } else { RailId::new("sim:beta").ok() },
            validity_window: TickWindow { start: 0, end: 500 },
        },
        quote: QuoteSpec { items },
        contract: ContractSpec {
            required_proof_kinds: required,
            min_notary_witnesses: rng.random_range(1..=2),
            extra_predicates: PREDICATES.iter().map(|p| p.to_string()).collect(),
        },
        validators: ValidatorSpec { n, f, byzantine_mask },
        notaries: 3,
        tier_overrides: TierOverrides::default(),
        escrow_timeout_ticks: default_timeout(),
        faults: FaultSpec { raise_challenge: rng.random_bool(0.15), substitute_payee: false },
    }
}

pub const ECOMMERCE_SHOPPER: &str = include_str!("../../scenarios/ecommerce_shopper.json");
pub const PORTFOLIO_MANAGER: &str = include_str!("../../scenarios/portfolio_manager.json");

/// The shipped scenario configurations by name.
pub fn shipped_scenarios() -> BTreeMap<&'static str, RunConfig> {
    [("ecommerce_shopper", ECOMMERCE_SHOPPER), ("portfolio_manager", PORTFOLIO_MANAGER)]
        .into_iter()
        .map(|(name, src)| (name, RunConfig::from_json(src.as_bytes()).expect("shipped scenario is valid")))
        .collect()
}
