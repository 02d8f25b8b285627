//! Scripted service agents. Each behaviour is deterministic given the cart.

use serde::{Deserialize, Serialize};

use super::mandate::{CartItem, CartMandate};
use crate::domain::{canonical_serialize, Amount, Tick};
use crate::verification::ReceiptKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    Honest,
    WrongOutput,
    OverBudget,
    NonResponsive,
    InjectionCompromised,
}

impl Behavior {
    pub const ALL: [Behavior; 5] = [
        Behavior::Honest,
        Behavior::WrongOutput,
        Behavior::OverBudget,
        Behavior::NonResponsive,
        Behavior::InjectionCompromised,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderReceipt {
    pub order_id: String,
    pub workflow_id: String,
    pub merchant_agent_id: String,
    pub items: Vec<CartItem>,
    pub total: Amount,
    pub tick: Tick,
}

/// One outbound exchange the agent made while working.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentStep {
    pub kind: ReceiptKind,
    pub label: &'static str,
    pub request: Vec<u8>,
    pub response: Vec<u8>,
    pub latency_ms: u64,
    pub tokens: u64,
    pub cost: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentOutcome {
    pub output: Option<OrderReceipt>,
    pub steps: Vec<AgentStep>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceAgent {
    pub agent_id: String,
    pub behavior: Behavior,
}

fn bytes<T: Serialize>(v: &T) -> Vec<u8> {
    canonical_serialize(v).expect("agent exchanges are canonical")
}

impl ServiceAgent {
    pub fn new(agent_id: &str, behavior: Behavior) -> Self {
        ServiceAgent { agent_id: agent_id.to_string(), behavior }
    }

    /// Runs the task: a model call to plan, a tool call to assemble the
    /// order, and the merchant API call that places it.
    pub fn perform(&self, workflow_id: &str, task_id: &str, cart: &CartMandate, budget_cap: &Amount, tick: Tick) -> AgentOutcome {
        if self.behavior == Behavior::NonResponsive {
            return AgentOutcome { output: None, steps: Vec::new() };
        }
        let currency = budget_cap.currency_code.as_str();
        let mut items = cart.items.clone();
        if self.behavior == Behavior::WrongOutput {
            if let Some(first) = items.first_mut() {
                first.sku.push_str("-substitute");
                first.description = format!("{} (substituted)", first.description);
            }
        }
        let total = Amount::checked_sum(currency, items.iter().map(|i| &i.price)).unwrap_or_else(|_| Amount::zero(currency));
        let order = OrderReceipt {
            order_id: format!("order-{task_id}"),
            workflow_id: workflow_id.to_string(),
            merchant_agent_id: cart.merchant_agent_id.clone(),
            items: items.clone(),
            total: total.clone(),
            tick,
        };
        let api_cost = match self.behavior {
            Behavior::OverBudget => Amount::new(budget_cap.minor_units.saturating_add(total.minor_units), currency),
            _ => total.clone(),
        };
        let model_tokens = 200 + 40 * items.len() as u64;
        let steps = vec![
            AgentStep {
                kind: ReceiptKind::Model,
                label: "model.plan",
                request: bytes(&serde_json::json!({"task_id": task_id, "prompt": "plan purchase", "items": items.len()})),
                response: bytes(&serde_json::json!({"plan": items.iter().map(|i| i.sku.clone()).collect::<Vec<_>>()})),
                latency_ms: 120 + 10 * items.len() as u64,
                tokens: model_tokens,
                cost: Amount::zero(currency),
            },
            AgentStep {
                kind: ReceiptKind::Tool,
                label: "tool.checkout",
                request: bytes(&serde_json::json!({"tool": "checkout", "skus": items.iter().map(|i| i.sku.clone()).collect::<Vec<_>>()})),
                response: bytes(&serde_json::json!({"ok": true, "total": total})),
                latency_ms: 45,
                tokens: 0,
                cost: Amount::zero(currency),
            },
            AgentStep {
                kind: ReceiptKind::Api,
                label: "api.place_order",
                request: bytes(&serde_json::json!({"merchant": cart.merchant_agent_id, "items": items, "charge": api_cost})),
                response: bytes(&order),
                latency_ms: 80,
                tokens: 0,
                cost: api_cost,
            },
        ];
        AgentOutcome { output: Some(order), steps }
    }
}
