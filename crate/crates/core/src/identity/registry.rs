use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{canonical_serialize, hash256, Amount, Digest, PublicKey, Tick};
use crate::verification::{AuditLedger, AuditRefs};

/// Success rate as a rational with denominator 10 000 (basis points).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u32", try_from = "u32")]
pub struct SuccessRate(u32);

impl From<SuccessRate> for u32 {
    fn from(r: SuccessRate) -> u32 {
        r.0
    }
}

impl TryFrom<u32> for SuccessRate {
    type Error = String;

    fn try_from(bps: u32) -> Result<Self, Self::Error> {
        SuccessRate::from_bps(bps).ok_or_else(|| format!("success rate {bps} exceeds 10000 bps"))
    }
}

impl SuccessRate {
    pub const DENOMINATOR: u32 = 10_000;

    pub fn from_bps(bps: u32) -> Option<Self> {
        (bps <= Self::DENOMINATOR).then_some(SuccessRate(bps))
    }

    pub fn bps(self) -> u32 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub agent_id: String,
    pub domain_name: String,
    pub owner_pk: PublicKey,
    pub capabilities: Vec<String>,
    pub endpoint_ref: String,
    pub declared_cost: Amount,
    pub declared_success_rate: SuccessRate,
    pub system_prompt: String,
    pub tool_config: Vec<String>,
    pub version: String,
}

impl AgentManifest {
    pub fn commitment(&self) -> Digest {
        hash256(&canonical_serialize(self).expect("manifest is canonical"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnChainAnchor {
    pub agent_id: String,
    pub owner_ref: PublicKey,
    pub manifest_commitment: Digest,
    pub anchored_at: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("agent id {0} already registered")]
    DuplicateAgentId(String),
    #[error("domain name {0} already registered")]
    DuplicateDomainName(String),
    #[error("agent {0} not found")]
    NotFound(String),
    #[error("update must keep owner and domain name of {0}")]
    OwnershipMismatch(String),
}

#[derive(Serialize)]
struct ChecksumInput<'a> {
    system_prompt: &'a str,
    tool_config: &'a [String],
    version: &'a str,
}

/// Identity checksum over the agent's defining behaviour only: system
/// prompt, tool configuration and version.
pub fn compute_agent_checksum(manifest: &AgentManifest) -> Digest {
    let input = ChecksumInput {
        system_prompt: &manifest.system_prompt,
        tool_config: &manifest.tool_config,
        version: &manifest.version,
    };
    hash256(&canonical_serialize(&input).expect("checksum input is canonical"))
}

/// Off-chain manifest store, naming service and append-only anchor log.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AgentRegistry {
    manifests: BTreeMap<String, AgentManifest>,
    names: BTreeMap<String, String>,
    anchors: Vec<OnChainAnchor>,
}

impl AgentRegistry {
    pub fn register_agent(
        &mut self,
        manifest: AgentManifest,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<OnChainAnchor, RegistryError> {
        if self.manifests.contains_key(&manifest.agent_id) {
            return Err(RegistryError::DuplicateAgentId(manifest.agent_id));
        }
        if self.names.contains_key(&manifest.domain_name) {
            return Err(RegistryError::DuplicateDomainName(manifest.domain_name));
        }
        self.names.insert(manifest.domain_name.clone(), manifest.agent_id.clone());
        Ok(self.store(manifest, "agent.registered", audit, tick))
    }

    /// Owner-initiated manifest change. Appends a new anchor; older anchors stay.
    pub fn update_agent(
        &mut self,
        manifest: AgentManifest,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> Result<OnChainAnchor, RegistryError> {
        let current = self
            .manifests
            .get(&manifest.agent_id)
            .ok_or_else(|| RegistryError::NotFound(manifest.agent_id.clone()))?;
        if current.owner_pk != manifest.owner_pk || current.domain_name != manifest.domain_name {
            return Err(RegistryError::OwnershipMismatch(manifest.agent_id));
        }
        Ok(self.store(manifest, "agent.updated", audit, tick))
    }

    fn store(
        &mut self,
        manifest: AgentManifest,
        event: &str,
        audit: &mut AuditLedger,
        tick: Tick,
    ) -> OnChainAnchor {
        let anchor = OnChainAnchor {
            agent_id: manifest.agent_id.clone(),
            owner_ref: manifest.owner_pk,
            manifest_commitment: manifest.commitment(),
            anchored_at: tick,
        };
        self.anchors.push(anchor.clone());
        self.manifests.insert(manifest.agent_id.clone(), manifest);
        audit.append(event, AuditRefs::none(), &anchor, tick);
        anchor
    }

    pub fn resolve_name(&self, domain_name: &str) -> Result<&str, RegistryError> {
        self.names
            .get(domain_name)
            .map(String::as_str)
            .ok_or_else(|| RegistryError::NotFound(domain_name.to_string()))
    }

    pub fn manifest(&self, agent_id: &str) -> Option<&AgentManifest> {
        self.manifests.get(agent_id)
    }

    pub fn manifests(&self) -> impl Iterator<Item = &AgentManifest> {
        self.manifests.values()
    }

    /// Direct write access to the off-chain record, bypassing anchoring.
    /// Models an out-of-band edit of the registry database.
    pub fn off_chain_record_mut(&mut self, agent_id: &str) -> Option<&mut AgentManifest> {
        self.manifests.get_mut(agent_id)
    }

    pub fn latest_anchor(&self, agent_id: &str) -> Option<&OnChainAnchor> {
        self.anchors.iter().rev().find(|a| a.agent_id == agent_id)
    }

    pub fn anchors(&self) -> &[OnChainAnchor] {
        &self.anchors
    }

    pub fn verify_manifest(&self, agent_id: &str) -> Result<bool, RegistryError> {
        let manifest =
            self.manifests.get(agent_id).ok_or_else(|| RegistryError::NotFound(agent_id.into()))?;
        let anchor =
            self.latest_anchor(agent_id).ok_or_else(|| RegistryError::NotFound(agent_id.into()))?;
        Ok(anchor.manifest_commitment == manifest.commitment())
    }

    /// Checksum of the agent as it is registered right now.
    pub fn live_checksum(&self, agent_id: &str) -> Option<Digest> {
        self.manifests.get(agent_id).map(compute_agent_checksum)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn manifest(id: &str, domain: &str) -> AgentManifest {
        AgentManifest {
            agent_id: id.into(),
            domain_name: domain.into(),
            owner_pk: PublicKey([9; 32]),
            capabilities: vec!["shopping".into()],
            endpoint_ref: format!("sim://{id}"),
            declared_cost: Amount::usd(300),
            declared_success_rate: SuccessRate::from_bps(9_000).unwrap(),
            system_prompt: "buy what the cart says".into(),
            tool_config: vec!["catalog".into(), "checkout".into()],
            version: "1.0.0".into(),
        }
    }

    #[test]
    fn register_and_resolve() {
        let mut reg = AgentRegistry::default();
        let mut audit = AuditLedger::default();
        let m = manifest("agent-a", "shopper.agents.test");
        let anchor = reg.register_agent(m.clone(), &mut audit, 1).unwrap();
        assert_eq!(anchor.manifest_commitment, hash256(&canonical_serialize(&m).unwrap()));
        assert_eq!(reg.resolve_name("shopper.agents.test").unwrap(), "agent-a");
        assert!(matches!(reg.resolve_name("nobody.test"), Err(RegistryError::NotFound(_))));
        assert!(matches!(
            reg.register_agent(manifest("agent-a", "other.test"), &mut audit, 2),
            Err(RegistryError::DuplicateAgentId(_))
        ));
        assert!(matches!(
            reg.register_agent(manifest("agent-b", "shopper.agents.test"), &mut audit, 2),
            Err(RegistryError::DuplicateDomainName(_))
        ));
        reg.register_agent(manifest("agent-b", "b.agents.test"), &mut audit, 3).unwrap();
        assert_ne!(reg.resolve_name("b.agents.test").unwrap(), reg.resolve_name("shopper.agents.test").unwrap());
        assert_eq!(audit.len(), 2);
    }

    #[test]
    fn tamper_then_legit_update() {
        let mut reg = AgentRegistry::default();
        let mut audit = AuditLedger::default();
        reg.register_agent(manifest("agent-a", "a.test"), &mut audit, 1).unwrap();
        assert!(reg.verify_manifest("agent-a").unwrap());
        reg.off_chain_record_mut("agent-a").unwrap().capabilities[0] = "trading".into();
        assert!(!reg.verify_manifest("agent-a").unwrap());
        let updated = reg.manifest("agent-a").unwrap().clone();
        reg.update_agent(updated, &mut audit, 2).unwrap();
        assert!(reg.verify_manifest("agent-a").unwrap());
        assert_eq!(reg.anchors().len(), 2);
    }

    #[test]
    fn checksum_scope() {
        let a = manifest("a", "a.test");
        let mut b = a.clone();
        b.capabilities.push("travel".into());
        b.declared_cost = Amount::usd(1);
        assert_eq!(compute_agent_checksum(&a), compute_agent_checksum(&b));
        b.tool_config.push("refunds".into());
        assert_ne!(compute_agent_checksum(&a), compute_agent_checksum(&b));
    }

    fn mutate(m: &mut AgentManifest, field: usize, salt: u8) {
        let s = format!("~{salt}");
        match field {
            0 => m.domain_name.push_str(&s),
            1 => m.owner_pk.0[salt as usize % 32] ^= 1,
            2 => m.capabilities.push(s),
            3 => m.endpoint_ref.push_str(&s),
            4 => m.declared_cost.minor_units += 1 + salt as u64,
            5 => {
                let bps = m.declared_success_rate.bps();
                m.declared_success_rate = SuccessRate::from_bps(if bps == 0 { 1 } else { bps - 1 }).unwrap()
            }
            6 => m.system_prompt.push_str(&s),
            7 => m.tool_config.push(s),
            8 => m.version.push_str(&s),
            _ => m.declared_cost.currency_code.push('X'),
        }
    }

    proptest! {
        #[test]
        fn single_field_edit_flips_verification(
            prompt in "[a-z ]{0,30}",
            bps in 0u32..=10_000,
            field in 0usize..10,
            salt in any::<u8>(),
        ) {
            let mut m = manifest("agent-p", "p.test");
            m.system_prompt = prompt;
            m.declared_success_rate = SuccessRate::from_bps(bps).unwrap();
            let mut reg = AgentRegistry::default();
            let mut audit = AuditLedger::default();
            reg.register_agent(m, &mut audit, 0).unwrap();
            prop_assert!(reg.verify_manifest("agent-p").unwrap());
            mutate(reg.off_chain_record_mut("agent-p").unwrap(), field, salt);
            prop_assert!(!reg.verify_manifest("agent-p").unwrap());
        }
    }
}
