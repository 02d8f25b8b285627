#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use vtp_core::domain::{hash256, keygen, Amount, Digest, RailId};
use vtp_core::identity::{AgentContract, AgentManifest, AgentRegistry, EvidenceKeys, SuccessRate};
use vtp_core::orchestration::WorkflowState;
use vtp_core::runner::agent_code;
use vtp_core::settlement::{Address, EscrowRecord, EscrowStatus, Tier};
use vtp_core::verification::{
    assemble_pote, attest_tee, notarize_exchange, AttestationAuthority, AuditLedger, NotaryPool, PoTEBundle,
    PoteError, ProofKind, ReceiptKind, ValidatorSet, VerificationService,
};

pub const AGENT: &str = "agent-1";
pub const WF: &str = "wf-000001";
pub const ESC: &str = "esc-000001";

pub fn manifest(owner_seed: u64) -> AgentManifest {
    let owner = keygen(&mut ChaCha20Rng::seed_from_u64(owner_seed));
    AgentManifest {
        agent_id: AGENT.into(),
        domain_name: "agent-1.agents.test".into(),
        owner_pk: owner.public(),
        capabilities: vec!["shopping".into()],
        endpoint_ref: "sim://agent-1".into(),
        declared_cost: Amount::usd(100),
        declared_success_rate: SuccessRate::from_bps(9000).unwrap(),
        system_prompt: "buy the cart".into(),
        tool_config: vec!["checkout".into()],
        version: "1.0.0".into(),
    }
}

pub fn escrow_record(status: EscrowStatus, tier: Tier) -> EscrowRecord {
    EscrowRecord {
        escrow_id: ESC.into(),
        workflow_id: WF.into(),
        rail_id: RailId::new("sim:alpha").unwrap(),
        amount: Amount::usd(4_999),
        payer_ref: "user:alice".into(),
        payer_address: Address("payer".into()),
        payee_agent_id: AGENT.into(),
        payee_address: Address("payee".into()),
        escrow_address: Address("escrow".into()),
        deposit_tx_id: None,
        status,
        pote_root: None,
        settlement_tx_ids: Vec::new(),
        refund_tx_ids: Vec::new(),
        timeout_tick: 100,
        tier,
        challenge_window_elapsed: false,
        history: vec![(0, status)],
    }
}

/// Everything needed to produce and check a PoTE bundle outside a full run.
pub struct Evidence {
    pub registry: AgentRegistry,
    pub audit: AuditLedger,
    pub notaries: NotaryPool,
    pub authority: AttestationAuthority,
    pub validators: ValidatorSet,
    pub measurement: Digest,
    pub ajwt_hash: Digest,
    pub telemetry_hash: Digest,
}

impl Evidence {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut audit = AuditLedger::default();
        let mut registry = AgentRegistry::default();
        let m = manifest(seed);
        let measurement = hash256(&agent_code(&m));
        registry.register_agent(m, &mut audit, 0).unwrap();
        Evidence {
            registry,
            audit,
            notaries: NotaryPool::new(3, &mut rng),
            authority: AttestationAuthority::new(&mut rng),
            validators: ValidatorSet::new("validator", 4, 1, &mut rng).unwrap(),
            measurement,
            ajwt_hash: hash256(b"ajwt"),
            telemetry_hash: hash256(b"telemetry"),
        }
    }

    pub fn keys(&self) -> EvidenceKeys {
        EvidenceKeys {
            notary_keys: self.notaries.public_keys(),
            tee_authority: self.authority.public(),
            expected_measurement: Some(self.measurement),
            validators: self.validators.keys(),
            expected_ajwt_hash: Some(self.ajwt_hash),
            expected_telemetry_hash: Some(self.telemetry_hash),
        }
    }

    /// Assembles a bundle holding one receipt per kind in `receipts`, each
    /// with `witnesses` notary signatures, plus a TEE report when asked.
    pub fn bundle(
        &self,
        receipts: &[ReceiptKind],
        witnesses: usize,
        tee: bool,
        mask: &BTreeSet<usize>,
    ) -> Result<PoTEBundle, PoteError> {
        let mut service = VerificationService::default();
        let session = service
            .open_verification_session(WF, ESC, "sess-000001", b"output", BTreeMap::new(), WorkflowState::Executing, 5)
            .unwrap();
        let notaries = self.notaries.take(witnesses);
        for (i, kind) in receipts.iter().enumerate() {
            let req = format!("request-{i}");
            let resp = format!("response-{i}");
            session.add_receipt(
                notarize_exchange(*kind, "sess-000001", WF, req.as_bytes(), resp.as_bytes(), &notaries, 5).unwrap(),
            );
        }
        if tee {
            let m = self.registry.manifest(AGENT).unwrap();
            session.set_tee(attest_tee(&self.authority, &self.registry, AGENT, &agent_code(m), 5).unwrap());
        }
        assemble_pote(
            service.session(WF).unwrap(),
            self.ajwt_hash,
            self.telemetry_hash,
            &BTreeSet::new(),
            &self.validators,
            mask,
        )
    }
}

pub fn contract(kinds: &[ProofKind], min_witnesses: u32) -> AgentContract {
    AgentContract {
        agent_id: AGENT.into(),
        required_proof_kinds: kinds.iter().copied().collect(),
        min_notary_witnesses: min_witnesses,
        extra_predicates: Vec::new(),
    }
}

pub const ALL_RECEIPTS: [ReceiptKind; 4] = [ReceiptKind::Executor, ReceiptKind::Model, ReceiptKind::Tool, ReceiptKind::Api];
