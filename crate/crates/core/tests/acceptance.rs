//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest as _, Sha256};
use vtp_core::domain::{hash256, keygen, merkle_root, Amount, Digest};
use vtp_core::identity::{
    AgentManifest, AgentRegistry, AuthorizationService, IssueRequest, PaymentMandateLookup, PopProof, SuccessRate,
    TokenError, UserApproval,
};
use vtp_core::orchestration::{Behavior, CartItem};
use vtp_core::runner::{
    randomized_config, run_attack, run_deployment, run_flow, shipped_scenarios, soundness_violations, user_wallet_ref,
    Deployment, Outcome, RunConfig, ATTACKS,
};
use vtp_core::settlement::{classify_tier, next_status, EscrowEvent, EscrowStatus, Tier};
use vtp_core::verification::{
    assemble_pote, attest_tee, notarize_exchange, pote_leaves, quorum_validate, verify_audit_jsonl,
    verify_certificate, AttestationAuthority, AuditLedger, AuditRefs, NotaryPool, ProofKind, ReceiptKind,
    ValidatorSet, VerificationService,
};

const RANDOMIZED_RUNS: u64 = 200;

type Check<'a> = Box<dyn Fn() -> String + 'a>;

fn main() {
    let runs = randomized_runs();
    let criteria: Vec<(&str, Check)> = vec![
        ("verify-then-pay soundness", Box::new(|| criterion_1(&runs))),
        ("threat matrix", Box::new(criterion_2)),
        ("tier boundaries", Box::new(criterion_3)),
        ("escrow machine", Box::new(criterion_4)),
        ("quorum arithmetic", Box::new(criterion_5)),
        ("merkle/PoTE oracle equivalence", Box::new(criterion_6)),
        ("audit tamper-evidence", Box::new(criterion_7)),
        ("conservation and exactly-once outcome", Box::new(|| criterion_8(&runs))),
        ("determinism", Box::new(criterion_9)),
        ("replay and PoP", Box::new(criterion_10)),
    ];
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("criterion {:>2} FAIL  {name}: {msg}", i + 1);
            }
        }
    }
    std::panic::set_hook(hook);
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn randomized_runs() -> Vec<(RunConfig, Deployment)> {
    (0..RANDOMIZED_RUNS)
        .map(|seed| {
            let config = randomized_config(seed);
            let d = run_deployment(config.clone()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            (config, d)
        })
        .collect()
}

fn criterion_1(runs: &[(RunConfig, Deployment)]) -> String {
    let mut outcomes: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut behaviours = BTreeSet::new();
    let mut masks = 0;
    for (config, d) in runs {
        let v = soundness_violations(d);
        assert!(v.is_empty(), "seed {}: {v:?}", config.seed);
        assert!(config.validators.byzantine_mask.len() as u64 <= config.validators.f);
        masks += usize::from(!config.validators.byzantine_mask.is_empty());
        behaviours.extend(config.agents.iter().map(|a| a.behavior));
        let key = match d.outcome().expect("run finished") {
            Outcome::Settled => "settled",
            Outcome::Refunded(_) => "refunded",
            Outcome::Expired => "expired",
            Outcome::Aborted(_) => "aborted",
            Outcome::Stalled(s) => panic!("seed {} stalled in {s}", config.seed),
        };
        *outcomes.entry(key).or_default() += 1;
    }
    assert_eq!(behaviours.len(), Behavior::ALL.len(), "every behaviour exercised");
    assert!(outcomes.get("settled").copied().unwrap_or(0) > 0 && outcomes.get("refunded").copied().unwrap_or(0) > 0);
    format!("{} runs, 0 violations, outcomes {outcomes:?}, {masks} with byzantine validators", runs.len())
}

fn criterion_2() -> String {
    let expected = BTreeMap::from([
        ("phantom_deposit", "deposit_observation"),
        ("unverified_payout", "pote_gate"),
        ("key_exfiltration", "key_isolation"),
        ("cross_rail_replay", "chain_id_scoping"),
    ]);
    let mut blocked = 0;
    for name in ATTACKS {
        for seed in 0..10 {
            let r = run_attack(name, 1_000 + seed).unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
            assert!(r.blocked, "{name} seed {seed} not blocked: {r:?}");
            assert_eq!(r.mechanism, expected[name]);
            match name {
                "phantom_deposit" => assert_eq!(r.evidence["ever_open"], "false"),
                "unverified_payout" => assert!(r.evidence["error"].contains("no anchored PoTE root")),
                "key_exfiltration" => assert_eq!(r.evidence["leaks"], "0"),
                _ => assert!(r.evidence["rejection"].contains("ChainIdMismatch")),
            }
            blocked += 1;
        }
    }
    format!("{blocked}/40 blocked")
}

fn single_item_config(amount: u64) -> RunConfig {
    let mut config = shipped_scenarios()["ecommerce_shopper"].clone();
    config.user.wallet_balance = amount + 10_000;
    config.task.budget_cap = Amount::usd(amount);
    config.quote.items = vec![CartItem { sku: "item".into(), description: "item".into(), price: Amount::usd(amount) }];
    config
}

fn criterion_3() -> String {
    let cases = [(999, Tier::Tier1), (1_000, Tier::Tier2), (100_000, Tier::Tier2), (100_001, Tier::Tier3)];
    for (amount, tier) in cases {
        assert_eq!(classify_tier(&Amount::usd(amount)), Ok(tier), "{amount}");
    }
    let tier1: BTreeSet<&str> = ["ApiReceipt", "AJwtIntegrity"].into();
    let tier2: BTreeSet<&str> = [
        "ApiReceipt",
        "AJwtIntegrity",
        "NotaryReceiptExecutor",
        "NotaryReceiptModel",
        "NotaryReceiptTool",
        "TelemetryHash",
    ]
    .into();
    let mut tier3 = tier2.clone();
    tier3.insert("TeeAttestation");
    for (amount, tier) in cases {
        let t = run_flow(single_item_config(amount)).unwrap();
        assert_eq!(t.tier, Some(tier), "{amount}");
        let got: BTreeSet<&str> = t.required_proofs.iter().map(String::as_str).collect();
        let want = match tier {
            Tier::Tier1 => &tier1,
            Tier::Tier2 => &tier2,
            Tier::Tier3 => &tier3,
        };
        assert_eq!(&got, want, "{amount}");
        assert_eq!(t.outcome, Outcome::Settled, "{amount}");
    }
    "999/1000/100000/100001 -> Tier1/Tier2/Tier2/Tier3 in classifier and run dispatch".into()
}

/// The documented transition table, written out independently.
fn documented(s: EscrowStatus, e: &EscrowEvent, tier3: bool, elapsed: bool) -> Option<EscrowStatus> {
    use EscrowEvent as E;
    use EscrowStatus as S;
    Some(match (s, e) {
        (S::Created, E::DepositObserved) => S::FundingPending,
        (S::FundingPending, E::FinalityReached) => S::Open,
        (S::Open, E::PoteAnchored(_)) => S::SettlementPending,
        (S::Open, E::VerificationFailed) => S::RefundPending,
        (S::Open, E::Timeout) => S::RefundPending,
        (S::SettlementPending, E::ChallengeRaised) if tier3 && !elapsed => S::RefundPending,
        (S::SettlementPending, E::ChallengeWindowElapsed) if tier3 && !elapsed => S::SettlementPending,
        (S::SettlementPending, E::SettlementConfirmed) if !tier3 || elapsed => S::Settled,
        (S::RefundPending, E::RefundConfirmed) => S::Refunded,
        (S::Created, E::Timeout) => S::Expired,
        (S::FundingPending, E::Timeout) => S::Expired,
        _ => return None,
    })
}

fn criterion_4() -> String {
    let events = [
        EscrowEvent::DepositObserved,
        EscrowEvent::FinalityReached,
        EscrowEvent::PoteAnchored(hash256(b"root")),
        EscrowEvent::VerificationFailed,
        EscrowEvent::Timeout,
        EscrowEvent::ChallengeRaised,
        EscrowEvent::ChallengeWindowElapsed,
        EscrowEvent::SettlementConfirmed,
        EscrowEvent::RefundConfirmed,
    ];
    let (mut accepted, mut rejected) = (0, 0);
    for tier in [Tier::Tier1, Tier::Tier2, Tier::Tier3] {
        for elapsed in [false, true] {
            for s in EscrowStatus::ALL {
                for e in &events {
                    let got = next_status(s, tier, elapsed, e);
                    match documented(s, e, tier == Tier::Tier3, elapsed) {
                        Some(next) => {
                            assert_eq!(got, Ok(next), "{s} {e:?} {tier:?}");
                            accepted += 1;
                        }
                        None => {
                            assert!(
                                matches!(got, Err(vtp_core::settlement::EscrowError::IllegalTransition { from, .. }) if from == s),
                                "{s} {e:?} {tier:?} elapsed={elapsed} should be illegal, got {got:?}"
                            );
                            rejected += 1;
                        }
                    }
                }
            }
        }
    }

    let mut reached = BTreeSet::new();
    let mut collect = |d: &Deployment| {
        for r in d.escrows.records() {
            reached.extend(r.history.iter().map(|(_, s)| *s));
        }
    };
    let base = shipped_scenarios()["ecommerce_shopper"].clone();
    collect(&run_deployment(base.clone()).unwrap());
    let mut silent = base.clone();
    silent.agents.iter_mut().for_each(|a| a.behavior = Behavior::NonResponsive);
    collect(&run_deployment(silent).unwrap());
    let mut d = Deployment::new(base).unwrap();
    let fs = d.intake().unwrap();
    d.deposit(&fs, true).unwrap();
    d.conclude(&fs).unwrap();
    collect(&d);
    assert_eq!(reached.len(), 8, "reached {reached:?}");
    format!("{accepted} documented pairs accepted, {rejected} undocumented rejected, 8/8 states reached")
}

fn criterion_5() -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let subject = hash256(b"receipt set");
    let mut checked = 0;
    for (n, f, max_size) in [(4u64, 1u64, 4usize), (7, 2, 3)] {
        let set = ValidatorSet::new("v", n, f, &mut rng).unwrap();
        for bits in 0u32..(1 << n) {
            let mask: BTreeSet<usize> = (0..n as usize).filter(|i| bits & (1 << i) != 0).collect();
            if mask.len() > max_size {
                continue;
            }
            let result = quorum_validate(&subject, &set, &mask);
            if mask.len() as u64 <= f {
                let qc = result.unwrap_or_else(|e| panic!("n={n} mask={mask:?}: {e:?}"));
                assert_eq!(qc.votes.len() as u64, n - mask.len() as u64);
                assert!(verify_certificate(&qc, &set.keys()));
            } else {
                assert!(result.is_err(), "n={n} mask={mask:?} must not certify");
            }
            checked += 1;
        }
    }
    format!("{checked} byzantine subsets checked (n=4 all, n=7 size<=3)")
}

/// Independent reference: recursive split at the largest power of two below n.
fn oracle_root(leaves: &[Vec<u8>]) -> [u8; 32] {
    fn leaf(b: &[u8]) -> [u8; 32] {
        Sha256::new().chain_update([0u8]).chain_update(b).finalize().into()
    }
    fn node(l: [u8; 32], r: [u8; 32]) -> [u8; 32] {
        Sha256::new().chain_update([1u8]).chain_update(l).chain_update(r).finalize().into()
    }
    fn go(leaves: &[Vec<u8>]) -> [u8; 32] {
        if leaves.len() == 1 {
            return leaf(&leaves[0]);
        }
        let mut k = 1;
        while k * 2 < leaves.len() {
            k *= 2;
        }
        node(go(&leaves[..k]), go(&leaves[k..]))
    }
    go(leaves)
}

fn criterion_6() -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let notaries = NotaryPool::new(3, &mut rng);
    let authority = AttestationAuthority::new(&mut rng);
    let validators = ValidatorSet::new("v", 4, 1, &mut rng).unwrap();
    let mut registry = AgentRegistry::default();
    registry.register_agent(manifest(&mut rng, "agent-x", "p"), &mut AuditLedger::default(), 0).unwrap();
    let mut mutations = 0;
    for i in 0..100 {
        let wf = format!("wf-{i}");
        let mut service = VerificationService::default();
        let session = service
            .open_verification_session(&wf, "esc", "sess", b"out", BTreeMap::new(), vtp_core::orchestration::WorkflowState::Executing, 1)
            .unwrap();
        let count = rng.random_range(0..8);
        let kinds = [ReceiptKind::Executor, ReceiptKind::Model, ReceiptKind::Tool, ReceiptKind::Api];
        for _ in 0..count {
            let kind = kinds[rng.random_range(0..4)];
            let mut req = vec![0u8; rng.random_range(0..64)];
            rng.fill_bytes(&mut req);
            let w = rng.random_range(1..=3);
            session.add_receipt(
                notarize_exchange(kind, "sess", &wf, &req, &rng.random::<[u8; 16]>(), &notaries.take(w), rng.random_range(0..50))
                    .unwrap(),
            );
        }
        if rng.random_bool(0.5) {
            let code: [u8; 32] = rng.random();
            session.set_tee(attest_tee(&authority, &registry, "agent-x", &code, 2).unwrap());
        }
        let ajwt = Digest(rng.random());
        let telemetry = Digest(rng.random());
        let bundle = assemble_pote(
            service.session(&wf).unwrap(),
            ajwt,
            telemetry,
            &BTreeSet::from([ProofKind::AJwtIntegrity]),
            &validators,
            &BTreeSet::new(),
        )
        .unwrap();
        let leaves = pote_leaves(&bundle.receipts, bundle.tee.as_ref(), &ajwt, &telemetry);
        assert_eq!(bundle.merkle_root.0, oracle_root(&leaves), "evidence set {i}");
        for j in 0..leaves.len() {
            let mut mutated = leaves.clone();
            let pos = rng.random_range(0..mutated[j].len());
            mutated[j][pos] ^= 1 << rng.random_range(0..8);
            assert_ne!(merkle_root(&mutated).unwrap(), bundle.merkle_root);
            assert_ne!(oracle_root(&mutated), bundle.merkle_root.0);
            mutations += 1;
        }
    }
    format!("100 evidence sets match the reference root; {mutations} single-leaf mutations all change it")
}

fn criterion_7() -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let mut ledger = AuditLedger::default();
    for i in 0..100u64 {
        let payload: BTreeMap<String, u64> = BTreeMap::from([("n".into(), i), ("r".into(), rng.random_range(0..1_000_000))]);
        ledger.append(&format!("event.{}", i % 7), AuditRefs::escrow("wf-1", "esc-1"), &payload, i);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("audit.jsonl");
    ledger.export_to(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(verify_audit_jsonl(&bytes), "unmutated export must verify");
    for k in 0..50 {
        let mut m = bytes.clone();
        let pos = rng.random_range(0..m.len());
        m[pos] ^= rng.random_range(1..=255u8);
        assert!(!verify_audit_jsonl(&m), "mutation {k} at byte {pos} not detected");
    }
    format!("100-event export ({} bytes) verifies; 50/50 single-byte mutations detected", bytes.len())
}

fn criterion_8(runs: &[(RunConfig, Deployment)]) -> String {
    let mut blocks = 0usize;
    let mut funded = 0;
    for (config, d) in runs {
        for chain in d.adapter.chains() {
            assert_eq!(chain.conservation_violations(), 0, "seed {} rail {}", config.seed, chain.rail_id());
            let supply = chain.genesis_supply();
            assert!(chain.supply_trace().iter().all(|s| *s == supply), "seed {}", config.seed);
            blocks += chain.supply_trace().len();
        }
        for rec in d.escrows.records() {
            if !rec.history.iter().any(|(_, s)| *s == EscrowStatus::Open) {
                continue;
            }
            funded += 1;
            let terminal: Vec<EscrowStatus> =
                rec.history.iter().map(|(_, s)| *s).filter(|s| s.is_terminal()).collect();
            assert!(
                terminal == [EscrowStatus::Settled] || terminal == [EscrowStatus::Refunded],
                "seed {} escrow {} terminal history {terminal:?}",
                config.seed,
                rec.escrow_id
            );
            let chain = d.adapter.chain(&rec.rail_id).unwrap();
            let fee = chain.config().flat_fee.minor_units;
            let user = d.adapter.wallets().address(&user_wallet_ref(&config.user.user_id)).unwrap();
            let payer_delta = config.user.wallet_balance as i128 - chain.balance(user) as i128;
            let payee_gain = chain.balance(&rec.payee_address) as i128;
            let amount = rec.amount.minor_units as i128;
            let fee = fee as i128;
            match terminal[0] {
                EscrowStatus::Settled => {
                    assert_eq!(payer_delta, amount + fee, "seed {}", config.seed);
                    assert_eq!(payee_gain, amount - fee, "seed {}", config.seed);
                }
                _ => {
                    assert_eq!(payer_delta, 2 * fee, "seed {}", config.seed);
                    assert_eq!(payee_gain, 0, "seed {}", config.seed);
                }
            }
            assert_eq!(chain.balance(&rec.escrow_address), 0);
        }
    }
    format!("{blocks} blocks conserve supply; {funded} funded escrows end exactly once with matching deltas")
}

fn criterion_9() -> String {
    let mut configs: Vec<RunConfig> = shipped_scenarios().into_values().collect();
    configs.extend([3, 17, 101].map(randomized_config));
    for config in &configs {
        let a = run_flow(config.clone()).unwrap();
        let b = run_flow(config.clone()).unwrap();
        assert_eq!(a.to_canonical_bytes(), b.to_canonical_bytes(), "seed {}", config.seed);
        assert_eq!(a.audit_head, b.audit_head);
        let da = run_deployment(config.clone()).unwrap();
        let db = run_deployment(config.clone()).unwrap();
        assert_eq!(da.audit.export_jsonl(), db.audit.export_jsonl());
    }
    format!("{} configs x 2 runs byte-identical", configs.len())
}

struct Stored(Vec<Digest>);

impl PaymentMandateLookup for Stored {
    fn payment_mandate_matches(&self, h: &Digest) -> bool {
        self.0.contains(h)
    }
}

fn manifest(rng: &mut ChaCha20Rng, id: &str, prompt: &str) -> AgentManifest {
    AgentManifest {
        agent_id: id.into(),
        domain_name: format!("{id}.agents.test"),
        owner_pk: keygen(rng).public(),
        capabilities: vec!["shopping".into()],
        endpoint_ref: format!("sim://{id}"),
        declared_cost: Amount::usd(rng.random_range(0..10_000)),
        declared_success_rate: SuccessRate::from_bps(rng.random_range(0..=10_000)).unwrap(),
        system_prompt: prompt.into(),
        tool_config: (0..rng.random_range(0..4)).map(|i| format!("tool-{i}")).collect(),
        version: format!("{}.{}", rng.random_range(0..5), rng.random_range(0..20)),
    }
}

fn criterion_10() -> String {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let mut authz = AuthorizationService::new("facilitator", "settlement-plane", &mut rng);
    let mut registry = AgentRegistry::default();
    let mut audit = AuditLedger::default();
    for i in 0..100 {
        let id = format!("agent-{i}");
        let prompt: String = (0..rng.random_range(1..40)).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        let m = manifest(&mut rng, &id, &prompt);
        registry.register_agent(m.clone(), &mut audit, 0).unwrap();
        let mandate = Digest(rng.random());
        let pop = keygen(&mut rng);
        let tick = rng.random_range(0..1_000);
        let ttl = rng.random_range(1..500);
        let mut chain = vec!["facilitator".to_string()];
        chain.extend((0..rng.random_range(0..3)).map(|k| format!("sub-{i}-{k}")));
        chain.push(id.clone());
        let token = authz
            .issue_ajwt(
                IssueRequest {
                    approval: UserApproval {
                        user_id: format!("user-{i}"),
                        scope: "payment:escrow".into(),
                        mandate_hash: mandate,
                        ttl_ticks: ttl,
                    },
                    agent_id: id.clone(),
                    pop_pk: pop.public(),
                    delegation_chain: chain,
                },
                &registry,
                &Stored(vec![mandate]),
                &mut audit,
                tick,
            )
            .unwrap_or_else(|e| panic!("token {i}: {e}"));
        let now = tick + rng.random_range(0..ttl);
        let first = PopProof::sign(&pop, &token.claims.jti, Digest(rng.random()));
        assert!(authz.verify_ajwt(&token, &first, now, &registry).is_ok(), "token {i}");
        assert_eq!(authz.verify_ajwt(&token, &first, now, &registry), Err(TokenError::Replayed), "token {i}");

        let mut drifted = m;
        drifted.system_prompt.push_str(" (edited)");
        registry.update_agent(drifted, &mut audit, tick).unwrap();
        let fresh = PopProof::sign(&pop, &token.claims.jti, Digest(rng.random()));
        assert_eq!(authz.verify_ajwt(&token, &fresh, now, &registry), Err(TokenError::ChecksumDrift), "token {i}");
    }
    "100 fuzzed tokens: second presentation Replayed, post-drift ChecksumDrift".into()
}
