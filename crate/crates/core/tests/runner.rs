use vtp_core::domain::hash256;
use vtp_core::orchestration::Behavior;
use vtp_core::runner::{
    contains_key_material, randomized_config, run_attack, run_deployment, run_flow, shipped_scenarios,
    soundness_violations, Outcome, ATTACKS,
};
use vtp_core::settlement::{EscrowStatus, ExplorerFilter};
use vtp_core::Tier;

#[test]
fn shipped_scenarios_settle() {
    for (name, config) in shipped_scenarios() {
        let d = run_deployment(config).unwrap();
        let t = d.transcript();
        println!("{name}: {:?} tier {:?} proofs {:?} tick {}", t.outcome, t.tier, t.required_proofs, t.final_tick);
        assert_eq!(t.outcome, Outcome::Settled, "{name}");
        assert!(soundness_violations(&d).is_empty());
    }
}

#[test]
fn shipped_scenario_tiers() {
    let s = shipped_scenarios();
    assert_eq!(run_flow(s["ecommerce_shopper"].clone()).unwrap().tier, Some(Tier::Tier2));
    assert_eq!(run_flow(s["portfolio_manager"].clone()).unwrap().tier, Some(Tier::Tier3));
}

#[test]
fn attacks_are_blocked() {
    for name in ATTACKS {
        let r = run_attack(name, 1).unwrap();
        println!("{r:?}");
        assert!(r.blocked, "{name}: {r:?}");
    }
}

#[test]
fn randomized_runs_smoke() {
    for seed in 0..30 {
        let d = run_deployment(randomized_config(seed)).unwrap();
        let t = d.transcript();
        println!("seed {seed}: {:?} {:?}", t.outcome, t.tier);
        assert!(soundness_violations(&d).is_empty());
        assert!(!matches!(t.outcome, Outcome::Stalled(_)), "seed {seed}");
    }
}

#[test]
fn portfolio_over_budget_agent_is_refunded() {
    let mut config = shipped_scenarios()["portfolio_manager"].clone();
    for a in &mut config.agents {
        a.behavior = Behavior::OverBudget;
    }
    let d = run_deployment(config).unwrap();
    let t = d.transcript();
    assert!(matches!(t.outcome, Outcome::Refunded(_)), "{:?}", t.outcome);
    assert!(t.entries_of("settlement.submitted").next().is_none());
    assert!(t.entries_of("refund.submitted").next().is_some());
    assert_eq!(t.escrows["esc-000001"], EscrowStatus::Refunded);
}

#[test]
fn honest_ecommerce_reconciles() {
    let t = run_flow(shipped_scenarios()["ecommerce_shopper"].clone()).unwrap();
    let verdicts: Vec<&str> = t.entries_of("reconciled").map(|e| e.refs["verdict"].as_str()).collect();
    assert_eq!(verdicts, ["match"]);
}

#[test]
fn explorer_queries() {
    let d = run_deployment(shipped_scenarios()["ecommerce_shopper"].clone()).unwrap();
    let by_escrow = d.explorer.query(&ExplorerFilter { escrow_id: Some("esc-000001".into()), ..Default::default() });
    assert!(!by_escrow.is_empty());
    let settle_tx = d.escrows.get("esc-000001").unwrap().settlement_tx_ids[0].tx_id;
    assert!(by_escrow.iter().any(|r| r.tx.tx_id == settle_tx));

    let unknown = ExplorerFilter { tx_id: Some(hash256(b"nothing").to_hex()), ..Default::default() };
    assert!(d.explorer.query(&unknown).is_empty());

    let dump = serde_json::to_vec(d.explorer.records()).unwrap();
    for key in d.known_secret_keys() {
        assert!(!contains_key_material(&dump, key.expose_bytes()));
    }
}

#[test]
fn determinism_across_repeats() {
    for seed in [0, 4, 9, 21, 42] {
        let a = run_flow(randomized_config(seed)).unwrap();
        let b = run_flow(randomized_config(seed)).unwrap();
        assert_eq!(a.digest(), b.digest(), "seed {seed}");
    }
}
