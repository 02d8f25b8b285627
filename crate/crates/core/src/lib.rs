//! Verify-then-pay kernel: mandates, agent authorization, proof of task
//! execution, and PoTE-gated escrow settlement over simulated rails.

pub mod domain;
pub mod identity;
pub mod orchestration;
pub mod runner;
pub mod settlement;
pub mod verification;

pub use domain::{Amount, Digest, RailId, Tick};
pub use settlement::{classify_tier, EscrowStatus, Tier};
