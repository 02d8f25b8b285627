use serde::{Deserialize, Serialize};

use crate::domain::Amount;

/// Risk tier, derived only from the payment amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Tier1,
    Tier2,
    Tier3,
}

/// Upper bound (exclusive) of Tier 1: $10.00.
pub const TIER1_CEILING: u64 = 1_000;
/// Upper bound (inclusive) of Tier 2: $1,000.00.
pub const TIER2_CEILING: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TierError {
    #[error("cannot classify a zero amount")]
    ZeroAmount,
}

pub fn classify_tier(amount: &Amount) -> Result<Tier, TierError> {
    match amount.minor_units {
        0 => Err(TierError::ZeroAmount),
        n if n < TIER1_CEILING => Ok(Tier::Tier1),
        n if n <= TIER2_CEILING => Ok(Tier::Tier2),
        _ => Ok(Tier::Tier3),
    }
}
