use std::fmt;

use serde::{Deserialize, Serialize};

/// Money in integer minor units (1 USD = 100). No fractional form exists.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Amount {
    pub minor_units: u64,
    pub currency_code: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AmountError {
    #[error("currency mismatch: {0} vs {1}")]
    CurrencyMismatch(String, String),
    #[error("amount arithmetic overflow")]
    Overflow,
    #[error("amount arithmetic underflow")]
    Underflow,
}

impl Amount {
    pub fn new(minor_units: u64, currency_code: impl Into<String>) -> Self {
        Amount { minor_units, currency_code: currency_code.into() }
    }

    pub fn usd(minor_units: u64) -> Self {
        Amount::new(minor_units, "USD")
    }

    pub fn zero(currency_code: impl Into<String>) -> Self {
        Amount::new(0, currency_code)
    }

    pub fn is_zero(&self) -> bool {
        self.minor_units == 0
    }

    fn same_currency(&self, other: &Amount) -> Result<(), AmountError> {
        if self.currency_code != other.currency_code {
            return Err(AmountError::CurrencyMismatch(
                self.currency_code.clone(),
                other.currency_code.clone(),
            ));
        }
        Ok(())
    }

    pub fn checked_add(&self, other: &Amount) -> Result<Amount, AmountError> {
        self.same_currency(other)?;
        let units = self.minor_units.checked_add(other.minor_units).ok_or(AmountError::Overflow)?;
        Ok(Amount::new(units, self.currency_code.clone()))
    }

    pub fn checked_sub(&self, other: &Amount) -> Result<Amount, AmountError> {
        self.same_currency(other)?;
        let units = self.minor_units.checked_sub(other.minor_units).ok_or(AmountError::Underflow)?;
        Ok(Amount::new(units, self.currency_code.clone()))
    }

    /// Sum of a non-empty or empty list; an empty list sums to zero in `currency_code`.
    pub fn checked_sum<'a>(
        currency_code: &str,
        items: impl IntoIterator<Item = &'a Amount>,
    ) -> Result<Amount, AmountError> {
        items.into_iter().try_fold(Amount::zero(currency_code), |acc, a| acc.checked_add(a))
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.minor_units, self.currency_code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_arithmetic() {
        let a = Amount::usd(4_000);
        let b = Amount::usd(999);
        assert_eq!(a.checked_add(&b).unwrap(), Amount::usd(4_999));
        assert_eq!(b.checked_sub(&a), Err(AmountError::Underflow));
        assert_eq!(Amount::usd(u64::MAX).checked_add(&Amount::usd(1)), Err(AmountError::Overflow));
        assert!(matches!(
            a.checked_add(&Amount::new(1, "EUR")),
            Err(AmountError::CurrencyMismatch(..))
        ));
    }

    #[test]
    fn sum() {
        let items = [Amount::usd(1), Amount::usd(2), Amount::usd(3)];
        assert_eq!(Amount::checked_sum("USD", &items).unwrap(), Amount::usd(6));
        assert_eq!(Amount::checked_sum("USD", []).unwrap(), Amount::usd(0));
    }
}
