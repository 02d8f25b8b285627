use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Namespaced rail identifier, `<family>:<network>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RailId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rail id must be <family>:<network> with exactly one ':' (got {0:?})")]
pub struct RailIdError(pub String);

impl RailId {
    pub fn new(s: impl Into<String>) -> Result<Self, RailIdError> {
        let s = s.into();
        let mut parts = s.split(':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(family), Some(network), None) if !family.is_empty() && !network.is_empty() => {
                Ok(RailId(s))
            }
            _ => Err(RailIdError(s)),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for RailId {
    type Err = RailIdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RailId::new(s)
    }
}

impl fmt::Display for RailId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for RailId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for RailId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        RailId::new(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Per-run sequential identifier source. Ids are `<prefix>-<n>` with a
/// separate counter per prefix, so they are unique within a run and
/// reproducible across runs.
#[derive(Debug, Default, Clone)]
pub struct IdGenerator {
    counters: BTreeMap<String, u64>,
}

impl IdGenerator {
    pub fn next(&mut self, prefix: &str) -> String {
        let n = self.counters.entry(prefix.to_string()).or_insert(0);
        *n += 1;
        format!("{prefix}-{n:06}")
    }
}
