//! Restricted JSON profile used as the input of every commitment.
//!
//! Objects are emitted with keys in bytewise order, without whitespace,
//! integers in shortest decimal form. Floats are rejected, and so is any map
//! whose keys are not strings.

use serde::Serialize;
use serde_json::Value;

use super::digest::{hash256, Digest};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CanonicalError {
    #[error("non-canonical value: {0}")]
    NonCanonicalValue(String),
}

pub fn canonical_serialize<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CanonicalError> {
    let value = serde_json::to_value(value)
        .map_err(|e| CanonicalError::NonCanonicalValue(e.to_string()))?;
    check(&value)?;
    // serde_json's default Map is a BTreeMap<String, _>; String ordering is
    // bytewise over UTF-8, so the compact writer already emits sorted keys.
    serde_json::to_vec(&value).map_err(|e| CanonicalError::NonCanonicalValue(e.to_string()))
}

/// Hash of a record's canonical form with its top-level `hash` field removed.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<Digest, CanonicalError> {
    let mut value = serde_json::to_value(value)
        .map_err(|e| CanonicalError::NonCanonicalValue(e.to_string()))?;
    if let Value::Object(map) = &mut value {
        map.remove("hash");
    }
    Ok(hash256(&canonical_serialize(&value)?))
}

fn check(value: &Value) -> Result<(), CanonicalError> {
    match value {
        Value::Number(n) if n.is_f64() => Err(CanonicalError::NonCanonicalValue(format!(
            "floating-point number {n}"
        ))),
        Value::Array(items) => items.iter().try_for_each(check),
        Value::Object(map) => map.values().try_for_each(check),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;
    use serde_json::json;

    use super::*;

    #[test]
    fn keys_sorted_no_whitespace() {
        let v = json!({"b": 1, "a": 2});
        assert_eq!(canonical_serialize(&v).unwrap(), br#"{"a":2,"b":1}"#);
        assert_eq!(canonical_serialize(&json!({})).unwrap(), b"{}");
        let nested = json!({"z": [true, null, {"y": -3, "x": "s"}], "A": 0});
        assert_eq!(
            canonical_serialize(&nested).unwrap(),
            br#"{"A":0,"z":[true,null,{"x":"s","y":-3}]}"#
        );
    }

    #[test]
    fn floats_rejected() {
        let err = canonical_serialize(&json!({"x": 1.5})).unwrap_err();
        assert!(matches!(err, CanonicalError::NonCanonicalValue(_)));
        assert!(canonical_serialize(&2.0f64).is_err());
    }

    #[test]
    fn non_string_keys_rejected() {
        let mut m = BTreeMap::new();
        m.insert((1u8, 2u8), "v");
        assert!(canonical_serialize(&m).is_err());
    }

    #[test]
    fn content_hash_ignores_hash_field() {
        let a = json!({"v": 1, "hash": "whatever"});
        let b = json!({"v": 1});
        assert_eq!(content_hash(&a).unwrap(), content_hash(&b).unwrap());
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|i| json!(i)),
            "[a-z]{0,6}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::btree_map("[a-d]{1,3}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn injective_on_corpus(a in arb_value(), b in arb_value()) {
            let ea = canonical_serialize(&a).unwrap();
            let eb = canonical_serialize(&b).unwrap();
            prop_assert_eq!(a == b, ea == eb);
        }

        #[test]
        fn parse_back_is_identity(a in arb_value()) {
            let bytes = canonical_serialize(&a).unwrap();
            let back: Value = serde_json::from_slice(&bytes).unwrap();
            prop_assert_eq!(canonical_serialize(&back).unwrap(), bytes);
        }
    }
}
