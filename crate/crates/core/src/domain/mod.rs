//! Primitives shared by every plane: canonical encoding, SHA-256 digests,
//! Merkle roots, Ed25519 keys, identifiers and integer money.

mod amount;
mod canonical;
mod digest;
mod ids;
mod keys;
mod merkle;

pub use amount::{Amount, AmountError};
pub use canonical::{canonical_serialize, content_hash, CanonicalError};
pub use digest::{hash256, Digest, DigestParseError};
pub use ids::{IdGenerator, RailId, RailIdError};
pub use keys::{keygen, sign, verify, KeyPair, PublicKey, SecretKey, Signature};
pub use merkle::{merkle_leaf, merkle_node, merkle_root, MerkleError};

/// Logical scheduler time. The simulation never reads a wall clock.
pub type Tick = u64;
