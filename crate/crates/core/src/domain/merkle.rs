use super::digest::{hash256, Digest};

const LEAF_TAG: u8 = 0x00;
const NODE_TAG: u8 = 0x01;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("merkle root of an empty leaf set is undefined")]
    EmptyLeafSet,
}

pub fn merkle_leaf(data: &[u8]) -> Digest {
    let mut buf = Vec::with_capacity(data.len() + 1);
    buf.push(LEAF_TAG);
    buf.extend_from_slice(data);
    hash256(&buf)
}

pub fn merkle_node(left: &Digest, right: &Digest) -> Digest {
    let mut buf = [0u8; 65];
    buf[0] = NODE_TAG;
    buf[1..33].copy_from_slice(left.as_bytes());
    buf[33..].copy_from_slice(right.as_bytes());
    hash256(&buf)
}

/// Domain-separated binary Merkle root. An unpaired node at the end of a
/// level is carried up unchanged; a single leaf's root is its leaf digest.
pub fn merkle_root<L: AsRef<[u8]>>(leaves: &[L]) -> Result<Digest, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeafSet);
    }
    let mut level: Vec<Digest> = leaves.iter().map(|l| merkle_leaf(l.as_ref())).collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [l, r] => merkle_node(l, r),
                [odd] => *odd,
                _ => unreachable!(),
            })
            .collect();
    }
    Ok(level[0])
}
