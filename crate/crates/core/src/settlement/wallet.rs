//! Settlement-plane key custody. Keys are created and used here only; the
//! control plane sees wallet references and addresses.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::Serialize;

use super::chain::{address_of, Address, RailConfig, SignedTx, TxBody, TxOutput};
use crate::domain::{keygen, KeyPair, PublicKey, RailId, SecretKey};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WalletError {
    #[error("unknown wallet {0}")]
    UnknownWallet(String),
    #[error("wallet {0} already exists")]
    DuplicateWallet(String),
}

#[derive(Debug)]
struct WalletAccount {
    rail_id: RailId,
    chain_id: u64,
    fee: u64,
    address: Address,
    keypair: KeyPair,
    next_nonce: u64,
}

/// Public projection of a wallet; the only wallet shape that is ever serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WalletPublic {
    pub wallet_ref: String,
    pub rail_id: RailId,
    pub address: Address,
    pub public_key: PublicKey,
}

#[derive(Debug, Default)]
pub struct WalletStore {
    accounts: BTreeMap<String, WalletAccount>,
}

impl WalletStore {
    pub fn create<R: RngCore + ?Sized>(
        &mut self,
        wallet_ref: &str,
        rail: &RailConfig,
        rng: &mut R,
    ) -> Result<Address, WalletError> {
        if self.accounts.contains_key(wallet_ref) {
            return Err(WalletError::DuplicateWallet(wallet_ref.to_string()));
        }
        let keypair = keygen(rng);
        let address = address_of(&keypair.public());
        self.accounts.insert(
            wallet_ref.to_string(),
            WalletAccount {
                rail_id: rail.rail_id.clone(),
                chain_id: rail.chain_id,
                fee: rail.flat_fee.minor_units,
                address: address.clone(),
                keypair,
                next_nonce: 0,
            },
        );
        Ok(address)
    }

    pub fn address(&self, wallet_ref: &str) -> Result<&Address, WalletError> {
        self.account(wallet_ref).map(|a| &a.address)
    }

    pub fn rail_of(&self, wallet_ref: &str) -> Result<&RailId, WalletError> {
        self.account(wallet_ref).map(|a| &a.rail_id)
    }

    pub fn contains(&self, wallet_ref: &str) -> bool {
        self.accounts.contains_key(wallet_ref)
    }

    fn account(&self, wallet_ref: &str) -> Result<&WalletAccount, WalletError> {
        self.accounts.get(wallet_ref).ok_or_else(|| WalletError::UnknownWallet(wallet_ref.into()))
    }

    /// Aligns the local nonce with what the rail expects next.
    pub fn sync_nonce(&mut self, wallet_ref: &str, nonce: u64) -> Result<(), WalletError> {
        let acct = self
            .accounts
            .get_mut(wallet_ref)
            .ok_or_else(|| WalletError::UnknownWallet(wallet_ref.into()))?;
        acct.next_nonce = nonce;
        Ok(())
    }

    pub fn sign_transfer(
        &mut self,
        wallet_ref: &str,
        to: &Address,
        amount: u64,
        revert: bool,
    ) -> Result<SignedTx, WalletError> {
        self.sign_outputs(wallet_ref, vec![TxOutput { to: to.clone(), amount }], revert)
    }

    /// Signs one transaction for the wallet's bound rail; chain id and fee
    /// always come from that binding.
    pub fn sign_outputs(
        &mut self,
        wallet_ref: &str,
        outputs: Vec<TxOutput>,
        revert: bool,
    ) -> Result<SignedTx, WalletError> {
        let acct = self
            .accounts
            .get_mut(wallet_ref)
            .ok_or_else(|| WalletError::UnknownWallet(wallet_ref.into()))?;
        let body = TxBody {
            chain_id: acct.chain_id,
            from: acct.address.clone(),
            sender_pk: acct.keypair.public(),
            outputs,
            fee: acct.fee,
            nonce: acct.next_nonce,
            revert,
        };
        acct.next_nonce += 1;
        Ok(SignedTx { signature: acct.keypair.sign(&body.signing_bytes()), body })
    }

    pub fn public_view(&self) -> Vec<WalletPublic> {
        self.accounts
            .iter()
            .map(|(r, a)| WalletPublic {
                wallet_ref: r.clone(),
                rail_id: a.rail_id.clone(),
                address: a.address.clone(),
                public_key: a.keypair.public(),
            })
            .collect()
    }

    /// Every secret held in custody. Used by leak scans only.
    pub fn secret_keys(&self) -> Vec<SecretKey> {
        self.accounts.values().map(|a| a.keypair.secret()).collect()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    #[test]
    fn binds_chain_id_from_rail() {
        let rails = RailConfig::default_rails();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut store = WalletStore::default();
        store.create("alice@alpha", &rails[0], &mut rng).unwrap();
        store.create("alice@beta", &rails[1], &mut rng).unwrap();
        let dest = Address("0xdead".into());
        let a = store.sign_transfer("alice@alpha", &dest, 5, false).unwrap();
        let b = store.sign_transfer("alice@beta", &dest, 5, false).unwrap();
        assert_eq!(a.body.chain_id, 101);
        assert_eq!(b.body.chain_id, 102);
        assert_eq!(
            store.sign_transfer("nobody", &dest, 5, false),
            Err(WalletError::UnknownWallet("nobody".into()))
        );
        assert!(store.create("alice@alpha", &rails[0], &mut rng).is_err());
    }

    #[test]
    fn public_view_has_no_secrets() {
        let rails = RailConfig::default_rails();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut store = WalletStore::default();
        store.create("w", &rails[0], &mut rng).unwrap();
        let json = serde_json::to_string(&store.public_view()).unwrap();
        for sk in store.secret_keys() {
            assert!(!json.contains(&hex::encode(sk.expose_bytes())));
        }
    }
}
