//! Settlement plane: simulated rails, custody wallets, the PoTE-gated escrow
//! machine and the rail adapter that drives them.

mod adapter;
mod chain;
mod escrow;
mod explorer;
mod tier;
mod wallet;

pub use adapter::{
    escrow_wallet_ref, net_charges, BatchError, BatchPlan, Charge, DepositObservation, EscrowTerms, FaultInjection,
    FinalityEvent, RailAdapter, ReconcileError, ReconcileVerdict, SettleError,
};
pub use chain::{
    address_of, Address, Block, ExplorerTx, IncludedTx, RailConfig, Rejection, SignedTx, SimChain,
    TxBody, TxOutput, TxStatus,
};
pub use escrow::{
    next_status, EscrowBook, EscrowError, EscrowEvent, EscrowRecord, EscrowStatus, RailTxRef,
};
pub use explorer::{ExplorerFilter, ExplorerIndex, ExplorerRecord};
pub use tier::{classify_tier, Tier, TierError, TIER1_CEILING, TIER2_CEILING};
pub use wallet::{WalletError, WalletPublic, WalletStore};
