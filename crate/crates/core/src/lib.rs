//! Protocol library for TEE-offloaded gas sponsorship: core domain types,
//! Merkle-committed user state, deterministic bundler routing, the four
//! allocation rules, a software enclave, a simulated settlement chain, the
//! bundler node loop, content-addressed persistence, and the gas cost
//! model.

pub mod bundler;
pub mod chain;
pub mod crypto;
pub mod enclave;
pub mod gas;
pub mod merkle;
pub mod persistence;
pub mod routing;
pub mod rules;
pub mod types;

pub use types::{
    op_digest, Attestation, BlockHeight, BundlerAccount, BundlerId, EnclavePubKey, Hash32,
    OptimizedBundle, RuleId, Signature65, UserId, UserOp,
};
