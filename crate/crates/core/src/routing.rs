//! Deterministic userOp-to-bundler assignment over a circular registry.
//!
//! A user's op at block t routes to active[(keccak256(user) + t) mod |B|],
//! so assignments rotate by one position per block and every bundler
//! eventually serves every user.

use serde::{Deserialize, Serialize};

use crate::crypto::keccak256;
use crate::types::{BlockHeight, BundlerAccount, BundlerId, UserId, UserOp};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("registry has no active bundlers")]
    EmptyRegistry,
    #[error("bundler {0} not in registry")]
    UnknownBundler(BundlerAccount),
    #[error("bundler {0} already in registry")]
    DuplicateBundler(BundlerAccount),
}

/// Active bundler set with contiguous circular indices.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct BundlerRegistry {
    active: Vec<BundlerId>,
    /// Block of the last membership change.
    pub epoch: BlockHeight,
}

impl BundlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn active(&self) -> &[BundlerId] {
        &self.active
    }

    pub fn contains(&self, account: &BundlerAccount) -> bool {
        self.active.iter().any(|b| b.account == *account)
    }

    pub fn get(&self, account: &BundlerAccount) -> Option<BundlerId> {
        self.active.iter().find(|b| b.account == *account).copied()
    }
}

/// Interpret the full 32-byte digest as a big-endian unsigned integer,
/// reduced mod `n`.
fn digest_mod(digest: &[u8; 32], n: u64) -> u64 {
    let mut acc: u128 = 0;
    for byte in digest {
        acc = ((acc << 8) | *byte as u128) % n as u128;
    }
    acc as u64
}

fn assign_index(user: &UserId, block: BlockHeight, len: u64) -> u64 {
    (digest_mod(&keccak256(&user.0).0, len) + block.0 % len) % len
}

/// Routing assignment for one user at one block.
pub fn assign(
    user: &UserId,
    block: BlockHeight,
    registry: &BundlerRegistry,
) -> Result<BundlerId, RoutingError> {
    if registry.is_empty() {
        return Err(RoutingError::EmptyRegistry);
    }
    let idx = assign_index(user, block, registry.len() as u64);
    Ok(registry.active[idx as usize])
}

/// True iff `bundler` is the op's assignee at some block in
/// [block - grace, block]. Used by block builders to police routing.
pub fn verify_assignment(
    op: &UserOp,
    bundler: &BundlerId,
    block: BlockHeight,
    registry: &BundlerRegistry,
    grace: u64,
) -> bool {
    if registry.is_empty() {
        return false;
    }
    let start = block.0.saturating_sub(grace);
    (start..=block.0).any(|b| {
        assign(&op.sender, BlockHeight(b), registry)
            .map(|assigned| assigned.account == bundler.account)
            .unwrap_or(false)
    })
}

/// Apply membership churn: departing entries are excised, survivors keep
/// relative order and are re-indexed contiguously from 0, and joiners are
/// appended at the tail.
pub fn rotate_membership(
    registry: &BundlerRegistry,
    joins: &[BundlerAccount],
    leaves: &[BundlerAccount],
    block: BlockHeight,
) -> Result<BundlerRegistry, RoutingError> {
    for leave in leaves {
        if !registry.contains(leave) {
            return Err(RoutingError::UnknownBundler(*leave));
        }
    }
    for join in joins {
        if registry.contains(join) || joins.iter().filter(|j| *j == join).count() > 1 {
            return Err(RoutingError::DuplicateBundler(*join));
        }
    }
    if joins.is_empty() && leaves.is_empty() {
        return Ok(registry.clone());
    }
    let mut active: Vec<BundlerId> = registry
        .active
        .iter()
        .filter(|b| !leaves.contains(&b.account))
        .copied()
        .collect();
    for join in joins {
        active.push(BundlerId {
            index: 0,
            account: *join,
        });
    }
    for (i, bundler) in active.iter_mut().enumerate() {
        bundler.index = i as u32;
    }
    Ok(BundlerRegistry {
        active,
        epoch: block,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{RuleId, Signature65};

    fn account(b: u8) -> BundlerAccount {
        BundlerAccount([b; 20])
    }

    fn registry_of(n: u8) -> BundlerRegistry {
        let mut reg = BundlerRegistry::new();
        for i in 0..n {
            reg = rotate_membership(&reg, &[account(i + 1)], &[], BlockHeight(0)).unwrap();
        }
        reg
    }

    fn op_for(sender: UserId, block: u64) -> UserOp {
        UserOp {
            sender,
            rule: RuleId::Rule1,
            gas_cost: 1,
            nonce: 0,
            wallet_balance: 0,
            submit_block: BlockHeight(block),
            signature: Signature65::zero(),
        }
    }

    #[test]
    fn single_bundler_gets_everything() {
        let reg = registry_of(1);
        for b in 0..20u8 {
            let got = assign(&UserId([b + 1; 20]), BlockHeight(b as u64), &reg).unwrap();
            assert_eq!(got.account, account(1));
        }
    }

    #[test]
    fn empty_registry_errors() {
        let reg = BundlerRegistry::new();
        assert_eq!(
            assign(&UserId([1; 20]), BlockHeight(0), &reg),
            Err(RoutingError::EmptyRegistry)
        );
    }

    #[test]
    fn assignment_rotates_by_one_per_block() {
        let reg = registry_of(5);
        let user = UserId([0xaa; 20]);
        for t in 0..30u64 {
            let a = assign(&user, BlockHeight(t), &reg).unwrap();
            let b = assign(&user, BlockHeight(t + 1), &reg).unwrap();
            assert_eq!((a.index + 1) % 5, b.index % 5);
        }
    }

    #[test]
    fn verify_assignment_grace_window() {
        let reg = registry_of(4);
        let user = UserId([0x33; 20]);
        let block = BlockHeight(10);
        let assigned_now = assign(&user, block, &reg).unwrap();
        let assigned_prev = assign(&user, BlockHeight(9), &reg).unwrap();
        let op = op_for(user, 10);

        assert!(verify_assignment(&op, &assigned_now, block, &reg, 0));
        assert!(!verify_assignment(&op, &assigned_prev, block, &reg, 0));
        assert!(verify_assignment(&op, &assigned_prev, block, &reg, 1));

        // a bundler never assigned in the window stays invalid
        let stranger = reg.active()[(assigned_now.index as usize + 2) % 4];
        assert!(!verify_assignment(&op, &stranger, block, &reg, 1));
    }

    #[test]
    fn churn_reindexes_contiguously() {
        let reg = registry_of(3);
        let next = rotate_membership(&reg, &[], &[account(2)], BlockHeight(5)).unwrap();
        assert_eq!(next.len(), 2);
        assert_eq!(next.active()[0].account, account(1));
        assert_eq!(next.active()[0].index, 0);
        assert_eq!(next.active()[1].account, account(3));
        assert_eq!(next.active()[1].index, 1);
        assert_eq!(next.epoch, BlockHeight(5));
    }

    #[test]
    fn churn_identity_when_no_changes() {
        let reg = registry_of(3);
        let same = rotate_membership(&reg, &[], &[], BlockHeight(9)).unwrap();
        assert_eq!(same, reg);
    }

    #[test]
    fn churn_rejects_unknown_and_duplicate() {
        let reg = registry_of(2);
        assert_eq!(
            rotate_membership(&reg, &[], &[account(9)], BlockHeight(1)),
            Err(RoutingError::UnknownBundler(account(9)))
        );
        assert_eq!(
            rotate_membership(&reg, &[account(1)], &[], BlockHeight(1)),
            Err(RoutingError::DuplicateBundler(account(1)))
        );
    }

    #[test]
    fn assign_is_deterministic() {
        let reg = registry_of(7);
        let user = UserId([0x4d; 20]);
        assert_eq!(
            assign(&user, BlockHeight(123), &reg),
            assign(&user, BlockHeight(123), &reg)
        );
    }
}
