//! Per-rule user-state maps committed as Merkle roots, with membership
//! proofs and incremental root maintenance.
//!
//! Tree shape: leaves sorted ascending by user id, with the rule's global
//! state occupying a reserved sentinel leaf at the zero address (always
//! index 0). Levels are built bottom-up by hashing adjacent pairs; an
//! unpaired node at any level is promoted unchanged to the next level. The
//! root of an empty leaf set is keccak256 of the empty byte string.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{keccak256, keccak256_concat};
use crate::types::{BlockHeight, Hash32, RuleId, UserId};

/// Per-(user, rule) accounting record committed as a Merkle leaf.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct UserState {
    /// Gas accepted in the current daily epoch.
    pub day_usage: u64,
    /// Daily epoch number the usage belongs to.
    pub day_index: u64,
    /// Gas accepted in the current rate window (rule 3).
    pub window_usage: u64,
    /// Window number the window usage belongs to.
    pub window_index: u64,
    /// Block of the most recent accepted op.
    pub last_op_block: BlockHeight,
    /// Lifetime count of accepted ops.
    pub hist_count: u64,
    /// Lifetime sum of accepted gas; historical average is hist_sum / hist_count.
    pub hist_sum: u64,
}

impl UserState {
    /// Canonical leaf serialization: seven big-endian u64 fields in
    /// declaration order.
    pub fn canonical_bytes(&self) -> [u8; 56] {
        let mut out = [0u8; 56];
        let fields = [
            self.day_usage,
            self.day_index,
            self.window_usage,
            self.window_index,
            self.last_op_block.0,
            self.hist_count,
            self.hist_sum,
        ];
        for (i, field) in fields.iter().enumerate() {
            out[i * 8..(i + 1) * 8].copy_from_slice(&field.to_be_bytes());
        }
        out
    }

    /// Historical average gas, zero when there is no history.
    pub fn hist_avg(&self) -> u64 {
        self.hist_sum.checked_div(self.hist_count).unwrap_or(0)
    }
}

/// Rule-wide accounting shared by all users (rule 2's global daily cap),
/// committed under the sentinel leaf.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct RuleGlobalState {
    pub global_day_usage: u64,
    pub day_index: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("user {0} not present in tree")]
    UnknownUser(UserId),
}

/// Leaf hash per user: keccak256(user_id || canonical state bytes).
pub fn leaf_hash(user: &UserId, state: &UserState) -> Hash32 {
    keccak256_concat(&[&user.0, &state.canonical_bytes()])
}

/// Sentinel leaf committing the rule-global state at the zero address:
/// keccak256(zero_address || global_day_usage(8) || day_index(8)).
/// The 28-byte preimage cannot collide with 76-byte user leaf preimages.
pub fn sentinel_leaf_hash(global: &RuleGlobalState) -> Hash32 {
    keccak256_concat(&[
        &UserId::ZERO.0,
        &global.global_day_usage.to_be_bytes(),
        &global.day_index.to_be_bytes(),
    ])
}

/// Root over an ordered slice of leaf hashes. Empty input hashes the empty
/// byte string; an unpaired node is promoted unchanged.
pub fn merkle_root_of(leaves: &[Hash32]) -> Hash32 {
    if leaves.is_empty() {
        return keccak256(b"");
    }
    let mut level: Vec<Hash32> = leaves.to_vec();
    while level.len() > 1 {
        level = next_level(&level);
    }
    level[0]
}

fn next_level(level: &[Hash32]) -> Vec<Hash32> {
    let mut out = Vec::with_capacity(level.len().div_ceil(2));
    for pair in level.chunks(2) {
        match pair {
            [left, right] => out.push(keccak256_concat(&[&left.0, &right.0])),
            [lone] => out.push(*lone),
            _ => unreachable!(),
        }
    }
    out
}

/// Full rebuild of the committed root over a leaf map plus the sentinel.
pub fn recompute_root(leaves: &BTreeMap<UserId, UserState>, global: &RuleGlobalState) -> Hash32 {
    let mut hashes = Vec::with_capacity(leaves.len() + 1);
    hashes.push(sentinel_leaf_hash(global));
    for (user, state) in leaves {
        hashes.push(leaf_hash(user, state));
    }
    merkle_root_of(&hashes)
}

/// Membership proof. `leaf_index` carries the fold path: bit k gives the
/// side of the k-th sibling (0 = node is the left child). Levels where the
/// node was promoted without a sibling contribute neither a bit nor a
/// sibling, so for power-of-two trees the index equals the leaf position.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct MerkleProof {
    pub leaf_index: u64,
    pub siblings: Vec<Hash32>,
}

/// Folds a leaf with the proof's siblings; true iff the result is `root`.
pub fn verify_proof(proof: &MerkleProof, leaf: Hash32, root: Hash32) -> bool {
    let mut acc = leaf;
    for (k, sibling) in proof.siblings.iter().enumerate() {
        let node_is_left = (proof.leaf_index >> k) & 1 == 0;
        acc = if node_is_left {
            keccak256_concat(&[&acc.0, &sibling.0])
        } else {
            keccak256_concat(&[&sibling.0, &acc.0])
        };
    }
    acc == root
}

/// A rule's full off-chain state: leaf map, global sentinel, and the cached
/// hash levels of the committed tree. The root is kept consistent with the
/// leaves after every mutation.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct StateTree {
    rule: RuleId,
    leaves: BTreeMap<UserId, UserState>,
    global: RuleGlobalState,
    levels: Vec<Vec<Hash32>>,
}

impl StateTree {
    pub fn new(rule: RuleId) -> Self {
        Self::from_parts(rule, BTreeMap::new(), RuleGlobalState::default())
    }

    pub fn from_parts(
        rule: RuleId,
        leaves: BTreeMap<UserId, UserState>,
        global: RuleGlobalState,
    ) -> Self {
        let mut tree = Self {
            rule,
            leaves,
            global,
            levels: Vec::new(),
        };
        tree.rebuild();
        tree
    }

    pub fn rule(&self) -> RuleId {
        self.rule
    }

    pub fn root(&self) -> Hash32 {
        self.levels
            .last()
            .map(|top| top[0])
            .expect("levels always hold at least the sentinel")
    }

    pub fn global(&self) -> &RuleGlobalState {
        &self.global
    }

    pub fn leaves(&self) -> &BTreeMap<UserId, UserState> {
        &self.leaves
    }

    pub fn state_of(&self, user: &UserId) -> Option<&UserState> {
        self.leaves.get(user)
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    /// Leaf position in the committed order (sentinel occupies 0).
    fn position_of(&self, user: &UserId) -> Option<usize> {
        self.leaves.get(user)?;
        Some(1 + self.leaves.range(..*user).count())
    }

    fn rebuild(&mut self) {
        let mut level0 = Vec::with_capacity(self.leaves.len() + 1);
        level0.push(sentinel_leaf_hash(&self.global));
        for (user, state) in &self.leaves {
            level0.push(leaf_hash(user, state));
        }
        let mut levels = vec![level0];
        while levels.last().unwrap().len() > 1 {
            levels.push(next_level(levels.last().unwrap()));
        }
        self.levels = levels;
    }

    /// Recompute the hash path above a single changed leaf position.
    fn refresh_path(&mut self, mut pos: usize) {
        for depth in 0..self.levels.len() - 1 {
            let parent_pos = pos / 2;
            let width = self.levels[depth].len();
            let sibling_pos = pos ^ 1;
            let parent = if sibling_pos < width {
                let (left, right) = if pos.is_multiple_of(2) {
                    (self.levels[depth][pos], self.levels[depth][sibling_pos])
                } else {
                    (self.levels[depth][sibling_pos], self.levels[depth][pos])
                };
                keccak256_concat(&[&left.0, &right.0])
            } else {
                self.levels[depth][pos]
            };
            self.levels[depth + 1][parent_pos] = parent;
            pos = parent_pos;
        }
    }

    /// Insert or update a user's leaf; returns the new root. Updates to an
    /// existing user rehash only the affected path; insertions rebuild.
    pub fn apply_leaf_update(&mut self, user: UserId, new_state: UserState) -> Hash32 {
        debug_assert!(!user.is_zero(), "zero address is the sentinel position");
        if self.leaves.insert(user, new_state).is_some() {
            let pos = self.position_of(&user).expect("just inserted");
            self.levels[0][pos] = leaf_hash(&user, &new_state);
            self.refresh_path(pos);
        } else {
            self.rebuild();
        }
        self.root()
    }

    /// Remove a user's leaf; returns the new root.
    pub fn remove_user(&mut self, user: &UserId) -> Result<Hash32, MerkleError> {
        if self.leaves.remove(user).is_none() {
            return Err(MerkleError::UnknownUser(*user));
        }
        self.rebuild();
        Ok(self.root())
    }

    /// Replace the rule-global state committed under the sentinel; returns
    /// the new root.
    pub fn set_global(&mut self, global: RuleGlobalState) -> Hash32 {
        self.global = global;
        self.levels[0][0] = sentinel_leaf_hash(&self.global);
        self.refresh_path(0);
        self.root()
    }

    /// Membership proof for a present user.
    pub fn prove(&self, user: &UserId) -> Result<MerkleProof, MerkleError> {
        let pos = self
            .position_of(user)
            .ok_or(MerkleError::UnknownUser(*user))?;
        Ok(self.prove_position(pos))
    }

    /// Proof for the sentinel leaf committing the global state.
    pub fn prove_sentinel(&self) -> MerkleProof {
        self.prove_position(0)
    }

    fn prove_position(&self, mut pos: usize) -> MerkleProof {
        let mut siblings = Vec::new();
        let mut index_bits = 0u64;
        let mut bit = 0;
        for level in &self.levels[..self.levels.len() - 1] {
            let sibling_pos = pos ^ 1;
            if sibling_pos < level.len() {
                siblings.push(level[sibling_pos]);
                index_bits |= ((pos & 1) as u64) << bit;
                bit += 1;
            }
            pos /= 2;
        }
        MerkleProof {
            leaf_index: index_bits,
            siblings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn user(b: u8) -> UserId {
        UserId([b; 20])
    }

    fn state(day_usage: u64) -> UserState {
        UserState {
            day_usage,
            ..Default::default()
        }
    }

    #[test]
    fn leaf_hash_is_deterministic_and_user_bound() {
        let s = state(10);
        assert_eq!(leaf_hash(&user(1), &s), leaf_hash(&user(1), &s));
        assert_ne!(leaf_hash(&user(1), &s), leaf_hash(&user(2), &s));
    }

    #[test]
    fn empty_root_is_keccak_of_empty_string() {
        assert_eq!(
            merkle_root_of(&[]).to_hex(),
            "0xc5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
        );
    }

    #[test]
    fn empty_tree_root_is_promoted_sentinel() {
        let tree = StateTree::new(RuleId::Rule1);
        assert_eq!(tree.root(), sentinel_leaf_hash(&RuleGlobalState::default()));
    }

    #[test]
    fn insert_then_remove_restores_root() {
        let mut tree = StateTree::new(RuleId::Rule1);
        tree.apply_leaf_update(user(5), state(100));
        let before = tree.root();
        tree.apply_leaf_update(user(9), state(7));
        assert_ne!(tree.root(), before);
        tree.remove_user(&user(9)).unwrap();
        assert_eq!(tree.root(), before);
    }

    #[test]
    fn update_to_same_value_is_idempotent() {
        let mut tree = StateTree::new(RuleId::Rule2);
        tree.apply_leaf_update(user(3), state(42));
        let root = tree.root();
        tree.apply_leaf_update(user(3), state(42));
        assert_eq!(tree.root(), root);
    }

    #[test]
    fn updating_one_user_leaves_other_leaf_hashes_alone() {
        let mut tree = StateTree::new(RuleId::Rule1);
        tree.apply_leaf_update(user(1), state(1));
        tree.apply_leaf_update(user(2), state(2));
        let leaf_b = leaf_hash(&user(2), tree.state_of(&user(2)).unwrap());
        tree.apply_leaf_update(user(1), state(99));
        assert_eq!(
            leaf_hash(&user(2), tree.state_of(&user(2)).unwrap()),
            leaf_b
        );
    }

    #[test]
    fn incremental_update_matches_full_rebuild() {
        let mut tree = StateTree::new(RuleId::Rule3);
        for i in 1..=9u8 {
            tree.apply_leaf_update(user(i), state(i as u64));
        }
        for i in (1..=9u8).rev() {
            tree.apply_leaf_update(user(i), state(1000 + i as u64));
            assert_eq!(tree.root(), recompute_root(tree.leaves(), tree.global()));
        }
        tree.set_global(RuleGlobalState {
            global_day_usage: 7,
            day_index: 2,
        });
        assert_eq!(tree.root(), recompute_root(tree.leaves(), tree.global()));
    }

    #[test]
    fn proofs_round_trip_and_detect_tampering() {
        let mut tree = StateTree::new(RuleId::Rule4);
        for i in 1..=7u8 {
            tree.apply_leaf_update(user(i), state(i as u64 * 10));
        }
        for i in 1..=7u8 {
            let proof = tree.prove(&user(i)).unwrap();
            let leaf = leaf_hash(&user(i), tree.state_of(&user(i)).unwrap());
            assert!(verify_proof(&proof, leaf, tree.root()));

            let mut bad = proof.clone();
            if let Some(first) = bad.siblings.first_mut() {
                first.0[0] ^= 1;
                assert!(!verify_proof(&bad, leaf, tree.root()));
            }
        }
        let proof = tree.prove_sentinel();
        assert!(verify_proof(
            &proof,
            sentinel_leaf_hash(tree.global()),
            tree.root()
        ));
    }

    #[test]
    fn prove_unknown_user_errors() {
        let tree = StateTree::new(RuleId::Rule1);
        assert_eq!(tree.prove(&user(1)), Err(MerkleError::UnknownUser(user(1))));
    }

    #[test]
    fn wrong_root_fails_verification() {
        let mut tree = StateTree::new(RuleId::Rule1);
        tree.apply_leaf_update(user(1), state(5));
        let proof = tree.prove(&user(1)).unwrap();
        let leaf = leaf_hash(&user(1), tree.state_of(&user(1)).unwrap());
        assert!(!verify_proof(&proof, leaf, Hash32([0xee; 32])));
    }
}
