//! Randomized Merkle properties: proof round-trips across tree sizes,
//! incremental-vs-rebuild root agreement, and an independent root oracle
//! built over the reference keccak.

mod common;

use std::collections::BTreeMap;

use common::reference_keccak256_concat;
use gaslite_core::merkle::{
    leaf_hash, recompute_root, sentinel_leaf_hash, verify_proof, RuleGlobalState, StateTree,
    UserState,
};
use gaslite_core::types::{BlockHeight, RuleId, UserId};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_user(rng: &mut ChaCha8Rng) -> UserId {
    let mut bytes = [0u8; 20];
    loop {
        rng.fill_bytes(&mut bytes);
        if bytes != [0u8; 20] {
            return UserId(bytes);
        }
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> UserState {
    UserState {
        day_usage: rng.gen_range(0..1_000_000),
        day_index: rng.gen_range(0..100),
        window_usage: rng.gen_range(0..100_000),
        window_index: rng.gen_range(0..1_000),
        last_op_block: BlockHeight(rng.gen_range(0..10_000)),
        hist_count: rng.gen_range(0..50),
        hist_sum: rng.gen_range(0..5_000_000),
    }
}

/// Root oracle: sorted leaves + sentinel, folded with the reference keccak.
fn oracle_root(leaves: &BTreeMap<UserId, UserState>, global: &RuleGlobalState) -> [u8; 32] {
    let mut level: Vec<[u8; 32]> = Vec::with_capacity(leaves.len() + 1);
    level.push(*sentinel_leaf_hash(global).as_bytes());
    for (user, state) in leaves {
        level.push(reference_keccak256_concat(&[
            &user.0,
            &state.canonical_bytes(),
        ]));
    }
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        for pair in level.chunks(2) {
            match pair {
                [l, r] => next.push(reference_keccak256_concat(&[l, r])),
                [lone] => next.push(*lone),
                _ => unreachable!(),
            }
        }
        level = next;
    }
    level[0]
}

#[test]
fn roots_match_reference_oracle_across_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for size in [0usize, 1, 2, 3, 4, 7, 16, 33, 100] {
        let mut leaves = BTreeMap::new();
        while leaves.len() < size {
            leaves.insert(random_user(&mut rng), random_state(&mut rng));
        }
        let global = RuleGlobalState {
            global_day_usage: rng.gen_range(0..10_000_000),
            day_index: rng.gen_range(0..100),
        };
        let root = recompute_root(&leaves, &global);
        assert_eq!(
            *root.as_bytes(),
            oracle_root(&leaves, &global),
            "size {size}"
        );
    }
}

#[test]
fn proofs_round_trip_for_every_leaf_of_random_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for size in [1usize, 2, 3, 5, 8, 17, 64, 257] {
        let mut tree = StateTree::new(RuleId::Rule1);
        let mut users = Vec::new();
        while users.len() < size {
            let user = random_user(&mut rng);
            if tree.state_of(&user).is_none() {
                tree.apply_leaf_update(user, random_state(&mut rng));
                users.push(user);
            }
        }
        for user in &users {
            let proof = tree.prove(user).unwrap();
            let leaf = leaf_hash(user, tree.state_of(user).unwrap());
            assert!(verify_proof(&proof, leaf, tree.root()), "size {size}");
        }
        let sentinel_proof = tree.prove_sentinel();
        assert!(verify_proof(
            &sentinel_proof,
            sentinel_leaf_hash(tree.global()),
            tree.root()
        ));
    }
}

#[test]
fn thousand_user_tree_proofs_verify_for_sampled_users() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut leaves = BTreeMap::new();
    while leaves.len() < 1000 {
        leaves.insert(random_user(&mut rng), random_state(&mut rng));
    }
    let users: Vec<UserId> = leaves.keys().copied().collect();
    let tree = StateTree::from_parts(RuleId::Rule3, leaves, RuleGlobalState::default());
    for _ in 0..50 {
        let user = users[rng.gen_range(0..users.len())];
        let proof = tree.prove(&user).unwrap();
        let leaf = leaf_hash(&user, tree.state_of(&user).unwrap());
        assert!(verify_proof(&proof, leaf, tree.root()));

        // single flipped sibling must break verification
        let mut bad = proof.clone();
        let k = rng.gen_range(0..bad.siblings.len());
        bad.siblings[k].0[rng.gen_range(0..32)] ^= 1 << rng.gen_range(0..8);
        assert!(!verify_proof(&bad, leaf, tree.root()));
    }
}

#[test]
fn incremental_updates_agree_with_full_rebuild_over_random_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut tree = StateTree::new(RuleId::Rule4);
    let mut pool: Vec<UserId> = (0..64).map(|_| random_user(&mut rng)).collect();
    pool.dedup();

    for step in 0..200 {
        let user = pool[rng.gen_range(0..pool.len())];
        let root = tree.apply_leaf_update(user, random_state(&mut rng));
        assert_eq!(
            root,
            recompute_root(tree.leaves(), tree.global()),
            "step {step}"
        );

        if step % 13 == 0 {
            let root = tree.set_global(RuleGlobalState {
                global_day_usage: rng.gen_range(0..9_000_000),
                day_index: rng.gen_range(0..50),
            });
            assert_eq!(root, recompute_root(tree.leaves(), tree.global()));
        }
        if step % 29 == 0 && !tree.is_empty() {
            let victim = *tree.leaves().keys().next().unwrap();
            let root = tree.remove_user(&victim).unwrap();
            assert_eq!(root, recompute_root(tree.leaves(), tree.global()));
        }
    }
}

#[test]
fn any_single_leaf_change_changes_the_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut tree = StateTree::new(RuleId::Rule2);
    let users: Vec<UserId> = (0..32).map(|_| random_user(&mut rng)).collect();
    for user in &users {
        tree.apply_leaf_update(*user, random_state(&mut rng));
    }
    let root = tree.root();
    for user in &users {
        let mut changed = *tree.state_of(user).unwrap();
        changed.hist_sum += 1;
        let mut probe = tree.clone();
        assert_ne!(probe.apply_leaf_update(*user, changed), root);
    }
}
