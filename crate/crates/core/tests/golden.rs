//! Golden digest vectors and a hand-built four-leaf tree oracle.
//!
//! Expected values live in tests/data/golden.json and were computed once
//! with an independent keccak reference implementation; the same reference
//! (tests/common) recomputes them here so the canonical serializations are
//! pinned against two keccak implementations at once.

mod common;

use common::{reference_keccak256, reference_keccak256_concat};
use gaslite_core::merkle::{
    self, leaf_hash, recompute_root, sentinel_leaf_hash, verify_proof, MerkleProof,
    RuleGlobalState, StateTree, UserState,
};
use gaslite_core::types::{BlockHeight, Hash32, RuleId, Signature65, UserId, UserOp};
use serde_json::Value;

fn golden() -> Value {
    let raw = include_str!("data/golden.json");
    serde_json::from_str(raw).unwrap()
}

fn hash_from(value: &Value) -> Hash32 {
    Hash32::from_hex(value.as_str().unwrap()).unwrap()
}

fn golden_op() -> UserOp {
    UserOp {
        sender: UserId::from_hex("0x0102030405060708090a0b0c0d0e0f1011121314").unwrap(),
        rule: RuleId::Rule2,
        gas_cost: 21_000,
        nonce: 7,
        wallet_balance: 10u128.pow(18),
        submit_block: BlockHeight(42),
        signature: Signature65::zero(),
    }
}

fn golden_state() -> UserState {
    UserState {
        day_usage: 5_000,
        day_index: 3,
        window_usage: 1_200,
        window_index: 9,
        last_op_block: BlockHeight(41),
        hist_count: 2,
        hist_sum: 10_000,
    }
}

#[test]
fn op_digest_matches_frozen_golden() {
    let expected = hash_from(&golden()["op_digest"]["digest"]);
    assert_eq!(golden_op().digest(), expected);
}

#[test]
fn op_digest_matches_reference_keccak() {
    let op = golden_op();
    assert_eq!(
        *op.digest().as_bytes(),
        reference_keccak256(&op.signing_bytes())
    );
}

#[test]
fn leaf_hash_matches_frozen_golden_and_reference() {
    let expected = hash_from(&golden()["leaf_hash"]["hash"]);
    let user = UserId::from_hex("0x0102030405060708090a0b0c0d0e0f1011121314").unwrap();
    let state = golden_state();
    assert_eq!(leaf_hash(&user, &state), expected);

    let reference = reference_keccak256_concat(&[&user.0, &state.canonical_bytes()]);
    assert_eq!(*expected.as_bytes(), reference);
}

#[test]
fn four_leaf_tree_matches_hand_oracle() {
    let g = golden();
    let tree_golden = &g["four_leaf_tree"];
    let global = RuleGlobalState {
        global_day_usage: 777,
        day_index: 1,
    };

    let user_a = UserId([0x11; 20]);
    let user_b = UserId([0x22; 20]);
    let user_c = UserId([0x33; 20]);
    let state_a = UserState {
        day_usage: 100,
        day_index: 1,
        last_op_block: BlockHeight(10),
        hist_count: 1,
        hist_sum: 100,
        ..Default::default()
    };
    let state_b = UserState {
        day_usage: 200,
        day_index: 1,
        last_op_block: BlockHeight(11),
        hist_count: 2,
        hist_sum: 400,
        ..Default::default()
    };
    let state_c = UserState::default();

    assert_eq!(
        sentinel_leaf_hash(&global),
        hash_from(&tree_golden["sentinel_leaf"])
    );
    assert_eq!(
        leaf_hash(&user_a, &state_a),
        hash_from(&tree_golden["leaf_a"])
    );
    assert_eq!(
        leaf_hash(&user_b, &state_b),
        hash_from(&tree_golden["leaf_b"])
    );
    assert_eq!(
        leaf_hash(&user_c, &state_c),
        hash_from(&tree_golden["leaf_c"])
    );

    let leaves = [(user_a, state_a), (user_b, state_b), (user_c, state_c)]
        .into_iter()
        .collect();
    let root = recompute_root(&leaves, &global);
    assert_eq!(root, hash_from(&tree_golden["root"]));

    // hand-built shape: root = H(H(L0 || L1) || H(L2 || L3)), L0 the sentinel
    let inner_01 = reference_keccak256_concat(&[
        sentinel_leaf_hash(&global).as_bytes(),
        leaf_hash(&user_a, &state_a).as_bytes(),
    ]);
    let inner_23 = reference_keccak256_concat(&[
        leaf_hash(&user_b, &state_b).as_bytes(),
        leaf_hash(&user_c, &state_c).as_bytes(),
    ]);
    assert_eq!(inner_01, *hash_from(&tree_golden["inner_01"]).as_bytes());
    assert_eq!(inner_23, *hash_from(&tree_golden["inner_23"]).as_bytes());
    assert_eq!(
        reference_keccak256_concat(&[&inner_01, &inner_23]),
        *root.as_bytes()
    );

    // sentinel proof against the hand-built tree: index parity 0, siblings
    // [leaf_a, inner_23]
    let tree = StateTree::from_parts(RuleId::Rule2, leaves, global);
    assert_eq!(tree.root(), root);
    let proof = tree.prove_sentinel();
    assert_eq!(proof.leaf_index, 0);
    assert_eq!(proof.siblings.len(), 2);
    assert_eq!(proof.siblings[0], leaf_hash(&user_a, &state_a));
    assert_eq!(proof.siblings[1], Hash32(inner_23));
    assert!(verify_proof(&proof, sentinel_leaf_hash(&global), root));

    // the same proof fails under a wrong parity
    let flipped = MerkleProof {
        leaf_index: 1,
        siblings: proof.siblings.clone(),
    };
    assert!(!verify_proof(&flipped, sentinel_leaf_hash(&global), root));
}

#[test]
fn empty_root_matches_reference() {
    assert_eq!(
        *merkle::merkle_root_of(&[]).as_bytes(),
        reference_keccak256(b"")
    );
}
