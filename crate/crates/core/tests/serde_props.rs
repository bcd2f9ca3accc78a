//! Property tests for the serialization layer: everything the persistence
//! log and trace emit must round-trip exactly, and digests must be pure
//! functions of the canonical bytes.

use gaslite_core::merkle::{RuleGlobalState, UserState};
use gaslite_core::persistence::UpdateLogEntry;
use gaslite_core::types::{
    Attestation, BlockHeight, BundlerAccount, BundlerId, EnclavePubKey, Hash32, OptimizedBundle,
    RuleId, Signature65, UserId, UserOp,
};
use proptest::prelude::*;

fn arb_rule() -> impl Strategy<Value = RuleId> {
    prop_oneof![
        Just(RuleId::Rule1),
        Just(RuleId::Rule2),
        Just(RuleId::Rule3),
        Just(RuleId::Rule4),
    ]
}

fn arb_user_op() -> impl Strategy<Value = UserOp> {
    (
        any::<[u8; 20]>(),
        arb_rule(),
        1u64..u64::MAX,
        any::<u64>(),
        any::<u128>(),
        any::<u64>(),
        any::<[u8; 32]>(),
    )
        .prop_map(
            |(sender, rule, gas_cost, nonce, wallet_balance, block, sig_seed)| {
                let mut sig = [0u8; 65];
                sig[..32].copy_from_slice(&sig_seed);
                sig[32..64].copy_from_slice(&sig_seed);
                sig[64] = sig_seed[0] & 1;
                UserOp {
                    sender: UserId(sender),
                    rule,
                    gas_cost,
                    nonce,
                    wallet_balance,
                    submit_block: BlockHeight(block),
                    signature: Signature65(sig),
                }
            },
        )
}

fn arb_user_state() -> impl Strategy<Value = UserState> {
    (
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
        any::<u64>(),
    )
        .prop_map(|(a, b, c, d, e, f, g)| UserState {
            day_usage: a,
            day_index: b,
            window_usage: c,
            window_index: d,
            last_op_block: BlockHeight(e),
            hist_count: f,
            hist_sum: g,
        })
}

proptest! {
    #[test]
    fn user_op_json_round_trip(op in arb_user_op()) {
        let json = serde_json::to_string(&op).unwrap();
        let back: UserOp = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, op);
    }

    #[test]
    fn user_state_json_round_trip(state in arb_user_state()) {
        let json = serde_json::to_string(&state).unwrap();
        let back: UserState = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, state);
    }

    #[test]
    fn log_entry_json_round_trip(
        ops in proptest::collection::vec(arb_user_op(), 1..8),
        rule in arb_rule(),
        seq in any::<u64>(),
        block in any::<u64>(),
        prev in any::<[u8; 32]>(),
        next in any::<[u8; 32]>(),
    ) {
        let entry = UpdateLogEntry {
            seq,
            rule,
            block: BlockHeight(block),
            bundle_digest: Hash32(prev),
            ops,
            prev_root: Hash32(prev),
            new_root: Hash32(next),
        };
        let json = serde_json::to_vec(&entry).unwrap();
        let back: UpdateLogEntry = serde_json::from_slice(&json).unwrap();
        prop_assert_eq!(back, entry);
    }

    #[test]
    fn bundle_json_round_trip(
        ops in proptest::collection::vec(arb_user_op(), 1..5),
        rule in arb_rule(),
        roots in any::<([u8; 32], [u8; 32], [u8; 32])>(),
        key in any::<[u8; 33]>(),
        block in any::<u64>(),
    ) {
        let mut ops = ops;
        for op in &mut ops {
            op.rule = rule;
        }
        let bundle = OptimizedBundle::new(
            ops,
            rule,
            BundlerId { index: 3, account: BundlerAccount([9; 20]) },
            Hash32(roots.0),
            Hash32(roots.1),
            Attestation {
                mrenclave: Hash32(roots.2),
                enclave_pubkey: EnclavePubKey(key),
                report_block: BlockHeight(block),
                signature: Signature65::zero(),
            },
            BlockHeight(block),
        ).unwrap();
        let json = serde_json::to_string(&bundle).unwrap();
        let back: OptimizedBundle = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, bundle);
    }

    #[test]
    fn digest_is_pure_in_canonical_bytes(a in arb_user_op(), b in arb_user_op()) {
        // the signature is excluded from the preimage; everything else binds
        prop_assert_eq!(
            a.signing_bytes() == b.signing_bytes(),
            a.digest() == b.digest()
        );
        let mut resigned = a.clone();
        resigned.signature = Signature65([0xcc; 65]);
        prop_assert_eq!(resigned.digest(), a.digest());
    }

    #[test]
    fn canonical_state_bytes_are_injective_per_field(
        state in arb_user_state(),
        bump in 1u64..1_000,
    ) {
        let base = state.canonical_bytes();
        let variants = [
            UserState { day_usage: state.day_usage.wrapping_add(bump), ..state },
            UserState { day_index: state.day_index.wrapping_add(bump), ..state },
            UserState { window_usage: state.window_usage.wrapping_add(bump), ..state },
            UserState { window_index: state.window_index.wrapping_add(bump), ..state },
            UserState {
                last_op_block: BlockHeight(state.last_op_block.0.wrapping_add(bump)),
                ..state
            },
            UserState { hist_count: state.hist_count.wrapping_add(bump), ..state },
            UserState { hist_sum: state.hist_sum.wrapping_add(bump), ..state },
        ];
        for variant in variants {
            prop_assert_ne!(variant.canonical_bytes(), base);
        }
    }

    #[test]
    fn global_state_json_round_trip(usage in any::<u64>(), idx in any::<u64>()) {
        let g = RuleGlobalState { global_day_usage: usage, day_index: idx };
        let back: RuleGlobalState =
            serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        prop_assert_eq!(back, g);
    }
}
