//! Randomized routing properties: determinism, per-block rotation, load
//! distribution, grace-window verification, and coverage under churn.

use gaslite_core::routing::{assign, rotate_membership, verify_assignment, BundlerRegistry};
use gaslite_core::types::{BlockHeight, BundlerAccount, RuleId, Signature65, UserId, UserOp};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn registry_of(n: usize) -> BundlerRegistry {
    let mut reg = BundlerRegistry::new();
    for i in 0..n {
        let account = BundlerAccount([i as u8 + 1; 20]);
        reg = rotate_membership(&reg, &[account], &[], BlockHeight(0)).unwrap();
    }
    reg
}

fn random_user(rng: &mut ChaCha8Rng) -> UserId {
    let mut bytes = [0u8; 20];
    rng.fill_bytes(&mut bytes);
    UserId(bytes)
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
fn load_distribution_stays_within_five_percent() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let reg = registry_of(8);
    let users: Vec<UserId> = (0..10_000).map(|_| random_user(&mut rng)).collect();

    for block in [0u64, 1, 77, 1_000_003] {
        let mut counts = [0usize; 8];
        for user in &users {
            let bundler = assign(user, BlockHeight(block), &reg).unwrap();
            counts[bundler.index as usize] += 1;
        }
        let expected = 10_000.0 / 8.0;
        for (i, count) in counts.iter().enumerate() {
            let deviation = (*count as f64 - expected).abs() / expected;
            assert!(
                deviation <= 0.05,
                "bundler {i} carries {count} ops at block {block} ({deviation:.3} off)"
            );
        }
    }
}

#[test]
fn rotation_shifts_index_by_k_mod_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..2_000 {
        let b = rng.gen_range(1..12usize);
        let reg = registry_of(b);
        let user = random_user(&mut rng);
        let t = rng.gen_range(0..1_000_000u64);
        let k = rng.gen_range(0..50u64);
        let base = assign(&user, BlockHeight(t), &reg).unwrap();
        let later = assign(&user, BlockHeight(t + k), &reg).unwrap();
        assert_eq!(
            (base.index as u64 + k) % b as u64,
            later.index as u64,
            "|B|={b} t={t} k={k}"
        );
    }
}

#[test]
fn intra_block_consistency() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let reg = registry_of(5);
    for _ in 0..1_000 {
        let user = random_user(&mut rng);
        let block = BlockHeight(rng.gen_range(0..100_000));
        let first = assign(&user, block, &reg).unwrap();
        for _ in 0..3 {
            assert_eq!(assign(&user, block, &reg).unwrap(), first);
        }
    }
}

#[test]
fn grace_window_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let reg = registry_of(6);
    for _ in 0..2_000 {
        let user = random_user(&mut rng);
        let block = rng.gen_range(5..10_000u64);
        let grace = rng.gen_range(0..4u64);
        let op = op_for(user, block);
        // every bundler assigned within the window verifies; others do not
        for candidate in reg.active() {
            let in_window = (block - grace..=block)
                .any(|b| assign(&user, BlockHeight(b), &reg).unwrap().account == candidate.account);
            assert_eq!(
                verify_assignment(&op, candidate, BlockHeight(block), &reg, grace),
                in_window
            );
        }
    }
}

#[test]
fn churn_keeps_every_user_covered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let users: Vec<UserId> = (0..500).map(|_| random_user(&mut rng)).collect();
    let mut reg = registry_of(4);
    let mut next_account = 5u8;

    for round in 0..5 {
        // random churn event
        let joins: Vec<BundlerAccount> = (0..rng.gen_range(0..3usize))
            .map(|_| {
                let account = BundlerAccount([next_account; 20]);
                next_account += 1;
                account
            })
            .collect();
        let leaves: Vec<BundlerAccount> = if reg.len() > 2 {
            let victim = reg.active()[rng.gen_range(0..reg.len())].account;
            vec![victim]
        } else {
            vec![]
        };
        reg = rotate_membership(&reg, &joins, &leaves, BlockHeight(round + 1)).unwrap();

        // contiguous indices
        for (i, bundler) in reg.active().iter().enumerate() {
            assert_eq!(bundler.index as usize, i);
        }
        // no departed bundler is ever assigned; every user maps into the set
        for user in &users {
            for block in 0..8u64 {
                let assigned = assign(user, BlockHeight(block), &reg).unwrap();
                assert!(reg.contains(&assigned.account));
                for gone in &leaves {
                    assert_ne!(assigned.account, *gone);
                }
            }
        }
    }
}

#[test]
fn eventual_processing_every_bundler_serves_every_user() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let reg = registry_of(7);
    for _ in 0..50 {
        let user = random_user(&mut rng);
        let start = rng.gen_range(0..1_000u64);
        let mut seen = [false; 7];
        for t in start..start + 7 {
            let b = assign(&user, BlockHeight(t), &reg).unwrap();
            seen[b.index as usize] = true;
        }
        assert!(
            seen.iter().all(|s| *s),
            "|B| consecutive blocks cover all bundlers"
        );
    }
}
