//! Scripted attacker behaviors and their expected chain outcomes.
//!
//! Each attack runs against a live world and records what actually
//! happened; the acceptance suite asserts the documented outcome per kind.
//! ForgeRootStolenKey deliberately succeeds at root forgery so the threat
//! model boundary is observable: the root is forged, user balances do not
//! move.

use gaslite_core::chain::{BundleRejection, ExecutionReceipt};
use gaslite_core::crypto;
use gaslite_core::crypto::SigningKey;
use gaslite_core::enclave::{attested_payload, batch_digest, tee_execute};
use gaslite_core::routing::assign;
use gaslite_core::types::{
    Attestation, BlockHeight, OptimizedBundle, RuleId, Signature65, UserId, UserOp,
};
use serde::{Deserialize, Serialize};

use crate::runner::SimWorld;
use crate::scenario::AttackKind;
use crate::workload::labeled_seed;

/// What an executed attack did to the world.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub kind: AttackKind,
    pub block: u64,
    pub submission_accepted: bool,
    pub root_changed: bool,
    pub root_forged: bool,
    pub slashed: bool,
    pub reporter_award: u128,
    pub user_balance_delta: u128,
    pub combined_accepted_gas: Option<u64>,
    pub rule_limit: Option<u64>,
    pub victim_latency_blocks: Option<u64>,
    pub detail: String,
}

impl AttackOutcome {
    fn new(kind: AttackKind, block: u64) -> Self {
        Self {
            kind,
            block,
            submission_accepted: false,
            root_changed: false,
            root_forged: false,
            slashed: false,
            reporter_award: 0,
            user_balance_delta: 0,
            combined_accepted_gas: None,
            rule_limit: None,
            victim_latency_blocks: None,
            detail: String::new(),
        }
    }
}

const REPORTER: UserId = UserId([0xfe; 20]);
const SEARCH_CAP: u64 = 2_000_000;

/// Highest-indexed node that is still an active registry member; attacks
/// prefer it so slashing one attacker leaves the honest set intact.
fn pick_attacker(world: &SimWorld) -> Option<usize> {
    (0..world.nodes.len())
        .rev()
        .find(|i| world.chain.registry().contains(&world.nodes[*i].id.account))
}

/// Fabricated sender currently assigned to the given node; nonce and
/// balance snapshot consistent with the chain so execution would pass.
/// The node must be an active registry member.
pub fn synthetic_op(world: &SimWorld, node_idx: usize, rule: RuleId, gas_cost: u64) -> UserOp {
    let block = world.chain.height();
    let target = world.nodes[node_idx].id.account;
    for counter in 0..SEARCH_CAP {
        let mut sender = [0u8; 20];
        sender[..8].copy_from_slice(&counter.to_be_bytes());
        sender[9] = 0xad;
        let sender = UserId(sender);
        if sender.is_zero() {
            continue;
        }
        if assign(&sender, block, world.chain.registry())
            .unwrap()
            .account
            == target
        {
            return UserOp {
                sender,
                rule,
                gas_cost,
                nonce: world.chain.expected_nonce(&sender),
                wallet_balance: world.chain.balance_of(&sender),
                submit_block: block,
                signature: Signature65::zero(),
            };
        }
    }
    unreachable!("an active registry member owns a share of the sender space");
}

/// A real keypair whose address routes to `target` at `block`. None when
/// the target is not an active registry member.
fn craft_keyed_user(
    world: &SimWorld,
    target: gaslite_core::types::BundlerAccount,
    block: BlockHeight,
    label: &str,
) -> Option<(SigningKey, UserId)> {
    if !world.chain.registry().contains(&target) {
        return None;
    }
    for counter in 0..SEARCH_CAP {
        let seed = labeled_seed(world.scenario.seed ^ counter, label);
        let key = crypto::signing_key_from_seed(&seed);
        let id = crypto::address_of(key.verifying_key());
        if assign(&id, block, world.chain.registry()).unwrap().account == target {
            return Some((key, id));
        }
    }
    None
}

fn signed_op(
    world: &SimWorld,
    key: &SigningKey,
    sender: UserId,
    rule: RuleId,
    gas_cost: u64,
    submit_block: BlockHeight,
) -> UserOp {
    let mut op = UserOp {
        sender,
        rule,
        gas_cost,
        nonce: world.chain.expected_nonce(&sender),
        wallet_balance: world.chain.balance_of(&sender),
        submit_block,
        signature: Signature65::zero(),
    };
    op.signature = crypto::sign_digest(key, &op.digest());
    op
}

fn balances_total(world: &SimWorld) -> u128 {
    world.chain.balances().values().sum()
}

pub fn execute_attack(world: &mut SimWorld, kind: AttackKind) -> AttackOutcome {
    match kind {
        AttackKind::ForgeRootNoKey => forge_root_no_key(world),
        AttackKind::ForgeRootStolenKey => forge_root_stolen_key(world),
        AttackKind::ReplayAttestation => replay_attestation(world),
        AttackKind::SkipRouting => skip_routing(world),
        AttackKind::QuotaDoubleSpendAcrossBundlers => quota_double_spend(world),
        AttackKind::WithholdBundle => withhold_bundle(world),
    }
}

/// Forge a new root without the enclave key: the attestation carries the
/// legitimate measurement and key but a signature that cannot verify.
fn forge_root_no_key(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::ForgeRootNoKey, world.height());
    let Some(attacker) = pick_attacker(world) else {
        outcome.detail = "no active bundler left to act as attacker".into();
        return outcome;
    };
    let rule = RuleId::Rule1;
    let root_before = world.chain.current_root(rule);
    let balances_before = balances_total(world);

    let op = synthetic_op(world, attacker, rule, 10_000);
    let node = &world.nodes[attacker];
    let bundle = OptimizedBundle::new(
        vec![op],
        rule,
        node.id,
        root_before,
        crypto::keccak256(b"forge-without-key"),
        Attestation {
            mrenclave: node.enclave.mrenclave(),
            enclave_pubkey: node.enclave.pubkey(),
            report_block: world.chain.height(),
            signature: Signature65([0x17; 65]),
        },
        world.chain.height(),
    )
    .unwrap();

    let receipt = world.submit_bundle(&bundle, None);
    outcome.submission_accepted = receipt.is_accepted();
    outcome.detail = format!("receipt: {receipt:?}");
    if !matches!(
        receipt,
        ExecutionReceipt::Rejected {
            reason: BundleRejection::BadSignature
        }
    ) {
        outcome.detail = format!("UNEXPECTED receipt: {receipt:?}");
    }

    if let Ok(slash) = world.chain.report_misbehavior(&bundle, REPORTER) {
        world.record_slash(&slash);
        outcome.slashed = true;
        outcome.reporter_award = slash.reporter_award;
    }
    outcome.root_changed = world.chain.current_root(rule) != root_before;
    outcome.user_balance_delta =
        balances_total(world).abs_diff(balances_before + outcome.reporter_award);
    outcome
}

/// With the stolen enclave key the forged transition verifies and the root
/// is forged; user balances stay untouched because sponsorship never moves
/// user funds without their own signatures.
fn forge_root_stolen_key(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::ForgeRootStolenKey, world.height());
    let Some(attacker) = pick_attacker(world) else {
        outcome.detail = "no active bundler left to act as attacker".into();
        return outcome;
    };
    let rule = RuleId::Rule1;
    let old_root = world.chain.current_root(rule);
    let forged_root = crypto::keccak256(b"forged-root-stolen-key");
    let balances_before = balances_total(world);

    let op = synthetic_op(world, attacker, rule, 10_000);
    let block = world.chain.height();
    let node = &world.nodes[attacker];
    let payload = attested_payload(
        old_root,
        forged_root,
        rule,
        node.id.account,
        block,
        batch_digest(std::slice::from_ref(&op)),
    );
    // the key leaves the enclave boundary here
    let signature = crypto::sign_digest(node.enclave.signing_key(), &payload);
    let bundle = OptimizedBundle::new(
        vec![op],
        rule,
        node.id,
        old_root,
        forged_root,
        Attestation {
            mrenclave: node.enclave.mrenclave(),
            enclave_pubkey: node.enclave.pubkey(),
            report_block: block,
            signature,
        },
        block,
    )
    .unwrap();

    let receipt = world.submit_bundle(&bundle, None);
    outcome.submission_accepted = receipt.is_accepted();
    if receipt.is_accepted() {
        world.mark_forged_commit(rule, old_root, forged_root);
        outcome.root_forged = true;
    }
    outcome.root_changed = world.chain.current_root(rule) != old_root;
    outcome.user_balance_delta = balances_total(world).abs_diff(balances_before);
    outcome.detail = format!(
        "forged root committed: {}; user balance delta: {}",
        outcome.root_forged, outcome.user_balance_delta
    );
    outcome
}

/// Replay a previously accepted bundle; payload binding to the old root
/// makes it stale on arrival.
fn replay_attestation(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::ReplayAttestation, world.height());

    if world.last_accepted_bundle.is_none() {
        // drive one honest round so there is something to replay
        let next = BlockHeight(world.height() + 1);
        let target = assign(&UserId([0x11; 20]), next, world.chain.registry())
            .unwrap()
            .account;
        let Some((key, user)) = craft_keyed_user(world, target, next, "replay-seed-user") else {
            outcome.detail = "could not craft a routed user".into();
            return outcome;
        };
        let op = signed_op(world, &key, user, RuleId::Rule1, 10_000, next);
        world
            .mempool
            .submit(op)
            .expect("fresh attack user has no queued ops");
        for _ in 0..world.scenario.bundlers + 2 {
            world.step_inner();
            if world.last_accepted_bundle.is_some() {
                break;
            }
        }
    }

    let Some(bundle) = world.last_accepted_bundle.clone() else {
        outcome.detail = "no accepted bundle available to replay".into();
        return outcome;
    };

    // an accepted bundle's old root is by construction behind the current
    // root, so the replay must be rejected as stale
    let receipt = world.submit_bundle(&bundle, None);
    outcome.submission_accepted = receipt.is_accepted();
    outcome.detail = format!("replay receipt: {receipt:?}");
    outcome.root_changed = world.chain.current_root(bundle.rule) != bundle.new_root;
    if let Err(err) = world.chain.report_misbehavior(&bundle, REPORTER) {
        outcome.detail.push_str(&format!("; report: {err}"));
    }
    outcome
}

/// Process ops assigned to somebody else: the enclave signs honestly but
/// the routing clause rejects the bundle, and the report slashes.
fn skip_routing(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::SkipRouting, world.height());
    let Some(attacker) = pick_attacker(world) else {
        outcome.detail = "no active bundler left to act as attacker".into();
        return outcome;
    };
    let rule = RuleId::Rule2;
    let block = world.chain.height();
    let attacker_account = world.nodes[attacker].id.account;
    let grace = world.chain.config.grace_window;
    let root_before = world.chain.current_root(rule);

    // a sender the attacker is NOT entitled to within the grace window
    let mut foreign = None;
    for counter in 0u64.. {
        let mut sender = [0u8; 20];
        sender[..8].copy_from_slice(&counter.to_be_bytes());
        sender[9] = 0x5c;
        let sender = UserId(sender);
        let entitled = (block.0.saturating_sub(grace)..=block.0).any(|b| {
            assign(&sender, BlockHeight(b), world.chain.registry())
                .unwrap()
                .account
                == attacker_account
        });
        if !entitled {
            foreign = Some(sender);
            break;
        }
        if counter > 100_000 {
            break;
        }
    }
    let Some(sender) = foreign else {
        outcome.detail = "registry too small to escape the grace window".into();
        return outcome;
    };

    let op = UserOp {
        sender,
        rule,
        gas_cost: 10_000,
        nonce: world.chain.expected_nonce(&sender),
        wallet_balance: world.chain.balance_of(&sender),
        submit_block: block,
        signature: Signature65::zero(),
    };
    let node = &world.nodes[attacker];
    let out = tee_execute(
        std::slice::from_ref(&op),
        &world.canonical[&rule],
        &world.params,
        &node.enclave,
        node.id.account,
        block,
    )
    .unwrap();
    let bundle = OptimizedBundle::new(
        out.accepted_ops,
        rule,
        node.id,
        out.old_root,
        out.new_root,
        out.attestation,
        block,
    )
    .unwrap();

    let receipt = world.submit_bundle(&bundle, None);
    outcome.submission_accepted = receipt.is_accepted();
    outcome.detail = format!("receipt: {receipt:?}");
    if let Ok(slash) = world.chain.report_misbehavior(&bundle, REPORTER) {
        world.record_slash(&slash);
        outcome.slashed = true;
        outcome.reporter_award = slash.reporter_award;
    }
    outcome.root_changed = world.chain.current_root(rule) != root_before;
    outcome
}

/// Spend the same quota through two bundlers: the first bundle commits, the
/// second was built from the pre-commit root and dies as stale, and the
/// honest rebuild rejects the op outright.
fn quota_double_spend(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome =
        AttackOutcome::new(AttackKind::QuotaDoubleSpendAcrossBundlers, world.height());
    let rule = RuleId::Rule1;
    let limit = world.params.l_daily;
    let q = limit / 2 + 1;
    outcome.rule_limit = Some(limit);

    // phase 1: a fresh user spends q honestly through whichever bundler the
    // router picks next block
    let stale_tree = world.canonical[&rule].clone();
    let next = BlockHeight(world.height() + 1);
    let target = assign(&UserId([0x21; 20]), next, world.chain.registry())
        .unwrap()
        .account;
    let Some((key, user)) = craft_keyed_user(world, target, next, "double-spend-user") else {
        outcome.detail = "could not craft a routed user".into();
        return outcome;
    };
    let op1 = signed_op(world, &key, user, rule, q, next);
    world
        .mempool
        .submit(op1)
        .expect("fresh attack user has no queued ops");

    let mut executed_block = None;
    for _ in 0..world.scenario.bundlers as u64 + 3 {
        world.step_inner();
        if world.chain.expected_nonce(&user) == 1 {
            executed_block = Some(world.height());
            break;
        }
    }
    if executed_block.is_none() {
        outcome.detail = "phase-1 op was not executed; cannot stage the race".into();
        return outcome;
    }
    outcome.combined_accepted_gas = Some(q);

    // phase 2: a different bundler builds the user's next op against the
    // stale pre-commit tree where the quota looks unspent
    world.step_inner();
    let block = world.chain.height();
    let assigned = assign(&user, block, world.chain.registry())
        .unwrap()
        .account;
    let malicious_idx = world
        .nodes
        .iter()
        .position(|n| n.id.account == assigned)
        .expect("assigned bundler is simulated");
    let op2 = signed_op(world, &key, user, rule, q, block);

    let node = &world.nodes[malicious_idx];
    let out = tee_execute(
        std::slice::from_ref(&op2),
        &stale_tree,
        &world.params,
        &node.enclave,
        node.id.account,
        block,
    )
    .unwrap();
    if out.accepted_ops.is_empty() {
        outcome.detail = "stale tree unexpectedly rejected the second spend".into();
        return outcome;
    }
    let stale_bundle = OptimizedBundle::new(
        out.accepted_ops,
        rule,
        node.id,
        out.old_root,
        out.new_root,
        out.attestation,
        block,
    )
    .unwrap();
    let receipt = world.submit_bundle(&stale_bundle, None);
    let stale_rejected = matches!(
        receipt,
        ExecutionReceipt::Rejected {
            reason: BundleRejection::StaleRoot { .. }
        }
    );
    outcome.submission_accepted = receipt.is_accepted();
    if receipt.is_accepted() {
        outcome.combined_accepted_gas = Some(2 * q);
    }

    // honest rebuild against the live tree must reject the op
    let node = &world.nodes[malicious_idx];
    let honest = tee_execute(
        std::slice::from_ref(&op2),
        &world.canonical[&rule],
        &world.params,
        &node.enclave,
        node.id.account,
        block,
    )
    .unwrap();
    let honest_rejects = honest.accepted_ops.is_empty();
    outcome.detail = format!(
        "stale submission rejected: {stale_rejected}; honest rebuild rejects second spend: {honest_rejects}; receipt: {receipt:?}"
    );
    outcome
}

/// A lazy bundler sits on its assigned op; per-block rotation hands the op
/// to the next bundler within |B| blocks.
fn withhold_bundle(world: &mut SimWorld) -> AttackOutcome {
    let mut outcome = AttackOutcome::new(AttackKind::WithholdBundle, world.height());
    let Some(withholder) = pick_attacker(world) else {
        outcome.detail = "no active bundler left to withhold".into();
        return outcome;
    };
    if world.chain.registry().len() < 2 {
        outcome.detail = "rotation needs a second active bundler".into();
        return outcome;
    }
    let account = world.nodes[withholder].id.account;
    let start = world.chain.height();

    let Some((key, user)) = craft_keyed_user(world, account, start, "withhold-victim") else {
        outcome.detail = "could not craft a routed victim".into();
        return outcome;
    };
    let op = signed_op(world, &key, user, RuleId::Rule1, 10_000, start);
    let digest = op.digest();
    world.watch_ops.insert(digest, start.0);
    world
        .mempool
        .submit(op)
        .expect("fresh attack user has no queued ops");
    world.set_withholding(account, true);

    let bundler_count = world.chain.registry().len() as u64;
    for _ in 0..bundler_count {
        if world.watch_executed.contains_key(&digest) {
            break;
        }
        world.step_inner();
    }
    world.set_withholding(account, false);

    outcome.victim_latency_blocks = world.watch_executed.get(&digest).map(|exec| exec - start.0);
    outcome.detail = match outcome.victim_latency_blocks {
        Some(latency) => format!(
            "victim op executed {latency} block(s) after submission (|B| = {bundler_count})"
        ),
        None => "victim op still pending after |B| blocks".into(),
    };
    outcome
}
