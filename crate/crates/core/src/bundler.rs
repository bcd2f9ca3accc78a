//! Bundler node: mempool with two-phase removal, host pre-validation,
//! enclave invocation and bundle submission.

use std::collections::{BTreeMap, BTreeSet};

use crate::chain::{ChainState, ExecutionReceipt};
use crate::enclave::{self, EnclaveIdentity, EnclaveOutput};
use crate::gas::GasMode;
use crate::merkle::StateTree;
use crate::routing::{self, BundlerRegistry};
use crate::rules::RuleParams;
use crate::types::{BlockHeight, BundlerId, OptimizedBundle, RuleId, UserId, UserOp};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MempoolError {
    #[error("op with sender {0} nonce {1} already queued")]
    DuplicateOp(UserId, u64),
}

/// Shared op queue. Pulled ops are marked in flight but stay queued until a
/// receipt settles, drops or requeues them, so a bundler crash between pull
/// and receipt loses nothing.
#[derive(Clone, Debug, Default)]
pub struct Mempool {
    pending: Vec<UserOp>,
    requeued: Vec<UserOp>,
    in_flight: BTreeSet<(UserId, u64)>,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.pending.len() + self.requeued.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty() && self.requeued.is_empty()
    }

    pub fn contains(&self, key: &(UserId, u64)) -> bool {
        self.pending
            .iter()
            .chain(&self.requeued)
            .any(|op| op.key() == *key)
    }

    /// Queue a new op in arrival order.
    pub fn submit(&mut self, op: UserOp) -> Result<(), MempoolError> {
        if self.contains(&op.key()) {
            return Err(MempoolError::DuplicateOp(op.sender, op.nonce));
        }
        self.pending.push(op);
        Ok(())
    }

    /// Remove an op that reached a terminal state (executed or dropped).
    pub fn settle(&mut self, key: &(UserId, u64)) {
        self.pending.retain(|op| op.key() != *key);
        self.requeued.retain(|op| op.key() != *key);
        self.in_flight.remove(key);
    }

    /// Return an op to the requeue lane after a revert or stale submission.
    pub fn requeue(&mut self, key: &(UserId, u64)) {
        self.in_flight.remove(key);
        if let Some(pos) = self.pending.iter().position(|op| op.key() == *key) {
            let op = self.pending.remove(pos);
            self.requeued.push(op);
        }
        // ops already in the requeue lane keep their slot
    }

    /// Clear the in-flight mark without moving the op (crash recovery).
    pub fn release(&mut self, key: &(UserId, u64)) {
        self.in_flight.remove(key);
    }

    pub fn in_flight(&self) -> &BTreeSet<(UserId, u64)> {
        &self.in_flight
    }

    /// Any queued op, requeue lane first (drain/inspection helper).
    pub fn peek_any(&self) -> Option<UserOp> {
        self.requeued
            .first()
            .or_else(|| self.pending.first())
            .cloned()
    }

    /// Ops currently pullable (not in flight), requeued lane first.
    fn available(&self) -> impl Iterator<Item = &UserOp> {
        self.requeued
            .iter()
            .chain(self.pending.iter())
            .filter(|op| !self.in_flight.contains(&op.key()))
    }
}

/// One bundler's node state: its registry identity, enclave, and per-rule
/// mirrors of the committed trees.
pub struct BundlerNode {
    pub id: BundlerId,
    pub enclave: EnclaveIdentity,
    local_trees: BTreeMap<RuleId, StateTree>,
    pub max_batch: usize,
}

impl BundlerNode {
    pub fn new(id: BundlerId, enclave: EnclaveIdentity, max_batch: usize) -> Self {
        let local_trees = RuleId::ALL
            .iter()
            .map(|rule| (*rule, StateTree::new(*rule)))
            .collect();
        Self {
            id,
            enclave,
            local_trees,
            max_batch,
        }
    }

    pub fn tree(&self, rule: RuleId) -> &StateTree {
        &self.local_trees[&rule]
    }

    /// Adopt a canonical tree snapshot (refresh-before-build).
    pub fn refresh_tree(&mut self, rule: RuleId, tree: StateTree) {
        debug_assert_eq!(tree.rule(), rule);
        self.local_trees.insert(rule, tree);
    }
}

/// Pull this node's assigned share of the mempool at `block`: per rule, up
/// to max_batch ops, requeued ops first, then arrival order. Pulled ops are
/// marked in flight but not removed.
pub fn pull_assigned(
    mempool: &mut Mempool,
    node: &BundlerNode,
    registry: &BundlerRegistry,
    block: BlockHeight,
) -> BTreeMap<RuleId, Vec<UserOp>> {
    let mut batches: BTreeMap<RuleId, Vec<UserOp>> = BTreeMap::new();
    let mut pulled_keys = Vec::new();
    for op in mempool.available() {
        let assigned = match routing::assign(&op.sender, block, registry) {
            Ok(bundler) => bundler,
            Err(_) => break,
        };
        if assigned.account != node.id.account {
            continue;
        }
        let batch = batches.entry(op.rule).or_default();
        if batch.len() >= node.max_batch {
            continue;
        }
        batch.push(op.clone());
        pulled_keys.push(op.key());
    }
    for key in pulled_keys {
        mempool.in_flight.insert(key);
    }
    batches
}

/// Host-side pre-validation: keep ops with a valid sender signature, the
/// next expected nonce per sender, and positive gas cost. Order preserved.
pub fn pre_validate(ops: &[UserOp], chain: &ChainState) -> Vec<UserOp> {
    let mut expected: BTreeMap<UserId, u64> = BTreeMap::new();
    let mut kept = Vec::with_capacity(ops.len());
    for op in ops {
        if op.gas_cost == 0 || op.sender.is_zero() {
            continue;
        }
        if !op.verify_signature() {
            continue;
        }
        let next = expected
            .get(&op.sender)
            .copied()
            .unwrap_or_else(|| chain.expected_nonce(&op.sender));
        if op.nonce != next {
            continue;
        }
        expected.insert(op.sender, op.nonce + 1);
        kept.push(op.clone());
    }
    kept
}

/// Result of one build-and-submit round for a single rule.
pub struct RoundResult {
    pub enclave_output: EnclaveOutput,
    /// None when every op was rejected by the rule and nothing was
    /// submitted.
    pub receipt: Option<ExecutionReceipt>,
    pub bundle: Option<OptimizedBundle>,
}

/// Run the enclave over pre-validated ops and submit the optimized bundle.
///
/// The caller must have refreshed the node's local tree to the chain's
/// current root. On acceptance the node adopts the enclave's derived tree;
/// on rejection or revert the caller refreshes and requeues per the
/// receipt.
pub fn build_and_submit(
    node: &mut BundlerNode,
    rule: RuleId,
    ops: &[UserOp],
    chain: &mut ChainState,
    params: &RuleParams,
    mode: GasMode,
    inject_revert_at: Option<usize>,
) -> Result<RoundResult, enclave::EnclaveError> {
    let block = chain.height();
    let tree = node.tree(rule);
    let output = enclave::tee_execute(ops, tree, params, &node.enclave, node.id.account, block)?;

    if output.accepted_ops.is_empty() {
        return Ok(RoundResult {
            enclave_output: output,
            receipt: None,
            bundle: None,
        });
    }

    let bundle = OptimizedBundle::new(
        output.accepted_ops.clone(),
        rule,
        node.id,
        output.old_root,
        output.new_root,
        output.attestation.clone(),
        block,
    )
    .expect("enclave output forms a valid bundle");

    let receipt = chain.handle_ops_with(&bundle, mode, inject_revert_at);
    if receipt.is_accepted() {
        node.refresh_tree(rule, output.updated_tree.clone());
    }
    Ok(RoundResult {
        enclave_output: output,
        receipt: Some(receipt),
        bundle: Some(bundle),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto;
    use crate::types::Signature65;

    fn op(sender: u8, rule: RuleId, nonce: u64) -> UserOp {
        UserOp {
            sender: UserId([sender; 20]),
            rule,
            gas_cost: 100,
            nonce,
            wallet_balance: 0,
            submit_block: BlockHeight(1),
            signature: Signature65::zero(),
        }
    }

    #[test]
    fn mempool_rejects_duplicates() {
        let mut pool = Mempool::new();
        pool.submit(op(1, RuleId::Rule1, 0)).unwrap();
        assert_eq!(
            pool.submit(op(1, RuleId::Rule1, 0)),
            Err(MempoolError::DuplicateOp(UserId([1; 20]), 0))
        );
        // same sender, different nonce is fine
        pool.submit(op(1, RuleId::Rule1, 1)).unwrap();
        assert_eq!(pool.len(), 2);
    }

    #[test]
    fn settle_allows_nonce_reuse() {
        let mut pool = Mempool::new();
        let o = op(1, RuleId::Rule1, 0);
        pool.submit(o.clone()).unwrap();
        pool.settle(&o.key());
        assert!(pool.submit(op(1, RuleId::Rule1, 0)).is_ok());
    }

    #[test]
    fn requeued_ops_move_lanes_and_stay_unique() {
        let mut pool = Mempool::new();
        let o = op(1, RuleId::Rule1, 0);
        pool.submit(o.clone()).unwrap();
        pool.requeue(&o.key());
        assert_eq!(pool.len(), 1);
        assert!(pool.contains(&o.key()));
        assert!(pool.submit(o).is_err());
    }

    #[test]
    fn pre_validate_filters_bad_signature_nonce_gap_and_zero_gas() {
        let chain = ChainState::new(Default::default(), Default::default());

        let key = crypto::signing_key_from_seed(&[3u8; 32]);
        let sender = crypto::address_of(key.verifying_key());
        let mut good = UserOp {
            sender,
            rule: RuleId::Rule1,
            gas_cost: 100,
            nonce: 0,
            wallet_balance: 0,
            submit_block: BlockHeight(1),
            signature: Signature65::zero(),
        };
        good.signature = crypto::sign_digest(&key, &good.digest());

        let mut bad_sig = good.clone();
        bad_sig.nonce = 1;
        bad_sig.signature = Signature65::zero();

        let mut gapped = good.clone();
        gapped.nonce = 5;
        gapped.signature = crypto::sign_digest(&key, &gapped.digest());

        let mut zero_gas = good.clone();
        zero_gas.gas_cost = 0;

        let kept = pre_validate(&[good.clone(), bad_sig, gapped, zero_gas], &chain);
        assert_eq!(kept, vec![good]);
    }

    #[test]
    fn pre_validate_tracks_consecutive_nonces_within_batch() {
        let chain = ChainState::new(Default::default(), Default::default());
        let key = crypto::signing_key_from_seed(&[4u8; 32]);
        let sender = crypto::address_of(key.verifying_key());
        let mut ops = Vec::new();
        for nonce in 0..3 {
            let mut o = UserOp {
                sender,
                rule: RuleId::Rule2,
                gas_cost: 10,
                nonce,
                wallet_balance: 0,
                submit_block: BlockHeight(1),
                signature: Signature65::zero(),
            };
            o.signature = crypto::sign_digest(&key, &o.digest());
            ops.push(o);
        }
        let kept = pre_validate(&ops, &chain);
        assert_eq!(kept.len(), 3);
    }
}
