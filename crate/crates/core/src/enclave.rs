//! Software-simulated TEE: executes a batch state transition for one rule,
//! recomputes the committed root, and signs an attestation binding the root
//! transition to the bundle, bundler and block.
//!
//! The enclave is a pure function over its inputs plus a signing key;
//! tamper-proof execution is modeled by this module's boundary, not real
//! SGX.

use k256::ecdsa::SigningKey;

use crate::crypto::{self, keccak256_concat, sign_digest};
use crate::merkle::StateTree;
use crate::rules::{self, RuleDecision, RuleParams};
use crate::types::{
    Attestation, BlockHeight, BundlerAccount, EnclavePubKey, Hash32, RuleId, UserOp,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnclaveError {
    #[error("batch op for {got} fed to a {expected} enclave tree")]
    RuleMismatch { expected: RuleId, got: RuleId },
}

/// Code identity and signing key of one enclave instance. The measurement
/// is the hash of the rule-engine version string, so any engine change
/// yields a different MRENCLAVE.
#[derive(Clone)]
pub struct EnclaveIdentity {
    version: String,
    mrenclave: Hash32,
    signing_key: SigningKey,
    pubkey: EnclavePubKey,
}

impl EnclaveIdentity {
    pub fn new(version: &str, key_seed: &[u8; 32]) -> Self {
        let signing_key = crypto::signing_key_from_seed(key_seed);
        let pubkey = crypto::compressed_pubkey(signing_key.verifying_key());
        Self {
            version: version.to_string(),
            mrenclave: crypto::keccak256(version.as_bytes()),
            signing_key,
            pubkey,
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn mrenclave(&self) -> Hash32 {
        self.mrenclave
    }

    pub fn pubkey(&self) -> EnclavePubKey {
        self.pubkey
    }

    /// The raw signing key; exposed so the adversary harness can model key
    /// theft.
    pub fn signing_key(&self) -> &SigningKey {
        &self.signing_key
    }
}

/// keccak256 over the concatenated digests of the accepted ops, in order.
pub fn batch_digest(ops: &[UserOp]) -> Hash32 {
    let digests: Vec<[u8; 32]> = ops.iter().map(|op| op.digest().0).collect();
    let parts: Vec<&[u8]> = digests.iter().map(|d| d.as_slice()).collect();
    keccak256_concat(&parts)
}

/// The payload the enclave signs. Binding old root, new root, rule, bundler
/// and block rules out replaying an attestation against any other bundle,
/// root pair or bundler.
pub fn attested_payload(
    old_root: Hash32,
    new_root: Hash32,
    rule: RuleId,
    bundler: BundlerAccount,
    block: BlockHeight,
    batch: Hash32,
) -> Hash32 {
    keccak256_concat(&[
        &old_root.0,
        &new_root.0,
        &[rule.as_byte()],
        &bundler.0,
        &block.0.to_be_bytes(),
        &batch.0,
    ])
}

/// Result of one enclave batch execution.
#[derive(Clone, Debug)]
pub struct EnclaveOutput {
    /// Accepted ops in input order.
    pub accepted_ops: Vec<UserOp>,
    /// Rejected ops with the violated clause, in input order.
    pub rejected_ops: Vec<(UserOp, RuleDecision)>,
    pub old_root: Hash32,
    pub new_root: Hash32,
    pub attestation: Attestation,
    /// The post-transition tree the bundler adopts on acceptance.
    pub updated_tree: StateTree,
}

/// Deterministic attestation report: signs the payload under the enclave
/// key and stamps the current block for freshness.
pub fn make_attestation_report(
    identity: &EnclaveIdentity,
    payload: Hash32,
    block: BlockHeight,
) -> Attestation {
    Attestation {
        mrenclave: identity.mrenclave,
        enclave_pubkey: identity.pubkey,
        report_block: block,
        signature: sign_digest(&identity.signing_key, &payload),
    }
}

/// Execute a batch strictly in order against the rule's state tree.
///
/// Each op is epoch-normalized and validated against the current in-enclave
/// state, so earlier accepted ops in the batch constrain later ones from the
/// same user. The input tree is not mutated; the derived tree is returned.
pub fn tee_execute(
    batch: &[UserOp],
    tree: &StateTree,
    params: &RuleParams,
    identity: &EnclaveIdentity,
    bundler: BundlerAccount,
    block: BlockHeight,
) -> Result<EnclaveOutput, EnclaveError> {
    for op in batch {
        if op.rule != tree.rule() {
            return Err(EnclaveError::RuleMismatch {
                expected: tree.rule(),
                got: op.rule,
            });
        }
    }

    let old_root = tree.root();
    let mut leaves = tree.leaves().clone();
    let mut committed_global = *tree.global();
    let mut accepted_ops = Vec::new();
    let mut rejected_ops = Vec::new();

    // per-op state transitions run on the raw leaf map; the tree commits
    // once at the end, so a batch costs one root computation
    for op in batch {
        let current = leaves.get(&op.sender).copied().unwrap_or_default();
        let (state, global) =
            rules::epoch_normalize(&current, &committed_global, op.submit_block, params);
        match rules::validate(&state, &global, op, params) {
            RuleDecision::Accepted => {
                let (next_state, next_global) =
                    rules::apply_transition(&state, &global, op, params)
                        .expect("validated op must transition");
                leaves.insert(op.sender, next_state);
                committed_global = next_global;
                accepted_ops.push(op.clone());
            }
            rejected => rejected_ops.push((op.clone(), rejected)),
        }
    }

    let working = StateTree::from_parts(tree.rule(), leaves, committed_global);
    let new_root = working.root();
    let payload = attested_payload(
        old_root,
        new_root,
        tree.rule(),
        bundler,
        block,
        batch_digest(&accepted_ops),
    );
    let attestation = make_attestation_report(identity, payload, block);

    Ok(EnclaveOutput {
        accepted_ops,
        rejected_ops,
        old_root,
        new_root,
        attestation,
        updated_tree: working,
    })
}
