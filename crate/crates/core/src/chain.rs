//! Simulated L1: bundle verification, atomic execution with root anchoring,
//! bundler staking and slashing, the delayed reward buffer, and the gas
//! ledger.
//!
//! ChainState has a single-writer contract: one sequencer applies all
//! mutating calls; everyone else reads snapshots.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto;
use crate::enclave::{attested_payload, batch_digest};
use crate::gas::{CostTable, GasMode};
use crate::merkle::StateTree;
use crate::routing::{self, BundlerRegistry};
use crate::types::{
    BlockHeight, BundlerAccount, EnclavePubKey, Hash32, OptimizedBundle, RuleId, UserId, UserOp,
};

/// EntryPoint-side protocol parameters.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    /// Minimum stake to register as a bundler, in wei.
    #[serde(with = "crate::types::u128_serde")]
    pub min_stake: u128,
    /// Maximum age of an attestation report, in blocks.
    pub freshness_window: u64,
    /// Routing grace window for assignment verification, in blocks.
    pub grace_window: u64,
    /// Blocks until an earned reward unlocks.
    pub reward_delay: u64,
    /// Bundler fee per executed op, in wei.
    #[serde(with = "crate::types::u128_serde")]
    pub fee_per_op: u128,
    /// Simulated gas price, wei per gas unit.
    #[serde(with = "crate::types::u128_serde")]
    pub gas_price: u128,
    /// Share of a slashed stake paid to the reporter, in percent; the rest
    /// is burned.
    pub reporter_share_percent: u8,
    /// Allowed absolute difference between an op's declared wallet balance
    /// and the chain balance.
    #[serde(with = "crate::types::u128_serde")]
    pub balance_tolerance: u128,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            min_stake: 10u128.pow(18),
            freshness_window: 2,
            grace_window: 1,
            reward_delay: 20,
            fee_per_op: 10u128.pow(15),
            gas_price: 10u128.pow(9),
            reporter_share_percent: 50,
            balance_tolerance: 0,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum BundlerStatus {
    Active,
    Slashed,
    Exited,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct BundlerRecord {
    pub stake: u128,
    pub status: BundlerStatus,
    pub joined_block: BlockHeight,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RewardEntry {
    pub amount: u128,
    pub unlock_block: BlockHeight,
}

/// Append-only root history for one rule.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct RootHistory {
    pub current: Hash32,
    pub history: Vec<(BlockHeight, Hash32)>,
}

/// One priced bundle execution, the measurement surface for the gas tables.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct GasEvent {
    pub block: BlockHeight,
    pub bundle_id: Hash32,
    pub mode: GasMode,
    pub rule: RuleId,
    pub ops: u64,
    pub gas: u64,
}

/// Why a bundle failed verification.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum BundleRejection {
    /// Clause (a): the bundle's old root is not the current on-chain root.
    StaleRoot { expected: Hash32, got: Hash32 },
    /// Clause (b): measurement not in the allowlist.
    UnknownEnclave(Hash32),
    /// Clause (b): attested key not registered.
    UntrustedKey(EnclavePubKey),
    /// Clause (b): attestation report too old or from the future.
    StaleAttestation {
        report_block: BlockHeight,
        height: BlockHeight,
    },
    /// Clause (c): signature does not verify over the recomputed payload.
    BadSignature,
    /// Clause (d): submitting bundler is not active.
    InactiveBundler(BundlerAccount),
    /// Clause (e): an op in the bundle is not assigned to this bundler.
    RoutingViolation { op: Hash32 },
}

/// Why execution reverted mid-bundle.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RevertReason {
    InjectedFault,
    NonceMismatch { expected: u64, got: u64 },
    WalletBalanceMismatch { declared: u128, actual: u128 },
    PaymasterPoolDepleted { needed: u128, available: u128 },
}

/// Outcome of handle_ops. Reverts requeue the whole bundle and leave no
/// trace on chain state.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum ExecutionReceipt {
    Accepted {
        rule: RuleId,
        new_root: Hash32,
        simulated_gas: u64,
        reward: u128,
        op_count: u64,
    },
    Rejected {
        reason: BundleRejection,
    },
    Reverted {
        at_op: usize,
        reason: RevertReason,
        requeue: Vec<UserOp>,
    },
}

impl ExecutionReceipt {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ExecutionReceipt::Accepted { .. })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SlashOutcome {
    pub bundler: BundlerAccount,
    pub reporter: UserId,
    pub reporter_award: u128,
    pub burned_stake: u128,
    pub forfeited_rewards: u128,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SlashError {
    #[error("bundle verifies cleanly; nothing to slash")]
    CleanBundle,
    #[error("honest stale-root races are not misbehavior")]
    HonestStaleness,
    #[error("verification failure not attributable to the bundler")]
    NotAttributable,
    #[error("bundler already slashed")]
    AlreadySlashed,
    #[error("no record for bundler")]
    UnknownBundler,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("stake {stake} below minimum {min}")]
    StakeTooLow { stake: u128, min: u128 },
    #[error("bundler already registered")]
    AlreadyRegistered,
    #[error("slashed bundlers cannot rejoin")]
    SlashedRejoin,
    #[error("cannot withdraw: bundler was slashed")]
    SlashedBundler,
    #[error("no record for bundler")]
    UnknownBundler,
}

/// Simulated EntryPoint-side world state.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: ChainConfig,
    cost_table: CostTable,
    height: BlockHeight,
    roots: BTreeMap<RuleId, RootHistory>,
    bundlers: BTreeMap<BundlerAccount, BundlerRecord>,
    reward_buffer: BTreeMap<BundlerAccount, Vec<RewardEntry>>,
    mrenclave_allowlist: BTreeSet<Hash32>,
    enclave_keys: BTreeSet<EnclavePubKey>,
    balances: BTreeMap<UserId, u128>,
    nonces: BTreeMap<UserId, u64>,
    paymaster_pool: BTreeMap<RuleId, u128>,
    gas_ledger: Vec<GasEvent>,
    registry: BundlerRegistry,
    pending_joins: Vec<BundlerAccount>,
    pending_leaves: Vec<BundlerAccount>,
    /// Wei destroyed by slashing remainders (and any future burns).
    burned: u128,
    /// Wei spent on simulated execution gas, leaving the application ledger.
    gas_sink: u128,
    /// Matured rewards paid out per bundler.
    paid_out: BTreeMap<BundlerAccount, u128>,
    /// Every wei ever deposited; conservation target for total_wei().
    minted: u128,
}

impl ChainState {
    pub fn new(config: ChainConfig, cost_table: CostTable) -> Self {
        let mut roots = BTreeMap::new();
        for rule in RuleId::ALL {
            let genesis = StateTree::new(rule).root();
            roots.insert(
                rule,
                RootHistory {
                    current: genesis,
                    history: vec![(BlockHeight(0), genesis)],
                },
            );
        }
        Self {
            config,
            cost_table,
            height: BlockHeight(0),
            roots,
            bundlers: BTreeMap::new(),
            reward_buffer: BTreeMap::new(),
            mrenclave_allowlist: BTreeSet::new(),
            enclave_keys: BTreeSet::new(),
            balances: BTreeMap::new(),
            nonces: BTreeMap::new(),
            paymaster_pool: BTreeMap::new(),
            gas_ledger: Vec::new(),
            registry: BundlerRegistry::new(),
            pending_joins: Vec::new(),
            pending_leaves: Vec::new(),
            burned: 0,
            gas_sink: 0,
            paid_out: BTreeMap::new(),
            minted: 0,
        }
    }

    pub fn height(&self) -> BlockHeight {
        self.height
    }

    pub fn registry(&self) -> &BundlerRegistry {
        &self.registry
    }

    pub fn cost_table(&self) -> &CostTable {
        &self.cost_table
    }

    pub fn current_root(&self, rule: RuleId) -> Hash32 {
        self.roots[&rule].current
    }

    pub fn root_history(&self, rule: RuleId) -> &RootHistory {
        &self.roots[&rule]
    }

    pub fn gas_ledger(&self) -> &[GasEvent] {
        &self.gas_ledger
    }

    pub fn bundler_record(&self, account: &BundlerAccount) -> Option<&BundlerRecord> {
        self.bundlers.get(account)
    }

    pub fn locked_rewards(&self, account: &BundlerAccount) -> u128 {
        self.reward_buffer
            .get(account)
            .map(|entries| entries.iter().map(|e| e.amount).sum())
            .unwrap_or(0)
    }

    pub fn balance_of(&self, user: &UserId) -> u128 {
        self.balances.get(user).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<UserId, u128> {
        &self.balances
    }

    pub fn expected_nonce(&self, user: &UserId) -> u64 {
        self.nonces.get(user).copied().unwrap_or(0)
    }

    pub fn pool_of(&self, rule: RuleId) -> u128 {
        self.paymaster_pool.get(&rule).copied().unwrap_or(0)
    }

    // --- setup (exogenous deposits; each one grows `minted`) ---

    pub fn fund_user(&mut self, user: UserId, amount: u128) {
        *self.balances.entry(user).or_insert(0) += amount;
        self.minted += amount;
    }

    pub fn fund_paymaster(&mut self, rule: RuleId, amount: u128) {
        *self.paymaster_pool.entry(rule).or_insert(0) += amount;
        self.minted += amount;
    }

    pub fn allow_enclave(&mut self, mrenclave: Hash32, pubkey: EnclavePubKey) {
        self.mrenclave_allowlist.insert(mrenclave);
        self.enclave_keys.insert(pubkey);
    }

    /// Stake and register a bundler; it joins the routing registry at the
    /// next block boundary.
    pub fn register_bundler(
        &mut self,
        account: BundlerAccount,
        stake: u128,
    ) -> Result<(), ChainError> {
        if stake < self.config.min_stake {
            return Err(ChainError::StakeTooLow {
                stake,
                min: self.config.min_stake,
            });
        }
        match self.bundlers.get(&account) {
            Some(rec) if rec.status == BundlerStatus::Slashed => {
                return Err(ChainError::SlashedRejoin)
            }
            Some(rec) if rec.status == BundlerStatus::Active => {
                return Err(ChainError::AlreadyRegistered)
            }
            _ => {}
        }
        // an Exited record keeps its locked stake; rejoining adds on top
        let prior_stake = self.bundlers.get(&account).map(|r| r.stake).unwrap_or(0);
        self.bundlers.insert(
            account,
            BundlerRecord {
                stake: prior_stake + stake,
                status: BundlerStatus::Active,
                joined_block: self.height,
            },
        );
        self.minted += stake;
        self.pending_joins.push(account);
        Ok(())
    }

    /// Voluntary exit: the bundler leaves the registry at the next block
    /// boundary. Matured rewards stay withdrawable and the account may
    /// register again later.
    pub fn exit_bundler(&mut self, account: &BundlerAccount) -> Result<(), ChainError> {
        let record = self
            .bundlers
            .get_mut(account)
            .ok_or(ChainError::UnknownBundler)?;
        if record.status == BundlerStatus::Slashed {
            return Err(ChainError::SlashedBundler);
        }
        record.status = BundlerStatus::Exited;
        if self.registry.contains(account) {
            self.pending_leaves.push(*account);
        }
        self.pending_joins.retain(|a| a != account);
        Ok(())
    }

    /// Advance the clock one block and apply queued membership changes.
    pub fn advance_block(&mut self) -> BlockHeight {
        self.height = self.height.next();
        if !self.pending_joins.is_empty() || !self.pending_leaves.is_empty() {
            let joins = std::mem::take(&mut self.pending_joins);
            let leaves = std::mem::take(&mut self.pending_leaves);
            self.registry =
                routing::rotate_membership(&self.registry, &joins, &leaves, self.height)
                    .expect("queued membership changes must be consistent");
        }
        self.height
    }

    fn bundle_payload(bundle: &OptimizedBundle) -> Hash32 {
        attested_payload(
            bundle.old_root,
            bundle.new_root,
            bundle.rule,
            bundle.bundler.account,
            bundle.submit_block,
            batch_digest(&bundle.ops),
        )
    }

    /// The five VerifyBundle clauses, reported with the first failure:
    /// (a) root consistency, (b) attestation identity and freshness,
    /// (c) signature over the recomputed payload, (d) bundler liveness,
    /// (e) routing assignment of every op.
    pub fn check_bundle(&self, bundle: &OptimizedBundle) -> Result<(), BundleRejection> {
        let current = self.current_root(bundle.rule);
        if bundle.old_root != current {
            return Err(BundleRejection::StaleRoot {
                expected: current,
                got: bundle.old_root,
            });
        }

        let att = &bundle.attestation;
        if !self.mrenclave_allowlist.contains(&att.mrenclave) {
            return Err(BundleRejection::UnknownEnclave(att.mrenclave));
        }
        if !self.enclave_keys.contains(&att.enclave_pubkey) {
            return Err(BundleRejection::UntrustedKey(att.enclave_pubkey));
        }
        let fresh = att.report_block.0 <= self.height.0
            && self.height.0 - att.report_block.0 <= self.config.freshness_window;
        if !fresh {
            return Err(BundleRejection::StaleAttestation {
                report_block: att.report_block,
                height: self.height,
            });
        }

        let payload = Self::bundle_payload(bundle);
        if !crypto::verify_with_key(&att.enclave_pubkey, &payload, &att.signature) {
            return Err(BundleRejection::BadSignature);
        }

        match self.bundlers.get(&bundle.bundler.account) {
            Some(rec) if rec.status == BundlerStatus::Active => {}
            _ => return Err(BundleRejection::InactiveBundler(bundle.bundler.account)),
        }

        for op in &bundle.ops {
            let ok = routing::verify_assignment(
                op,
                &bundle.bundler,
                bundle.submit_block,
                &self.registry,
                self.config.grace_window,
            );
            if !ok {
                return Err(BundleRejection::RoutingViolation { op: op.digest() });
            }
        }
        Ok(())
    }

    pub fn verify_bundle(&self, bundle: &OptimizedBundle) -> bool {
        self.check_bundle(bundle).is_ok()
    }

    /// Verify and execute a bundle. On success the root transition, reward
    /// accrual and gas event land together; on any revert nothing changes
    /// and all ops are handed back for requeueing.
    pub fn handle_ops(&mut self, bundle: &OptimizedBundle, mode: GasMode) -> ExecutionReceipt {
        self.handle_ops_with(bundle, mode, None)
    }

    /// handle_ops with an optional injected revert at the given op index
    /// (fault-injection hook for the simulator).
    pub fn handle_ops_with(
        &mut self,
        bundle: &OptimizedBundle,
        mode: GasMode,
        inject_revert_at: Option<usize>,
    ) -> ExecutionReceipt {
        if let Err(reason) = self.check_bundle(bundle) {
            return ExecutionReceipt::Rejected { reason };
        }

        let revert = |at_op: usize, reason: RevertReason| ExecutionReceipt::Reverted {
            at_op,
            reason,
            requeue: bundle.ops.clone(),
        };

        let mut next_nonces: BTreeMap<UserId, u64> = BTreeMap::new();
        let mut exec_gas: u128 = 0;
        for (i, op) in bundle.ops.iter().enumerate() {
            if inject_revert_at == Some(i) {
                return revert(i, RevertReason::InjectedFault);
            }
            let expected = next_nonces
                .get(&op.sender)
                .copied()
                .unwrap_or_else(|| self.expected_nonce(&op.sender));
            if op.nonce != expected {
                return revert(
                    i,
                    RevertReason::NonceMismatch {
                        expected,
                        got: op.nonce,
                    },
                );
            }
            next_nonces.insert(op.sender, op.nonce + 1);

            let actual = self.balance_of(&op.sender);
            let diff = op.wallet_balance.abs_diff(actual);
            if diff > self.config.balance_tolerance {
                return revert(
                    i,
                    RevertReason::WalletBalanceMismatch {
                        declared: op.wallet_balance,
                        actual,
                    },
                );
            }
            exec_gas += op.gas_cost as u128;
        }

        let op_count = bundle.ops.len() as u64;
        let exec_wei = exec_gas * self.config.gas_price;
        let reward = self.config.fee_per_op * op_count as u128;
        let pool = self.pool_of(bundle.rule);
        if pool < exec_wei + reward {
            return revert(
                bundle.ops.len() - 1,
                RevertReason::PaymasterPoolDepleted {
                    needed: exec_wei + reward,
                    available: pool,
                },
            );
        }

        // commit: all effects land atomically with the root update
        *self.paymaster_pool.get_mut(&bundle.rule).unwrap() -= exec_wei + reward;
        self.gas_sink += exec_wei;
        self.nonces.extend(next_nonces);
        self.reward_buffer
            .entry(bundle.bundler.account)
            .or_default()
            .push(RewardEntry {
                amount: reward,
                unlock_block: BlockHeight(self.height.0 + self.config.reward_delay),
            });
        let entry = self.roots.get_mut(&bundle.rule).unwrap();
        entry.current = bundle.new_root;
        entry.history.push((self.height, bundle.new_root));

        let simulated_gas = self.cost_table.price_bundle(mode, bundle.rule, op_count);
        self.gas_ledger.push(GasEvent {
            block: self.height,
            bundle_id: Self::bundle_payload(bundle),
            mode,
            rule: bundle.rule,
            ops: op_count,
            gas: simulated_gas,
        });

        ExecutionReceipt::Accepted {
            rule: bundle.rule,
            new_root: bundle.new_root,
            simulated_gas,
            reward,
            op_count,
        }
    }

    fn root_in_history(&self, rule: RuleId, root: Hash32) -> bool {
        self.roots[&rule].history.iter().any(|(_, r)| *r == root)
    }

    /// Slash a bundler for a verifiably misbehaving bundle. Honest
    /// staleness (an old root that was once current) is a race, not a
    /// fault. Slashable evidence: a fabricated old root, a bad signature,
    /// or a routing violation.
    pub fn report_misbehavior(
        &mut self,
        bundle: &OptimizedBundle,
        reporter: UserId,
    ) -> Result<SlashOutcome, SlashError> {
        let account = bundle.bundler.account;
        let record = self
            .bundlers
            .get(&account)
            .ok_or(SlashError::UnknownBundler)?;
        if record.status == BundlerStatus::Slashed {
            return Err(SlashError::AlreadySlashed);
        }

        let attributable = match self.check_bundle(bundle) {
            Ok(()) => return Err(SlashError::CleanBundle),
            Err(BundleRejection::StaleRoot { got, .. }) => {
                if self.root_in_history(bundle.rule, got) {
                    return Err(SlashError::HonestStaleness);
                }
                true
            }
            Err(BundleRejection::BadSignature) => true,
            Err(BundleRejection::RoutingViolation { .. }) => true,
            Err(_) => false,
        };
        if !attributable {
            return Err(SlashError::NotAttributable);
        }

        let record = self.bundlers.get_mut(&account).unwrap();
        let stake = record.stake;
        record.stake = 0;
        record.status = BundlerStatus::Slashed;

        let reporter_award = stake * self.config.reporter_share_percent as u128 / 100;
        let burned_stake = stake - reporter_award;
        *self.balances.entry(reporter).or_insert(0) += reporter_award;
        self.burned += burned_stake;

        let forfeited_rewards: u128 = self
            .reward_buffer
            .remove(&account)
            .map(|entries| entries.iter().map(|e| e.amount).sum())
            .unwrap_or(0);
        self.burned += forfeited_rewards;

        if self.registry.contains(&account) {
            self.pending_leaves.push(account);
        }
        self.pending_joins.retain(|a| *a != account);

        Ok(SlashOutcome {
            bundler: account,
            reporter,
            reporter_award,
            burned_stake,
            forfeited_rewards,
        })
    }

    /// Pay out exactly the reward entries that have matured.
    pub fn withdraw_rewards(&mut self, account: &BundlerAccount) -> Result<u128, ChainError> {
        let record = self
            .bundlers
            .get(account)
            .ok_or(ChainError::UnknownBundler)?;
        if record.status == BundlerStatus::Slashed {
            return Err(ChainError::SlashedBundler);
        }
        let height = self.height;
        let entries = self.reward_buffer.entry(*account).or_default();
        let mut paid = 0u128;
        entries.retain(|entry| {
            if entry.unlock_block.0 <= height.0 {
                paid += entry.amount;
                false
            } else {
                true
            }
        });
        *self.paid_out.entry(*account).or_insert(0) += paid;
        Ok(paid)
    }

    /// Every wei the ledger accounts for. Equal to `minted()` at all times.
    pub fn total_wei(&self) -> u128 {
        let balances: u128 = self.balances.values().sum();
        let pools: u128 = self.paymaster_pool.values().sum();
        let stakes: u128 = self.bundlers.values().map(|r| r.stake).sum();
        let locked: u128 = self
            .reward_buffer
            .values()
            .flat_map(|entries| entries.iter().map(|e| e.amount))
            .sum();
        let paid: u128 = self.paid_out.values().sum();
        balances + pools + stakes + locked + paid + self.burned + self.gas_sink
    }

    pub fn minted(&self) -> u128 {
        self.minted
    }

    pub fn conservation_holds(&self) -> bool {
        self.total_wei() == self.minted
    }
}
