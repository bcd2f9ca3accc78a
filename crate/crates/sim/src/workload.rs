//! Deterministic workload generation: seeded users with real keys, each
//! emitting one signed op at a time.

use gaslite_core::chain::ChainState;
use gaslite_core::crypto;
use gaslite_core::crypto::SigningKey;
use gaslite_core::types::{BlockHeight, RuleId, Signature65, UserId, UserOp};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::scenario::Scenario;

pub struct SimUser {
    pub id: UserId,
    key: SigningKey,
    /// True while an op from this user is anywhere between submission and a
    /// terminal state; one op in flight per user keeps nonces sequential.
    pub busy: bool,
}

pub struct Workload {
    users: Vec<SimUser>,
    rng: ChaCha8Rng,
    weights: [f64; 4],
    min_gas: u64,
    max_gas: u64,
    ops_per_block: usize,
}

/// Label-derived sub-seed so each randomness consumer has its own stream.
pub fn labeled_seed(master: u64, label: &str) -> [u8; 32] {
    let mut buf = Vec::with_capacity(8 + label.len());
    buf.extend_from_slice(&master.to_be_bytes());
    buf.extend_from_slice(label.as_bytes());
    *crypto::keccak256(&buf).as_bytes()
}

impl Workload {
    /// Create and fund the user population on chain.
    pub fn new(scenario: &Scenario, chain: &mut ChainState) -> Self {
        let mut key_rng = ChaCha8Rng::from_seed(labeled_seed(scenario.seed, "user-keys"));
        let mut rng = ChaCha8Rng::from_seed(labeled_seed(scenario.seed, "workload"));
        let mut users = Vec::with_capacity(scenario.users);
        for _ in 0..scenario.users {
            let mut seed = [0u8; 32];
            key_rng.fill_bytes(&mut seed);
            let key = crypto::signing_key_from_seed(&seed);
            let id = crypto::address_of(key.verifying_key());
            let eth = rng
                .gen_range(scenario.workload.min_balance_eth..=scenario.workload.max_balance_eth);
            chain.fund_user(id, eth as u128 * 10u128.pow(18));
            users.push(SimUser {
                id,
                key,
                busy: false,
            });
        }
        Self {
            users,
            rng,
            weights: scenario.rule_weights(),
            min_gas: scenario.workload.min_gas,
            max_gas: scenario.workload.max_gas,
            ops_per_block: scenario.workload.ops_per_block,
        }
    }

    fn pick_rule(&mut self) -> RuleId {
        let total: f64 = self.weights.iter().sum();
        let mut roll = self.rng.gen_range(0.0..total);
        for (i, w) in self.weights.iter().enumerate() {
            if roll < *w {
                return RuleId::ALL[i];
            }
            roll -= w;
        }
        RuleId::Rule1
    }

    /// Emit this block's ops: up to ops_per_block users that have no op in
    /// flight, each signing one op at its next expected nonce with its
    /// current chain balance as the attested snapshot.
    pub fn generate(&mut self, chain: &ChainState, block: BlockHeight) -> Vec<UserOp> {
        let mut ready: Vec<usize> = (0..self.users.len())
            .filter(|i| !self.users[*i].busy)
            .collect();
        let count = ready.len().min(self.ops_per_block);
        // partial Fisher-Yates over the ready list
        for i in 0..count {
            let j = self.rng.gen_range(i..ready.len());
            ready.swap(i, j);
        }

        let mut ops = Vec::with_capacity(count);
        for &idx in ready.iter().take(count) {
            let rule = self.pick_rule();
            let gas_cost = self.rng.gen_range(self.min_gas..=self.max_gas);
            let user = &mut self.users[idx];
            let mut op = UserOp {
                sender: user.id,
                rule,
                gas_cost,
                nonce: chain.expected_nonce(&user.id),
                wallet_balance: chain.balance_of(&user.id),
                submit_block: block,
                signature: Signature65::zero(),
            };
            op.signature = crypto::sign_digest(&user.key, &op.digest());
            user.busy = true;
            ops.push(op);
        }
        ops
    }

    /// An op from this user reached a terminal state; the user may emit
    /// again.
    pub fn on_terminal(&mut self, sender: &UserId) {
        if let Some(user) = self.users.iter_mut().find(|u| u.id == *sender) {
            user.busy = false;
        }
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }
}
