//! The four allocation-rule validators and the per-op state transition.
//!
//! All validators are pure and assume the state has been epoch-normalized
//! for the op's submit block. Quota comparisons are widened to u128 so no
//! validator can overflow; state counters use checked u64 arithmetic and
//! treat overflow as a hard error.

use serde::{Deserialize, Serialize};

use crate::merkle::{RuleGlobalState, UserState};
use crate::types::{BlockHeight, RuleId, UserOp};

/// Limits and epoch geometry for all four rules.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    /// Per-user daily gas limit (rules 1, 2).
    pub l_daily: u64,
    /// Global daily gas limit across all users (rule 2).
    pub l_total: u64,
    /// Minimum blocks between a user's ops, strict (rule 3).
    pub delta_t: u64,
    /// Single-op gas limit (rule 3).
    pub l_one: u64,
    /// Window gas quota (rule 3).
    pub l_win: u64,
    /// Length of the rule 3 tumbling window in blocks.
    pub window_blocks: u64,
    /// Base of the dynamic limit (rule 4).
    pub l_base: u64,
    /// Blocks per daily epoch.
    pub epoch_blocks: u64,
    /// Wallet-balance divisor of rule 4's dynamic term, in wei.
    #[serde(with = "crate::types::u128_serde")]
    pub balance_unit: u128,
    /// Gas granted per balance unit (rule 4).
    pub balance_gas_scale: u64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            l_daily: 200_000,
            l_total: 5_000_000,
            delta_t: 2,
            l_one: 50_000,
            l_win: 100_000,
            window_blocks: 10,
            l_base: 150_000,
            epoch_blocks: 100,
            balance_unit: 10 * 10u128.pow(18),
            balance_gas_scale: 1,
        }
    }
}

/// Why an op was rejected.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RejectReason {
    DailyExceeded,
    GlobalExceeded,
    TooFrequent,
    SingleOpTooLarge,
    WindowExceeded,
    DynamicExceeded,
}

/// Validator verdict; an op is accepted iff no clause was violated.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum RuleDecision {
    Accepted,
    Rejected(RejectReason),
}

impl RuleDecision {
    pub fn accepted(&self) -> bool {
        matches!(self, RuleDecision::Accepted)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("transition applied to an op the validator rejects: {0:?}")]
    NotValidated(RejectReason),
}

/// Roll usage counters forward to the epoch/window containing `block`.
/// Counters reset when the epoch or window index advances; nothing else
/// changes.
pub fn epoch_normalize(
    state: &UserState,
    global: &RuleGlobalState,
    block: BlockHeight,
    params: &RuleParams,
) -> (UserState, RuleGlobalState) {
    let mut state = *state;
    let mut global = *global;
    let epoch = block.0 / params.epoch_blocks;
    let window = block.0 / params.window_blocks;
    if epoch > state.day_index {
        state.day_usage = 0;
        state.day_index = epoch;
    }
    if window > state.window_index {
        state.window_usage = 0;
        state.window_index = window;
    }
    if epoch > global.day_index {
        global.global_day_usage = 0;
        global.day_index = epoch;
    }
    (state, global)
}

/// Rule 1: fixed daily cap. Accepts iff day_usage + c <= l_daily.
pub fn validate_rule1(state: &UserState, op: &UserOp, params: &RuleParams) -> RuleDecision {
    if state.day_usage as u128 + op.gas_cost as u128 <= params.l_daily as u128 {
        RuleDecision::Accepted
    } else {
        RuleDecision::Rejected(RejectReason::DailyExceeded)
    }
}

/// Rule 2: daily cap plus a global cap shared by all users. Violations are
/// reported in (daily, global) order.
pub fn validate_rule2(
    state: &UserState,
    global: &RuleGlobalState,
    op: &UserOp,
    params: &RuleParams,
) -> RuleDecision {
    if let RuleDecision::Rejected(reason) = validate_rule1(state, op, params) {
        return RuleDecision::Rejected(reason);
    }
    if global.global_day_usage as u128 + op.gas_cost as u128 <= params.l_total as u128 {
        RuleDecision::Accepted
    } else {
        RuleDecision::Rejected(RejectReason::GlobalExceeded)
    }
}

/// Rule 3: minimum interval since the last op (strict), a single-op cap,
/// and a window quota. A user with no history passes the interval clause.
pub fn validate_rule3(state: &UserState, op: &UserOp, params: &RuleParams) -> RuleDecision {
    let interval_ok = state.hist_count == 0
        || (state.last_op_block.0 as u128 + params.delta_t as u128) < op.submit_block.0 as u128;
    if !interval_ok {
        return RuleDecision::Rejected(RejectReason::TooFrequent);
    }
    if op.gas_cost > params.l_one {
        return RuleDecision::Rejected(RejectReason::SingleOpTooLarge);
    }
    if state.window_usage as u128 + op.gas_cost as u128 > params.l_win as u128 {
        return RuleDecision::Rejected(RejectReason::WindowExceeded);
    }
    RuleDecision::Accepted
}

/// Rule 4's dynamic limit: l_base + (balance / balance_unit) * scale -
/// hist_avg / 10, floored at zero. Computed in u128 so adversarial balances
/// cannot overflow.
pub fn dynamic_limit(state: &UserState, wallet_balance: u128, params: &RuleParams) -> u128 {
    let balance_grant = (wallet_balance / params.balance_unit) * params.balance_gas_scale as u128;
    let penalty = (state.hist_avg() / 10) as u128;
    (params.l_base as u128 + balance_grant).saturating_sub(penalty)
}

/// Rule 4: daily usage against the dynamic limit.
pub fn validate_rule4(state: &UserState, op: &UserOp, params: &RuleParams) -> RuleDecision {
    let limit = dynamic_limit(state, op.wallet_balance, params);
    if state.day_usage as u128 + op.gas_cost as u128 <= limit {
        RuleDecision::Accepted
    } else {
        RuleDecision::Rejected(RejectReason::DynamicExceeded)
    }
}

/// Dispatch to the op's rule.
pub fn validate(
    state: &UserState,
    global: &RuleGlobalState,
    op: &UserOp,
    params: &RuleParams,
) -> RuleDecision {
    match op.rule {
        RuleId::Rule1 => validate_rule1(state, op, params),
        RuleId::Rule2 => validate_rule2(state, global, op, params),
        RuleId::Rule3 => validate_rule3(state, op, params),
        RuleId::Rule4 => validate_rule4(state, op, params),
    }
}

/// Apply an accepted op to the user and global state. Errors if the op does
/// not validate against the given (normalized) state.
pub fn apply_transition(
    state: &UserState,
    global: &RuleGlobalState,
    op: &UserOp,
    params: &RuleParams,
) -> Result<(UserState, RuleGlobalState), RuleError> {
    if let RuleDecision::Rejected(reason) = validate(state, global, op, params) {
        return Err(RuleError::NotValidated(reason));
    }
    let mut state = *state;
    let mut global = *global;
    let overflow = "gas counter overflow";
    state.day_usage = state.day_usage.checked_add(op.gas_cost).expect(overflow);
    if op.rule == RuleId::Rule3 {
        state.window_usage = state.window_usage.checked_add(op.gas_cost).expect(overflow);
    }
    if op.rule == RuleId::Rule2 {
        global.global_day_usage = global
            .global_day_usage
            .checked_add(op.gas_cost)
            .expect(overflow);
    }
    state.last_op_block = op.submit_block;
    state.hist_count = state.hist_count.checked_add(1).expect(overflow);
    state.hist_sum = state.hist_sum.checked_add(op.gas_cost).expect(overflow);
    Ok((state, global))
}
