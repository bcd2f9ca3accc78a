//! Simulated gas pricing for the three verification modes, plus the
//! off-chain resource model used for report columns.
//!
//! Cost coefficients are exact rationals so that calibration reproduces its
//! anchor points bit-exactly; prices round to integer gas only at the end.
//! GasLite and ZK share the bundle base and per-op execution terms and
//! differ only by their constant verification gas, so their price delta at
//! equal batch size is exactly the difference of those constants.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::types::RuleId;

/// Verification mode of a submitted bundle.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GasMode {
    Infinitism,
    Zk,
    GasLite,
}

impl GasMode {
    pub const ALL: [GasMode; 3] = [GasMode::Infinitism, GasMode::Zk, GasMode::GasLite];
}

impl fmt::Display for GasMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GasMode::Infinitism => "infinitism",
            GasMode::Zk => "zk",
            GasMode::GasLite => "gaslite",
        };
        write!(f, "{name}")
    }
}

pub type Gas = Ratio<i128>;

fn gas_int(v: u64) -> Gas {
    Ratio::from_integer(v as i128)
}

/// Round a rational gas value to the nearest integer, floored at zero.
fn to_gas_units(v: &Gas) -> u64 {
    let rounded = v.round().to_integer();
    rounded.max(0) as u64
}

/// Per-rule on-chain verification costs of the Infinitism mode.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct InfinitismCost {
    /// Fixed per-bundle verification overhead beyond the shared bundle base.
    pub verification_base: Gas,
    /// Per-op rule check cost.
    pub per_op_check: Gas,
    /// Per-op storage update cost.
    pub per_op_storage: Gas,
    /// Quadratic congestion coefficient capturing the superlinear growth of
    /// on-chain verification under load.
    pub congestion_coeff: Gas,
}

impl Default for InfinitismCost {
    fn default() -> Self {
        Self {
            verification_base: Gas::zero(),
            per_op_check: Gas::zero(),
            per_op_storage: Gas::zero(),
            congestion_coeff: Gas::zero(),
        }
    }
}

/// Parameterized cost table mapping (mode, rule, batch size) to simulated
/// gas.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct CostTable {
    /// Fixed per-submission overhead shared by all modes.
    pub base_bundle_gas: Gas,
    /// Per-op execution gas shared by all modes.
    pub per_op_exec_gas: Gas,
    /// Constant attestation verification gas (GasLite).
    pub attestation_verify_gas: u64,
    /// Constant proof verification gas (ZK).
    pub zk_verify_gas: u64,
    pub infinitism: BTreeMap<RuleId, InfinitismCost>,
}

pub const DEFAULT_ATTESTATION_VERIFY_GAS: u64 = 60_000;
pub const DEFAULT_ZK_VERIFY_GAS: u64 = 235_154;

impl Default for CostTable {
    fn default() -> Self {
        Self {
            base_bundle_gas: Gas::zero(),
            per_op_exec_gas: Gas::zero(),
            attestation_verify_gas: DEFAULT_ATTESTATION_VERIFY_GAS,
            zk_verify_gas: DEFAULT_ZK_VERIFY_GAS,
            infinitism: BTreeMap::new(),
        }
    }
}

impl CostTable {
    /// Simulated gas for a bundle of `n_ops` ops under `mode`. GasLite and
    /// ZK prices are independent of the rule.
    pub fn price_bundle(&self, mode: GasMode, rule: RuleId, n_ops: u64) -> u64 {
        assert!(n_ops >= 1, "bundles contain at least one op");
        let n = gas_int(n_ops);
        let shared = self.base_bundle_gas + self.per_op_exec_gas * n;
        let total = match mode {
            GasMode::GasLite => shared + gas_int(self.attestation_verify_gas),
            GasMode::Zk => shared + gas_int(self.zk_verify_gas),
            GasMode::Infinitism => {
                let cost = self.infinitism.get(&rule).cloned().unwrap_or_default();
                shared
                    + cost.verification_base
                    + (cost.per_op_check + cost.per_op_storage) * n
                    + cost.congestion_coeff * n * n
            }
        };
        to_gas_units(&total)
    }
}

impl fmt::Display for CostTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "base_bundle_gas      = {} (~{:.2})",
            self.base_bundle_gas,
            ratio_f64(&self.base_bundle_gas)
        )?;
        writeln!(
            f,
            "per_op_exec_gas      = {} (~{:.2})",
            self.per_op_exec_gas,
            ratio_f64(&self.per_op_exec_gas)
        )?;
        writeln!(f, "attestation_verify   = {}", self.attestation_verify_gas)?;
        writeln!(f, "zk_verify            = {}", self.zk_verify_gas)?;
        for (rule, cost) in &self.infinitism {
            writeln!(
                f,
                "{rule}: verification_base ~{:.2}, per_op_check ~{:.2}, per_op_storage ~{:.2}, congestion ~{:.6}",
                ratio_f64(&cost.verification_base),
                ratio_f64(&cost.per_op_check),
                ratio_f64(&cost.per_op_storage),
                ratio_f64(&cost.congestion_coeff),
            )?;
        }
        Ok(())
    }
}

fn ratio_f64(r: &Gas) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// One observed (mode, rule, batch size, gas) point used for calibration.
/// GasLite and ZK anchors are rule-agnostic; Infinitism anchors bind a rule.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Anchor {
    pub mode: GasMode,
    pub rule: Option<RuleId>,
    pub n_ops: u64,
    pub gas: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CalibrationError {
    #[error("{mode} needs at least {need} anchors with distinct batch sizes{rule}", rule = fmt_rule(.rule))]
    Underdetermined {
        mode: GasMode,
        rule: Option<RuleId>,
        need: usize,
    },
    #[error(
        "{mode} anchor at n={n_ops} predicts {predicted} but observed {observed} (beyond 0.5%)"
    )]
    InconsistentAnchors {
        mode: GasMode,
        n_ops: u64,
        predicted: u64,
        observed: u64,
    },
}

fn fmt_rule(rule: &Option<RuleId>) -> String {
    match rule {
        Some(r) => format!(" for {r}"),
        None => String::new(),
    }
}

const TOLERANCE_DENOM: i128 = 200; // 0.5%

fn within_tolerance(predicted: &Gas, observed: u64) -> bool {
    let diff = (*predicted - gas_int(observed)).abs();
    diff * Ratio::from_integer(TOLERANCE_DENOM) <= gas_int(observed)
}

fn dedup_by_n(anchors: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let mut seen = Vec::new();
    for &(n, g) in anchors {
        if !seen.iter().any(|&(sn, _)| sn == n) {
            seen.push((n, g));
        }
    }
    seen
}

/// Exact affine fit through the first two distinct-n anchors:
/// returns (intercept, slope).
fn solve_affine(points: &[(u64, u64)]) -> (Gas, Gas) {
    let (n1, g1) = points[0];
    let (n2, g2) = points[1];
    let slope = (gas_int(g2) - gas_int(g1)) / (gas_int(n2) - gas_int(n1));
    let intercept = gas_int(g1) - slope * gas_int(n1);
    (intercept, slope)
}

/// Exact quadratic fit a + b n + c n^2 through three distinct-n points,
/// by divided differences.
fn solve_quadratic(points: &[(u64, u64)]) -> (Gas, Gas, Gas) {
    let (n1, g1) = points[0];
    let (n2, g2) = points[1];
    let (n3, g3) = points[2];
    let s1 = (gas_int(g2) - gas_int(g1)) / (gas_int(n2) - gas_int(n1));
    let s2 = (gas_int(g3) - gas_int(g2)) / (gas_int(n3) - gas_int(n2));
    let c = (s2 - s1) / (gas_int(n3) - gas_int(n1));
    let b = s1 - c * (gas_int(n1) + gas_int(n2));
    let a = gas_int(g1) - b * gas_int(n1) - c * gas_int(n1) * gas_int(n1);
    (a, b, c)
}

/// Fit a cost table to anchor points. The shared base and per-op execution
/// terms come from the GasLite (or, failing that, ZK) anchors; each rule's
/// Infinitism anchors pin that rule's verification base, per-op delta and
/// congestion coefficient. Anchors beyond the minimum must agree with the
/// solved model within 0.5%.
///
/// The split between per-op check and storage gas is not identifiable from
/// bundle totals; calibration attributes the whole per-op delta to
/// `per_op_check`.
pub fn calibrate(table: &CostTable, anchors: &[Anchor]) -> Result<CostTable, CalibrationError> {
    let mut out = table.clone();

    let gaslite: Vec<(u64, u64)> = anchors
        .iter()
        .filter(|a| a.mode == GasMode::GasLite)
        .map(|a| (a.n_ops, a.gas))
        .collect();
    let zk: Vec<(u64, u64)> = anchors
        .iter()
        .filter(|a| a.mode == GasMode::Zk)
        .map(|a| (a.n_ops, a.gas))
        .collect();

    let mut solved_shared = false;
    if !gaslite.is_empty() {
        let distinct = dedup_by_n(&gaslite);
        if distinct.len() < 2 {
            return Err(CalibrationError::Underdetermined {
                mode: GasMode::GasLite,
                rule: None,
                need: 2,
            });
        }
        let (fixed_total, slope) = solve_affine(&distinct);
        out.per_op_exec_gas = slope;
        out.base_bundle_gas = fixed_total - gas_int(out.attestation_verify_gas);
        solved_shared = true;
        for &(n, g) in &gaslite {
            let predicted = fixed_total + slope * gas_int(n);
            if !within_tolerance(&predicted, g) {
                return Err(CalibrationError::InconsistentAnchors {
                    mode: GasMode::GasLite,
                    n_ops: n,
                    predicted: to_gas_units(&predicted),
                    observed: g,
                });
            }
        }
    }

    if !zk.is_empty() {
        if solved_shared {
            for &(n, g) in &zk {
                let predicted = out.base_bundle_gas
                    + gas_int(out.zk_verify_gas)
                    + out.per_op_exec_gas * gas_int(n);
                if !within_tolerance(&predicted, g) {
                    return Err(CalibrationError::InconsistentAnchors {
                        mode: GasMode::Zk,
                        n_ops: n,
                        predicted: to_gas_units(&predicted),
                        observed: g,
                    });
                }
            }
        } else {
            let distinct = dedup_by_n(&zk);
            if distinct.len() < 2 {
                return Err(CalibrationError::Underdetermined {
                    mode: GasMode::Zk,
                    rule: None,
                    need: 2,
                });
            }
            let (fixed_total, slope) = solve_affine(&distinct);
            out.per_op_exec_gas = slope;
            out.base_bundle_gas = fixed_total - gas_int(out.zk_verify_gas);
        }
    }

    for rule in RuleId::ALL {
        let points: Vec<(u64, u64)> = anchors
            .iter()
            .filter(|a| a.mode == GasMode::Infinitism && a.rule == Some(rule))
            .map(|a| (a.n_ops, a.gas))
            .collect();
        if points.is_empty() {
            continue;
        }
        // with no shared anchors in this call, the rule decomposition is
        // relative to the input table's existing base and per-op terms
        let distinct = dedup_by_n(&points);
        if distinct.len() < 3 {
            return Err(CalibrationError::Underdetermined {
                mode: GasMode::Infinitism,
                rule: Some(rule),
                need: 3,
            });
        }
        let (a, b, c) = solve_quadratic(&distinct);
        let cost = InfinitismCost {
            verification_base: a - out.base_bundle_gas,
            per_op_check: b - out.per_op_exec_gas,
            per_op_storage: Gas::zero(),
            congestion_coeff: c,
        };
        out.infinitism.insert(rule, cost);
        for &(n, g) in &points {
            let predicted = a + b * gas_int(n) + c * gas_int(n) * gas_int(n);
            if !within_tolerance(&predicted, g) {
                return Err(CalibrationError::InconsistentAnchors {
                    mode: GasMode::Infinitism,
                    n_ops: n,
                    predicted: to_gas_units(&predicted),
                    observed: g,
                });
            }
        }
    }

    Ok(out)
}

/// Affine off-chain resource curve for one (mode, rule) pair.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceCurve {
    pub time_fixed_s: f64,
    pub time_per_op_s: f64,
    pub mem_fixed_bytes: f64,
    pub mem_per_op_bytes: f64,
    pub artifact_fixed_bytes: f64,
    pub artifact_per_op_bytes: f64,
}

/// Modeled off-chain resource usage. Report decoration only; never used
/// for control flow.
#[derive(Clone, Copy, PartialEq, Debug, Default)]
pub struct ResourceUsage {
    pub time_s: f64,
    pub mem_bytes: f64,
    pub artifact_bytes: f64,
}

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct ResourceModel {
    curves: BTreeMap<GasMode, BTreeMap<RuleId, ResourceCurve>>,
}

impl ResourceModel {
    pub fn set_curve(&mut self, mode: GasMode, rule: RuleId, curve: ResourceCurve) {
        self.curves.entry(mode).or_default().insert(rule, curve);
    }

    pub fn curve(&self, mode: GasMode, rule: RuleId) -> ResourceCurve {
        self.curves
            .get(&mode)
            .and_then(|by_rule| by_rule.get(&rule))
            .copied()
            .unwrap_or_default()
    }

    /// Evaluate the affine model at a batch size.
    pub fn model_resources(&self, mode: GasMode, rule: RuleId, n_ops: u64) -> ResourceUsage {
        assert!(n_ops >= 1, "resource model is defined for n >= 1");
        let curve = self.curve(mode, rule);
        let n = n_ops as f64;
        ResourceUsage {
            time_s: curve.time_fixed_s + curve.time_per_op_s * n,
            mem_bytes: curve.mem_fixed_bytes + curve.mem_per_op_bytes * n,
            artifact_bytes: curve.artifact_fixed_bytes + curve.artifact_per_op_bytes * n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor(mode: GasMode, rule: Option<RuleId>, n_ops: u64, gas: u64) -> Anchor {
        Anchor {
            mode,
            rule,
            n_ops,
            gas,
        }
    }

    fn calibrated() -> CostTable {
        let anchors = [
            anchor(GasMode::GasLite, None, 1, 501_000),
            anchor(GasMode::GasLite, None, 1000, 82_150_000),
            anchor(GasMode::Infinitism, Some(RuleId::Rule4), 1, 566_000),
            anchor(GasMode::Infinitism, Some(RuleId::Rule4), 200, 31_890_000),
            anchor(GasMode::Infinitism, Some(RuleId::Rule4), 1000, 158_480_000),
        ];
        calibrate(&CostTable::default(), &anchors).unwrap()
    }

    #[test]
    fn anchors_are_reproduced_exactly() {
        let table = calibrated();
        assert_eq!(
            table.price_bundle(GasMode::GasLite, RuleId::Rule1, 1),
            501_000
        );
        assert_eq!(
            table.price_bundle(GasMode::GasLite, RuleId::Rule1, 1000),
            82_150_000
        );
        assert_eq!(
            table.price_bundle(GasMode::Infinitism, RuleId::Rule4, 1),
            566_000
        );
        assert_eq!(
            table.price_bundle(GasMode::Infinitism, RuleId::Rule4, 200),
            31_890_000
        );
        assert_eq!(
            table.price_bundle(GasMode::Infinitism, RuleId::Rule4, 1000),
            158_480_000
        );
    }

    #[test]
    fn gaslite_price_is_rule_independent() {
        let table = calibrated();
        let at = |rule| table.price_bundle(GasMode::GasLite, rule, 512);
        assert_eq!(at(RuleId::Rule1), at(RuleId::Rule2));
        assert_eq!(at(RuleId::Rule1), at(RuleId::Rule3));
        assert_eq!(at(RuleId::Rule1), at(RuleId::Rule4));
    }

    #[test]
    fn zk_minus_gaslite_is_exactly_the_verifier_delta() {
        let table = calibrated();
        for n in [1u64, 7, 100, 999, 1000] {
            let zk = table.price_bundle(GasMode::Zk, RuleId::Rule2, n);
            let gl = table.price_bundle(GasMode::GasLite, RuleId::Rule2, n);
            assert_eq!(zk - gl, table.zk_verify_gas - table.attestation_verify_gas);
        }
    }

    #[test]
    fn constant_anchors_give_zero_slope() {
        let anchors = [
            anchor(GasMode::GasLite, None, 1, 700_000),
            anchor(GasMode::GasLite, None, 50, 700_000),
            anchor(GasMode::GasLite, None, 400, 700_000),
        ];
        let table = calibrate(&CostTable::default(), &anchors).unwrap();
        assert_eq!(table.per_op_exec_gas, Gas::zero());
        assert_eq!(
            table.price_bundle(GasMode::GasLite, RuleId::Rule1, 123),
            700_000
        );
    }

    #[test]
    fn underdetermined_anchors_error() {
        let err = calibrate(
            &CostTable::default(),
            &[anchor(GasMode::GasLite, None, 1, 501_000)],
        )
        .unwrap_err();
        assert_eq!(
            err,
            CalibrationError::Underdetermined {
                mode: GasMode::GasLite,
                rule: None,
                need: 2
            }
        );

        let err = calibrate(
            &CostTable::default(),
            &[
                anchor(GasMode::GasLite, None, 1, 501_000),
                anchor(GasMode::GasLite, None, 1000, 82_150_000),
                anchor(GasMode::Infinitism, Some(RuleId::Rule1), 1, 1_000),
                anchor(GasMode::Infinitism, Some(RuleId::Rule1), 10, 2_000),
            ],
        )
        .unwrap_err();
        assert_eq!(
            err,
            CalibrationError::Underdetermined {
                mode: GasMode::Infinitism,
                rule: Some(RuleId::Rule1),
                need: 3
            }
        );
    }

    #[test]
    fn inconsistent_extra_anchor_is_rejected() {
        let err = calibrate(
            &CostTable::default(),
            &[
                anchor(GasMode::GasLite, None, 1, 501_000),
                anchor(GasMode::GasLite, None, 1000, 82_150_000),
                anchor(GasMode::GasLite, None, 500, 60_000_000), // way off the line
            ],
        )
        .unwrap_err();
        assert!(matches!(err, CalibrationError::InconsistentAnchors { .. }));
    }

    #[test]
    fn resource_model_is_affine() {
        let mut model = ResourceModel::default();
        model.set_curve(
            GasMode::Zk,
            RuleId::Rule4,
            ResourceCurve {
                time_per_op_s: 0.93718,
                mem_per_op_bytes: 26_132_000.0,
                artifact_per_op_bytes: 5_692_000.0,
                ..Default::default()
            },
        );
        let usage = model.model_resources(GasMode::Zk, RuleId::Rule4, 1000);
        assert!((usage.time_s - 937.18).abs() < 1e-9);
        assert!((usage.mem_bytes / 1e6 - 26_132.0).abs() < 1e-6);

        let at_one = model.model_resources(GasMode::Zk, RuleId::Rule4, 1);
        assert!((at_one.time_s - 0.93718).abs() < 1e-12);
    }

    #[test]
    #[should_panic(expected = "n >= 1")]
    fn resource_model_rejects_zero_ops() {
        ResourceModel::default().model_resources(GasMode::GasLite, RuleId::Rule1, 0);
    }
}
