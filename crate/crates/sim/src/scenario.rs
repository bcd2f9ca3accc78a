//! Scenario configuration: one TOML file fully determines a run.

use std::collections::BTreeMap;
use std::path::Path;

use gaslite_core::chain::ChainConfig;
use gaslite_core::gas::{
    calibrate, Anchor, CostTable, GasMode, ResourceCurve, ResourceModel,
    DEFAULT_ATTESTATION_VERIFY_GAS, DEFAULT_ZK_VERIFY_GAS,
};
use gaslite_core::rules::RuleParams;
use gaslite_core::types::RuleId;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config error at {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario file: {0}")]
    Parse(#[from] toml::de::Error),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Workload shape: how many ops users emit per block and with what costs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub ops_per_block: usize,
    pub min_gas: u64,
    pub max_gas: u64,
    /// User funding range, in whole ETH.
    pub min_balance_eth: u64,
    pub max_balance_eth: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            ops_per_block: 8,
            min_gas: 10_000,
            max_gas: 60_000,
            min_balance_eth: 0,
            max_balance_eth: 100,
        }
    }
}

/// Bundler-node knobs.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BundlerConfig {
    pub max_batch: usize,
    /// Requeue rule-rejected ops once at the start of the next epoch
    /// instead of dropping them.
    pub retry_rejected_next_epoch: bool,
}

impl Default for BundlerConfig {
    fn default() -> Self {
        Self {
            max_batch: 1000,
            retry_rejected_next_epoch: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct PersistenceConfig {
    pub snapshot_every: u64,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        Self { snapshot_every: 50 }
    }
}

/// Calibration inputs for the cost model. Anchors are (batch_size, gas)
/// observations; the table is solved from them at load time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CostTableConfig {
    pub attestation_verify_gas: u64,
    pub zk_verify_gas: u64,
    pub gaslite_anchors: Vec<(u64, u64)>,
    pub infinitism_anchors: BTreeMap<RuleId, Vec<(u64, u64)>>,
}

impl Default for CostTableConfig {
    fn default() -> Self {
        let mut infinitism = BTreeMap::new();
        infinitism.insert(
            RuleId::Rule1,
            vec![(1, 401_607), (200, 22_627_653), (1000, 112_450_000)],
        );
        infinitism.insert(
            RuleId::Rule2,
            vec![(1, 405_429), (200, 22_842_963), (1000, 113_520_000)],
        );
        infinitism.insert(
            RuleId::Rule3,
            vec![(1, 481_429), (200, 27_125_013), (1000, 134_800_000)],
        );
        infinitism.insert(
            RuleId::Rule4,
            vec![(1, 566_000), (200, 31_890_000), (1000, 158_480_000)],
        );
        Self {
            attestation_verify_gas: DEFAULT_ATTESTATION_VERIFY_GAS,
            zk_verify_gas: DEFAULT_ZK_VERIFY_GAS,
            gaslite_anchors: vec![(1, 501_000), (1000, 82_150_000)],
            infinitism_anchors: infinitism,
        }
    }
}

impl CostTableConfig {
    pub fn anchors(&self) -> Vec<Anchor> {
        let mut anchors = Vec::new();
        for &(n_ops, gas) in &self.gaslite_anchors {
            anchors.push(Anchor {
                mode: GasMode::GasLite,
                rule: None,
                n_ops,
                gas,
            });
        }
        for (rule, points) in &self.infinitism_anchors {
            for &(n_ops, gas) in points {
                anchors.push(Anchor {
                    mode: GasMode::Infinitism,
                    rule: Some(*rule),
                    n_ops,
                    gas,
                });
            }
        }
        anchors
    }

    pub fn build(&self) -> Result<CostTable, ConfigError> {
        let base = CostTable {
            attestation_verify_gas: self.attestation_verify_gas,
            zk_verify_gas: self.zk_verify_gas,
            ..Default::default()
        };
        calibrate(&base, &self.anchors()).map_err(|e| invalid("cost_table", e.to_string()))
    }
}

/// Off-chain resource constants: ZK prover curves per rule (values at a
/// batch of 1000) and the constant TEE footprint.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ZkResourceRow {
    pub time_s_at_1000: f64,
    pub mem_mb_at_1000: f64,
    pub artifact_mb_at_1000: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceConfig {
    pub zk: BTreeMap<RuleId, ZkResourceRow>,
    pub gaslite_mem_mb: f64,
    pub gaslite_artifact_mb: f64,
}

impl Default for ZkResourceRow {
    fn default() -> Self {
        Self {
            time_s_at_1000: 0.0,
            mem_mb_at_1000: 0.0,
            artifact_mb_at_1000: 0.0,
        }
    }
}

impl Default for ResourceConfig {
    fn default() -> Self {
        let mut zk = BTreeMap::new();
        zk.insert(
            RuleId::Rule1,
            ZkResourceRow {
                time_s_at_1000: 463.84,
                mem_mb_at_1000: 13_132.0,
                artifact_mb_at_1000: 2_477.0,
            },
        );
        zk.insert(
            RuleId::Rule2,
            ZkResourceRow {
                time_s_at_1000: 513.29,
                mem_mb_at_1000: 13_146.0,
                artifact_mb_at_1000: 4_432.0,
            },
        );
        zk.insert(
            RuleId::Rule3,
            ZkResourceRow {
                time_s_at_1000: 926.45,
                mem_mb_at_1000: 15_396.0,
                artifact_mb_at_1000: 4_030.0,
            },
        );
        zk.insert(
            RuleId::Rule4,
            ZkResourceRow {
                time_s_at_1000: 937.18,
                mem_mb_at_1000: 26_132.0,
                artifact_mb_at_1000: 5_692.0,
            },
        );
        Self {
            zk,
            gaslite_mem_mb: 11.7,
            gaslite_artifact_mb: 10.4,
        }
    }
}

impl ResourceConfig {
    pub fn build(&self) -> ResourceModel {
        const MB: f64 = 1e6;
        let mut model = ResourceModel::default();
        for (rule, row) in &self.zk {
            model.set_curve(
                GasMode::Zk,
                *rule,
                ResourceCurve {
                    time_per_op_s: row.time_s_at_1000 / 1000.0,
                    mem_per_op_bytes: row.mem_mb_at_1000 * MB / 1000.0,
                    artifact_per_op_bytes: row.artifact_mb_at_1000 * MB / 1000.0,
                    ..Default::default()
                },
            );
        }
        for rule in RuleId::ALL {
            model.set_curve(
                GasMode::GasLite,
                rule,
                ResourceCurve {
                    mem_fixed_bytes: self.gaslite_mem_mb * MB,
                    artifact_fixed_bytes: self.gaslite_artifact_mb * MB,
                    ..Default::default()
                },
            );
        }
        model
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    RevertOp,
    BundlerCrash,
    ForgedRoot,
    StaleSubmit,
    TamperedLogBlob,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub at_block: u64,
    /// Bundler index the fault targets (ignored for TamperedLogBlob).
    #[serde(default)]
    pub target: u64,
    /// Blocks a crashed bundler stays offline.
    #[serde(default = "default_crash_duration")]
    pub duration: u64,
}

fn default_crash_duration() -> u64 {
    1
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    ForgeRootNoKey,
    ForgeRootStolenKey,
    ReplayAttestation,
    SkipRouting,
    QuotaDoubleSpendAcrossBundlers,
    WithholdBundle,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub at_block: u64,
}

/// A complete, seed-determined simulation scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub blocks: u64,
    pub bundlers: usize,
    pub users: usize,
    pub batch_sizes: Vec<u64>,
    pub rule_mix: BTreeMap<RuleId, f64>,
    pub workload: WorkloadConfig,
    pub bundler: BundlerConfig,
    pub rule_params: RuleParams,
    pub chain: ChainConfig,
    pub persistence: PersistenceConfig,
    pub cost_table: CostTableConfig,
    pub resources: ResourceConfig,
    pub faults: Vec<FaultSpec>,
    pub attacks: Vec<AttackSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        let rule_mix = RuleId::ALL.iter().map(|r| (*r, 1.0)).collect();
        Self {
            seed: 42,
            blocks: 100,
            bundlers: 4,
            users: 50,
            batch_sizes: vec![1, 20, 50, 100, 200, 400, 600, 800, 1000],
            rule_mix,
            workload: WorkloadConfig::default(),
            bundler: BundlerConfig::default(),
            rule_params: RuleParams::default(),
            chain: ChainConfig::default(),
            persistence: PersistenceConfig::default(),
            cost_table: CostTableConfig::default(),
            resources: ResourceConfig::default(),
            faults: Vec::new(),
            attacks: Vec::new(),
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path)?;
        let scenario: Scenario = toml::from_str(&raw)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.blocks == 0 {
            return Err(invalid("blocks", "must be at least 1"));
        }
        if self.bundlers == 0 {
            return Err(invalid("bundlers", "must be at least 1"));
        }
        if self.users == 0 {
            return Err(invalid("users", "must be at least 1"));
        }
        if self.rule_mix.values().any(|w| *w < 0.0) {
            return Err(invalid("rule_mix", "weights must be non-negative"));
        }
        if self.rule_mix.values().sum::<f64>() <= 0.0 {
            return Err(invalid("rule_mix", "weights must sum to a positive value"));
        }
        if self.workload.min_gas == 0 || self.workload.min_gas > self.workload.max_gas {
            return Err(invalid("workload.min_gas", "need 0 < min_gas <= max_gas"));
        }
        if self.workload.min_balance_eth > self.workload.max_balance_eth {
            return Err(invalid(
                "workload.min_balance_eth",
                "min_balance_eth > max_balance_eth",
            ));
        }
        if self.bundler.max_batch == 0 {
            return Err(invalid("bundler.max_batch", "must be at least 1"));
        }
        if self.persistence.snapshot_every == 0 {
            return Err(invalid("persistence.snapshot_every", "must be at least 1"));
        }
        let p = &self.rule_params;
        if p.epoch_blocks == 0 || p.window_blocks == 0 {
            return Err(invalid(
                "rule_params",
                "epoch_blocks and window_blocks must be >= 1",
            ));
        }
        if p.l_daily == 0 || p.l_total == 0 || p.l_one == 0 || p.l_win == 0 || p.l_base == 0 {
            return Err(invalid("rule_params", "limits must be positive"));
        }
        if p.balance_unit == 0 {
            return Err(invalid("rule_params.balance_unit", "must be positive"));
        }
        if self.batch_sizes.contains(&0) {
            return Err(invalid("batch_sizes", "batch sizes must be >= 1"));
        }
        for (i, fault) in self.faults.iter().enumerate() {
            if fault.at_block == 0 || fault.at_block > self.blocks {
                return Err(invalid(
                    &format!("faults[{i}].at_block"),
                    "must fall within the run",
                ));
            }
            if fault.kind != FaultKind::TamperedLogBlob && fault.target as usize >= self.bundlers {
                return Err(invalid(
                    &format!("faults[{i}].target"),
                    "bundler index out of range",
                ));
            }
        }
        for (i, attack) in self.attacks.iter().enumerate() {
            if attack.at_block == 0 || attack.at_block > self.blocks {
                return Err(invalid(
                    &format!("attacks[{i}].at_block"),
                    "must fall within the run",
                ));
            }
        }
        self.cost_table.build().map(|_| ())
    }

    pub fn cost_table(&self) -> CostTable {
        self.cost_table
            .build()
            .expect("validated scenario has a consistent cost table")
    }

    pub fn resource_model(&self) -> ResourceModel {
        self.resources.build()
    }

    pub fn rule_weights(&self) -> [f64; 4] {
        let mut weights = [0.0; 4];
        for (i, rule) in RuleId::ALL.iter().enumerate() {
            weights[i] = self.rule_mix.get(rule).copied().unwrap_or(0.0);
        }
        weights
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenario_validates() {
        Scenario::default().validate().unwrap();
    }

    #[test]
    fn default_cost_table_reproduces_its_anchors() {
        let table = Scenario::default().cost_table();
        assert_eq!(
            table.price_bundle(GasMode::GasLite, RuleId::Rule1, 1000),
            82_150_000
        );
        assert_eq!(
            table.price_bundle(GasMode::Infinitism, RuleId::Rule4, 1000),
            158_480_000
        );
        assert_eq!(
            table.price_bundle(GasMode::Infinitism, RuleId::Rule1, 1000),
            112_450_000
        );
    }

    #[test]
    fn bad_fields_report_their_path() {
        let mut s = Scenario::default();
        s.bundlers = 0;
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("bundlers"));

        let mut s = Scenario::default();
        s.faults.push(FaultSpec {
            kind: FaultKind::RevertOp,
            at_block: 9_999,
            target: 0,
            duration: 1,
        });
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("faults[0].at_block"));
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::default();
        let raw = toml::to_string_pretty(&s).unwrap();
        let back: Scenario = toml::from_str(&raw).unwrap();
        assert_eq!(back.seed, s.seed);
        assert_eq!(back.batch_sizes, s.batch_sizes);
        back.validate().unwrap();
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let s: Scenario = toml::from_str("seed = 7\nblocks = 10").unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.blocks, 10);
        assert_eq!(s.bundlers, 4);
        s.validate().unwrap();
    }
}
