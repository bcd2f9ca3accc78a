//! Scenario-driven simulator for the TEE-offloaded gas sponsorship
//! protocol: multi-bundler block simulation with fault injection, an
//! adversary harness, a benchmark sweep over the gas cost model, and
//! deterministic replay verification against the content store.

pub mod attacks;
pub mod runner;
pub mod scenario;
pub mod tables;
pub mod workload;

pub use runner::{run_scenario, RunReport, SimWorld};
pub use scenario::Scenario;
pub use tables::{emit_tables, replay_verify};
