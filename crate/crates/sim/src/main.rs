//! gaslite-sim: run scenarios, verify replays, calibrate the cost model.
//!
//! Exit codes: 0 ok, 1 invariant violation or failed replay, 2 config or
//! input error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaslite_core::gas::{calibrate, Anchor, CostTable, GasMode};
use gaslite_core::types::RuleId;
use gaslite_sim::scenario::Scenario;
use gaslite_sim::{emit_tables, replay_verify, runner};

#[derive(Parser)]
#[command(
    name = "gaslite-sim",
    about = "Gas sponsorship protocol simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and emit tables, trace, and summary.
    Run {
        /// Scenario TOML file; omit to run the built-in default scenario.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output directory (tables, trace.jsonl, summary.json, store/).
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct state from a content store and compare against a trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        store: PathBuf,
    },
    /// Fit cost-table coefficients to anchor points from a CSV file with
    /// header mode,rule,n,gas (rule empty for gaslite/zk rows).
    Calibrate {
        #[arg(long)]
        anchors: PathBuf,
    },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { scenario, out } => run(scenario, out),
        Command::Replay { trace, store } => replay(trace, store),
        Command::Calibrate { anchors } => calibrate_cmd(anchors),
    }
}

fn run(scenario_path: Option<PathBuf>, out: PathBuf) -> ExitCode {
    let scenario = match scenario_path {
        Some(path) => match Scenario::load(&path) {
            Ok(s) => s,
            Err(err) => {
                eprintln!("{err}");
                return ExitCode::from(2);
            }
        },
        None => Scenario::default(),
    };

    let report = match runner::run_scenario(&scenario, &out) {
        Ok(report) => report,
        Err(runner::SimError::Config(err)) => {
            eprintln!("{err}");
            return ExitCode::from(2);
        }
        Err(err) => {
            eprintln!("run failed: {err}");
            return ExitCode::from(2);
        }
    };
    if let Err(err) = emit_tables(&report, &out) {
        eprintln!("emit failed: {err}");
        return ExitCode::from(2);
    }

    println!("blocks run        : {}", report.blocks_run);
    println!("gas events        : {}", report.gas_events.len());
    println!("attack outcomes   : {}", report.attack_outcomes.len());
    println!(
        "wei conservation  : {}",
        if report.minted == report.total_wei {
            "ok"
        } else {
            "BROKEN"
        }
    );
    for rule in RuleId::ALL {
        println!("final root {rule} : {}", report.final_roots[&rule]);
    }
    println!("outputs in {}", out.display());

    if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("{} invariant violation(s):", report.violations.len());
        for v in &report.violations {
            eprintln!("  - {v}");
        }
        ExitCode::from(1)
    }
}

fn replay(trace: PathBuf, store: PathBuf) -> ExitCode {
    match replay_verify(&trace, &store) {
        Ok(report) => {
            for rule in &report.checked_rules {
                println!("{rule}: checked");
            }
            if report.ok {
                println!("replay ok: store reconstructs every recorded root");
                ExitCode::SUCCESS
            } else {
                for failure in &report.failures {
                    eprintln!("replay mismatch: {failure}");
                }
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("replay failed: {err}");
            ExitCode::from(2)
        }
    }
}

fn calibrate_cmd(anchors_path: PathBuf) -> ExitCode {
    let raw = match std::fs::read_to_string(&anchors_path) {
        Ok(raw) => raw,
        Err(err) => {
            eprintln!("cannot read anchors: {err}");
            return ExitCode::from(2);
        }
    };
    let mut anchors = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("mode")) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            eprintln!("line {}: expected mode,rule,n,gas", i + 1);
            return ExitCode::from(2);
        }
        let mode = match parts[0] {
            "gaslite" => GasMode::GasLite,
            "zk" => GasMode::Zk,
            "infinitism" => GasMode::Infinitism,
            other => {
                eprintln!("line {}: unknown mode {other}", i + 1);
                return ExitCode::from(2);
            }
        };
        let rule = match parts[1] {
            "" => None,
            "rule1" => Some(RuleId::Rule1),
            "rule2" => Some(RuleId::Rule2),
            "rule3" => Some(RuleId::Rule3),
            "rule4" => Some(RuleId::Rule4),
            other => {
                eprintln!("line {}: unknown rule {other}", i + 1);
                return ExitCode::from(2);
            }
        };
        let (Ok(n_ops), Ok(gas)) = (parts[2].parse(), parts[3].parse()) else {
            eprintln!("line {}: n and gas must be integers", i + 1);
            return ExitCode::from(2);
        };
        anchors.push(Anchor {
            mode,
            rule,
            n_ops,
            gas,
        });
    }

    match calibrate(&CostTable::default(), &anchors) {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("calibration failed: {err}");
            ExitCode::from(2)
        }
    }
}
