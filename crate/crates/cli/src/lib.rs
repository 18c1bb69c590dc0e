//! Configuration-driven harness around `aliased_ac`: exact oracles, critic
//! and actor-critic runs, bound reports, sweeps and the acceptance suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accept;
pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod seeds;
pub mod setup;

pub use commands::Artifacts;
pub use config::{ExperimentConfig, Overrides};
pub use error::{CliError, CliResult};

/// Dispatches a subcommand other than `accept`.
pub fn run_command(command: &str, cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    match command {
        "exact" => commands::run_exact(cfg),
        "td" => commands::run_td(cfg),
        "nac" => commands::run_nac(cfg),
        "bounds" => commands::run_bounds(cfg),
        "sweep" => commands::run_sweep(cfg),
        other => Err(CliError::validation(format!("unknown command {other:?}"))),
    }
}
