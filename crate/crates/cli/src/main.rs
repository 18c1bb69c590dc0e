use std::path::PathBuf;
use std::process::ExitCode;

use aliased_ac_cli::{accept, run_command, CliError, CliResult, ExperimentConfig, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aliased-ac", version, about = "Asymmetric and symmetric actor-critic laboratory on finite POMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact value tables, visitation measure and return of one policy.
    Exact(Common),
    /// Projected m-step TD over seeds, traced against the exact target.
    Td(Common),
    /// Natural actor-critic over seeds.
    Nac(Common),
    /// Critic bound terms (and optionally the actor bound) against measured errors.
    Bounds(Common),
    /// Grid sweep over K, N, T and m from the [sweep] config section.
    Sweep(Common),
    /// Acceptance criteria 1 to 9.
    Accept {
        /// Comma-separated criterion numbers; all when omitted.
        #[arg(long, value_delimiter = ',')]
        only: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds (indices 0..N).
    #[arg(long)]
    seeds: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Critic mode: asym or sym.
    #[arg(long)]
    mode: Option<String>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// `tiger` or a POMDP JSON file.
    #[arg(long)]
    pomdp: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `uniform`, `optimal`, `<action>_always` or a policy JSON file.
    #[arg(long)]
    policy: Option<String>,
    /// `last_obs`, `window:K`, `state_revealing` or an agent-state JSON file.
    #[arg(long = "agent-state")]
    agent_state: Option<String>,
    /// TD updates K.
    #[arg(long)]
    k: Option<usize>,
    /// Bootstrap horizon m.
    #[arg(long)]
    m: Option<usize>,
    /// Ball radius B.
    #[arg(long)]
    radius: Option<f64>,
    /// Outer NAC iterations T.
    #[arg(long)]
    outer: Option<usize>,
    /// Inner SGD steps N.
    #[arg(long)]
    inner: Option<usize>,
    /// Critic updates per outer iteration.
    #[arg(long = "critic-updates")]
    critic_updates: Option<usize>,
    /// Belief-gap truncation horizon.
    #[arg(long)]
    horizon: Option<usize>,
}

impl Common {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            seeds: self.seeds,
            out: self.out.clone(),
            mode: self.mode.clone(),
            jobs: self.jobs,
            pomdp: self.pomdp.clone(),
            gamma: self.gamma,
            policy: self.policy.clone(),
            agent_state: self.agent_state.clone(),
            k: self.k,
            m: self.m,
            radius: self.radius,
            outer: self.outer,
            inner: self.inner,
            critic_updates: self.critic_updates,
            horizon: self.horizon,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> CliResult<bool> {
    let (name, artifacts, out) = match cli.command {
        Command::Accept { only, out } => ("accept", accept::run_accept(&only)?, out),
        other => {
            let (name, common) = match other {
                Command::Exact(c) => ("exact", c),
                Command::Td(c) => ("td", c),
                Command::Nac(c) => ("nac", c),
                Command::Bounds(c) => ("bounds", c),
                Command::Sweep(c) => ("sweep", c),
                Command::Accept { .. } => unreachable!(),
            };
            let cfg = common.config()?;
            let art = run_command(name, &cfg)?;
            (name, art, cfg.out)
        }
    };
    if name != "accept" {
        print!("{}", artifacts.report);
    }
    if let Some(dir) = out {
        artifacts.write(&dir, name)?;
    }
    Ok(!artifacts.failed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("aliased-ac: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &CliError) -> u8 {
    e.exit_code() as u8
}
