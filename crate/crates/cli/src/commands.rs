//! Subcommand implementations. Each returns its artifacts in memory so
//! that callers (the binary, the acceptance suite) decide where they go.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use aliased_ac::bounds::{
    aliasing_lemma_check, bound_report_td, nac_bound_report, EnumerationOptions, MonteCarlo, NacBoundInputs,
    TdBoundParams,
};
use aliased_ac::npg::{exact_advantages, nac_run, ExactAdvantages, LogLinearPolicy};
use aliased_ac::oracles::{exact_return, symmetric_fixed_point};
use aliased_ac::td::{error_weights, measured_critic_error, td_learn, ErrorOracle, TdRecord};
use aliased_ac::{CriticMode, LinearCritic, NacConfig, NacTrace, QTable, StepSize, TdConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cache::cached;
use crate::config::{ExperimentConfig, GridPoint};
use crate::error::{CliError, CliResult, Runtime};
use crate::seeds::derive_seed;
use crate::setup::{optimal_policy, Setup};

/// In-memory outputs of one subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub csv: String,
    /// Deterministic body; the timestamped header is added on write.
    pub report: String,
    pub plot: Option<String>,
    /// Additional `(file name, contents)` pairs.
    pub extra: Vec<(String, String)>,
    /// Set by `accept` when a criterion fails.
    pub failed: bool,
}

impl Artifacts {
    /// Writes `results.csv`, `report.txt`, `plot.gp` and extras into `dir`.
    pub fn write(&self, dir: &Path, command: &str) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let stamp =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let header =
            format!("# aliased-ac {command}\n# generated at unix time {stamp} (header excluded from comparisons)\n\n");
        let mut files =
            vec![("results.csv".to_string(), self.csv.clone()), ("report.txt".to_string(), header + &self.report)];
        if let Some(p) = &self.plot {
            files.push(("plot.gp".to_string(), p.clone()));
        }
        files.extend(self.extra.iter().cloned());
        for (name, text) in files {
            let path = dir.join(&name);
            fs::write(&path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))?;
        }
        Ok(())
    }
}

fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().failed()
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn enumeration_options(cfg: &ExperimentConfig, stream: u64) -> EnumerationOptions {
    EnumerationOptions {
        horizon: cfg.bounds.horizon,
        node_cap: cfg.bounds.node_cap,
        monte_carlo: cfg.bounds.monte_carlo_samples.map(|samples| MonteCarlo { samples, seed: stream }),
    }
}

/// Exact tables of the configured policy.
#[derive(serde::Serialize, serde::Deserialize)]
struct ExactTables {
    d: Vec<f64>,
    asym: Vec<f64>,
    sym: Vec<f64>,
    sym_defined: Vec<bool>,
    tilde: Vec<f64>,
    j: f64,
}

fn exact_tables(setup: &Setup, m: usize) -> CliResult<ExactTables> {
    let key = format!("{}\n{}\n{m}", setup.identity, setup.policy.to_json());
    cached(&["exact", &key], || {
        let (p, asp, pi) = (&setup.pomdp, &setup.asp, &setup.policy);
        let ex = exact_advantages(p, asp, pi).failed()?;
        let tilde = symmetric_fixed_point(p, asp, pi, m, &ex.d).failed()?;
        Ok::<_, CliError>(ExactTables {
            d: ex.d.weights().to_vec(),
            asym: ex.asymmetric.values().to_vec(),
            sym: ex.symmetric.values().to_vec(),
            sym_defined: ex.symmetric.defined().to_vec(),
            tilde: tilde.values().to_vec(),
            j: exact_return(p, asp, pi).failed()?,
        })
    })
}

fn fmt_value(v: f64, defined: bool) -> String {
    if defined {
        v.to_string()
    } else {
        "undefined".into()
    }
}

pub fn run_exact(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    let setup = Setup::new(cfg)?;
    let m = cfg.td.m;
    let t = exact_tables(&setup, m)?;
    let (ns, nz, na) = (setup.pomdp.n_states(), setup.asp.n_agent_states(), setup.pomdp.n_actions());
    let pi = &setup.policy;
    let mut csv = String::from("quantity,s,z,a,value\n");
    for s in 0..ns {
        for z in 0..nz {
            let _ = writeln!(csv, "d,{s},{z},,{}", t.d[s * nz + z]);
        }
    }
    for s in 0..ns {
        for z in 0..nz {
            for a in 0..na {
                let _ = writeln!(csv, "q_asym,{s},{z},{a},{}", t.asym[(s * nz + z) * na + a]);
            }
        }
    }
    let v_of = |q: &[f64], z: usize| pi.probs(z).iter().zip(&q[z * na..(z + 1) * na]).map(|(p, v)| p * v).sum::<f64>();
    for (name, q) in [("q_sym", &t.sym), ("q_tilde", &t.tilde)] {
        for z in 0..nz {
            for a in 0..na {
                let _ = writeln!(csv, "{name},,{z},{a},{}", fmt_value(q[z * na + a], t.sym_defined[z * na]));
            }
        }
    }
    for s in 0..ns {
        for z in 0..nz {
            let row = s * nz + z;
            let v: f64 = pi.probs(z).iter().zip(&t.asym[row * na..(row + 1) * na]).map(|(p, v)| p * v).sum();
            let _ = writeln!(csv, "v_asym,{s},{z},,{v}");
        }
    }
    for (name, q) in [("v_sym", &t.sym), ("v_tilde", &t.tilde)] {
        for z in 0..nz {
            let _ = writeln!(csv, "{name},,{z},,{}", fmt_value(v_of(q, z), t.sym_defined[z * na]));
        }
    }
    let weights: Vec<f64> = (0..nz * na)
        .map(|i| {
            let z = i / na;
            (0..ns).map(|s| t.d[s * nz + z]).sum::<f64>() * pi.prob(z, i % na)
        })
        .collect();
    let gap = aliased_ac::features::weighted_norm(
        &t.sym
            .iter()
            .zip(&t.tilde)
            .zip(&weights)
            .map(|((a, b), &w)| if w > 0.0 { a - b } else { 0.0 })
            .collect::<Vec<_>>(),
        &weights,
    );
    let _ = writeln!(csv, "J,,,,{}", t.j);
    let _ = writeln!(csv, "aliasing_gap,,,,{gap}");

    let mut report = String::new();
    let _ = writeln!(report, "exact oracle values (gamma = {}, m = {m})", setup.pomdp.gamma());
    let _ = writeln!(report, "J = {}", t.j);
    let _ = writeln!(report, "||Q - Q~||_d = {gap}\n");
    let _ = writeln!(report, "{:<12} {:>14} {:>14} {:>12}", "agent state", "V", "V~", "d(z)");
    for z in 0..nz {
        let dz: f64 = (0..ns).map(|s| t.d[s * nz + z]).sum();
        let def = t.sym_defined[z * na];
        let _ = writeln!(
            report,
            "{:<12} {:>14} {:>14} {:>12}",
            setup.agent_state_label(z),
            fmt_value(round12(v_of(&t.sym, z)), def),
            fmt_value(round12(v_of(&t.tilde, z)), def),
            round12(dz)
        );
    }
    let _ = writeln!(report, "\n{:<12} {:<12} {:>14}", "state", "agent state", "V(s,z)");
    for s in 0..ns {
        for z in 0..nz {
            if t.d[s * nz + z] > 0.0 {
                let row = s * nz + z;
                let v: f64 = pi.probs(z).iter().zip(&t.asym[row * na..(row + 1) * na]).map(|(p, v)| p * v).sum();
                let _ = writeln!(
                    report,
                    "{:<12} {:<12} {:>14}",
                    setup.state_label(s),
                    setup.agent_state_label(z),
                    round12(v)
                );
            }
        }
    }
    let _ = writeln!(report, "\nactions: {}", (0..na).map(|a| setup.action_label(a)).collect::<Vec<_>>().join(", "));
    Ok(Artifacts { csv, report, ..Default::default() })
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

fn td_config(cfg: &ExperimentConfig, mode: CriticMode) -> TdConfig<f64> {
    let mut c = TdConfig::new(cfg.td.m, cfg.td.k, cfg.td.radius, mode);
    if let Some(a) = cfg.td.alpha {
        c.alpha = StepSize::Fixed(a);
    }
    c.error_every = cfg.td.error_every.unwrap_or((cfg.td.k / 100).max(1));
    c
}

fn target_table(ex: &ExactAdvantages<f64>, mode: CriticMode) -> &QTable<f64> {
    match mode {
        CriticMode::Asymmetric => &ex.asymmetric,
        CriticMode::Symmetric => &ex.symmetric,
    }
}

/// One critic run and the records kept for the trace.
struct TdRun {
    critic: LinearCritic<f64>,
    error: f64,
    records: Vec<TdRecord<f64>>,
}

fn td_one(setup: &Setup, cfg: &ExperimentConfig, stream: u64, keep: bool) -> CliResult<TdRun> {
    let tc = td_config(cfg, setup.mode);
    let ex = exact_advantages(&setup.pomdp, &setup.asp, &setup.policy).failed()?;
    let weights = error_weights(&ex.d, &setup.policy, setup.mode);
    let table = target_table(&ex, setup.mode);
    let oracle = keep.then_some(ErrorOracle { table, weights: &weights });
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let (critic, trace) =
        td_learn(&setup.pomdp, &setup.asp, &setup.policy, &setup.critic_features, &tc, &mut rng, oracle).failed()?;
    let error = measured_critic_error(&critic, table, &weights).failed()?;
    let records =
        if keep { trace.records.into_iter().filter(|r| r.measured_error.is_some()).collect() } else { Vec::new() };
    Ok(TdRun { critic, error, records })
}

fn seed_plot(ids: &[u64], x: usize, y: usize, xlabel: &str, ylabel: &str, logx: bool) -> String {
    let mut p = String::from("set datafile separator ','\nset key outside\n");
    if logx {
        p.push_str("set logscale x\n");
    }
    let _ = writeln!(p, "set xlabel '{xlabel}'\nset ylabel '{ylabel}'");
    let lines: Vec<String> = ids
        .iter()
        .map(|id| format!("'results.csv' every ::1 using ($1=={id} ? ${x} : NaN):{y} with lines title 'seed {id}'"))
        .collect();
    let _ = writeln!(p, "plot {}", lines.join(", \\\n     "));
    p
}

pub fn run_td(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    let setup = Setup::new(cfg)?;
    let runs: Vec<CliResult<TdRun>> = pool(cfg.jobs)?
        .install(|| cfg.seeds.par_iter().map(|&id| td_one(&setup, cfg, derive_seed(cfg.seed, 0, id), true)).collect());
    let mut csv = String::from("seed_id,stream,k,delta,g_norm,beta_norm,measured_error\n");
    let mut report = String::new();
    let _ = writeln!(
        report,
        "TD critic ({} mode, K = {}, m = {}, B = {})",
        setup.mode.as_str(),
        cfg.td.k,
        cfg.td.m,
        cfg.td.radius
    );
    let mut errors = Vec::new();
    for (run, &id) in runs.into_iter().zip(&cfg.seeds) {
        let run = run?;
        let stream = derive_seed(cfg.seed, 0, id);
        for r in &run.records {
            let _ = writeln!(
                csv,
                "{id},{stream},{},{},{},{},{}",
                r.k + 1,
                r.delta,
                r.g_norm,
                r.beta_norm,
                r.measured_error.unwrap_or(f64::NAN)
            );
        }
        let _ = writeln!(report, "  seed {id:>4}: final error {}", run.error);
        errors.push(run.error);
    }
    let (mean, se) = mean_stderr(&errors);
    let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
    let target = match setup.mode {
        CriticMode::Asymmetric => "asymmetric Q(s,z,a)",
        CriticMode::Symmetric => "true symmetric Q(z,a)",
    };
    let _ = writeln!(report, "error measured against the exact {target} under d(s,z)pi(a|z)");
    let _ = writeln!(report, "mean {mean} (stderr {se}), root mean square {rms} over {} seeds", errors.len());
    let plot = seed_plot(&cfg.seeds, 3, 7, "update k", "critic error of the running average", true);
    Ok(Artifacts { csv, report, plot: Some(plot), ..Default::default() })
}

fn nac_config(cfg: &ExperimentConfig, mode: CriticMode) -> NacConfig<f64> {
    let mut c = NacConfig::new(cfg.nac.outer, cfg.nac.inner, cfg.nac.critic_updates, cfg.nac.radius, mode);
    c.td.m = cfg.nac.m;
    if let Some(e) = cfg.nac.eta {
        c.eta = StepSize::Fixed(e);
    }
    if let Some(z) = cfg.nac.zeta {
        c.zeta = StepSize::Fixed(z);
    }
    c
}

fn nac_one(setup: &Setup, cfg: &ExperimentConfig, stream: u64) -> CliResult<NacTrace<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let nc = nac_config(cfg, setup.mode);
    let (_, trace) =
        nac_run(&setup.pomdp, &setup.asp, &setup.critic_features, &setup.policy_features, &nc, &mut rng).failed()?;
    Ok(trace)
}

pub fn run_nac(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    let setup = Setup::new(cfg)?;
    let (_, j_star) = optimal_policy(&setup.pomdp, &setup.asp, &setup.identity)?;
    let traces: Vec<CliResult<NacTrace<f64>>> = pool(cfg.jobs)?
        .install(|| cfg.seeds.par_iter().map(|&id| nac_one(&setup, cfg, derive_seed(cfg.seed, 0, id))).collect());
    let mut csv = String::from("seed_id,stream,t,J,critic_error,w_bar_norm,theta_norm\n");
    let mut report = String::new();
    let _ = writeln!(
        report,
        "natural actor-critic ({} mode, T = {}, N = {}, K = {}, m = {}, B = {})",
        setup.mode.as_str(),
        cfg.nac.outer,
        cfg.nac.inner,
        cfg.nac.critic_updates,
        cfg.nac.m,
        cfg.nac.radius
    );
    let _ = writeln!(report, "J* = {j_star} (best deterministic agent-state policy)");
    let mut gaps = Vec::new();
    for (trace, &id) in traces.into_iter().zip(&cfg.seeds) {
        let trace = trace?;
        let stream = derive_seed(cfg.seed, 0, id);
        for r in &trace.records {
            let _ = writeln!(csv, "{id},{stream},{},{},{},{},{}", r.t, r.j, r.critic_error, r.w_bar_norm, r.theta_norm);
        }
        let best = trace.best_return();
        let _ = writeln!(
            report,
            "  seed {id:>4}: best J {best}, min_t J* - J {}, mean critic error {}",
            j_star - best,
            trace.mean_critic_error()
        );
        gaps.push(j_star - best);
    }
    let _ = writeln!(report, "median over seeds of min_t (J* - J(pi_t)) = {}", median(&gaps));
    let plot = seed_plot(&cfg.seeds, 3, 4, "outer iteration t", "J(pi_t)", false);
    Ok(Artifacts { csv, report, plot: Some(plot), ..Default::default() })
}

fn require_two_seeds(cfg: &ExperimentConfig) -> CliResult<()> {
    if cfg.seeds.len() < 2 {
        return Err(CliError::validation("bounds need at least two seeds"));
    }
    Ok(())
}

fn critic_bound(
    setup: &Setup,
    cfg: &ExperimentConfig,
    critics: &[LinearCritic<f64>],
    stream: u64,
) -> CliResult<aliased_ac::BoundReport<f64>> {
    let params = TdBoundParams { k: cfg.td.k, m: cfg.td.m, radius: cfg.td.radius, mode: setup.mode };
    bound_report_td(
        &setup.pomdp,
        &setup.asp,
        &setup.policy,
        &setup.critic_features,
        critics,
        params,
        &enumeration_options(cfg, stream),
    )
    .failed()
}

pub fn run_bounds(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    require_two_seeds(cfg)?;
    let setup = Setup::new(cfg)?;
    let jobs = pool(cfg.jobs)?;
    let runs: Vec<CliResult<TdRun>> = jobs
        .install(|| cfg.seeds.par_iter().map(|&id| td_one(&setup, cfg, derive_seed(cfg.seed, 0, id), false)).collect());
    let critics: Vec<LinearCritic<f64>> = runs.into_iter().map(|r| r.map(|r| r.critic)).collect::<CliResult<_>>()?;
    let opts = enumeration_options(cfg, derive_seed(cfg.seed, 0, u64::MAX));
    let rep = critic_bound(&setup, cfg, &critics, derive_seed(cfg.seed, 0, u64::MAX))?;
    let mut report = rep.to_text();
    let lemma = aliasing_lemma_check(&setup.pomdp, &setup.asp, &setup.policy, cfg.td.m, &opts).failed()?;
    let _ = writeln!(report, "\naliasing bias check (m = {})", cfg.td.m);
    let _ = writeln!(report, "  ||Q - Q~||_d  {}", lemma.lhs);
    let _ = writeln!(report, "  bound        {} (+ tail {})", lemma.rhs, lemma.tail);
    let _ = writeln!(report, "  holds        {}", lemma.holds);
    let mut art = Artifacts { csv: rep.to_csv(), report, ..Default::default() };
    if cfg.bounds.actor {
        let (pi_star, j_star) = optimal_policy(&setup.pomdp, &setup.asp, &setup.identity)?;
        let traces: Vec<CliResult<NacTrace<f64>>> = jobs
            .install(|| cfg.seeds.par_iter().map(|&id| nac_one(&setup, cfg, derive_seed(cfg.seed, 1, id))).collect());
        let traces: Vec<NacTrace<f64>> = traces.into_iter().collect::<CliResult<_>>()?;
        let base =
            LogLinearPolicy::new(setup.policy_features.clone(), setup.asp.n_agent_states(), setup.pomdp.n_actions())
                .failed()?;
        let policies: Vec<LogLinearPolicy<f64>> = traces
            .iter()
            .flat_map(|t| t.thetas.iter())
            .map(|th| base.with_theta(th.clone()))
            .collect::<Result<_, _>>()
            .failed()?;
        let returns: Vec<Vec<f64>> = traces.iter().map(|t| t.records.iter().map(|r| r.j).collect()).collect();
        let inputs = NacBoundInputs {
            mode: setup.mode,
            outer: cfg.nac.outer,
            inner: cfg.nac.inner,
            critic_updates: cfg.nac.critic_updates,
            m: cfg.nac.m,
            radius: cfg.nac.radius,
            critic_features: &setup.critic_features,
            policies: &policies,
            returns: &returns,
            policy_star: &pi_star,
            j_star,
        };
        let actor = nac_bound_report(&setup.pomdp, &setup.asp, &inputs, &opts).failed()?;
        let _ = write!(art.report, "\n{}", actor.to_text());
        art.extra.push((
            "actor.csv".into(),
            format!("{}\n{}\n", aliased_ac::NacBoundReport::<f64>::CSV_HEADER, actor.csv_row()),
        ));
    }
    Ok(art)
}

/// Metric of one `(grid point, seed)` run.
enum SweepOutcome {
    Td(TdRun),
    Value(f64),
}

fn sweep_one(
    command: &str,
    setup: &Setup,
    cfg: &ExperimentConfig,
    j_star: f64,
    stream: u64,
) -> CliResult<SweepOutcome> {
    match command {
        "td" | "bounds" => td_one(setup, cfg, stream, false).map(SweepOutcome::Td),
        "nac" => {
            let trace = nac_one(setup, cfg, stream)?;
            Ok(SweepOutcome::Value(j_star - trace.best_return()))
        }
        other => Err(CliError::validation(format!("unknown sweep command {other:?}"))),
    }
}

fn axis(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run_sweep(cfg: &ExperimentConfig) -> CliResult<Artifacts> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::validation("sweep needs a [sweep] section"))?;
    let command = sweep.command.as_str();
    if !matches!(command, "td" | "nac" | "bounds") {
        return Err(CliError::validation(format!("sweep command must be td, nac or bounds, got {command:?}")));
    }
    let grid = sweep.grid()?;
    if command == "bounds" {
        require_two_seeds(cfg)?;
    }
    let configs: Vec<ExperimentConfig> = grid.iter().map(|g| g.apply(cfg)).collect();
    for c in &configs {
        c.validate()?;
    }
    let setup = Setup::new(cfg)?;
    let j_star = if command == "nac" { optimal_policy(&setup.pomdp, &setup.asp, &setup.identity)?.1 } else { f64::NAN };
    let tasks: Vec<(usize, u64)> = (0..grid.len()).flat_map(|g| cfg.seeds.iter().map(move |&id| (g, id))).collect();
    let results: Vec<CliResult<SweepOutcome>> = pool(cfg.jobs)?.install(|| {
        tasks
            .par_iter()
            .map(|&(g, id)| sweep_one(command, &setup, &configs[g], j_star, derive_seed(cfg.seed, g as u64, id)))
            .collect()
    });

    let metric = match command {
        "nac" => "min_t (J* - J(pi_t))",
        _ => "final critic error",
    };
    let mut csv = String::from("grid_index,K,N,T,m,row,seed_id,stream,value,stderr,status\n");
    let mut report = String::new();
    let _ = writeln!(
        report,
        "sweep of {command} over {} grid points x {} seeds; metric: {metric}",
        grid.len(),
        cfg.seeds.len()
    );
    let mut bounds_csv = format!("grid_index,{}\n", aliased_ac::BoundReport::<f64>::CSV_HEADER);
    let mut results = results.into_iter();
    for (g, point) in grid.iter().enumerate() {
        let GridPoint { k, n, t, m } = *point;
        let prefix = format!("{g},{},{},{},{}", axis(k), axis(n), axis(t), axis(m));
        let mut values = Vec::new();
        let mut critics = Vec::new();
        let mut failures = 0;
        for &id in &cfg.seeds {
            let stream = derive_seed(cfg.seed, g as u64, id);
            match results.next().expect("one result per task") {
                Ok(out) => {
                    let v = match out {
                        SweepOutcome::Td(run) => {
                            critics.push(run.critic);
                            run.error
                        }
                        SweepOutcome::Value(v) => v,
                    };
                    values.push(v);
                    let _ = writeln!(csv, "{prefix},run,{id},{stream},{v},,ok");
                }
                Err(e) => {
                    failures += 1;
                    let msg = e.to_string().replace([',', '\n'], ";");
                    let _ = writeln!(csv, "{prefix},run,{id},{stream},,,error: {msg}");
                }
            }
        }
        let (mean, se) = mean_stderr(&values);
        let status = if failures == 0 { "ok".to_string() } else { format!("{failures} failed") };
        let _ = writeln!(csv, "{prefix},mean,,,{mean},{se},{status}");
        let _ = writeln!(
            report,
            "  point {g} (K={} N={} T={} m={}): mean {mean}, stderr {se}, {status}",
            axis(k),
            axis(n),
            axis(t),
            axis(m)
        );
        if command == "bounds" {
            if critics.len() >= 2 {
                match critic_bound(&setup, &configs[g], &critics, derive_seed(cfg.seed, g as u64, u64::MAX)) {
                    Ok(rep) => {
                        let _ = writeln!(bounds_csv, "{g},{}", rep.csv_row());
                        let _ = write!(report, "{}", rep.to_text());
                    }
                    Err(e) => {
                        let _ = writeln!(report, "  bound for point {g} failed: {e}");
                    }
                }
            } else {
                let _ = writeln!(report, "  bound for point {g} skipped: fewer than two successful runs");
            }
        }
    }
    let mut art = Artifacts { csv, report, ..Default::default() };
    if command == "bounds" {
        art.extra.push(("bounds.csv".into(), bounds_csv));
    }
    let x = if sweep.k.is_some() {
        2
    } else if sweep.n.is_some() {
        3
    } else if sweep.t.is_some() {
        4
    } else {
        5
    };
    art.plot = Some(format!(
        "set datafile separator ','\nset logscale x\nset xlabel 'grid axis'\nset ylabel '{metric}'\n\
         plot 'results.csv' every ::1 using (strcol(6) eq 'mean' ? ${x} : NaN):9:10 with yerrorbars title 'mean +/- stderr'\n"
    ));
    Ok(art)
}
