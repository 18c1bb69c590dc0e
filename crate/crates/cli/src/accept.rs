//! The nine acceptance criteria, shared by `aliased-ac accept` and the
//! `acceptance` test target.

use std::fmt::Write as _;
use std::time::Instant;

use aliased_ac::bounds::{
    aliasing_lemma_check, bound_report_td, eps_alias, eps_inf, EnumerationOptions, TdBoundParams,
};
use aliased_ac::features::FeatureMap;
use aliased_ac::npg::{
    asymmetric_normal_equations, exact_advantages, exact_npg, finite_difference_gradient, fisher_matrix, nac_run,
    symmetric_normal_equations, LogLinearPolicy, GRADIENT_STEP,
};
use aliased_ac::oracles::{
    brute_force_optimal, build_joint_chain, discounted_visitation, symmetric_fixed_point, DEFAULT_ENUMERATION_CAP,
};
use aliased_ac::td::{error_weights, measured_critic_error, td_learn};
use aliased_ac::{
    AgentPolicy, AgentStateProcess, CriticMode, LinearCritic, NacConfig, Pomdp, SymmetricBellman, TdConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::commands::Artifacts;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::seeds::derive_seed;

/// Master seed of every stochastic criterion.
pub const ACCEPT_SEED: u64 = 0;

pub const CRITERIA: [(usize, &str); 9] = [
    (1, "Tiger golden values"),
    (2, "symmetric operator contraction"),
    (3, "natural gradient identities"),
    (4, "asymmetric TD bound"),
    (5, "symmetric TD bound and aliasing floor"),
    (6, "aliasing bias lemma"),
    (7, "end-to-end natural actor-critic"),
    (8, "vanishing inference and aliasing terms"),
    (9, "byte-identical reruns"),
];

const GAMMA: f64 = 0.9;
const SWAP: usize = 0;
const ENTER: usize = 1;
const DARK: usize = 0;
const OBS_LEFT: usize = 1;
const OBS_RIGHT: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub measured: String,
    pub threshold: String,
    pub seconds: f64,
    pub runtime_limit: f64,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {} {}: {} | measured {} | required {} | {:.1}s of {}s",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.seconds,
            self.runtime_limit
        )
    }
}

struct Check {
    ok: bool,
    measured: String,
    threshold: String,
}

fn tiger() -> (Pomdp<f64>, AgentStateProcess<f64>) {
    let p = Pomdp::builtin_tiger(GAMMA).expect("builtin Tiger is valid");
    let m = AgentStateProcess::last_observation(&p);
    (p, m)
}

fn enter_always() -> AgentPolicy<f64> {
    AgentPolicy::constant(3, 2, ENTER)
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn rms(xs: &[f64]) -> f64 {
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn golden_values() -> CliResult<Check> {
    let (p, m) = tiger();
    let pi = enter_always();
    let ex = exact_advantages(&p, &m, &pi).map_err(CliError::runtime)?;
    let tilde = symmetric_fixed_point(&p, &m, &pi, 1, &ex.d).map_err(CliError::runtime)?;
    let v = ex.symmetric.state_values(&pi);
    let vt = tilde.state_values(&pi);
    let h = 1.0 / (1.0 - GAMMA);
    let expected = [
        (v[DARK], h / 2.0),
        (v[OBS_LEFT], GAMMA * h),
        (v[OBS_RIGHT], 0.0),
        (vt[DARK], h / 2.0),
        (vt[OBS_LEFT], GAMMA * h / 2.0),
        (vt[OBS_RIGHT], GAMMA * h / 2.0),
    ];
    let err = max_abs(expected.iter().map(|(a, b)| a - b));
    Ok(Check {
        ok: err <= 1e-8,
        measured: format!(
            "V = ({}; {}; {}) V~ = ({}; {}; {}) max error {err:.2e}",
            v[0], v[1], v[2], vt[0], vt[1], vt[2]
        ),
        threshold: "V = (5; 9; 0) V~ = (5; 4.5; 4.5) within 1e-8".into(),
    })
}

fn contraction() -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ACCEPT_SEED, 2, 0));
    let (tp, tm) = tiger();
    let rp = Pomdp::random(3, 2, 2, 0.85, &mut rng).map_err(CliError::runtime)?;
    let rm = AgentStateProcess::random(2, 2, 2, &mut rng).map_err(CliError::runtime)?;
    let rpi = AgentPolicy::random(2, 2, &mut rng);
    let instances = [(tp, tm, AgentPolicy::uniform(3, 2)), (rp, rm, rpi)];
    let mut worst: f64 = f64::NEG_INFINITY;
    for (p, m, pi) in &instances {
        let chain = build_joint_chain(p, m, pi).map_err(CliError::runtime)?;
        let d = discounted_visitation(&chain, p.gamma()).map_err(CliError::runtime)?;
        let n = m.n_agent_states() * p.n_actions();
        for steps in [1usize, 2, 4] {
            let op = SymmetricBellman::new(p, m, pi, steps, &d).map_err(CliError::runtime)?;
            let modulus = p.gamma().powi(steps as i32);
            for _ in 0..100 {
                let q1: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
                let q2: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
                let (t1, t2) = (op.apply(&q1), op.apply(&q2));
                let num = max_abs(t1.iter().zip(&t2).map(|(a, b)| a - b));
                let den = max_abs(q1.iter().zip(&q2).map(|(a, b)| a - b));
                worst = worst.max(num / den - modulus);
            }
        }
    }
    Ok(Check {
        ok: worst <= 1e-10,
        measured: format!("max (ratio - gamma^m) = {worst:.3e} over 2 instances x 3 strides x 100 pairs"),
        threshold: "ratio <= gamma^m + 1e-10".into(),
    })
}

fn npg_identities() -> CliResult<Check> {
    let mut worst_fw: f64 = 0.0;
    let mut worst_rhs: f64 = 0.0;
    for i in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ACCEPT_SEED, 3, i));
        let p = Pomdp::random(3, 2, 2, GAMMA, &mut rng).map_err(CliError::runtime)?;
        let m = AgentStateProcess::random(2, 2, 2, &mut rng).map_err(CliError::runtime)?;
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let pol = LogLinearPolicy::new(FeatureMap::tabular(4), 2, 2)
            .and_then(|p| p.with_theta(theta))
            .map_err(CliError::runtime)?;
        let w = exact_npg(&pol, &p, &m).map_err(CliError::runtime)?;
        let grad = finite_difference_gradient(&pol, &p, &m, GRADIENT_STEP).map_err(CliError::runtime)?;
        let ex = exact_advantages(&p, &m, &pol.to_agent_policy()).map_err(CliError::runtime)?;
        let fw = fisher_matrix(&pol, &ex.d).mul_vec(&w);
        worst_fw = worst_fw.max(max_abs(fw.iter().zip(&grad).map(|(a, g)| a - (1.0 - GAMMA) * g)));
        let asym = asymmetric_normal_equations(&pol, &ex);
        let sym = symmetric_normal_equations(&pol, &ex);
        worst_rhs = worst_rhs.max(max_abs(asym.rhs.iter().zip(&sym.rhs).map(|(a, b)| a - b)));
    }
    Ok(Check {
        ok: worst_fw <= 1e-5 && worst_rhs <= 1e-10,
        measured: format!("max |F w* - (1-gamma) grad J| = {worst_fw:.2e}; max rhs gap = {worst_rhs:.2e}"),
        threshold: "1e-5 and 1e-10".into(),
    })
}

const TD_BUDGETS: [usize; 3] = [1_000, 10_000, 100_000];
const TD_SEEDS: u64 = 20;
const TD_RADIUS: f64 = 15.0;

/// Averaged critics for every budget, indexed `[budget][seed]`.
fn td_critics(mode: CriticMode) -> CliResult<Vec<Vec<LinearCritic<f64>>>> {
    let (p, m) = tiger();
    let pi = enter_always();
    let rows = match mode {
        CriticMode::Asymmetric => 24,
        CriticMode::Symmetric => 6,
    };
    let features = FeatureMap::tabular(rows);
    let salt = match mode {
        CriticMode::Asymmetric => 40,
        CriticMode::Symmetric => 50,
    };
    TD_BUDGETS
        .iter()
        .enumerate()
        .map(|(g, &k)| {
            (0..TD_SEEDS)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ACCEPT_SEED, salt + g as u64, i));
                    let cfg = TdConfig::new(1, k, TD_RADIUS, mode);
                    td_learn(&p, &m, &pi, &features, &cfg, &mut rng, None).map(|(c, _)| c).map_err(CliError::runtime)
                })
                .collect()
        })
        .collect()
}

fn td_bound_rows(mode: CriticMode, critics: &[Vec<LinearCritic<f64>>]) -> CliResult<(bool, Vec<f64>, Vec<f64>)> {
    let (p, m) = tiger();
    let pi = enter_always();
    let features = FeatureMap::tabular(critics[0][0].features.n_rows());
    let mut holds = true;
    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for (runs, &k) in critics.iter().zip(&TD_BUDGETS) {
        let params = TdBoundParams { k, m: 1, radius: TD_RADIUS, mode };
        let rep = bound_report_td(&p, &m, &pi, &features, runs, params, &EnumerationOptions::default())
            .map_err(CliError::runtime)?;
        holds &= rep.holds;
        lhs.push(rep.measured_lhs);
        rhs.push(rep.rhs_total);
    }
    Ok((holds, lhs, rhs))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("; ")
}

fn asymmetric_td() -> CliResult<Check> {
    let critics = td_critics(CriticMode::Asymmetric)?;
    let (holds, lhs, rhs) = td_bound_rows(CriticMode::Asymmetric, &critics)?;
    let decreasing = lhs.windows(2).all(|w| w[1] < w[0]);
    Ok(Check {
        ok: holds && decreasing,
        measured: format!("rms error at K = 1e3/1e4/1e5: {}", fmt_list(&lhs)),
        threshold: format!("<= eps_td + eps_app + eps_shift = {} and strictly decreasing", fmt_list(&rhs)),
    })
}

fn symmetric_td() -> CliResult<Check> {
    let critics = td_critics(CriticMode::Symmetric)?;
    let (holds, lhs, rhs) = td_bound_rows(CriticMode::Symmetric, &critics)?;
    let (p, m) = tiger();
    let pi = enter_always();
    let ex = exact_advantages(&p, &m, &pi).map_err(CliError::runtime)?;
    let tilde = symmetric_fixed_point(&p, &m, &pi, 1, &ex.d).map_err(CliError::runtime)?;
    let weights = error_weights(&ex.d, &pi, CriticMode::Symmetric);
    let gap = aliased_ac::features::weighted_norm(
        &ex.symmetric
            .values()
            .iter()
            .zip(tilde.values())
            .zip(&weights)
            .map(|((a, b), &w)| if w > 0.0 { a - b } else { 0.0 })
            .collect::<Vec<_>>(),
        &weights,
    );
    let last = critics.last().expect("three budgets");
    let to_fixed: Vec<f64> = last
        .iter()
        .map(|c| measured_critic_error(c, &tilde, &weights))
        .collect::<Result<_, _>>()
        .map_err(CliError::runtime)?;
    let to_fixed = rms(&to_fixed);
    let to_true = lhs[lhs.len() - 1];
    let floor = to_fixed <= 0.1 && (to_true - gap).abs() <= 0.1 && gap > 0.0;
    Ok(Check {
        ok: holds && floor,
        measured: format!(
            "rms error {} (bound holds: {holds}); at K=1e5 ||Qbar - Q~||_d = {to_fixed:.4}, ||Qbar - Q||_d = {to_true:.4}, ||Q - Q~||_d = {gap:.4}",
            fmt_list(&lhs)
        ),
        threshold: format!("<= {} ; ||Qbar - Q~||_d <= 0.1 ; | ||Qbar - Q||_d - ||Q - Q~||_d | <= 0.1", fmt_list(&rhs)),
    })
}

fn lemma() -> CliResult<Check> {
    let (p, m) = tiger();
    let opts = EnumerationOptions::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, pi) in [("enter", enter_always()), ("uniform", AgentPolicy::uniform(3, 2))] {
        for stride in [1, 2, 4] {
            let c = aliasing_lemma_check(&p, &m, &pi, stride, &opts).map_err(CliError::runtime)?;
            ok &= c.holds;
            parts.push(format!("{name} m={stride}: {:.4} <= {:.4}+{:.1e}", c.lhs, c.rhs, c.tail));
        }
    }
    let (w, sm) = AgentStateProcess::state_revealing(&p);
    let mut revealing = 0.0f64;
    for stride in [1, 2, 4] {
        let c = aliasing_lemma_check(&w, &sm, &AgentPolicy::uniform(4, 2), stride, &opts).map_err(CliError::runtime)?;
        ok &= c.holds && c.lhs <= 1e-10 && c.rhs == 0.0;
        revealing = revealing.max(c.lhs).max(c.rhs);
    }
    parts.push(format!("state-revealing max side {revealing:.1e}"));
    Ok(Check { ok, measured: parts.join("; "), threshold: "lhs <= rhs + tail; state-revealing 0 = 0".into() })
}

fn nac_end_to_end() -> CliResult<Check> {
    let (p, m) = tiger();
    let (_, j_star) = brute_force_optimal(&p, &m, DEFAULT_ENUMERATION_CAP).map_err(CliError::runtime)?;
    let critic_features = FeatureMap::tabular(24);
    let policy_features = FeatureMap::tabular(6);
    let cfg = NacConfig::new(50, 2000, 50_000, 25.0, CriticMode::Asymmetric);
    let gaps: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ACCEPT_SEED, 70, i));
            nac_run(&p, &m, &critic_features, &policy_features, &cfg, &mut rng)
                .map(|(_, t)| j_star - t.best_return())
                .map_err(CliError::runtime)
        })
        .collect::<CliResult<_>>()?;
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let med = 0.5 * (sorted[4] + sorted[5]);
    Ok(Check {
        ok: med <= 0.15 * j_star,
        measured: format!("median min_t (J* - J) = {med:.4} with J* = {j_star:.4}"),
        threshold: format!("<= 0.15 J* = {:.4}", 0.15 * j_star),
    })
}

fn vanishing_terms() -> CliResult<Check> {
    let (p, m) = tiger();
    let (w, sm) = AgentStateProcess::state_revealing(&p);
    let opts = EnumerationOptions::default();
    let (pi_star, _) = brute_force_optimal(&w, &sm, DEFAULT_ENUMERATION_CAP).map_err(CliError::runtime)?;
    let mut worst: f64 = 0.0;
    for pi in [AgentPolicy::uniform(4, 2), pi_star.clone()] {
        for stride in [1, 2, 4, 8] {
            worst = worst.max(eps_alias(&w, &sm, &pi, stride, &opts).map_err(CliError::runtime)?.value.abs());
        }
        worst = worst.max(eps_inf(&w, &sm, &pi, CriticMode::Symmetric, &opts).map_err(CliError::runtime)?.value.abs());
    }
    let asym = eps_inf(&p, &m, &AgentPolicy::constant(3, 2, SWAP), CriticMode::Asymmetric, &opts)
        .map_err(CliError::runtime)?;
    Ok(Check {
        ok: worst == 0.0 && asym.value == 0.0 && asym.tail == 0.0,
        measured: format!("max state-revealing term {worst:e}; asymmetric inference term {}", asym.value),
        threshold: "exactly 0".into(),
    })
}

fn rerun_configs() -> Vec<(&'static str, String)> {
    vec![
        ("exact", "policy = \"enter_always\"\n".into()),
        ("td", "policy = \"enter_always\"\nseeds = [0, 1]\n[td]\nk = 3000\n".into()),
        ("nac", "seeds = [0, 1]\n[nac]\nouter = 3\ninner = 200\ncritic_updates = 2000\n".into()),
        ("bounds", "policy = \"enter_always\"\nmode = \"sym\"\nseeds = [0, 1]\n[td]\nk = 2000\n".into()),
        (
            "sweep",
            "policy = \"enter_always\"\nseeds = [0, 1, 2]\n[sweep]\ncommand = \"td\"\nk = [100, 1000]\nm = [1, 2]\n"
                .into(),
        ),
    ]
}

fn byte_identical_reruns() -> CliResult<Check> {
    let base = std::env::temp_dir().join(format!("aliased-ac-accept-{}", std::process::id()));
    let mut ok = true;
    let mut parts = Vec::new();
    for (command, text) in rerun_configs() {
        let mut bytes = Vec::new();
        for (run, jobs) in [(0, 1), (1, 2)] {
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            cfg.jobs = jobs;
            let art = crate::run_command(command, &cfg)?;
            let dir = base.join(format!("{command}-{run}"));
            art.write(&dir, command)?;
            bytes.push(std::fs::read(dir.join("results.csv")).map_err(CliError::runtime)?);
        }
        let same = bytes[0] == bytes[1] && !bytes[0].is_empty();
        ok &= same;
        parts.push(format!("{command} {}", if same { "identical" } else { "DIFFERENT" }));
    }
    let _ = std::fs::remove_dir_all(&base);
    Ok(Check { ok, measured: parts.join("; "), threshold: "identical results.csv across reruns and pool sizes".into() })
}

/// Runs criterion `id` (1..=9).
pub fn run_criterion(id: usize) -> CliResult<CriterionOutcome> {
    let (_, name) =
        *CRITERIA.iter().find(|(i, _)| *i == id).ok_or_else(|| CliError::validation(format!("no criterion {id}")))?;
    let start = Instant::now();
    let (check, limit) = match id {
        1 => (golden_values()?, 1.0),
        2 => (contraction()?, 5.0),
        3 => (npg_identities()?, 30.0),
        4 => (asymmetric_td()?, 300.0),
        5 => (symmetric_td()?, 300.0),
        6 => (lemma()?, 60.0),
        7 => (nac_end_to_end()?, 1200.0),
        8 => (vanishing_terms()?, 10.0),
        _ => (byte_identical_reruns()?, 60.0),
    };
    let seconds = start.elapsed().as_secs_f64();
    Ok(CriterionOutcome {
        id,
        name,
        passed: check.ok && seconds < limit,
        measured: check.measured,
        threshold: check.threshold,
        seconds,
        runtime_limit: limit,
    })
}

/// The `accept` subcommand: runs the selected criteria (all when empty).
pub fn run_accept(only: &[usize]) -> CliResult<Artifacts> {
    let ids: Vec<usize> = if only.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { only.to_vec() };
    for id in &ids {
        if !(1..=9).contains(id) {
            return Err(CliError::validation(format!("no criterion {id}; criteria are numbered 1 to 9")));
        }
    }
    let mut csv = String::from("criterion,name,status,measured,required\n");
    let mut report = String::from("acceptance criteria\n");
    let mut failed = false;
    for id in ids {
        let o = run_criterion(id)?;
        println!("{}", o.line());
        failed |= !o.passed;
        let clean = |s: &str| s.replace(',', ";");
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            o.id,
            o.name,
            if o.passed { "PASS" } else { "FAIL" },
            clean(&o.measured),
            clean(&o.threshold)
        );
        let _ = writeln!(report, "{}", o.line());
    }
    Ok(Artifacts { csv, report, failed, ..Default::default() })
}
