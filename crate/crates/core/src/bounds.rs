//! Every term of the finite-time critic and actor bounds, the aliasing
//! lemma check, and report assembly.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent_state::AgentStateProcess;
use crate::error::{Error, Result};
use crate::features::{best_in_class, constrained_least_squares, weighted_norm, FeatureMap};
use crate::linalg::Matrix;
use crate::npg::{exact_advantages, LogLinearPolicy};
use crate::oracles::{
    belief_update, build_joint_chain, conditional_on_agent_state, discounted_visitation, initial_belief,
    symmetric_fixed_point, visitation_m_steps, JointChain, VisitationMeasure,
};
use crate::policy::AgentPolicy;
use crate::pomdp::Pomdp;
use crate::scalar::Scalar;
use crate::td::{error_weights, table_error, CriticMode, LinearCritic};

/// Default truncation horizon (in strides) for belief-gap series.
pub const DEFAULT_HORIZON: usize = 40;
/// Default cap on live history nodes per depth.
pub const DEFAULT_NODE_CAP: usize = 1 << 18;

/// `½ Σ |μ − ν|`.
pub fn tv_distance<T: Scalar>(mu: &[T], nu: &[T]) -> Result<T> {
    if mu.len() != nu.len() {
        return Err(Error::LengthMismatch { left: mu.len(), right: nu.len() });
    }
    let half = T::c(0.5);
    Ok((mu.iter().zip(nu).map(|(&a, &b)| (a - b).abs()).sum::<T>() * half).min(T::one()))
}

/// `√((4B² + (1/(1−γ) + 2B)²) / (2√K (1 − γ^m)))`.
pub fn eps_td<T: Scalar>(k: usize, radius: T, gamma: T, m: usize) -> T {
    let two = T::c(2.0);
    let horizon = T::one() / (T::one() - gamma);
    let num = T::c(4.0) * radius * radius + (horizon + two * radius).powi(2);
    let den = two * T::from_usize_lossy(k).sqrt() * (T::one() - gamma.powi(m as i32));
    (num / den).sqrt()
}

/// `((1 + γ^m)/(1 − γ^m)) · min_{f ∈ F^B} ‖f − Q‖_d`.
pub fn eps_app<T: Scalar>(best_error: T, gamma: T, m: usize) -> T {
    let gm = gamma.powi(m as i32);
    (T::one() + gm) / (T::one() - gm) * best_error
}

/// `(B + 1/(1−γ)) √((2γ^m/(1−γ^m)) √tv)`.
pub fn eps_shift<T: Scalar>(radius: T, gamma: T, m: usize, tv: T) -> T {
    let gm = gamma.powi(m as i32);
    (radius + T::one() / (T::one() - gamma)) * (T::c(2.0) * gm / (T::one() - gm) * tv.sqrt()).sqrt()
}

/// `‖d_m ⊗ π − d ⊗ π‖_TV` over `(s,z,a)` or `(z,a)`.
pub fn shift_tv<T: Scalar>(
    chain: &JointChain<T>,
    d: &VisitationMeasure<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    mode: CriticMode,
) -> Result<T> {
    let dm = visitation_m_steps(chain, d, m);
    tv_distance(&error_weights(&dm, policy, mode), &error_weights(d, policy, mode))
}

/// `(B² + 2 ln|A|) / (2√T)`.
pub fn eps_nac<T: Scalar>(outer: usize, radius: T, n_actions: usize) -> T {
    (radius * radius + T::c(2.0) * T::from_usize_lossy(n_actions).ln())
        / (T::c(2.0) * T::from_usize_lossy(outer).sqrt())
}

/// `√((2 − γ) B / ((1 − γ) √N))`.
pub fn eps_actor<T: Scalar>(inner: usize, radius: T, gamma: T) -> T {
    ((T::c(2.0) - gamma) * radius / ((T::one() - gamma) * T::from_usize_lossy(inner).sqrt())).sqrt()
}

/// Monte-Carlo settings used when history enumeration exceeds its cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonteCarlo {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationOptions {
    /// Number of strides kept before the analytic tail.
    pub horizon: usize,
    pub node_cap: usize,
    pub monte_carlo: Option<MonteCarlo>,
}

impl Default for EnumerationOptions {
    fn default() -> Self {
        Self { horizon: DEFAULT_HORIZON, node_cap: DEFAULT_NODE_CAP, monte_carlo: None }
    }
}

/// `E[Σ_{k ≤ H} γ^{k·stride} ‖b̂_{k·stride} − b_{k·stride}‖_TV | Z_0 = z]`
/// per agent state, plus the bound on the omitted tail.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefGap<T> {
    /// `None` when `Pr(Z_0 = z) = 0`.
    pub per_agent_state: Vec<Option<T>>,
    /// Unconditional expectation from the initial distribution.
    pub unconditional: T,
    /// `γ^{(H+1)·stride} / (1 − γ^stride)`.
    pub tail: T,
    pub monte_carlo: bool,
    /// Per agent state; zero under exact enumeration.
    pub standard_error: Vec<T>,
    /// Largest number of live nodes at one depth.
    pub peak_nodes: usize,
}

impl<T: Scalar> BeliefGap<T> {
    /// `‖f‖_d` over agent states, with `1/(1 − γ^stride)` standing in for
    /// agent states that `d` visits but `Z_0` never takes.
    pub fn weighted_norm(&self, d_z: &[T], stride_discount: T) -> T {
        let fallback = T::one() / (T::one() - stride_discount);
        let values: Vec<T> = self.per_agent_state.iter().map(|v| v.unwrap_or(fallback)).collect();
        weighted_norm(&values, d_z)
    }
}

#[derive(Clone)]
struct Node<T> {
    weight: T,
    belief: Vec<T>,
    z: usize,
    z0: usize,
}

fn belief_key<T: Scalar>(belief: &[T]) -> Vec<i64> {
    belief.iter().map(|b| (b.as_f64() * 1e12).round() as i64).collect()
}

/// Expected discounted belief gap along on-policy histories with
/// `b̂_t(·|z) = Pr(S_t = · | Z_t = z)` from the chain's time-`t` marginal.
pub fn belief_gap<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    stride: usize,
    options: &EnumerationOptions,
) -> Result<BeliefGap<T>> {
    if stride == 0 {
        return Err(Error::validation("m", "stride must be at least 1"));
    }
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let depth = options.horizon * stride;
    let marginals = chain.marginals(depth);
    let gamma = pomdp.gamma();
    let gs = gamma.powi(stride as i32);
    let tail = gs.powi(options.horizon as i32 + 1) / (T::one() - gs);
    match enumerate_gap(pomdp, asp, policy, stride, depth, &marginals, options.node_cap)? {
        Some((sums, z0_mass, peak)) => {
            let per = sums.iter().zip(&z0_mass).map(|(&s, &p)| (p > T::zero()).then(|| s / p)).collect();
            let unconditional = sums.iter().copied().sum();
            let nz = asp.n_agent_states();
            Ok(BeliefGap {
                per_agent_state: per,
                unconditional,
                tail,
                monte_carlo: false,
                standard_error: vec![T::zero(); nz],
                peak_nodes: peak,
            })
        }
        None => match options.monte_carlo {
            Some(mc) => Ok(monte_carlo_gap(pomdp, asp, policy, stride, depth, &marginals, mc, tail)),
            None => Err(Error::SizeCap {
                what: "history enumeration nodes".into(),
                size: (options.node_cap as u128) + 1,
                cap: options.node_cap as u128,
            }),
        },
    }
}

fn tv_to_marginal<T: Scalar>(marginal: &[T], ns: usize, nz: usize, z: usize, belief: &[T]) -> T {
    match conditional_on_agent_state(marginal, ns, nz, z) {
        Some(bh) => tv_distance(&bh, belief).unwrap_or(T::one()),
        // Unreachable under the marginal, so the history has zero weight up to round-off.
        None => T::one(),
    }
}

/// Returns `(Σ weighted gaps per z0, Pr(Z_0 = z0), peak nodes)` or `None`
/// when the cap is exceeded.
#[allow(clippy::type_complexity)]
fn enumerate_gap<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    stride: usize,
    depth: usize,
    marginals: &[Vec<T>],
    cap: usize,
) -> Result<Option<(Vec<T>, Vec<T>, usize)>> {
    let (ns, nz, na, no) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions(), pomdp.n_obs());
    let gamma = pomdp.gamma();
    let mut z0_mass = vec![T::zero(); nz];
    let mut nodes: Vec<Node<T>> = Vec::new();
    for o0 in 0..no {
        let Some((b0, like)) = initial_belief(pomdp, o0) else { continue };
        for (z, u) in asp.successors(asp.null_state(), asp.null_action(), o0) {
            let w = like * u;
            z0_mass[z] += w;
            nodes.push(Node { weight: w, belief: b0.clone(), z, z0: z });
        }
    }
    let mut sums = vec![T::zero(); nz];
    let mut peak = nodes.len();
    let mut disc = T::one();
    for (t, marginal) in marginals.iter().enumerate().take(depth + 1) {
        if t % stride == 0 {
            for n in &nodes {
                sums[n.z0] += disc * n.weight * tv_to_marginal(marginal, ns, nz, n.z, &n.belief);
            }
        }
        if t == depth {
            break;
        }
        disc *= gamma;
        let mut merged: HashMap<(usize, usize, Vec<i64>), usize> = HashMap::new();
        let mut next: Vec<Node<T>> = Vec::new();
        for n in &nodes {
            for a in 0..na {
                let pa = policy.prob(n.z, a);
                if pa == T::zero() {
                    continue;
                }
                for o in 0..no {
                    let Some((b, like)) = belief_update(pomdp, &n.belief, a, o) else { continue };
                    let key_b = belief_key(&b);
                    for (zp, u) in asp.successors(n.z, a, o) {
                        let w = n.weight * pa * like * u;
                        if w == T::zero() {
                            continue;
                        }
                        let key = (n.z0, zp, key_b.clone());
                        match merged.get(&key) {
                            Some(&i) => next[i].weight += w,
                            None => {
                                merged.insert(key, next.len());
                                next.push(Node { weight: w, belief: b.clone(), z: zp, z0: n.z0 });
                            }
                        }
                        if next.len() > cap {
                            return Ok(None);
                        }
                    }
                }
            }
        }
        nodes = next;
        peak = peak.max(nodes.len());
    }
    Ok(Some((sums, z0_mass, peak)))
}

#[allow(clippy::too_many_arguments)]
fn monte_carlo_gap<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    stride: usize,
    depth: usize,
    marginals: &[Vec<T>],
    mc: MonteCarlo,
    tail: T,
) -> BeliefGap<T> {
    let (ns, nz) = (pomdp.n_states(), asp.n_agent_states());
    let gamma = pomdp.gamma();
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed);
    let mut count = vec![0usize; nz];
    let mut sum = vec![0.0f64; nz];
    let mut sq = vec![0.0f64; nz];
    for _ in 0..mc.samples {
        let (mut s, o0) = pomdp.initial_draw(&mut rng);
        let mut z = asp.init_state(o0, &mut rng);
        let z0 = z;
        let mut b = initial_belief(pomdp, o0).expect("sampled observation has positive likelihood").0;
        let mut total = 0.0;
        let mut disc = 1.0;
        for (t, marginal) in marginals.iter().enumerate().take(depth + 1) {
            if t % stride == 0 {
                total += disc * tv_to_marginal(marginal, ns, nz, z, &b).as_f64();
            }
            if t == depth {
                break;
            }
            disc *= gamma.as_f64();
            let a = policy.sample(z, &mut rng);
            let tr = pomdp.step(s, a, &mut rng);
            b = belief_update(pomdp, &b, a, tr.observation).expect("sampled observation has positive likelihood").0;
            z = asp.update(z, a, tr.observation, &mut rng);
            s = tr.next_state;
        }
        count[z0] += 1;
        sum[z0] += total;
        sq[z0] += total * total;
    }
    let n = mc.samples.max(1) as f64;
    let per = (0..nz).map(|z| (count[z] > 0).then(|| T::c(sum[z] / count[z] as f64))).collect();
    let standard_error = (0..nz)
        .map(|z| {
            if count[z] < 2 {
                return T::zero();
            }
            let c = count[z] as f64;
            let mean = sum[z] / c;
            T::c(((sq[z] / c - mean * mean).max(0.0) / c).sqrt())
        })
        .collect();
    let unconditional = T::c(sum.iter().sum::<f64>() / n);
    BeliefGap { per_agent_state: per, unconditional, tail, monte_carlo: true, standard_error, peak_nodes: 0 }
}

/// A truncated series value together with its tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncated<T> {
    pub value: T,
    pub tail: T,
    pub monte_carlo: bool,
}

/// `(2/(1−γ)) ‖E[Σ_k γ^{km} ‖b̂_{km} − b_{km}‖_TV | Z_0 = ·]‖_d`.
pub fn eps_alias<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    options: &EnumerationOptions,
) -> Result<Truncated<T>> {
    let (norm, tail, mc) = conditional_gap_norm(pomdp, asp, policy, m, options)?;
    let scale = T::c(2.0) / (T::one() - pomdp.gamma());
    Ok(Truncated { value: scale * norm, tail: scale * tail, monte_carlo: mc })
}

fn conditional_gap_norm<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    options: &EnumerationOptions,
) -> Result<(T, T, bool)> {
    let gap = belief_gap(pomdp, asp, policy, m, options)?;
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let d = discounted_visitation(&chain, pomdp.gamma())?;
    let norm = gap.weighted_norm(&d.agent_state_marginal(), pomdp.gamma().powi(m as i32));
    Ok((norm, gap.tail, gap.monte_carlo))
}

/// `E^{π*}[Σ_k γ^k ‖b̂_k − b_k‖_TV]` for symmetric critics, `0` otherwise.
pub fn eps_inf<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy_star: &AgentPolicy<T>,
    mode: CriticMode,
    options: &EnumerationOptions,
) -> Result<Truncated<T>> {
    if mode == CriticMode::Asymmetric {
        return Ok(Truncated { value: T::zero(), tail: T::zero(), monte_carlo: false });
    }
    let gap = belief_gap(pomdp, asp, policy_star, 1, options)?;
    Ok(Truncated { value: gap.unconditional, tail: gap.tail, monte_carlo: gap.monte_carlo })
}

/// Outcome of comparing `‖Q − Q̃‖_d` with the belief-gap bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaCheck<T> {
    pub lhs: T,
    /// Truncated right-hand side.
    pub rhs: T,
    /// Upper bound on the omitted part of the right-hand side.
    pub tail: T,
    pub holds: bool,
}

/// `‖Q − Q̃‖_d ≤ ((1−γ^m)/(1−γ)) ‖E[Σ_k γ^{km} TV_k | Z_0 = ·]‖_d`.
pub fn aliasing_lemma_check<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    options: &EnumerationOptions,
) -> Result<LemmaCheck<T>> {
    let lhs = aliasing_gap(pomdp, asp, policy, m)?;
    let (norm, tail, _) = conditional_gap_norm(pomdp, asp, policy, m, options)?;
    let gamma = pomdp.gamma();
    let scale = (T::one() - gamma.powi(m as i32)) / (T::one() - gamma);
    let rhs = scale * norm;
    let tail = scale * tail;
    let slack = T::tol(1e-12) * (T::one() + lhs);
    Ok(LemmaCheck { lhs, rhs, tail, holds: lhs <= rhs + tail + slack })
}

/// `‖Q − Q̃‖_d` from exact tables.
pub fn aliasing_gap<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
) -> Result<T> {
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let d = discounted_visitation(&chain, pomdp.gamma())?;
    let exact = exact_advantages(pomdp, asp, policy)?;
    let fixed = symmetric_fixed_point(pomdp, asp, policy, m, &d)?;
    table_error(fixed.values(), &exact.symmetric, &d.symmetric_with_policy(policy))
}

/// Design matrix of scores with one row per `(s,z,a)` or `(z,a)`.
fn score_design<T: Scalar>(policy: &LogLinearPolicy<T>, n_states: usize, mode: CriticMode) -> Matrix<T> {
    let scores = policy.score_table();
    let dim = policy.dim();
    let rows: Vec<&Vec<T>> = match mode {
        CriticMode::Asymmetric => (0..n_states).flat_map(|_| scores.iter()).collect(),
        CriticMode::Symmetric => scores.iter().collect(),
    };
    let mut m = Matrix::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from_slice(r);
    }
    m
}

/// `√(min_{‖w‖ ≤ B} E_d[(⟨score, w⟩ − advantage)²])` for one policy.
pub fn eps_grad_single<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &LogLinearPolicy<T>,
    radius: T,
    mode: CriticMode,
) -> Result<T> {
    let tab = policy.to_agent_policy();
    let exact = exact_advantages(pomdp, asp, &tab)?;
    let design = score_design(policy, pomdp.n_states(), mode);
    let weights = error_weights(&exact.d, &tab, mode);
    let target: Vec<T> = match mode {
        CriticMode::Asymmetric => exact.asymmetric_advantage.clone(),
        CriticMode::Symmetric => exact.symmetric_advantage.clone(),
    };
    Ok(constrained_least_squares(&design, &target, &weights, radius)?.1)
}

/// Running supremum of [`eps_grad_single`] over a policy sequence.
pub fn eps_grad<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policies: &[LogLinearPolicy<T>],
    radius: T,
    mode: CriticMode,
) -> Result<T> {
    let mut sup = T::zero();
    for p in policies {
        sup = sup.max(eps_grad_single(pomdp, asp, p, radius, mode)?);
    }
    Ok(sup)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentrability<T> {
    /// Largest ratio over the support where both measures are positive.
    pub ratio: T,
    /// `d_t` misses part of the support of `d_star`.
    pub infinite: bool,
}

impl<T: Scalar> Concentrability<T> {
    pub fn value(&self) -> T {
        if self.infinite {
            T::infinity()
        } else {
            self.ratio
        }
    }
}

/// `sup_{x: d*(x) > 0} d*(x) / d_t(x)`.
pub fn concentrability<T: Scalar>(d_star: &[T], d_t: &[T]) -> Result<Concentrability<T>> {
    if d_star.len() != d_t.len() {
        return Err(Error::LengthMismatch { left: d_star.len(), right: d_t.len() });
    }
    let mut ratio = T::zero();
    let mut infinite = false;
    for (&a, &b) in d_star.iter().zip(d_t) {
        if a > T::zero() {
            if b > T::zero() {
                ratio = ratio.max(a / b);
            } else {
                infinite = true;
            }
        }
    }
    Ok(Concentrability { ratio, infinite })
}

/// Critic bound terms and the measured error over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport<T> {
    pub mode: CriticMode,
    pub k: usize,
    pub m: usize,
    pub radius: T,
    pub gamma: T,
    pub seeds: usize,
    pub eps_td: T,
    pub eps_app: T,
    pub eps_shift: T,
    /// Symmetric critics only; includes its truncation tail.
    pub eps_alias: Option<T>,
    pub rhs_total: T,
    /// `√(mean over seeds of ‖Q − Q̄‖²_d)`.
    pub measured_lhs: T,
    /// Standard error of the per-seed squared error mean.
    pub standard_error: T,
    pub holds: bool,
}

impl<T: Scalar> BoundReport<T> {
    pub const CSV_HEADER: &'static str =
        "mode,K,m,B,gamma,seeds,eps_td,eps_app,eps_shift,eps_alias,rhs_total,measured_lhs,stderr,holds";

    pub fn csv_row(&self) -> String {
        let alias = self.eps_alias.map(|a| a.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.k,
            self.m,
            self.radius,
            self.gamma,
            self.seeds,
            self.eps_td,
            self.eps_app,
            self.eps_shift,
            alias,
            self.rhs_total,
            self.measured_lhs,
            self.standard_error,
            self.holds
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "critic bound ({}; K={}, m={}, B={}, gamma={}, seeds={})",
            self.mode.as_str(),
            self.k,
            self.m,
            self.radius,
            self.gamma,
            self.seeds
        );
        let _ = writeln!(out, "  eps_td       {}", self.eps_td);
        let _ = writeln!(out, "  eps_app      {}", self.eps_app);
        let _ = writeln!(out, "  eps_shift    {}", self.eps_shift);
        if let Some(a) = self.eps_alias {
            let _ = writeln!(out, "  eps_alias    {a}");
            let _ = writeln!(out, "  (belief gaps: histories start at t=0 given Z_0 = z, outer norm weighted by d(z))");
        }
        let _ = writeln!(out, "  rhs          {}", self.rhs_total);
        let _ = writeln!(out, "  measured     {} (stderr {})", self.measured_lhs, self.standard_error);
        let _ = writeln!(out, "  holds        {}", self.holds);
        out
    }
}

/// Parameters of a batch of critic runs.
#[derive(Debug, Clone, Copy)]
pub struct TdBoundParams<T> {
    pub k: usize,
    pub m: usize,
    pub radius: T,
    pub mode: CriticMode,
}

/// Assembles the critic bound for `critics` (one averaged critic per seed),
/// all trained on `policy` with the same feature map.
pub fn bound_report_td<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    features: &FeatureMap<T>,
    critics: &[LinearCritic<T>],
    params: TdBoundParams<T>,
    options: &EnumerationOptions,
) -> Result<BoundReport<T>> {
    if critics.len() < 2 {
        return Err(Error::validation("seeds", "at least two runs are needed"));
    }
    let gamma = pomdp.gamma();
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let d = discounted_visitation(&chain, gamma)?;
    let exact = exact_advantages(pomdp, asp, policy)?;
    let target = match params.mode {
        CriticMode::Asymmetric => &exact.asymmetric,
        CriticMode::Symmetric => &exact.symmetric,
    };
    let weights = error_weights(&d, policy, params.mode);
    let target_values: Vec<T> =
        target.values().iter().zip(&weights).map(|(&q, &w)| if w > T::zero() { q } else { T::zero() }).collect();
    let (_, best) = best_in_class(features, &target_values, &weights, params.radius)?;
    let e_td = eps_td(params.k, params.radius, gamma, params.m);
    let e_app = eps_app(best, gamma, params.m);
    let e_shift = eps_shift(params.radius, gamma, params.m, shift_tv(&chain, &d, policy, params.m, params.mode)?);
    let e_alias = match params.mode {
        CriticMode::Asymmetric => None,
        CriticMode::Symmetric => {
            let a = eps_alias(pomdp, asp, policy, params.m, options)?;
            Some(a.value + a.tail)
        }
    };
    let rhs_total = e_td + e_app + e_shift + e_alias.unwrap_or_else(T::zero);
    let squares: Vec<T> =
        critics.iter().map(|c| table_error(&c.table(), target, &weights).map(|e| e * e)).collect::<Result<_>>()?;
    let n = T::from_usize_lossy(squares.len());
    let mean = squares.iter().copied().sum::<T>() / n;
    let var = squares.iter().map(|&x| (x - mean).powi(2)).sum::<T>() / (n - T::one());
    let measured_lhs = mean.sqrt();
    Ok(BoundReport {
        mode: params.mode,
        k: params.k,
        m: params.m,
        radius: params.radius,
        gamma,
        seeds: critics.len(),
        eps_td: e_td,
        eps_app: e_app,
        eps_shift: e_shift,
        eps_alias: e_alias,
        rhs_total,
        measured_lhs,
        standard_error: (var / n).sqrt(),
        holds: measured_lhs <= rhs_total,
    })
}

/// Actor bound terms and measured suboptimality.
#[derive(Debug, Clone, PartialEq)]
pub struct NacBoundReport<T> {
    pub mode: CriticMode,
    pub eps_nac: T,
    pub eps_actor: T,
    /// Includes its truncation tail.
    pub eps_inf: T,
    pub eps_grad: T,
    pub avg_eps_critic: T,
    pub concentrability: Concentrability<T>,
    /// `(ε_nac + 2ε_inf + C(ε_actor + 2ε_grad + 2√6·avg ε_critic)) / (1 − γ)`.
    pub rhs_total: T,
    /// `min_t mean_seeds [J* − J(π_t)]`.
    pub measured_suboptimality: T,
    pub holds: bool,
}

impl<T: Scalar> NacBoundReport<T> {
    pub const CSV_HEADER: &'static str = "mode,eps_nac,eps_actor,eps_inf,eps_grad,avg_eps_critic,concentrability,concentrability_infinite,rhs_total,measured_suboptimality,holds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.mode.as_str(),
            self.eps_nac,
            self.eps_actor,
            self.eps_inf,
            self.eps_grad,
            self.avg_eps_critic,
            self.concentrability.ratio,
            self.concentrability.infinite,
            self.rhs_total,
            self.measured_suboptimality,
            self.holds
        )
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "actor bound ({})", self.mode.as_str());
        for (name, v) in [
            ("eps_nac", self.eps_nac),
            ("eps_actor", self.eps_actor),
            ("eps_inf", self.eps_inf),
            ("eps_grad", self.eps_grad),
            ("avg_eps_critic", self.avg_eps_critic),
        ] {
            let _ = writeln!(out, "  {name:<16}{v}");
        }
        let c = if self.concentrability.infinite { "inf".to_string() } else { self.concentrability.ratio.to_string() };
        let _ = writeln!(out, "  {:<16}{c}", "concentrability");
        let _ = writeln!(out, "  {:<16}{}", "rhs", self.rhs_total);
        let _ = writeln!(out, "  {:<16}{}", "measured", self.measured_suboptimality);
        let _ = writeln!(out, "  {:<16}{}", "holds", self.holds);
        out
    }
}

/// Inputs for [`nac_bound_report`].
#[derive(Debug, Clone)]
pub struct NacBoundInputs<'a, T> {
    pub mode: CriticMode,
    pub outer: usize,
    pub inner: usize,
    pub critic_updates: usize,
    pub m: usize,
    pub radius: T,
    pub critic_features: &'a FeatureMap<T>,
    /// Policy iterates `π_t` of one run; `C̄_∞` and `ε_grad` are maxima over them.
    pub policies: &'a [LogLinearPolicy<T>],
    /// `J(π_t)` per run (outer) and per iterate (inner).
    pub returns: &'a [Vec<T>],
    pub policy_star: &'a AgentPolicy<T>,
    pub j_star: T,
}

pub fn nac_bound_report<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    inputs: &NacBoundInputs<'_, T>,
    options: &EnumerationOptions,
) -> Result<NacBoundReport<T>> {
    let gamma = pomdp.gamma();
    let mode = inputs.mode;
    let e_nac = eps_nac(inputs.outer, inputs.radius, pomdp.n_actions());
    let e_actor = eps_actor(inputs.inner, inputs.radius, gamma);
    let inf = eps_inf(pomdp, asp, inputs.policy_star, mode, options)?;
    let e_inf = inf.value + inf.tail;
    let e_grad = eps_grad(pomdp, asp, inputs.policies, inputs.radius, mode)?;

    let star_chain = build_joint_chain(pomdp, asp, inputs.policy_star)?;
    let d_star = discounted_visitation(&star_chain, gamma)?.with_policy(inputs.policy_star);
    let mut conc = Concentrability { ratio: T::zero(), infinite: false };
    let mut critic_sum = T::zero();
    for p in inputs.policies {
        let tab = p.to_agent_policy();
        let chain = build_joint_chain(pomdp, asp, &tab)?;
        let d = discounted_visitation(&chain, gamma)?;
        let c = concentrability(&d_star, &d.with_policy(&tab))?;
        conc.ratio = conc.ratio.max(c.ratio);
        conc.infinite |= c.infinite;
        let exact = exact_advantages(pomdp, asp, &tab)?;
        let weights = error_weights(&d, &tab, mode);
        let target = match mode {
            CriticMode::Asymmetric => &exact.asymmetric,
            CriticMode::Symmetric => &exact.symmetric,
        };
        let target_values: Vec<T> =
            target.values().iter().zip(&weights).map(|(&q, &w)| if w > T::zero() { q } else { T::zero() }).collect();
        let (_, best) = best_in_class(inputs.critic_features, &target_values, &weights, inputs.radius)?;
        let mut eps = eps_td(inputs.critic_updates, inputs.radius, gamma, inputs.m)
            + eps_app(best, gamma, inputs.m)
            + eps_shift(inputs.radius, gamma, inputs.m, shift_tv(&chain, &d, &tab, inputs.m, mode)?);
        if mode == CriticMode::Symmetric {
            let a = eps_alias(pomdp, asp, &tab, inputs.m, options)?;
            eps += a.value + a.tail;
        }
        critic_sum += eps;
    }
    let avg_critic = critic_sum / T::from_usize_lossy(inputs.policies.len().max(1));
    let two = T::c(2.0);
    let inner = e_actor + two * e_grad + two * T::c(6.0).sqrt() * avg_critic;
    let rhs_total = (e_nac + two * e_inf + conc.value() * inner) / (T::one() - gamma);

    let steps = inputs.returns.iter().map(Vec::len).min().unwrap_or(0);
    let runs = T::from_usize_lossy(inputs.returns.len().max(1));
    let measured = (0..steps)
        .map(|t| inputs.returns.iter().map(|r| inputs.j_star - r[t]).sum::<T>() / runs)
        .fold(T::infinity(), T::min);
    Ok(NacBoundReport {
        mode,
        eps_nac: e_nac,
        eps_actor: e_actor,
        eps_inf: e_inf,
        eps_grad: e_grad,
        avg_eps_critic: avg_critic,
        concentrability: conc,
        rhs_total,
        measured_suboptimality: measured,
        holds: measured <= rhs_total,
    })
}
