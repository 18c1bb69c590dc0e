//! Exact dynamic-programming oracles over the joint `(s, z)` chain.
//!
//! Index conventions used throughout the crate:
//! * pair index `p = s · |Z| + z`;
//! * asymmetric index `x = p · |A| + a = (s · |Z| + z) · |A| + a`;
//! * symmetric index `y = z · |A| + a`.

use std::fmt::Write as _;

use rand::Rng;

use crate::agent_state::AgentStateProcess;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::policy::AgentPolicy;
use crate::pomdp::Pomdp;
use crate::scalar::{sample_index, Scalar};

/// Largest system solved by dense LU; bigger systems use value iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 4096;

/// Sup-norm change at which value iteration stops.
pub const ITERATION_TOL: f64 = 1e-12;

/// Default cap on `|A|^|Z|` for policy enumeration.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1 << 20;

fn check_dims<T: Scalar>(pomdp: &Pomdp<T>, asp: &AgentStateProcess<T>, policy: &AgentPolicy<T>) -> Result<()> {
    asp.check_compatible(pomdp)?;
    if policy.n_agent_states() != asp.n_agent_states() || policy.n_actions() != pomdp.n_actions() {
        return Err(Error::validation(
            "policy",
            format!(
                "has shape {}x{}, expected {}x{}",
                policy.n_agent_states(),
                policy.n_actions(),
                asp.n_agent_states(),
                pomdp.n_actions()
            ),
        ));
    }
    Ok(())
}

/// `K[(s,z,a) → (s',z')] = Σ_{o'} T(s'|s,a) O(o'|s') U(z'|z,a,o')`.
/// Policy independent.
pub fn action_kernel<T: Scalar>(pomdp: &Pomdp<T>, asp: &AgentStateProcess<T>) -> Result<Matrix<T>> {
    asp.check_compatible(pomdp)?;
    let (ns, nz, na, no) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions(), pomdp.n_obs());
    let np = ns * nz;
    let mut k = Matrix::zeros(np * na, np);
    for s in 0..ns {
        for z in 0..nz {
            for a in 0..na {
                let x = (s * nz + z) * na + a;
                for (sp, &t) in pomdp.transition_row(s, a).iter().enumerate() {
                    if t == T::zero() {
                        continue;
                    }
                    for (o, &ob) in pomdp.observation_row(sp).iter().enumerate().take(no) {
                        if ob == T::zero() {
                            continue;
                        }
                        for (zp, u) in asp.successors(z, a, o) {
                            k[(x, sp * nz + zp)] += t * ob * u;
                        }
                    }
                }
            }
        }
    }
    Ok(k)
}

/// `P(s0, z0) = P(s0) Σ_{o0} O(o0|s0) U(z0|z₋₁, a₋₁, o0)`.
pub fn joint_initial<T: Scalar>(pomdp: &Pomdp<T>, asp: &AgentStateProcess<T>) -> Vec<T> {
    let (ns, nz) = (pomdp.n_states(), asp.n_agent_states());
    let mut p0 = vec![T::zero(); ns * nz];
    for s in 0..ns {
        let ps = pomdp.initial()[s];
        if ps == T::zero() {
            continue;
        }
        for (o, &ob) in pomdp.observation_row(s).iter().enumerate() {
            if ob == T::zero() {
                continue;
            }
            for (z, u) in asp.successors(asp.null_state(), asp.null_action(), o) {
                p0[s * nz + z] += ps * ob * u;
            }
        }
    }
    p0
}

/// The Markov chain over `(s, z)` induced by a fixed agent-state policy.
#[derive(Clone, Debug)]
pub struct JointChain<T> {
    n_states: usize,
    n_agent_states: usize,
    initial: Vec<T>,
    transition: Matrix<T>,
}

impl<T: Scalar> JointChain<T> {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_agent_states
    }

    pub fn pair_index(&self, s: usize, z: usize) -> usize {
        s * self.n_agent_states + z
    }

    pub fn pair_of(&self, p: usize) -> (usize, usize) {
        (p / self.n_agent_states, p % self.n_agent_states)
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    pub fn transition(&self) -> &Matrix<T> {
        &self.transition
    }

    /// Pushes a distribution over pairs `steps` times through the chain.
    pub fn push_forward(&self, mu: &[T], steps: usize) -> Vec<T> {
        let mut cur = mu.to_vec();
        for _ in 0..steps {
            cur = self.transition.vec_mul(&cur);
        }
        cur
    }

    /// Marginals `Pr(S_t, Z_t)` from the initial distribution for `t = 0..=t_max`.
    pub fn marginals(&self, t_max: usize) -> Vec<Vec<T>> {
        let mut out = Vec::with_capacity(t_max + 1);
        out.push(self.initial.clone());
        for t in 0..t_max {
            let next = self.transition.vec_mul(&out[t]);
            out.push(next);
        }
        out
    }
}

/// Builds the joint chain: row `(s,z)` is `Σ_a π(a|z) K[(s,z,a)]`.
pub fn build_joint_chain<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
) -> Result<JointChain<T>> {
    check_dims(pomdp, asp, policy)?;
    let kernel = action_kernel(pomdp, asp)?;
    Ok(chain_from_kernel(pomdp, asp, policy, &kernel))
}

pub(crate) fn chain_from_kernel<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    kernel: &Matrix<T>,
) -> JointChain<T> {
    let (ns, nz, na) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions());
    let np = ns * nz;
    let mut transition = Matrix::zeros(np, np);
    for p in 0..np {
        let z = p % nz;
        for a in 0..na {
            let pi = policy.prob(z, a);
            if pi == T::zero() {
                continue;
            }
            let krow = kernel.row(p * na + a);
            for (dst, &k) in transition.row_mut(p).iter_mut().zip(krow) {
                *dst += pi * k;
            }
        }
    }
    JointChain { n_states: ns, n_agent_states: nz, initial: joint_initial(pomdp, asp), transition }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisitationKind {
    Discounted,
    MStep(usize),
}

/// A probability vector over `(s, z)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct VisitationMeasure<T> {
    n_states: usize,
    n_agent_states: usize,
    weights: Vec<T>,
    kind: VisitationKind,
}

impl<T: Scalar> VisitationMeasure<T> {
    pub fn new(n_states: usize, n_agent_states: usize, weights: Vec<T>, kind: VisitationKind) -> Result<Self> {
        if weights.len() != n_states * n_agent_states {
            return Err(Error::LengthMismatch { left: weights.len(), right: n_states * n_agent_states });
        }
        Ok(Self { n_states, n_agent_states, weights, kind })
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, s: usize, z: usize) -> T {
        self.weights[s * self.n_agent_states + z]
    }

    pub fn kind(&self) -> VisitationKind {
        self.kind
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    /// Agent-state marginal `d(z) = Σ_s d(s, z)`.
    pub fn agent_state_marginal(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_agent_states];
        for (p, &w) in self.weights.iter().enumerate() {
            out[p % self.n_agent_states] += w;
        }
        out
    }

    /// `d(s, z, a) = d(s, z) π(a|z)` over asymmetric indices.
    pub fn with_policy(&self, policy: &AgentPolicy<T>) -> Vec<T> {
        let na = policy.n_actions();
        let mut out = Vec::with_capacity(self.weights.len() * na);
        for (p, &w) in self.weights.iter().enumerate() {
            out.extend(policy.probs(p % self.n_agent_states).iter().map(|&pi| w * pi));
        }
        out
    }

    /// `d(z, a) = Σ_s d(s, z) π(a|z)` over symmetric indices.
    pub fn symmetric_with_policy(&self, policy: &AgentPolicy<T>) -> Vec<T> {
        let marg = self.agent_state_marginal();
        let mut out = Vec::with_capacity(marg.len() * policy.n_actions());
        for (z, &w) in marg.iter().enumerate() {
            out.extend(policy.probs(z).iter().map(|&pi| w * pi));
        }
        out
    }

    /// `d(s | z)`; `None` when `d(z) = 0`.
    pub fn state_conditional(&self, z: usize) -> Option<Vec<T>> {
        let col: Vec<T> = (0..self.n_states).map(|s| self.weight(s, z)).collect();
        let total: T = col.iter().copied().sum();
        (total > T::zero()).then(|| col.into_iter().map(|w| w / total).collect())
    }

    /// CSV with header `s,z,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,z,weight\n");
        for s in 0..self.n_states {
            for z in 0..self.n_agent_states {
                let _ = writeln!(out, "{s},{z},{}", self.weight(s, z).as_f64());
            }
        }
        out
    }
}

fn clean_distribution<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    for x in &mut v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
    let total: T = v.iter().copied().sum();
    if total > T::zero() {
        for x in &mut v {
            *x /= total;
        }
    }
    v
}

/// Solves `(I − γ Pᵀ) d = (1 − γ) p0`.
pub fn discounted_visitation<T: Scalar>(chain: &JointChain<T>, gamma: T) -> Result<VisitationMeasure<T>> {
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::validation("gamma", "gamma must lie in [0, 1)"));
    }
    let n = chain.n_pairs();
    let rhs: Vec<T> = chain.initial.iter().map(|&p| (T::one() - gamma) * p).collect();
    let d = if n <= DIRECT_SOLVE_LIMIT {
        let mut a = chain.transition.transpose();
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                a[(i, j)] = if i == j { T::one() - gamma * v } else { -gamma * v };
            }
        }
        a.solve(&rhs)?
    } else {
        let mut d = rhs.clone();
        loop {
            let pushed = chain.transition.vec_mul(&d);
            let next: Vec<T> = rhs.iter().zip(&pushed).map(|(&r, &q)| r + gamma * q).collect();
            let change = next.iter().zip(&d).fold(T::zero(), |m, (&u, &v)| m.max((u - v).abs()));
            d = next;
            if change <= T::tol(ITERATION_TOL) {
                break;
            }
        }
        d
    };
    VisitationMeasure::new(chain.n_states, chain.n_agent_states, clean_distribution(d), VisitationKind::Discounted)
}

/// `d_m = d · P^m`.
pub fn visitation_m_steps<T: Scalar>(
    chain: &JointChain<T>,
    d: &VisitationMeasure<T>,
    m: usize,
) -> VisitationMeasure<T> {
    VisitationMeasure {
        n_states: d.n_states,
        n_agent_states: d.n_agent_states,
        weights: chain.push_forward(&d.weights, m),
        kind: VisitationKind::MStep(m),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QKind {
    Asymmetric,
    SymmetricTrue,
    SymmetricFixedPoint,
    Approximation,
}

/// A Q-function table over `(s, z, a)` (asymmetric) or `(z, a)` (symmetric).
/// Rows that are undefined (unreachable agent states) are flagged.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable<T> {
    n_states: Option<usize>,
    n_agent_states: usize,
    n_actions: usize,
    values: Vec<T>,
    defined: Vec<bool>,
    kind: QKind,
}

impl<T: Scalar> QTable<T> {
    pub fn asymmetric(
        n_states: usize,
        n_agent_states: usize,
        n_actions: usize,
        values: Vec<T>,
        kind: QKind,
    ) -> Result<Self> {
        if values.len() != n_states * n_agent_states * n_actions {
            return Err(Error::LengthMismatch { left: values.len(), right: n_states * n_agent_states * n_actions });
        }
        let defined = vec![true; values.len()];
        Ok(Self { n_states: Some(n_states), n_agent_states, n_actions, values, defined, kind })
    }

    pub fn symmetric(
        n_agent_states: usize,
        n_actions: usize,
        values: Vec<T>,
        defined: Vec<bool>,
        kind: QKind,
    ) -> Result<Self> {
        if values.len() != n_agent_states * n_actions || defined.len() != values.len() {
            return Err(Error::LengthMismatch { left: values.len(), right: n_agent_states * n_actions });
        }
        Ok(Self { n_states: None, n_agent_states, n_actions, values, defined, kind })
    }

    pub fn is_asymmetric(&self) -> bool {
        self.n_states.is_some()
    }

    pub fn kind(&self) -> QKind {
        self.kind
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> Option<usize> {
        self.n_states
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn defined(&self) -> &[bool] {
        &self.defined
    }

    pub fn is_defined(&self, z: usize) -> bool {
        self.is_asymmetric() || self.defined[z * self.n_actions]
    }

    /// Asymmetric entry `𝒬(s, z, a)`.
    pub fn get(&self, s: usize, z: usize, a: usize) -> T {
        debug_assert!(self.is_asymmetric());
        self.values[(s * self.n_agent_states + z) * self.n_actions + a]
    }

    /// Symmetric entry `Q(z, a)`.
    pub fn get_sym(&self, z: usize, a: usize) -> T {
        debug_assert!(!self.is_asymmetric());
        self.values[z * self.n_actions + a]
    }

    /// `V(s, z) = Σ_a π(a|z) 𝒬(s, z, a)` over pair indices.
    pub fn state_values(&self, policy: &AgentPolicy<T>) -> Vec<T> {
        let na = self.n_actions;
        self.values
            .chunks(na)
            .enumerate()
            .map(|(row, q)| {
                let z = row % self.n_agent_states;
                policy.probs(z).iter().zip(q).map(|(&p, &v)| p * v).sum()
            })
            .collect()
    }

    /// `A = Q − V` with the same layout as the table.
    pub fn advantages(&self, policy: &AgentPolicy<T>) -> Vec<T> {
        let v = self.state_values(policy);
        self.values.iter().enumerate().map(|(i, &q)| q - v[i / self.n_actions]).collect()
    }

    /// CSV with header `s,z,a,value`; the `s` column is empty for symmetric
    /// tables and undefined rows print `undefined`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,z,a,value\n");
        let na = self.n_actions;
        for (i, v) in self.values.iter().enumerate() {
            let a = i % na;
            let row = i / na;
            let (s, z) = match self.n_states {
                Some(_) => ((row / self.n_agent_states).to_string(), row % self.n_agent_states),
                None => (String::new(), row),
            };
            if self.defined[i] {
                let _ = writeln!(out, "{s},{z},{a},{}", v.as_f64());
            } else {
                let _ = writeln!(out, "{s},{z},{a},undefined");
            }
        }
        out
    }
}

/// `r̄(s,a)` over asymmetric indices (constant in `z`).
pub(crate) fn expected_rewards<T: Scalar>(pomdp: &Pomdp<T>, nz: usize) -> Vec<T> {
    let (ns, na) = (pomdp.n_states(), pomdp.n_actions());
    let mut r = Vec::with_capacity(ns * nz * na);
    for s in 0..ns {
        let rs: Vec<T> = (0..na).map(|a| pomdp.expected_reward(s, a)).collect();
        for _z in 0..nz {
            r.extend_from_slice(&rs);
        }
    }
    r
}

/// `(K Π f)(x) = Σ_{p'} K[x, p'] Σ_{a'} π(a'|z') f(p', a')`.
fn kernel_policy_apply<T: Scalar>(kernel: &Matrix<T>, policy: &AgentPolicy<T>, nz: usize, f: &[T]) -> Vec<T> {
    let na = policy.n_actions();
    let np = kernel.cols();
    let v: Vec<T> = (0..np)
        .map(|p| {
            let z = p % nz;
            policy.probs(z).iter().zip(&f[p * na..(p + 1) * na]).map(|(&pi, &q)| pi * q).sum()
        })
        .collect();
    kernel.mul_vec(&v)
}

/// Solves `𝒬 = r̄ + γ K Π 𝒬` through the pair values `V = r_π + γ P V`.
pub fn asymmetric_q_exact<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
) -> Result<QTable<T>> {
    check_dims(pomdp, asp, policy)?;
    let kernel = action_kernel(pomdp, asp)?;
    asymmetric_q_from_kernel(pomdp, asp, policy, &kernel)
}

pub(crate) fn asymmetric_q_from_kernel<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    kernel: &Matrix<T>,
) -> Result<QTable<T>> {
    let (ns, nz, na) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions());
    let np = ns * nz;
    let gamma = pomdp.gamma();
    let chain = chain_from_kernel(pomdp, asp, policy, kernel);
    let rbar = expected_rewards(pomdp, nz);
    let r_pi: Vec<T> = (0..np)
        .map(|p| policy.probs(p % nz).iter().zip(&rbar[p * na..(p + 1) * na]).map(|(&pi, &r)| pi * r).sum())
        .collect();
    let v = if np <= DIRECT_SOLVE_LIMIT {
        let mut a = chain.transition.clone();
        for i in 0..np {
            for j in 0..np {
                let x = a[(i, j)];
                a[(i, j)] = if i == j { T::one() - gamma * x } else { -gamma * x };
            }
        }
        a.solve(&r_pi)?
    } else {
        let mut v = r_pi.clone();
        loop {
            let pv = chain.transition.mul_vec(&v);
            let next: Vec<T> = r_pi.iter().zip(&pv).map(|(&r, &q)| r + gamma * q).collect();
            let change = next.iter().zip(&v).fold(T::zero(), |m, (&u, &w)| m.max((u - w).abs()));
            v = next;
            if change <= T::tol(ITERATION_TOL) {
                break;
            }
        }
        v
    };
    let kv = kernel.mul_vec(&v);
    let q: Vec<T> = rbar.iter().zip(&kv).map(|(&r, &x)| r + gamma * x).collect();
    QTable::asymmetric(ns, nz, na, q, QKind::Asymmetric)
}

/// Applies the m-step asymmetric Bellman operator to a table over `(s,z,a)`.
pub fn asymmetric_bellman<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    q: &[T],
    m: usize,
) -> Result<Vec<T>> {
    check_dims(pomdp, asp, policy)?;
    let kernel = action_kernel(pomdp, asp)?;
    let nz = asp.n_agent_states();
    let gamma = pomdp.gamma();
    let rbar = expected_rewards(pomdp, nz);
    // E[Σ_{t<m} γ^t R_t | x] + γ^m E[Q(X_m) | x], expanded step by step.
    let mut reward_acc = rbar.clone();
    let mut g = rbar;
    let mut disc = T::one();
    for _ in 1..m {
        g = kernel_policy_apply(&kernel, policy, nz, &g);
        disc *= gamma;
        for (acc, &x) in reward_acc.iter_mut().zip(&g) {
            *acc += disc * x;
        }
    }
    let mut boot = q.to_vec();
    for _ in 0..m {
        boot = kernel_policy_apply(&kernel, policy, nz, &boot);
    }
    let gm = gamma.powi(m as i32);
    Ok(reward_acc.iter().zip(&boot).map(|(&r, &b)| r + gm * b).collect())
}

/// The m-step symmetric Bellman operator `Q ↦ r̃ + γ^m M Q` over `(z, a)`,
/// with `S_0 | Z_0` drawn from the conditional of a bootstrap measure.
#[derive(Clone, Debug)]
pub struct SymmetricBellman<T> {
    n_agent_states: usize,
    n_actions: usize,
    discount: T,
    reward: Vec<T>,
    transition: Matrix<T>,
    defined: Vec<bool>,
}

impl<T: Scalar> SymmetricBellman<T> {
    /// Agent states with `d_boot(z) = 0` use a uniform state conditional so
    /// the operator stays total; their rows are flagged undefined.
    pub fn new(
        pomdp: &Pomdp<T>,
        asp: &AgentStateProcess<T>,
        policy: &AgentPolicy<T>,
        m: usize,
        d_boot: &VisitationMeasure<T>,
    ) -> Result<Self> {
        check_dims(pomdp, asp, policy)?;
        if m == 0 {
            return Err(Error::validation("m", "bootstrap step must be at least 1"));
        }
        let kernel = action_kernel(pomdp, asp)?;
        let (ns, nz, na) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions());
        let gamma = pomdp.gamma();
        let chain = chain_from_kernel(pomdp, asp, policy, &kernel);
        let rbar = expected_rewards(pomdp, nz);
        let mut reward_m = rbar.clone();
        let mut g = rbar;
        let mut disc = T::one();
        for _ in 1..m {
            g = kernel_policy_apply(&kernel, policy, nz, &g);
            disc *= gamma;
            for (acc, &x) in reward_m.iter_mut().zip(&g) {
                *acc += disc * x;
            }
        }
        // Distribution of (S_m, Z_m) from each (s, z, a).
        let mut km = kernel;
        for _ in 1..m {
            km = km.matmul(&chain.transition);
        }
        let mut reward = vec![T::zero(); nz * na];
        let mut transition = Matrix::zeros(nz * na, nz * na);
        let mut defined = vec![true; nz * na];
        let uniform = T::one() / T::from_usize_lossy(ns);
        for z in 0..nz {
            let cond = d_boot.state_conditional(z);
            if cond.is_none() {
                for a in 0..na {
                    defined[z * na + a] = false;
                }
            }
            for s in 0..ns {
                let c = cond.as_ref().map_or(uniform, |c| c[s]);
                if c == T::zero() {
                    continue;
                }
                for a in 0..na {
                    let x = (s * nz + z) * na + a;
                    let y = z * na + a;
                    reward[y] += c * reward_m[x];
                    for (pp, &w) in km.row(x).iter().enumerate() {
                        if w == T::zero() {
                            continue;
                        }
                        let zp = pp % nz;
                        for (ap, &pi) in policy.probs(zp).iter().enumerate() {
                            transition[(y, zp * na + ap)] += c * w * pi;
                        }
                    }
                }
            }
        }
        Ok(Self { n_agent_states: nz, n_actions: na, discount: gamma.powi(m as i32), reward, transition, defined })
    }

    pub fn apply(&self, q: &[T]) -> Vec<T> {
        let mq = self.transition.mul_vec(q);
        self.reward.iter().zip(&mq).map(|(&r, &x)| r + self.discount * x).collect()
    }

    /// Contraction modulus `γ^m`.
    pub fn modulus(&self) -> T {
        self.discount
    }

    /// Unique fixed point: dense solve for small systems, otherwise
    /// iteration until the sup-norm change is at most `1e-12`.
    pub fn fixed_point(&self) -> Result<QTable<T>> {
        let n = self.reward.len();
        let q = if n <= DIRECT_SOLVE_LIMIT {
            let mut a = self.transition.clone();
            for i in 0..n {
                for j in 0..n {
                    let x = a[(i, j)];
                    a[(i, j)] = if i == j { T::one() - self.discount * x } else { -self.discount * x };
                }
            }
            a.solve(&self.reward)?
        } else {
            let mut q = self.reward.clone();
            loop {
                let next = self.apply(&q);
                let change = next.iter().zip(&q).fold(T::zero(), |m, (&u, &v)| m.max((u - v).abs()));
                q = next;
                if change <= T::tol(ITERATION_TOL) {
                    break;
                }
            }
            q
        };
        QTable::symmetric(self.n_agent_states, self.n_actions, q, self.defined.clone(), QKind::SymmetricFixedPoint)
    }
}

/// Fixed point `Q̃` of the m-step symmetric Bellman operator.
pub fn symmetric_fixed_point<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    d_boot: &VisitationMeasure<T>,
) -> Result<QTable<T>> {
    SymmetricBellman::new(pomdp, asp, policy, m, d_boot)?.fixed_point()
}

/// `Q(z, a) = Σ_s d(s|z) 𝒬(s, z, a)`; rows with `d(z) = 0` are undefined.
pub fn symmetric_q_true<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    d: &VisitationMeasure<T>,
) -> Result<QTable<T>> {
    let asym = asymmetric_q_exact(pomdp, asp, policy)?;
    Ok(marginalize_q(&asym, d))
}

/// The `d`-conditional mixture of an asymmetric table over states.
pub fn marginalize_q<T: Scalar>(asym: &QTable<T>, d: &VisitationMeasure<T>) -> QTable<T> {
    let (nz, na) = (asym.n_agent_states, asym.n_actions);
    let ns = asym.n_states.expect("asymmetric table");
    let mut values = vec![T::zero(); nz * na];
    let mut defined = vec![true; nz * na];
    for z in 0..nz {
        match d.state_conditional(z) {
            Some(c) => {
                for a in 0..na {
                    values[z * na + a] = (0..ns).map(|s| c[s] * asym.get(s, z, a)).sum();
                }
            }
            None => {
                for a in 0..na {
                    values[z * na + a] = T::nan();
                    defined[z * na + a] = false;
                }
            }
        }
    }
    QTable { n_states: None, n_agent_states: nz, n_actions: na, values, defined, kind: QKind::SymmetricTrue }
}

/// Bayes update of a belief after `(a, o')`: returns the posterior and the
/// likelihood `Pr(o' | b, a)`, or `None` when the likelihood is zero.
pub fn belief_update<T: Scalar>(pomdp: &Pomdp<T>, belief: &[T], a: usize, o: usize) -> Option<(Vec<T>, T)> {
    let ns = pomdp.n_states();
    let mut next = vec![T::zero(); ns];
    for (s, &b) in belief.iter().enumerate() {
        if b == T::zero() {
            continue;
        }
        for (sp, &t) in pomdp.transition_row(s, a).iter().enumerate() {
            next[sp] += b * t;
        }
    }
    for (sp, x) in next.iter_mut().enumerate() {
        *x *= pomdp.observation(sp, o);
    }
    let like: T = next.iter().copied().sum();
    if like <= T::zero() {
        return None;
    }
    for x in &mut next {
        *x /= like;
    }
    Some((next, like))
}

/// Initial belief `b_0 ∝ P(s) O(o0|s)` and its likelihood.
pub fn initial_belief<T: Scalar>(pomdp: &Pomdp<T>, o0: usize) -> Option<(Vec<T>, T)> {
    let mut b: Vec<T> = (0..pomdp.n_states()).map(|s| pomdp.initial()[s] * pomdp.observation(s, o0)).collect();
    let like: T = b.iter().copied().sum();
    if like <= T::zero() {
        return None;
    }
    for x in &mut b {
        *x /= like;
    }
    Some((b, like))
}

/// Forward filter `b_t(·|h_t)` for `h_t = (o0, a0, o1, …, o_t)`, given as
/// `o0` and the `(a, o)` pairs that follow.
pub fn belief_filter<T: Scalar>(pomdp: &Pomdp<T>, o0: usize, steps: &[(usize, usize)]) -> Result<Vec<T>> {
    let (mut b, _) = initial_belief(pomdp, o0).ok_or(Error::ZeroLikelihood { step: 0 })?;
    for (i, &(a, o)) in steps.iter().enumerate() {
        b = belief_update(pomdp, &b, a, o).ok_or(Error::ZeroLikelihood { step: i + 1 })?.0;
    }
    Ok(b)
}

/// `b̂_t(·|z)` from the `t`-step marginal of the joint chain.
pub fn approximate_belief<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    t: usize,
    z: usize,
) -> Result<Vec<T>> {
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let marginal = chain.push_forward(chain.initial(), t);
    conditional_on_agent_state(&marginal, chain.n_states(), chain.n_agent_states(), z).ok_or_else(|| Error::Undefined {
        what: format!("approximate belief at t={t}, z={z}"),
        reason: "Pr(Z_t = z) = 0".into(),
    })
}

/// `Pr(S = · | Z = z)` from a joint distribution over pairs.
pub fn conditional_on_agent_state<T: Scalar>(joint: &[T], ns: usize, nz: usize, z: usize) -> Option<Vec<T>> {
    let col: Vec<T> = (0..ns).map(|s| joint[s * nz + z]).collect();
    let total: T = col.iter().copied().sum();
    (total > T::zero()).then(|| col.into_iter().map(|x| x / total).collect())
}

/// Discounted-average approximate belief `b̂_d(s|z) = d(s,z) / d(z)`.
pub fn approximate_belief_discounted<T: Scalar>(d: &VisitationMeasure<T>, z: usize) -> Result<Vec<T>> {
    d.state_conditional(z).ok_or_else(|| Error::Undefined {
        what: format!("discounted approximate belief at z={z}"),
        reason: "d(z) = 0".into(),
    })
}

/// `t0 ~ Geom(1 − γ)` on `{0, 1, 2, …}` by inversion from one draw.
pub fn sample_geometric<T: Scalar, R: Rng + ?Sized>(gamma: T, rng: &mut R) -> usize {
    let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let g = gamma.as_f64();
    if g <= 0.0 {
        return 0;
    }
    let t = (u.ln() / g.ln()).floor();
    if t.is_finite() && t >= 0.0 {
        t.min(u32::MAX as f64) as usize
    } else {
        0
    }
}

/// One on-policy step from `(s, z)` with action `a`.
pub fn env_step<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    s: usize,
    z: usize,
    a: usize,
    rng: &mut R,
) -> (T, usize, usize) {
    let tr = pomdp.step(s, a, rng);
    let zp = asp.update(z, a, tr.observation, rng);
    (tr.reward, tr.next_state, zp)
}

/// Draws `(s_{t0}, z_{t0})` by rolling the chain `t0 ~ Geom(1 − γ)` steps
/// from a fresh initial draw; the marginal is the discounted visitation.
pub fn sample_discounted<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    rng: &mut R,
) -> (usize, usize) {
    sample_discounted_with_time(pomdp, asp, policy, rng).0
}

/// As [`sample_discounted`], also returning `t0`.
pub fn sample_discounted_with_time<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    rng: &mut R,
) -> ((usize, usize), usize) {
    let t0 = sample_geometric(pomdp.gamma(), rng);
    let (mut s, o0) = pomdp.initial_draw(rng);
    let mut z = asp.init_state(o0, rng);
    for _ in 0..t0 {
        let a = policy.sample(z, rng);
        let (_, sp, zp) = env_step(pomdp, asp, s, z, a, rng);
        s = sp;
        z = zp;
    }
    ((s, z), t0)
}

/// `J(π) = (1/(1−γ)) Σ d(s,z) π(a|z) r̄(s,a)`.
pub fn exact_return<T: Scalar>(pomdp: &Pomdp<T>, asp: &AgentStateProcess<T>, policy: &AgentPolicy<T>) -> Result<T> {
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let d = discounted_visitation(&chain, pomdp.gamma())?;
    Ok(return_from_visitation(pomdp, policy, &d))
}

pub(crate) fn return_from_visitation<T: Scalar>(
    pomdp: &Pomdp<T>,
    policy: &AgentPolicy<T>,
    d: &VisitationMeasure<T>,
) -> T {
    let nz = d.n_agent_states();
    let mut total = T::zero();
    for s in 0..pomdp.n_states() {
        for z in 0..nz {
            let w = d.weight(s, z);
            if w == T::zero() {
                continue;
            }
            for (a, &pi) in policy.probs(z).iter().enumerate() {
                total += w * pi * pomdp.expected_reward(s, a);
            }
        }
    }
    total / (T::one() - pomdp.gamma())
}

/// Second route: `J = Σ P(s0,z0) π(a|z0) 𝒬(s0,z0,a)`.
pub fn exact_return_via_q<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
) -> Result<T> {
    let q = asymmetric_q_exact(pomdp, asp, policy)?;
    let v = q.state_values(policy);
    Ok(joint_initial(pomdp, asp).iter().zip(&v).map(|(&p, &x)| p * x).sum())
}

/// Enumerates deterministic agent-state policies and returns a maximizer of
/// `J`. Policies are visited in lexicographic order of `(a(z=0), a(z=1), …)`
/// and a later policy replaces the incumbent only if it is better by more
/// than `1e-12` (relative), so ties keep the lexicographically first.
pub fn brute_force_optimal<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    cap: u128,
) -> Result<(AgentPolicy<T>, T)> {
    asp.check_compatible(pomdp)?;
    let (nz, na) = (asp.n_agent_states(), pomdp.n_actions());
    let count = (na as u128).checked_pow(nz as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::SizeCap { what: "deterministic policy enumeration".into(), size: count, cap });
    }
    let kernel = action_kernel(pomdp, asp)?;
    let mut actions = vec![0usize; nz];
    let mut best: Option<(Vec<usize>, T)> = None;
    for _ in 0..count {
        let policy = AgentPolicy::deterministic(na, &actions);
        let chain = chain_from_kernel(pomdp, asp, &policy, &kernel);
        let d = discounted_visitation(&chain, pomdp.gamma())?;
        let j = return_from_visitation(pomdp, &policy, &d);
        let better = match &best {
            None => true,
            Some((_, bj)) => j > *bj + T::tol(1e-12) * bj.abs().max(T::one()),
        };
        if better {
            best = Some((actions.clone(), j));
        }
        // Odometer increment, last agent state fastest.
        for z in (0..nz).rev() {
            actions[z] += 1;
            if actions[z] < na {
                break;
            }
            actions[z] = 0;
        }
    }
    let (acts, j) = best.expect("at least one policy");
    Ok((AgentPolicy::deterministic(na, &acts), j))
}

/// Per-step helper for Monte-Carlo checks: simulate `horizon` steps from
/// `(s, z, a)` and return the discounted return.
pub fn rollout_return<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    start: (usize, usize, usize),
    horizon: usize,
    rng: &mut R,
) -> T {
    let (mut s, mut z, mut a) = start;
    let gamma = pomdp.gamma();
    let mut disc = T::one();
    let mut total = T::zero();
    for t in 0..horizon {
        let (r, sp, zp) = env_step(pomdp, asp, s, z, a, rng);
        total += disc * r;
        disc *= gamma;
        s = sp;
        z = zp;
        if t + 1 < horizon {
            a = policy.sample(z, rng);
        }
    }
    total
}

/// Draw from an arbitrary distribution; kept here so callers share the
/// same inversion convention as the simulator.
pub fn sample_from<T: Scalar, R: Rng + ?Sized>(probs: &[T], rng: &mut R) -> usize {
    sample_index(probs, rng.gen::<f64>())
}
