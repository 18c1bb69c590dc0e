//! Log-linear agent-state policies, natural policy gradients and the
//! natural actor-critic loop.

use std::fmt::Write as _;

use rand::Rng;

use crate::agent_state::AgentStateProcess;
use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::Matrix;
use crate::oracles::{
    asymmetric_q_exact, build_joint_chain, discounted_visitation, exact_return, marginalize_q, sample_discounted,
    QTable, VisitationMeasure,
};
use crate::policy::AgentPolicy;
use crate::pomdp::Pomdp;
use crate::scalar::{dot, norm2, Scalar};
use crate::td::{
    error_weights, project_in_place, table_error, td_average, CriticMode, LinearCritic, StepSize, TdConfig,
};

/// Spectral cutoff of the Fisher pseudoinverse, relative to the largest
/// eigenvalue.
pub const PINV_CUTOFF: f64 = 1e-10;
/// Central finite-difference step for `∇J`.
pub const GRADIENT_STEP: f64 = 1e-5;

/// Softmax policy `π_θ(a|z) ∝ exp⟨θ, ψ(z,a)⟩` with `ψ` indexed by
/// `z·|A| + a`.
#[derive(Debug, Clone)]
pub struct LogLinearPolicy<T> {
    theta: Vec<T>,
    features: FeatureMap<T>,
    n_agent_states: usize,
    n_actions: usize,
}

impl<T: Scalar> LogLinearPolicy<T> {
    /// `θ = 0`, the uniform policy.
    pub fn new(features: FeatureMap<T>, n_agent_states: usize, n_actions: usize) -> Result<Self> {
        if features.n_rows() != n_agent_states * n_actions {
            return Err(Error::validation(
                "policy features",
                format!("expected {} rows, got {}", n_agent_states * n_actions, features.n_rows()),
            ));
        }
        let theta = vec![T::zero(); features.dim()];
        Ok(Self { theta, features, n_agent_states, n_actions })
    }

    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        if theta.len() != self.features.dim() {
            return Err(Error::LengthMismatch { left: theta.len(), right: self.features.dim() });
        }
        Ok(Self { theta, ..self.clone() })
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn features(&self) -> &FeatureMap<T> {
        &self.features
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn logits(&self, z: usize) -> Vec<T> {
        (0..self.n_actions).map(|a| self.features.dot(&self.theta, z * self.n_actions + a)).collect()
    }

    /// Max-subtracted softmax of the logits of `z`.
    pub fn action_probs(&self, z: usize) -> Vec<T> {
        softmax(&self.logits(z))
    }

    /// `∇_θ log π(a|z) = ψ(z,a) − Σ_a' π(a'|z) ψ(z,a')`.
    pub fn score(&self, z: usize, a: usize) -> Vec<T> {
        let probs = self.action_probs(z);
        self.score_with(z, a, &probs)
    }

    fn score_with(&self, z: usize, a: usize, probs: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.features.add_scaled(&mut out, z * self.n_actions + a, T::one());
        for (ap, &p) in probs.iter().enumerate() {
            self.features.add_scaled(&mut out, z * self.n_actions + ap, -p);
        }
        out
    }

    /// Scores of every `(z, a)`, row `z·|A| + a`.
    pub fn score_table(&self) -> Vec<Vec<T>> {
        let mut rows = Vec::with_capacity(self.n_agent_states * self.n_actions);
        for z in 0..self.n_agent_states {
            let probs = self.action_probs(z);
            for a in 0..self.n_actions {
                rows.push(self.score_with(z, a, &probs));
            }
        }
        rows
    }

    /// The tabulated policy.
    pub fn to_agent_policy(&self) -> AgentPolicy<T> {
        let mut probs = Vec::with_capacity(self.n_agent_states * self.n_actions);
        for z in 0..self.n_agent_states {
            probs.extend(self.action_probs(z));
        }
        AgentPolicy::from_table(self.n_agent_states, self.n_actions, probs).expect("softmax rows are simplices")
    }
}

fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `F = Σ_{s,z} d(s,z) Σ_a π(a|z) ∇log π ⊗ ∇log π`.
pub fn fisher_matrix<T: Scalar>(policy: &LogLinearPolicy<T>, d: &VisitationMeasure<T>) -> Matrix<T> {
    let dim = policy.dim();
    let marg = d.agent_state_marginal();
    let mut f = Matrix::zeros(dim, dim);
    let na = policy.n_actions;
    let scores = policy.score_table();
    for (z, &w) in marg.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        let probs = policy.action_probs(z);
        for a in 0..na {
            let c = w * probs[a];
            if c == T::zero() {
                continue;
            }
            let sc = &scores[z * na + a];
            for i in 0..dim {
                if sc[i] == T::zero() {
                    continue;
                }
                for j in 0..dim {
                    f[(i, j)] += c * sc[i] * sc[j];
                }
            }
        }
    }
    f
}

/// `∇_θ J` by central differences of the exact return with step `h`.
pub fn finite_difference_gradient<T: Scalar>(
    policy: &LogLinearPolicy<T>,
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    h: T,
) -> Result<Vec<T>> {
    let mut grad = Vec::with_capacity(policy.dim());
    for i in 0..policy.dim() {
        let mut plus = policy.theta.clone();
        plus[i] += h;
        let mut minus = policy.theta.clone();
        minus[i] -= h;
        let jp = exact_return(pomdp, asp, &policy.with_theta(plus)?.to_agent_policy())?;
        let jm = exact_return(pomdp, asp, &policy.with_theta(minus)?.to_agent_policy())?;
        grad.push((jp - jm) / (T::c(2.0) * h));
    }
    Ok(grad)
}

/// `w* = (1 − γ) F† ∇J` with `∇J` from central differences.
pub fn exact_npg<T: Scalar>(
    policy: &LogLinearPolicy<T>,
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
) -> Result<Vec<T>> {
    let grad = finite_difference_gradient(policy, pomdp, asp, T::c(GRADIENT_STEP))?;
    let tab = policy.to_agent_policy();
    let chain = build_joint_chain(pomdp, asp, &tab)?;
    let d = discounted_visitation(&chain, pomdp.gamma())?;
    let pinv = fisher_matrix(policy, &d).symmetric_pinv(T::tol(PINV_CUTOFF));
    let scale = T::one() - pomdp.gamma();
    Ok(pinv.mul_vec(&grad).into_iter().map(|x| x * scale).collect())
}

/// `G w = b` for the d-weighted regression of an advantage on the scores:
/// `G = E[score ⊗ score]`, `b = E[score · advantage]`.
#[derive(Debug, Clone)]
pub struct NormalEquations<T> {
    pub gram: Matrix<T>,
    pub rhs: Vec<T>,
}

impl<T: Scalar> NormalEquations<T> {
    /// `∇_w E[(⟨score, w⟩ − adv)²] = 2(G w − b)`.
    pub fn residual_gradient(&self, w: &[T]) -> Vec<T> {
        let gw = self.gram.mul_vec(w);
        gw.iter().zip(&self.rhs).map(|(&x, &b)| T::c(2.0) * (x - b)).collect()
    }
}

/// Exact asymmetric and symmetric advantage tables for the tabulated policy.
#[derive(Debug, Clone)]
pub struct ExactAdvantages<T> {
    pub d: VisitationMeasure<T>,
    pub asymmetric: QTable<T>,
    pub symmetric: QTable<T>,
    pub asymmetric_advantage: Vec<T>,
    pub symmetric_advantage: Vec<T>,
}

pub fn exact_advantages<T: Scalar>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
) -> Result<ExactAdvantages<T>> {
    let chain = build_joint_chain(pomdp, asp, policy)?;
    let d = discounted_visitation(&chain, pomdp.gamma())?;
    let asymmetric = asymmetric_q_exact(pomdp, asp, policy)?;
    let symmetric = marginalize_q(&asymmetric, &d);
    let asymmetric_advantage = asymmetric.advantages(policy);
    let symmetric_advantage = symmetric.advantages(policy);
    Ok(ExactAdvantages { d, asymmetric, symmetric, asymmetric_advantage, symmetric_advantage })
}

/// Normal equations with the asymmetric advantage `𝒜(s,z,a)` as target.
pub fn asymmetric_normal_equations<T: Scalar>(
    policy: &LogLinearPolicy<T>,
    exact: &ExactAdvantages<T>,
) -> NormalEquations<T> {
    let (nz, na) = (policy.n_agent_states, policy.n_actions);
    let ns = exact.d.n_states();
    let tab = policy.to_agent_policy();
    let scores = policy.score_table();
    let mut rhs = vec![T::zero(); policy.dim()];
    for s in 0..ns {
        for z in 0..nz {
            let w = exact.d.weight(s, z);
            if w == T::zero() {
                continue;
            }
            for a in 0..na {
                let c = w * tab.prob(z, a);
                if c == T::zero() {
                    continue;
                }
                let adv = exact.asymmetric_advantage[(s * nz + z) * na + a];
                for (r, &sc) in rhs.iter_mut().zip(&scores[z * na + a]) {
                    *r += c * sc * adv;
                }
            }
        }
    }
    NormalEquations { gram: fisher_matrix(policy, &exact.d), rhs }
}

/// Normal equations with the symmetric advantage `A(z,a)` as target.
pub fn symmetric_normal_equations<T: Scalar>(
    policy: &LogLinearPolicy<T>,
    exact: &ExactAdvantages<T>,
) -> NormalEquations<T> {
    let na = policy.n_actions;
    let tab = policy.to_agent_policy();
    let weights = exact.d.symmetric_with_policy(&tab);
    let scores = policy.score_table();
    let mut rhs = vec![T::zero(); policy.dim()];
    for (y, &c) in weights.iter().enumerate() {
        if c == T::zero() {
            continue;
        }
        let adv = exact.symmetric_advantage[y];
        debug_assert!(y / na < policy.n_agent_states);
        for (r, &sc) in rhs.iter_mut().zip(&scores[y]) {
            *r += c * sc * adv;
        }
    }
    NormalEquations { gram: fisher_matrix(policy, &exact.d), rhs }
}

/// `v = 2(⟨score(z,a), w⟩ − Â) score(z,a)`.
pub fn npg_inner_gradient<T: Scalar>(policy: &LogLinearPolicy<T>, w: &[T], z: usize, a: usize, advantage: T) -> Vec<T> {
    let score = policy.score(z, a);
    inner_gradient_from_score(&score, w, advantage)
}

fn inner_gradient_from_score<T: Scalar>(score: &[T], w: &[T], advantage: T) -> Vec<T> {
    let c = T::c(2.0) * (dot(score, w) - advantage);
    score.iter().map(|&x| c * x).collect()
}

/// `Q̄(x) − Σ_a' π(a'|z) Q̄(x with a')`; `s` is ignored by symmetric critics.
pub fn advantage_from_critic<T: Scalar>(
    critic: &LinearCritic<T>,
    policy: &AgentPolicy<T>,
    s: usize,
    z: usize,
    a: usize,
) -> T {
    let baseline: T = policy.probs(z).iter().enumerate().map(|(ap, &p)| p * critic.value(s, z, ap)).sum();
    critic.value(s, z, a) - baseline
}

/// Advantages of a critic for every feature row, laid out like the critic.
#[derive(Debug, Clone)]
pub struct AdvantageTable<T> {
    mode: CriticMode,
    n_agent_states: usize,
    n_actions: usize,
    values: Vec<T>,
}

impl<T: Scalar> AdvantageTable<T> {
    pub fn from_critic(critic: &LinearCritic<T>, policy: &AgentPolicy<T>) -> Self {
        let na = critic.n_actions();
        let q = critic.table();
        let mut values = Vec::with_capacity(q.len());
        for (row, chunk) in q.chunks(na).enumerate() {
            let z = row % critic.n_agent_states();
            let v: T = policy.probs(z).iter().zip(chunk).map(|(&p, &x)| p * x).sum();
            values.extend(chunk.iter().map(|&x| x - v));
        }
        Self { mode: critic.mode, n_agent_states: critic.n_agent_states(), n_actions: na, values }
    }

    /// Wraps an exact advantage table with the matching layout.
    pub fn from_values(mode: CriticMode, n_agent_states: usize, n_actions: usize, values: Vec<T>) -> Self {
        Self { mode, n_agent_states, n_actions, values }
    }

    pub fn get(&self, s: usize, z: usize, a: usize) -> T {
        match self.mode {
            CriticMode::Asymmetric => self.values[(s * self.n_agent_states + z) * self.n_actions + a],
            CriticMode::Symmetric => self.values[z * self.n_actions + a],
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Source of advantage estimates for the inner loop.
#[derive(Debug, Clone, Copy)]
pub enum AdvantageSource<'a, T> {
    /// Recomputed from the critic for every sample.
    Critic(&'a LinearCritic<T>),
    Table(&'a AdvantageTable<T>),
}

impl<T: Scalar> AdvantageSource<'_, T> {
    fn get(&self, policy: &AgentPolicy<T>, s: usize, z: usize, a: usize) -> T {
        match self {
            AdvantageSource::Critic(c) => advantage_from_critic(c, policy, s, z, a),
            AdvantageSource::Table(t) => t.get(s, z, a),
        }
    }
}

/// `N` projected SGD steps on the regression loss from `w_0 = 0`; returns
/// `w̄ = (1/N) Σ_{n<N} w_n`.
#[allow(clippy::too_many_arguments)]
pub fn npg_sgd<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &LogLinearPolicy<T>,
    advantages: AdvantageSource<'_, T>,
    steps: usize,
    zeta: T,
    radius: T,
    rng: &mut R,
) -> Vec<T> {
    let tab = policy.to_agent_policy();
    let scores = policy.score_table();
    let na = policy.n_actions;
    let dim = policy.dim();
    let mut w = vec![T::zero(); dim];
    let mut sum = vec![T::zero(); dim];
    for _ in 0..steps {
        for (acc, &x) in sum.iter_mut().zip(&w) {
            *acc += x;
        }
        let (s, z) = sample_discounted(pomdp, asp, &tab, rng);
        let a = tab.sample(z, rng);
        let adv = advantages.get(&tab, s, z, a);
        let v = inner_gradient_from_score(&scores[z * na + a], &w, adv);
        for (wi, vi) in w.iter_mut().zip(v) {
            *wi -= zeta * vi;
        }
        project_in_place(&mut w, radius);
    }
    let scale = T::one() / T::from_usize_lossy(steps);
    sum.into_iter().map(|x| x * scale).collect()
}

#[derive(Debug, Clone)]
pub struct NacConfig<T> {
    /// Outer updates `T ≥ 1`.
    pub outer: usize,
    /// Inner SGD steps `N ≥ 1`.
    pub inner: usize,
    /// `Auto` means `1/√T`.
    pub eta: StepSize<T>,
    /// `Auto` means `B√(1−γ)/√(2N)`.
    pub zeta: StepSize<T>,
    /// Shared radius of the critic and the natural-gradient estimate; it
    /// overrides `td.radius`.
    pub radius: T,
    /// Critic subroutine; `td.mode` is replaced by `mode`.
    pub td: TdConfig<T>,
    pub mode: CriticMode,
    pub seed: u64,
    /// Use precomputed advantage tables instead of per-sample evaluation.
    pub fast_advantages: bool,
}

impl<T: Scalar> NacConfig<T> {
    pub fn new(outer: usize, inner: usize, critic_updates: usize, radius: T, mode: CriticMode) -> Self {
        Self {
            outer,
            inner,
            eta: StepSize::Auto,
            zeta: StepSize::Auto,
            radius,
            td: TdConfig::new(1, critic_updates, radius, mode),
            mode,
            seed: 0,
            fast_advantages: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outer == 0 {
            return Err(Error::validation("T", "must be at least 1"));
        }
        if self.inner == 0 {
            return Err(Error::validation("N", "must be at least 1"));
        }
        for (name, step) in [("eta", self.eta), ("zeta", self.zeta)] {
            if let StepSize::Fixed(x) = step {
                if !(x >= T::zero()) || !x.is_finite() {
                    return Err(Error::validation(name, "must be non-negative and finite"));
                }
            }
        }
        self.critic_config().validate()
    }

    pub fn eta_value(&self) -> T {
        match self.eta {
            StepSize::Auto => T::one() / T::from_usize_lossy(self.outer).sqrt(),
            StepSize::Fixed(x) => x,
        }
    }

    pub fn zeta_value(&self, gamma: T) -> T {
        match self.zeta {
            StepSize::Auto => {
                self.radius * (T::one() - gamma).sqrt() / (T::c(2.0) * T::from_usize_lossy(self.inner)).sqrt()
            }
            StepSize::Fixed(x) => x,
        }
    }

    pub fn critic_config(&self) -> TdConfig<T> {
        TdConfig { radius: self.radius, mode: self.mode, ..self.td.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacRecord<T> {
    pub t: usize,
    /// Exact `J(π_t)`.
    pub j: T,
    /// `‖Q̄ − 𝒬‖_d` or `‖Q̄ − Q‖_d` for the critic of `π_t`.
    pub critic_error: T,
    pub w_bar_norm: T,
    pub theta_norm: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NacTrace<T> {
    pub records: Vec<NacRecord<T>>,
    /// `θ_t` for `t < T`.
    pub thetas: Vec<Vec<T>>,
    pub final_theta: Vec<T>,
}

impl<T: Scalar> NacTrace<T> {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,J,critic_error,w_bar_norm,theta_norm\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{}", r.t, r.j, r.critic_error, r.w_bar_norm, r.theta_norm);
        }
        out
    }

    pub fn best_return(&self) -> T {
        self.records.iter().fold(T::neg_infinity(), |m, r| m.max(r.j))
    }

    pub fn mean_critic_error(&self) -> T {
        let n = T::from_usize_lossy(self.records.len().max(1));
        self.records.iter().map(|r| r.critic_error).sum::<T>() / n
    }
}

/// Natural actor-critic from `θ_0 = 0`.
pub fn nac_run<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    critic_features: &FeatureMap<T>,
    policy_features: &FeatureMap<T>,
    config: &NacConfig<T>,
    rng: &mut R,
) -> Result<(LogLinearPolicy<T>, NacTrace<T>)> {
    config.validate()?;
    asp.check_compatible(pomdp)?;
    let (ns, nz, na) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions());
    let mut policy = LogLinearPolicy::new(policy_features.clone(), nz, na)?;
    let td = config.critic_config();
    let mut critic = LinearCritic::new(critic_features.clone(), config.radius, config.mode, ns, nz, na)?;
    let eta = config.eta_value();
    let zeta = config.zeta_value(pomdp.gamma());
    let mut records = Vec::with_capacity(config.outer);
    let mut thetas = Vec::with_capacity(config.outer);
    for t in 0..config.outer {
        let tab = policy.to_agent_policy();
        td_average(pomdp, asp, &tab, &mut critic, &td, rng)?;

        let exact = exact_advantages(pomdp, asp, &tab)?;
        let j = crate::oracles::return_from_visitation(pomdp, &tab, &exact.d);
        let target = match config.mode {
            CriticMode::Asymmetric => &exact.asymmetric,
            CriticMode::Symmetric => &exact.symmetric,
        };
        let critic_error = table_error(&critic.table(), target, &error_weights(&exact.d, &tab, config.mode))?;

        let table;
        let source = if config.fast_advantages {
            table = AdvantageTable::from_critic(&critic, &tab);
            AdvantageSource::Table(&table)
        } else {
            AdvantageSource::Critic(&critic)
        };
        let w_bar = npg_sgd(pomdp, asp, &policy, source, config.inner, zeta, config.radius, rng);

        records.push(NacRecord { t, j, critic_error, w_bar_norm: norm2(&w_bar), theta_norm: norm2(&policy.theta) });
        thetas.push(policy.theta.clone());
        let next: Vec<T> = policy.theta.iter().zip(&w_bar).map(|(&th, &w)| th + eta * w).collect();
        policy = policy.with_theta(next)?;
    }
    let final_theta = policy.theta.clone();
    Ok((policy, NacTrace { records, thetas, final_theta }))
}
