//! Projected m-step TD learning with linear critics.

use std::fmt::Write as _;

use rand::Rng;

use crate::agent_state::AgentStateProcess;
use crate::error::{Error, Result};
use crate::features::{weighted_norm, FeatureMap};
use crate::oracles::{env_step, sample_discounted, QTable, VisitationMeasure};
use crate::policy::AgentPolicy;
use crate::pomdp::Pomdp;
use crate::scalar::{norm2, Scalar};

/// Whether the critic sees the environment state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CriticMode {
    /// Features over `(s, z, a)`.
    Asymmetric,
    /// Features over `(z, a)`.
    Symmetric,
}

impl CriticMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticMode::Asymmetric => "asym",
            CriticMode::Symmetric => "sym",
        }
    }
}

impl std::str::FromStr for CriticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asym" | "asymmetric" => Ok(CriticMode::Asymmetric),
            "sym" | "symmetric" => Ok(CriticMode::Symmetric),
            other => Err(Error::validation("mode", format!("expected asym or sym, got {other:?}"))),
        }
    }
}

/// A step size that is either fixed or derived from the iteration budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize<T> {
    Auto,
    Fixed(T),
}

#[derive(Debug, Clone)]
pub struct TdConfig<T> {
    /// Bootstrap step `m ≥ 1`.
    pub m: usize,
    /// Number of updates `K ≥ 1`.
    pub k: usize,
    /// `Auto` means `1/√K`.
    pub alpha: StepSize<T>,
    pub radius: T,
    pub mode: CriticMode,
    pub seed: u64,
    /// Cadence of the measured-error column; 0 disables it.
    pub error_every: usize,
}

impl<T: Scalar> TdConfig<T> {
    pub fn new(m: usize, k: usize, radius: T, mode: CriticMode) -> Self {
        Self { m, k, alpha: StepSize::Auto, radius, mode, seed: 0, error_every: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::validation("m", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::validation("K", "must be at least 1"));
        }
        if !(self.radius > T::zero()) || !self.radius.is_finite() {
            return Err(Error::validation("B", "must be positive and finite"));
        }
        if let StepSize::Fixed(a) = self.alpha {
            if !(a >= T::zero()) || !a.is_finite() {
                return Err(Error::validation("alpha", "must be non-negative and finite"));
            }
        }
        Ok(())
    }

    pub fn step_size(&self) -> T {
        match self.alpha {
            StepSize::Auto => T::one() / T::from_usize_lossy(self.k).sqrt(),
            StepSize::Fixed(a) => a,
        }
    }
}

/// `Q̂_β(x) = ⟨β, φ(x)⟩` restricted to the ball of radius `B`.
#[derive(Debug, Clone)]
pub struct LinearCritic<T> {
    pub beta: Vec<T>,
    pub radius: T,
    pub features: FeatureMap<T>,
    pub mode: CriticMode,
    n_states: usize,
    n_agent_states: usize,
    n_actions: usize,
}

impl<T: Scalar> LinearCritic<T> {
    /// A zero critic; the feature map must have one row per `(s,z,a)` or
    /// `(z,a)` depending on `mode`.
    pub fn new(
        features: FeatureMap<T>,
        radius: T,
        mode: CriticMode,
        n_states: usize,
        n_agent_states: usize,
        n_actions: usize,
    ) -> Result<Self> {
        let rows = match mode {
            CriticMode::Asymmetric => n_states * n_agent_states * n_actions,
            CriticMode::Symmetric => n_agent_states * n_actions,
        };
        if features.n_rows() != rows {
            return Err(Error::validation(
                "features",
                format!("{} mode needs {rows} rows, the feature map has {}", mode.as_str(), features.n_rows()),
            ));
        }
        let beta = vec![T::zero(); features.dim()];
        Ok(Self { beta, radius, features, mode, n_states, n_agent_states, n_actions })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Feature row of `(s, z, a)`; `s` is ignored in symmetric mode.
    pub fn row(&self, s: usize, z: usize, a: usize) -> usize {
        match self.mode {
            CriticMode::Asymmetric => (s * self.n_agent_states + z) * self.n_actions + a,
            CriticMode::Symmetric => z * self.n_actions + a,
        }
    }

    pub fn value(&self, s: usize, z: usize, a: usize) -> T {
        self.features.dot(&self.beta, self.row(s, z, a))
    }

    /// Predictions for every feature row.
    pub fn table(&self) -> Vec<T> {
        self.features.predict_all(&self.beta)
    }

    pub fn with_beta(&self, beta: Vec<T>) -> Self {
        Self { beta, ..self.clone() }
    }
}

/// One on-policy segment `(s_i, z_i, a_i, r_i)` for `i < m` and the
/// bootstrap triple `(s_m, z_m, a_m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub steps: Vec<(usize, usize, usize, T)>,
    pub terminal: (usize, usize, usize),
}

/// `δ = Σ_{i<m} γ^i r_i + γ^m Q̂(x_m) − Q̂(x_0)` and `g = δ φ(x_0)`.
pub fn td_semi_gradient<T: Scalar>(critic: &LinearCritic<T>, segment: &Segment<T>, gamma: T) -> (T, Vec<T>) {
    let mut g = vec![T::zero(); critic.beta.len()];
    let delta = semi_gradient_into(critic, segment, gamma, &mut g);
    (delta, g)
}

fn semi_gradient_into<T: Scalar>(critic: &LinearCritic<T>, segment: &Segment<T>, gamma: T, g: &mut [T]) -> T {
    let mut target = T::zero();
    let mut disc = T::one();
    for &(_, _, _, r) in &segment.steps {
        target += disc * r;
        disc *= gamma;
    }
    let (sm, zm, am) = segment.terminal;
    target += disc * critic.value(sm, zm, am);
    let (s0, z0, a0, _) = segment.steps[0];
    let x0 = critic.row(s0, z0, a0);
    let delta = target - critic.features.dot(&critic.beta, x0);
    g.iter_mut().for_each(|v| *v = T::zero());
    critic.features.add_scaled(g, x0, delta);
    delta
}

/// Euclidean projection onto the closed ball of radius `radius`.
pub fn project_ball<T: Scalar>(v: &[T], radius: T) -> Vec<T> {
    let mut out = v.to_vec();
    project_in_place(&mut out, radius);
    out
}

pub(crate) fn project_in_place<T: Scalar>(v: &mut [T], radius: T) -> T {
    let n = norm2(v);
    if n > radius {
        let scale = radius / n;
        v.iter_mut().for_each(|x| *x *= scale);
        radius
    } else {
        n
    }
}

/// Draws a segment: `(s,z) ~ d`, `a_0 ~ π(·|z_0)`, then `m` on-policy steps.
pub fn sample_segment<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    m: usize,
    rng: &mut R,
) -> Segment<T> {
    let (mut s, mut z) = sample_discounted(pomdp, asp, policy, rng);
    let mut a = policy.sample(z, rng);
    let mut steps = Vec::with_capacity(m);
    for _ in 0..m {
        let (r, sp, zp) = env_step(pomdp, asp, s, z, a, rng);
        steps.push((s, z, a, r));
        s = sp;
        z = zp;
        a = policy.sample(z, rng);
    }
    Segment { steps, terminal: (s, z, a) }
}

/// Exact target for the measured-error column of a trace.
#[derive(Debug, Clone, Copy)]
pub struct ErrorOracle<'a, T> {
    pub table: &'a QTable<T>,
    pub weights: &'a [T],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdRecord<T> {
    pub k: usize,
    pub delta: T,
    pub g_norm: T,
    /// Norm of the iterate after the update.
    pub beta_norm: T,
    /// Error of the running average `(1/(k+1)) Σ_{j≤k} β_j`.
    pub measured_error: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdTrace<T> {
    pub records: Vec<TdRecord<T>>,
    pub beta_bar: Vec<T>,
    pub final_error: Option<T>,
}

impl<T: Scalar> TdTrace<T> {
    pub fn to_csv(&self) -> String {
        let with_err = self.records.iter().any(|r| r.measured_error.is_some());
        let mut out = String::from(if with_err {
            "k,delta,g_norm,beta_norm,measured_error\n"
        } else {
            "k,delta,g_norm,beta_norm\n"
        });
        for r in &self.records {
            let _ = write!(out, "{},{},{},{}", r.k, r.delta, r.g_norm, r.beta_norm);
            if with_err {
                match r.measured_error {
                    Some(e) => {
                        let _ = write!(out, ",{e}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Sampling weights for the critic error: `d(s,z)π(a|z)` or its marginal
/// over `s`, indexed like the critic's feature rows.
pub fn error_weights<T: Scalar>(d: &VisitationMeasure<T>, policy: &AgentPolicy<T>, mode: CriticMode) -> Vec<T> {
    match mode {
        CriticMode::Asymmetric => d.with_policy(policy),
        CriticMode::Symmetric => d.symmetric_with_policy(policy),
    }
}

/// `‖Q̂ − Q‖_μ` with `μ` from [`error_weights`].
pub fn measured_critic_error<T: Scalar>(critic: &LinearCritic<T>, exact: &QTable<T>, weights: &[T]) -> Result<T> {
    let pred = critic.table();
    table_error(&pred, exact, weights)
}

pub(crate) fn table_error<T: Scalar>(pred: &[T], exact: &QTable<T>, weights: &[T]) -> Result<T> {
    if pred.len() != exact.values().len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: exact.values().len() });
    }
    if weights.len() != pred.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: pred.len() });
    }
    let diff: Vec<T> = pred
        .iter()
        .zip(exact.values())
        .zip(weights)
        .map(|((&p, &q), &w)| if w > T::zero() { p - q } else { T::zero() })
        .collect();
    Ok(weighted_norm(&diff, weights))
}

/// Runs `K` projected semi-gradient updates from `β_0 = 0` and returns the
/// critic holding `β̄ = (1/K) Σ_{k<K} β_k` with its trace.
pub fn td_learn<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    features: &FeatureMap<T>,
    config: &TdConfig<T>,
    rng: &mut R,
    oracle: Option<ErrorOracle<'_, T>>,
) -> Result<(LinearCritic<T>, TdTrace<T>)> {
    config.validate()?;
    asp.check_compatible(pomdp)?;
    let mut critic = LinearCritic::new(
        features.clone(),
        config.radius,
        config.mode,
        pomdp.n_states(),
        asp.n_agent_states(),
        pomdp.n_actions(),
    )?;
    let run = run_updates(pomdp, asp, policy, &mut critic, config, rng, oracle, true)?;
    critic.beta = run.beta_bar.clone();
    Ok((critic, run))
}

/// The update loop without trace records, for callers that only need `β̄`.
pub(crate) fn td_average<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    critic: &mut LinearCritic<T>,
    config: &TdConfig<T>,
    rng: &mut R,
) -> Result<()> {
    critic.beta.iter_mut().for_each(|b| *b = T::zero());
    let run = run_updates(pomdp, asp, policy, critic, config, rng, None, false)?;
    critic.beta = run.beta_bar;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_updates<T: Scalar, R: Rng + ?Sized>(
    pomdp: &Pomdp<T>,
    asp: &AgentStateProcess<T>,
    policy: &AgentPolicy<T>,
    critic: &mut LinearCritic<T>,
    config: &TdConfig<T>,
    rng: &mut R,
    oracle: Option<ErrorOracle<'_, T>>,
    record: bool,
) -> Result<TdTrace<T>> {
    let gamma = pomdp.gamma();
    let alpha = config.step_size();
    let dim = critic.beta.len();
    let mut sum = vec![T::zero(); dim];
    let mut g = vec![T::zero(); dim];
    let mut records = Vec::with_capacity(if record { config.k } else { 0 });
    for k in 0..config.k {
        for (acc, &b) in sum.iter_mut().zip(&critic.beta) {
            *acc += b;
        }
        let segment = sample_segment(pomdp, asp, policy, config.m, rng);
        let delta = semi_gradient_into(critic, &segment, gamma, &mut g);
        for (b, &gi) in critic.beta.iter_mut().zip(&g) {
            *b += alpha * gi;
        }
        let beta_norm = project_in_place(&mut critic.beta, config.radius);
        if record {
            let measured_error = match oracle {
                Some(o) if config.error_every > 0 && (k + 1) % config.error_every == 0 => {
                    let scale = T::one() / T::from_usize_lossy(k + 1);
                    let avg: Vec<T> = sum.iter().map(|&x| x * scale).collect();
                    Some(table_error(&critic.features.predict_all(&avg), o.table, o.weights)?)
                }
                _ => None,
            };
            records.push(TdRecord { k, delta, g_norm: norm2(&g), beta_norm, measured_error });
        }
    }
    let scale = T::one() / T::from_usize_lossy(config.k);
    let beta_bar: Vec<T> = sum.iter().map(|&x| x * scale).collect();
    let final_error = match oracle {
        Some(o) => Some(table_error(&critic.features.predict_all(&beta_bar), o.table, o.weights)?),
        None => None,
    };
    Ok(TdTrace { records, beta_bar, final_error })
}

/// `(1 − γ^m)/(1 − γ) + (1 + γ^m) B`, the a-priori bound on `‖g_k‖`.
pub fn gradient_norm_bound<T: Scalar>(gamma: T, m: usize, radius: T) -> T {
    let gm = gamma.powi(m as i32);
    (T::one() - gm) / (T::one() - gamma) + (T::one() + gm) * radius
}
