//! Agent-state processes `M = (Z, U)`.
//!
//! The null agent state and null action used at time −1 are the reserved
//! indices `n_agent_states` and `n_actions`; the kernel evaluated there is
//! the initialization row `U(·|z₋₁, a₋₁, o₀)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::{check_simplex, Pomdp};
use crate::scalar::{sample_index, Scalar};

/// Default cap on `|Z|` for generated processes.
pub const DEFAULT_AGENT_STATE_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStateKind {
    LastObservation,
    /// Interleaved observation/action window holding `k` observations.
    Window {
        k: usize,
    },
    StateRevealing,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
enum Kernel<T> {
    /// Next agent state per `[z][a][o']`, initial agent state per `[o0]`.
    Deterministic { next: Vec<usize>, init: Vec<usize> },
    /// `[z][a][o'][z']` and `[o0][z]`.
    Stochastic { update: Vec<T>, init: Vec<T> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentStateProcess<T> {
    n_agent_states: usize,
    n_actions: usize,
    n_obs: usize,
    kernel: Kernel<T>,
    kind: AgentStateKind,
}

/// JSON form of an agent-state process: an explicit table or a shortcut.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AgentStateSpec {
    Shortcut {
        kind: ShortcutKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<usize>,
    },
    Table {
        n_agent_states: usize,
        update: Vec<Vec<Vec<Vec<f64>>>>,
        init: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutKind {
    LastObs,
    Window,
    StateRevealing,
}

impl AgentStateSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Builds the process for `pomdp`. The state-revealing shortcut also
    /// replaces the POMDP by its fully observable wrapper, hence the pair.
    pub fn build<T: Scalar>(&self, pomdp: &Pomdp<T>) -> Result<(Pomdp<T>, AgentStateProcess<T>)> {
        match self {
            AgentStateSpec::Shortcut { kind: ShortcutKind::LastObs, .. } => {
                Ok((pomdp.clone(), AgentStateProcess::last_observation(pomdp)))
            }
            AgentStateSpec::Shortcut { kind: ShortcutKind::Window, k } => {
                let k = k.ok_or_else(|| Error::validation("k", "window process needs k"))?;
                Ok((pomdp.clone(), AgentStateProcess::sliding_window(pomdp, k, DEFAULT_AGENT_STATE_CAP)?))
            }
            AgentStateSpec::Shortcut { kind: ShortcutKind::StateRevealing, .. } => {
                Ok(AgentStateProcess::state_revealing(pomdp))
            }
            AgentStateSpec::Table { n_agent_states, update, init } => {
                let nz = *n_agent_states;
                let (na, no) = (pomdp.n_actions(), pomdp.n_obs());
                let mut flat = Vec::with_capacity(nz * na * no * nz);
                if update.len() != nz {
                    return Err(Error::validation("update", format!("has {} rows, expected {nz}", update.len())));
                }
                for (z, per_a) in update.iter().enumerate() {
                    if per_a.len() != na {
                        return Err(Error::validation(format!("update[z={z}]"), format!("expected {na} actions")));
                    }
                    for (a, per_o) in per_a.iter().enumerate() {
                        if per_o.len() != no {
                            return Err(Error::validation(
                                format!("update[z={z}][a={a}]"),
                                format!("expected {no} observations"),
                            ));
                        }
                        for (o, row) in per_o.iter().enumerate() {
                            if row.len() != nz {
                                return Err(Error::validation(
                                    format!("update[z={z}][a={a}][o={o}]"),
                                    format!("expected {nz} entries"),
                                ));
                            }
                            flat.extend(row.iter().map(|&x| T::c(x)));
                        }
                    }
                }
                if init.len() != no {
                    return Err(Error::validation("init", format!("has {} rows, expected {no}", init.len())));
                }
                let mut init_flat = Vec::with_capacity(no * nz);
                for (o, row) in init.iter().enumerate() {
                    if row.len() != nz {
                        return Err(Error::validation(format!("init[o={o}]"), format!("expected {nz} entries")));
                    }
                    init_flat.extend(row.iter().map(|&x| T::c(x)));
                }
                Ok((pomdp.clone(), AgentStateProcess::from_tables(nz, na, no, flat, init_flat)?))
            }
        }
    }
}

fn one_hot_index<T: Scalar>(row: &[T]) -> Option<usize> {
    let mut hit = None;
    for (i, &p) in row.iter().enumerate() {
        if p == T::one() {
            if hit.is_some() {
                return None;
            }
            hit = Some(i);
        } else if p != T::zero() {
            return None;
        }
    }
    hit
}

impl<T: Scalar> AgentStateProcess<T> {
    /// Validated process from dense tables `update[z][a][o'][z']` and
    /// `init[o0][z]`. One-hot tables are stored as deterministic maps.
    pub fn from_tables(
        n_agent_states: usize,
        n_actions: usize,
        n_obs: usize,
        mut update: Vec<T>,
        mut init: Vec<T>,
    ) -> Result<Self> {
        let nz = n_agent_states;
        if nz == 0 {
            return Err(Error::validation("n_agent_states", "must be positive"));
        }
        if update.len() != nz * n_actions * n_obs * nz {
            return Err(Error::validation("update", "wrong table size"));
        }
        if init.len() != n_obs * nz {
            return Err(Error::validation("init", "wrong table size"));
        }
        for z in 0..nz {
            for a in 0..n_actions {
                for o in 0..n_obs {
                    let off = ((z * n_actions + a) * n_obs + o) * nz;
                    check_simplex(&mut update[off..off + nz], || format!("update[z={z}][a={a}][o={o}]"))?;
                }
            }
        }
        for o in 0..n_obs {
            check_simplex(&mut init[o * nz..(o + 1) * nz], || format!("init[o={o}]"))?;
        }
        let next: Option<Vec<usize>> = update.chunks(nz).map(one_hot_index).collect();
        let init_det: Option<Vec<usize>> = init.chunks(nz).map(one_hot_index).collect();
        let kernel = match (next, init_det) {
            (Some(next), Some(init)) => Kernel::Deterministic { next, init },
            _ => Kernel::Stochastic { update, init },
        };
        Ok(Self { n_agent_states: nz, n_actions, n_obs, kernel, kind: AgentStateKind::Custom })
    }

    /// `z_t = o_t`.
    pub fn last_observation(pomdp: &Pomdp<T>) -> Self {
        let (na, no) = (pomdp.n_actions(), pomdp.n_obs());
        let next = (0..no).flat_map(|_z| (0..na).flat_map(|_a| 0..no)).collect();
        Self {
            n_agent_states: no,
            n_actions: na,
            n_obs: no,
            kernel: Kernel::Deterministic { next, init: (0..no).collect() },
            kind: AgentStateKind::LastObservation,
        }
    }

    /// Window `(o_{t−k+1}, a_{t−k+1}, …, a_{t−1}, o_t)` padded with `⊥`
    /// before enough history exists.
    ///
    /// Encoding (mixed radix, oldest slot most significant): the `k − 1` older
    /// observation slots take values in `0..=n_obs` and the `k − 1` action
    /// slots in `0..=n_actions`, where the top value is `⊥`; the newest
    /// observation slot is never padded and takes values in `0..n_obs`.
    /// Hence `|Z| = n_obs · ((n_obs + 1)(n_actions + 1))^(k−1)`.
    pub fn sliding_window(pomdp: &Pomdp<T>, k: usize, cap: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("k", "window length must be at least 1"));
        }
        let (na, no) = (pomdp.n_actions(), pomdp.n_obs());
        let block = ((no + 1) as u128) * ((na + 1) as u128);
        let size = (no as u128).saturating_mul(block.saturating_pow((k - 1) as u32));
        if size > cap as u128 {
            return Err(Error::SizeCap { what: format!("sliding window of length {k}"), size, cap: cap as u128 });
        }
        let nz = size as usize;
        let codec = WindowCodec { k, n_obs: no, n_actions: na };
        let mut next = Vec::with_capacity(nz * na * no);
        for z in 0..nz {
            let w = codec.decode(z);
            for a in 0..na {
                for o in 0..no {
                    next.push(codec.encode(&codec.shift(&w, a, o)));
                }
            }
        }
        let init = (0..no).map(|o| codec.encode(&codec.initial(o))).collect();
        Ok(Self {
            n_agent_states: nz,
            n_actions: na,
            n_obs: no,
            kernel: Kernel::Deterministic { next, init },
            kind: AgentStateKind::Window { k },
        })
    }

    /// Fully observable wrapper of `pomdp` with the last-observation process:
    /// the agent state is the environment state.
    pub fn state_revealing(pomdp: &Pomdp<T>) -> (Pomdp<T>, Self) {
        let wrapped = pomdp.state_revealing();
        let mut asp = Self::last_observation(&wrapped);
        asp.kind = AgentStateKind::StateRevealing;
        (wrapped, asp)
    }

    /// Random stochastic process with Dirichlet(1) rows, for randomized checks.
    pub fn random<R: Rng + ?Sized>(n_agent_states: usize, n_actions: usize, n_obs: usize, rng: &mut R) -> Result<Self> {
        let nz = n_agent_states;
        let mut update = Vec::with_capacity(nz * n_actions * n_obs * nz);
        for _ in 0..nz * n_actions * n_obs {
            update.extend(crate::pomdp::random_simplex::<T, R>(nz, rng));
        }
        let mut init = Vec::with_capacity(n_obs * nz);
        for _ in 0..n_obs {
            init.extend(crate::pomdp::random_simplex::<T, R>(nz, rng));
        }
        Self::from_tables(nz, n_actions, n_obs, update, init)
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn kind(&self) -> &AgentStateKind {
        &self.kind
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self.kernel, Kernel::Deterministic { .. })
    }

    /// Reserved null agent state `z₋₁`.
    pub fn null_state(&self) -> usize {
        self.n_agent_states
    }

    /// Reserved null action `a₋₁`.
    pub fn null_action(&self) -> usize {
        self.n_actions
    }

    /// Checks that the process is compatible with `pomdp`.
    pub fn check_compatible(&self, pomdp: &Pomdp<T>) -> Result<()> {
        if self.n_actions != pomdp.n_actions() || self.n_obs != pomdp.n_obs() {
            return Err(Error::validation(
                "agent state process",
                format!(
                    "built for {} actions / {} observations, POMDP has {} / {}",
                    self.n_actions,
                    self.n_obs,
                    pomdp.n_actions(),
                    pomdp.n_obs()
                ),
            ));
        }
        Ok(())
    }

    /// Non-zero entries of `U(·|z, a, o')`; `(null_state, null_action, o0)`
    /// gives the initialization row.
    pub fn successors(&self, z: usize, a: usize, o: usize) -> Vec<(usize, T)> {
        let nz = self.n_agent_states;
        let is_null = z == self.null_state() && a == self.null_action();
        match &self.kernel {
            Kernel::Deterministic { next, init } => {
                let zp = if is_null { init[o] } else { next[(z * self.n_actions + a) * self.n_obs + o] };
                vec![(zp, T::one())]
            }
            Kernel::Stochastic { update, init } => {
                let row = if is_null {
                    &init[o * nz..(o + 1) * nz]
                } else {
                    let off = ((z * self.n_actions + a) * self.n_obs + o) * nz;
                    &update[off..off + nz]
                };
                row.iter().enumerate().filter(|(_, p)| **p > T::zero()).map(|(i, &p)| (i, p)).collect()
            }
        }
    }

    /// Dense row `U(·|z, a, o')`, with the null pair mapping to the init row.
    pub fn row(&self, z: usize, a: usize, o: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.n_agent_states];
        for (zp, p) in self.successors(z, a, o) {
            out[zp] += p;
        }
        out
    }

    fn draw<R: Rng + ?Sized>(&self, z: usize, a: usize, o: usize, rng: &mut R) -> usize {
        let nz = self.n_agent_states;
        let is_null = z == self.null_state() && a == self.null_action();
        match &self.kernel {
            Kernel::Deterministic { next, init } => {
                if is_null {
                    init[o]
                } else {
                    next[(z * self.n_actions + a) * self.n_obs + o]
                }
            }
            Kernel::Stochastic { update, init } => {
                let row = if is_null {
                    &init[o * nz..(o + 1) * nz]
                } else {
                    let off = ((z * self.n_actions + a) * self.n_obs + o) * nz;
                    &update[off..off + nz]
                };
                sample_index(row, rng.gen::<f64>())
            }
        }
    }

    /// `z0 ~ U(·|z₋₁, a₋₁, o0)`. Deterministic kernels consume no randomness.
    pub fn init_state<R: Rng + ?Sized>(&self, o0: usize, rng: &mut R) -> usize {
        self.draw(self.null_state(), self.null_action(), o0, rng)
    }

    /// `z' ~ U(·|z, a, o')`. Deterministic kernels consume no randomness,
    /// stochastic ones exactly one draw.
    pub fn update<R: Rng + ?Sized>(&self, z: usize, a: usize, o_next: usize, rng: &mut R) -> usize {
        self.draw(z, a, o_next, rng)
    }

    /// Window contents of agent state `z` (oldest first, `None` = `⊥`).
    /// Only meaningful for window processes.
    pub fn window_contents(&self, z: usize) -> Option<Vec<WindowSlot>> {
        match self.kind {
            AgentStateKind::Window { k } => {
                Some(WindowCodec { k, n_obs: self.n_obs, n_actions: self.n_actions }.decode(z))
            }
            AgentStateKind::LastObservation => Some(vec![WindowSlot::Obs(Some(z))]),
            _ => None,
        }
    }
}

/// One slot of a window agent state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowSlot {
    Obs(Option<usize>),
    Action(Option<usize>),
}

struct WindowCodec {
    k: usize,
    n_obs: usize,
    n_actions: usize,
}

impl WindowCodec {
    fn radices(&self) -> Vec<usize> {
        let mut r = Vec::with_capacity(2 * self.k - 1);
        for _ in 0..self.k - 1 {
            r.push(self.n_obs + 1);
            r.push(self.n_actions + 1);
        }
        r.push(self.n_obs);
        r
    }

    fn decode(&self, mut z: usize) -> Vec<WindowSlot> {
        let radices = self.radices();
        let mut digits = vec![0; radices.len()];
        for i in (0..radices.len()).rev() {
            digits[i] = z % radices[i];
            z /= radices[i];
        }
        digits
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                if i == radices.len() - 1 {
                    WindowSlot::Obs(Some(d))
                } else if i % 2 == 0 {
                    WindowSlot::Obs((d < self.n_obs).then_some(d))
                } else {
                    WindowSlot::Action((d < self.n_actions).then_some(d))
                }
            })
            .collect()
    }

    fn encode(&self, w: &[WindowSlot]) -> usize {
        let radices = self.radices();
        w.iter().zip(&radices).fold(0, |acc, (slot, &r)| {
            let d = match *slot {
                WindowSlot::Obs(o) => o.unwrap_or(self.n_obs),
                WindowSlot::Action(a) => a.unwrap_or(self.n_actions),
            };
            acc * r + d
        })
    }

    fn initial(&self, o: usize) -> Vec<WindowSlot> {
        let mut w = Vec::with_capacity(2 * self.k - 1);
        for _ in 0..self.k - 1 {
            w.push(WindowSlot::Obs(None));
            w.push(WindowSlot::Action(None));
        }
        w.push(WindowSlot::Obs(Some(o)));
        w
    }

    fn shift(&self, w: &[WindowSlot], a: usize, o: usize) -> Vec<WindowSlot> {
        let mut out: Vec<WindowSlot> = w.iter().skip(2).copied().collect();
        if self.k > 1 {
            out.push(WindowSlot::Action(Some(a)));
        } else {
            out.clear();
        }
        out.push(WindowSlot::Obs(Some(o)));
        out
    }
}
