//! Stochastic agent-state policies `π(a|z)` stored as dense tables.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pomdp::check_simplex;
use crate::scalar::{sample_index, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct AgentPolicy<T> {
    n_agent_states: usize,
    n_actions: usize,
    probs: Vec<T>,
}

/// JSON form: `{"probs": [[π(a|z) for a] for z]}`.
#[derive(Debug, Serialize, Deserialize)]
struct PolicyFile {
    probs: Vec<Vec<f64>>,
}

impl<T: Scalar> AgentPolicy<T> {
    pub fn from_table(n_agent_states: usize, n_actions: usize, mut probs: Vec<T>) -> Result<Self> {
        if probs.len() != n_agent_states * n_actions {
            return Err(Error::LengthMismatch { left: probs.len(), right: n_agent_states * n_actions });
        }
        for z in 0..n_agent_states {
            check_simplex(&mut probs[z * n_actions..(z + 1) * n_actions], || format!("policy[z={z}]"))?;
        }
        Ok(Self { n_agent_states, n_actions, probs })
    }

    pub fn uniform(n_agent_states: usize, n_actions: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(n_actions);
        Self { n_agent_states, n_actions, probs: vec![p; n_agent_states * n_actions] }
    }

    /// Always takes `action`.
    pub fn constant(n_agent_states: usize, n_actions: usize, action: usize) -> Self {
        Self::deterministic(n_actions, &vec![action; n_agent_states])
    }

    /// Takes `actions[z]` in agent state `z`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![T::zero(); actions.len() * n_actions];
        for (z, &a) in actions.iter().enumerate() {
            assert!(a < n_actions, "action {a} out of range");
            probs[z * n_actions + a] = T::one();
        }
        Self { n_agent_states: actions.len(), n_actions, probs }
    }

    /// Rows drawn from Dirichlet(1).
    pub fn random<R: Rng + ?Sized>(n_agent_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(n_agent_states * n_actions);
        for _ in 0..n_agent_states {
            probs.extend(crate::pomdp::random_simplex::<T, R>(n_actions, rng));
        }
        Self { n_agent_states, n_actions, probs }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: PolicyFile = serde_json::from_str(text)?;
        let nz = f.probs.len();
        let na = f.probs.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(nz * na);
        for (z, row) in f.probs.iter().enumerate() {
            if row.len() != na {
                return Err(Error::validation(format!("policy[z={z}]"), format!("expected {na} entries")));
            }
            flat.extend(row.iter().map(|&x| T::c(x)));
        }
        Self::from_table(nz, na, flat)
    }

    pub fn to_json(&self) -> String {
        let f = PolicyFile {
            probs: (0..self.n_agent_states).map(|z| self.probs(z).iter().map(|p| p.as_f64()).collect()).collect(),
        };
        serde_json::to_string(&f).expect("policy serialization cannot fail")
    }

    pub fn n_agent_states(&self) -> usize {
        self.n_agent_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `π(·|z)`.
    pub fn probs(&self, z: usize) -> &[T] {
        &self.probs[z * self.n_actions..(z + 1) * self.n_actions]
    }

    pub fn prob(&self, z: usize, a: usize) -> T {
        self.probs[z * self.n_actions + a]
    }

    pub fn table(&self) -> &[T] {
        &self.probs
    }

    /// `a ~ π(·|z)` with exactly one draw.
    pub fn sample<R: Rng + ?Sized>(&self, z: usize, rng: &mut R) -> usize {
        sample_index(self.probs(z), rng.gen::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors() {
        let p = AgentPolicy::<f64>::constant(3, 2, 1);
        assert_eq!(p.probs(2), &[0.0, 1.0]);
        let u = AgentPolicy::<f64>::uniform(2, 4);
        assert_eq!(u.prob(1, 3), 0.25);
        let j = AgentPolicy::<f64>::from_json(&u.to_json()).unwrap();
        assert_eq!(j, u);
        assert!(AgentPolicy::<f64>::from_table(1, 2, vec![0.5, 0.6]).is_err());
    }
}
