//! Tabular POMDPs: validated tables, JSON loading, simulation and the
//! built-in aliased Tiger instance.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{sample_index, Scalar};

/// Optional human-readable names. Indices stay the source of truth.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub states: Vec<String>,
    pub actions: Vec<String>,
    pub observations: Vec<String>,
}

/// A finite POMDP `(S, A, O, P, T, R, O, γ)` with dense 0-based indices.
///
/// Transition and reward tables are laid out `[a][s][s']`, the observation
/// table `[s][o]`. All tables are validated on construction and immutable
/// afterwards.
#[derive(Clone, Debug, PartialEq)]
pub struct Pomdp<T> {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    initial: Vec<T>,
    transition: Vec<T>,
    reward: Vec<T>,
    observation: Vec<T>,
    gamma: T,
    labels: Option<Labels>,
}

/// Outcome of one environment transition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSample<T> {
    pub next_state: usize,
    pub observation: usize,
    pub reward: T,
}

/// On-disk schema. Field order is the canonical key order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PomdpFile {
    n_states: usize,
    n_actions: usize,
    n_obs: usize,
    gamma: f64,
    initial: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    observation: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Labels>,
}

/// Checks one probability row, renormalizing it when the sum is within
/// tolerance of one.
pub(crate) fn check_simplex<T: Scalar>(row: &mut [T], name: impl FnOnce() -> String) -> Result<()> {
    if let Some(bad) = row.iter().find(|x| !(**x >= T::zero()) || !x.is_finite()) {
        return Err(Error::validation(name(), format!("entry {bad} is negative or not finite")));
    }
    let sum: T = row.iter().copied().sum();
    if (sum - T::one()).abs() > T::simplex_tol() {
        return Err(Error::validation(name(), format!("row sums to {sum}, expected 1")));
    }
    // Sums off by more than accumulated round-off are rescaled; exact-enough
    // rows are kept verbatim so that load/emit stays byte-stable.
    if (sum - T::one()).abs() > T::epsilon() * T::from_usize_lossy(row.len().max(2)) {
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    Ok(())
}

fn check_len(field: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::validation(field, format!("has length {got}, expected {want}")));
    }
    Ok(())
}

impl<T: Scalar> Pomdp<T> {
    /// Builds and validates a POMDP from flat tables (`transition`/`reward`
    /// as `[a][s][s']`, `observation` as `[s][o]`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        n_obs: usize,
        initial: Vec<T>,
        transition: Vec<T>,
        reward: Vec<T>,
        observation: Vec<T>,
        gamma: T,
        labels: Option<Labels>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || n_obs == 0 {
            return Err(Error::validation("dimensions", "n_states, n_actions and n_obs must be positive"));
        }
        if !(gamma >= T::zero()) {
            return Err(Error::validation("gamma", "gamma must be >= 0"));
        }
        if gamma >= T::one() {
            return Err(Error::validation("gamma", "gamma must be < 1"));
        }
        check_len("initial", initial.len(), n_states)?;
        check_len("transition", transition.len(), n_actions * n_states * n_states)?;
        check_len("reward", reward.len(), n_actions * n_states * n_states)?;
        check_len("observation", observation.len(), n_states * n_obs)?;
        let (mut initial, mut transition, mut observation) = (initial, transition, observation);
        check_simplex(&mut initial, || "initial".to_string())?;
        for a in 0..n_actions {
            for s in 0..n_states {
                let off = (a * n_states + s) * n_states;
                check_simplex(&mut transition[off..off + n_states], || format!("transition[a={a}][s={s}]"))?;
            }
        }
        for s in 0..n_states {
            check_simplex(&mut observation[s * n_obs..(s + 1) * n_obs], || format!("observation[s={s}]"))?;
        }
        for (i, r) in reward.iter().enumerate() {
            if !(*r >= T::zero() && *r <= T::one()) {
                let (a, rest) = (i / (n_states * n_states), i % (n_states * n_states));
                return Err(Error::validation(
                    format!("reward[a={a}][s={}][s'={}]", rest / n_states, rest % n_states),
                    format!("value {r} outside [0, 1]"),
                ));
            }
        }
        if let Some(l) = &labels {
            check_len("labels.states", l.states.len(), n_states)?;
            check_len("labels.actions", l.actions.len(), n_actions)?;
            check_len("labels.observations", l.observations.len(), n_obs)?;
        }
        Ok(Self { n_states, n_actions, n_obs, initial, transition, reward, observation, gamma, labels })
    }

    /// Parses and validates the JSON schema.
    pub fn from_json(text: &str) -> Result<Self> {
        let f: PomdpFile = serde_json::from_str(text)?;
        let (ns, na, no) = (f.n_states, f.n_actions, f.n_obs);
        let flat3 = |field: &str, t: &[Vec<Vec<f64>>]| -> Result<Vec<T>> {
            check_len(field, t.len(), na)?;
            let mut out = Vec::with_capacity(na * ns * ns);
            for (a, block) in t.iter().enumerate() {
                check_len(&format!("{field}[a={a}]"), block.len(), ns)?;
                for (s, row) in block.iter().enumerate() {
                    check_len(&format!("{field}[a={a}][s={s}]"), row.len(), ns)?;
                    out.extend(row.iter().map(|&x| T::c(x)));
                }
            }
            Ok(out)
        };
        let transition = flat3("transition", &f.transition)?;
        let reward = flat3("reward", &f.reward)?;
        check_len("observation", f.observation.len(), ns)?;
        let mut observation = Vec::with_capacity(ns * no);
        for (s, row) in f.observation.iter().enumerate() {
            check_len(&format!("observation[s={s}]"), row.len(), no)?;
            observation.extend(row.iter().map(|&x| T::c(x)));
        }
        if f.gamma >= 1.0 {
            return Err(Error::validation("gamma", "gamma must be < 1"));
        }
        Self::new(
            ns,
            na,
            no,
            f.initial.iter().map(|&x| T::c(x)).collect(),
            transition,
            reward,
            observation,
            T::c(f.gamma),
            f.labels,
        )
    }

    /// Emits the JSON schema with canonical key order.
    pub fn to_json(&self) -> String {
        let (ns, na, no) = (self.n_states, self.n_actions, self.n_obs);
        let nest3 = |t: &[T]| -> Vec<Vec<Vec<f64>>> {
            (0..na)
                .map(|a| (0..ns).map(|s| (0..ns).map(|sp| t[(a * ns + s) * ns + sp].as_f64()).collect()).collect())
                .collect()
        };
        let f = PomdpFile {
            n_states: ns,
            n_actions: na,
            n_obs: no,
            gamma: self.gamma.as_f64(),
            initial: self.initial.iter().map(|x| x.as_f64()).collect(),
            transition: nest3(&self.transition),
            reward: nest3(&self.reward),
            observation: (0..ns).map(|s| self.observation_row(s).iter().map(|x| x.as_f64()).collect()).collect(),
            labels: self.labels.clone(),
        };
        let mut s = serde_json::to_string_pretty(&f).expect("POMDP serialization cannot fail");
        s.push('\n');
        s
    }

    /// The aliased Tiger POMDP: states `Treasure, Tiger, Left, Right`,
    /// actions `Swap, Enter`, observations `Dark, Left, Right`.
    ///
    /// Swap toggles between the two doors, Enter moves Left to Treasure and
    /// Right to Tiger, and both rooms are absorbing. Every action taken in
    /// Treasure pays 1. Rooms are observed as Dark, doors by their label. The
    /// initial distribution is uniform over the four states.
    pub fn builtin_tiger(gamma: T) -> Result<Self> {
        const TREASURE: usize = 0;
        const TIGER: usize = 1;
        const LEFT: usize = 2;
        const RIGHT: usize = 3;
        const SWAP: usize = 0;
        const ENTER: usize = 1;
        let (ns, na, no) = (4, 2, 3);
        let mut transition = vec![T::zero(); na * ns * ns];
        let mut set = |a: usize, s: usize, sp: usize| transition[(a * ns + s) * ns + sp] = T::one();
        for a in [SWAP, ENTER] {
            set(a, TREASURE, TREASURE);
            set(a, TIGER, TIGER);
        }
        set(SWAP, LEFT, RIGHT);
        set(SWAP, RIGHT, LEFT);
        set(ENTER, LEFT, TREASURE);
        set(ENTER, RIGHT, TIGER);
        let mut reward = vec![T::zero(); na * ns * ns];
        for a in [SWAP, ENTER] {
            for sp in 0..ns {
                reward[(a * ns + TREASURE) * ns + sp] = T::one();
            }
        }
        let observation = vec![
            T::one(),
            T::zero(),
            T::zero(), // Treasure: Dark
            T::one(),
            T::zero(),
            T::zero(), // Tiger: Dark
            T::zero(),
            T::one(),
            T::zero(), // Left
            T::zero(),
            T::zero(),
            T::one(), // Right
        ];
        let labels = Labels {
            states: ["Treasure", "Tiger", "Left", "Right"].map(String::from).to_vec(),
            actions: ["Swap", "Enter"].map(String::from).to_vec(),
            observations: ["Dark", "Left", "Right"].map(String::from).to_vec(),
        };
        let initial = vec![T::c(0.25); ns];
        Self::new(ns, na, no, initial, transition, reward, observation, gamma, Some(labels))
    }

    /// A POMDP with independently drawn Dirichlet(1) rows and uniform [0,1]
    /// rewards. Used for randomized checks.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        n_obs: usize,
        gamma: T,
        rng: &mut R,
    ) -> Result<Self> {
        let initial = random_simplex(n_states, rng);
        let mut transition = Vec::with_capacity(n_actions * n_states * n_states);
        for _ in 0..n_actions * n_states {
            transition.extend(random_simplex::<T, R>(n_states, rng));
        }
        let reward = (0..n_actions * n_states * n_states).map(|_| T::c(rng.gen::<f64>())).collect();
        let mut observation = Vec::with_capacity(n_states * n_obs);
        for _ in 0..n_states {
            observation.extend(random_simplex::<T, R>(n_obs, rng));
        }
        Self::new(n_states, n_actions, n_obs, initial, transition, reward, observation, gamma, None)
    }

    /// Copy with a different discount factor.
    pub fn with_gamma(&self, gamma: T) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.n_obs,
            self.initial.clone(),
            self.transition.clone(),
            self.reward.clone(),
            self.observation.clone(),
            gamma,
            self.labels.clone(),
        )
    }

    /// Copy whose observation reveals the state (`O(o|s) = 1[o = s]`).
    pub fn state_revealing(&self) -> Self {
        let ns = self.n_states;
        let mut observation = vec![T::zero(); ns * ns];
        for s in 0..ns {
            observation[s * ns + s] = T::one();
        }
        let labels = self.labels.as_ref().map(|l| Labels {
            states: l.states.clone(),
            actions: l.actions.clone(),
            observations: l.states.clone(),
        });
        Self { n_obs: ns, observation, labels, ..self.clone() }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    /// `T(·|s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[T] {
        let off = (a * self.n_states + s) * self.n_states;
        &self.transition[off..off + self.n_states]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> T {
        self.transition_row(s, a)[next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> T {
        self.reward[(a * self.n_states + s) * self.n_states + next]
    }

    /// `O(·|s)`.
    pub fn observation_row(&self, s: usize) -> &[T] {
        &self.observation[s * self.n_obs..(s + 1) * self.n_obs]
    }

    pub fn observation(&self, s: usize, o: usize) -> T {
        self.observation_row(s)[o]
    }

    /// `r̄(s, a) = Σ_{s'} T(s'|s,a) R(s,a,s')`.
    pub fn expected_reward(&self, s: usize, a: usize) -> T {
        self.transition_row(s, a).iter().enumerate().map(|(sp, &p)| p * self.reward(s, a, sp)).sum()
    }

    /// Index of the action with this label.
    pub fn action_index(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.actions.iter().position(|l| l == label)
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.states.iter().position(|l| l == label)
    }

    pub fn observation_index(&self, label: &str) -> Option<usize> {
        self.labels.as_ref()?.observations.iter().position(|l| l == label)
    }

    /// Samples `s' ~ T(·|s,a)` and `o' ~ O(·|s')`.
    ///
    /// Always consumes exactly two `f64` draws from `rng` (next state, then
    /// observation), whatever the outcome.
    pub fn step<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> TransitionSample<T> {
        let u_state: f64 = rng.gen();
        let u_obs: f64 = rng.gen();
        let next_state = sample_index(self.transition_row(s, a), u_state);
        let observation = sample_index(self.observation_row(next_state), u_obs);
        TransitionSample { next_state, observation, reward: self.reward(s, a, next_state) }
    }

    /// Samples `s0 ~ P` and `o0 ~ O(·|s0)` with two draws.
    pub fn initial_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let u_state: f64 = rng.gen();
        let u_obs: f64 = rng.gen();
        let s0 = sample_index(&self.initial, u_state);
        (s0, sample_index(self.observation_row(s0), u_obs))
    }
}

pub(crate) fn random_simplex<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<T> {
    // Normalized exponentials are Dirichlet(1, ..., 1).
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut out: Vec<T> = raw.iter().map(|x| T::c(x / total)).collect();
    let s: T = out.iter().copied().sum();
    for x in &mut out {
        *x /= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TREASURE: usize = 0;
    const TIGER: usize = 1;
    const LEFT: usize = 2;
    const RIGHT: usize = 3;
    const SWAP: usize = 0;
    const ENTER: usize = 1;
    const DARK: usize = 0;

    fn tiger() -> Pomdp<f64> {
        Pomdp::builtin_tiger(0.9).unwrap()
    }

    #[test]
    fn tiger_tables() {
        let p = tiger();
        assert_eq!((p.n_states(), p.n_actions(), p.n_obs()), (4, 2, 3));
        assert_eq!(p.transition(LEFT, ENTER, TREASURE), 1.0);
        assert_eq!(p.transition(RIGHT, ENTER, TIGER), 1.0);
        assert_eq!(p.transition(LEFT, SWAP, RIGHT), 1.0);
        assert_eq!(p.transition(RIGHT, SWAP, LEFT), 1.0);
        for a in [SWAP, ENTER] {
            assert_eq!(p.transition(TREASURE, a, TREASURE), 1.0);
            assert_eq!(p.transition(TIGER, a, TIGER), 1.0);
        }
        assert_eq!(p.reward(TREASURE, SWAP, TREASURE), 1.0);
        assert_eq!(p.reward(LEFT, ENTER, TREASURE), 0.0);
        assert_eq!(p.observation(TREASURE, DARK), 1.0);
        assert_eq!(p.observation(TIGER, DARK), 1.0);
        assert_eq!(p.observation(LEFT, 1), 1.0);
        assert_eq!(p.observation(RIGHT, 2), 1.0);
        assert_eq!(p.initial(), &[0.25; 4]);
        assert_eq!(p.action_index("Enter"), Some(ENTER));
    }

    #[test]
    fn tiger_steps_are_deterministic() {
        let p = tiger();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = p.step(LEFT, ENTER, &mut rng);
            assert_eq!(t, TransitionSample { next_state: TREASURE, observation: DARK, reward: 0.0 });
            let t = p.step(TREASURE, SWAP, &mut rng);
            assert_eq!((t.next_state, t.reward), (TREASURE, 1.0));
        }
    }

    #[test]
    fn identity_transition_keeps_state() {
        let p = Pomdp::<f64>::new(
            2,
            1,
            1,
            vec![0.5, 0.5],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![1.0, 1.0],
            0.5,
            None,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in 0..2 {
            for _ in 0..50 {
                assert_eq!(p.step(s, 0, &mut rng).next_state, s);
            }
        }
    }

    #[test]
    fn step_uses_two_draws() {
        let p = Pomdp::<f64>::random(3, 2, 2, 0.9, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        p.step(1, 1, &mut a);
        let _: f64 = b.gen();
        let _: f64 = b.gen();
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
    }

    #[test]
    fn bad_row_is_rejected_with_its_sum() {
        let mut text = tiger().to_json();
        // Break transition[a=0][s=2] = [0,0,0,1] into a 0.9 row.
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut v = v;
        v["transition"][0][2] = serde_json::json!([0.0, 0.0, 0.0, 0.9]);
        text = serde_json::to_string(&v).unwrap();
        let err = Pomdp::<f64>::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("transition[a=0][s=2]"), "{msg}");
        assert!(msg.contains("0.9"), "{msg}");
    }

    #[test]
    fn gamma_one_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&tiger().to_json()).unwrap();
        v["gamma"] = serde_json::json!(1.0);
        let err = Pomdp::<f64>::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("gamma must be < 1"));
        assert!(Pomdp::<f64>::builtin_tiger(1.0).is_err());
    }

    #[test]
    fn reward_outside_unit_interval_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&tiger().to_json()).unwrap();
        v["reward"][1][0][0] = serde_json::json!(1.5);
        assert!(Pomdp::<f64>::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn parse_error_has_location() {
        let err = Pomdp::<f64>::from_json("{\n \"n_states\": 2,\n oops }").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn near_simplex_rows_are_renormalized() {
        let p = Pomdp::<f64>::new(
            2,
            1,
            1,
            vec![0.5 + 1e-13, 0.5],
            vec![1.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
            vec![1.0, 1.0],
            0.5,
            None,
        )
        .unwrap();
        let s: f64 = p.initial().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn json_is_byte_stable() {
        let text = tiger().to_json();
        let again = Pomdp::<f64>::from_json(&text).unwrap().to_json();
        assert_eq!(text, again);
        let r = Pomdp::<f64>::random(3, 2, 2, 0.7, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let t = r.to_json();
        assert_eq!(Pomdp::<f64>::from_json(&t).unwrap().to_json(), t);
    }
}
