//! Resolves configuration strings into environments, agent-state
//! processes, policies and feature maps.

use std::path::Path;

use aliased_ac::agent_state::AgentStateSpec;
use aliased_ac::features::FeatureMap;
use aliased_ac::oracles::{brute_force_optimal, DEFAULT_ENUMERATION_CAP};
use aliased_ac::{AgentPolicy, AgentStateProcess, CriticMode, Pomdp};

use crate::cache::cached;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Runtime, Validate};

/// Everything a run needs, built once per configuration.
#[derive(Debug, Clone)]
pub struct Setup {
    pub pomdp: Pomdp<f64>,
    pub asp: AgentStateProcess<f64>,
    pub policy: AgentPolicy<f64>,
    pub mode: CriticMode,
    pub critic_features: FeatureMap<f64>,
    pub policy_features: FeatureMap<f64>,
    /// Canonical description of the environment and agent state, used as a
    /// cache key.
    pub identity: String,
}

fn looks_like_path(s: &str) -> bool {
    s.contains('/') || s.contains('\\') || s.ends_with(".json") || s.ends_with(".csv")
}

fn read_file(kind: &str, s: &str) -> CliResult<String> {
    std::fs::read_to_string(Path::new(s)).map_err(|e| CliError::validation(format!("cannot read {kind} file {s}: {e}")))
}

pub fn load_pomdp(spec: &str, gamma: Option<f64>) -> CliResult<Pomdp<f64>> {
    let base = match spec {
        "tiger" => Pomdp::builtin_tiger(0.9).invalid()?,
        s if looks_like_path(s) || Path::new(s).exists() => {
            Pomdp::from_json(&read_file("POMDP", s)?).map_err(|e| CliError::validation(format!("{s}: {e}")))?
        }
        s => return Err(CliError::validation(format!("unknown POMDP {s:?}: use tiger or a JSON path"))),
    };
    match gamma {
        Some(g) => base.with_gamma(g).invalid(),
        None => Ok(base),
    }
}

/// Returns the (possibly wrapped) POMDP with its agent-state process.
pub fn load_agent_state(spec: &str, pomdp: &Pomdp<f64>) -> CliResult<(Pomdp<f64>, AgentStateProcess<f64>, String)> {
    let (parsed, text) = match spec {
        "last_obs" => (AgentStateSpec::from_json(r#"{"kind":"last_obs"}"#).invalid()?, spec.to_string()),
        "state_revealing" => (AgentStateSpec::from_json(r#"{"kind":"state_revealing"}"#).invalid()?, spec.to_string()),
        s if s.starts_with("window:") => {
            let k: usize = s["window:".len()..]
                .parse()
                .map_err(|_| CliError::validation(format!("bad window length in {s:?}")))?;
            (AgentStateSpec::from_json(&format!(r#"{{"kind":"window","k":{k}}}"#)).invalid()?, spec.to_string())
        }
        s if looks_like_path(s) || Path::new(s).exists() => {
            let text = read_file("agent-state", s)?;
            (AgentStateSpec::from_json(&text).map_err(|e| CliError::validation(format!("{s}: {e}")))?, text)
        }
        s => {
            return Err(CliError::validation(format!(
                "unknown agent state {s:?}: use last_obs, window:K, state_revealing or a JSON path"
            )))
        }
    };
    let (p, m) = parsed.build(pomdp).invalid()?;
    Ok((p, m, text))
}

/// Brute-force optimum over deterministic agent-state policies, cached when
/// the cache is enabled.
pub fn optimal_policy(
    pomdp: &Pomdp<f64>,
    asp: &AgentStateProcess<f64>,
    identity: &str,
) -> CliResult<(AgentPolicy<f64>, f64)> {
    let (json, j): (String, f64) = cached(&["optimal", identity], || {
        let (pi, j) = brute_force_optimal(pomdp, asp, DEFAULT_ENUMERATION_CAP).failed()?;
        Ok::<_, CliError>((pi.to_json(), j))
    })?;
    Ok((AgentPolicy::from_json(&json).failed()?, j))
}

pub fn load_policy(
    spec: &str,
    pomdp: &Pomdp<f64>,
    asp: &AgentStateProcess<f64>,
    identity: &str,
) -> CliResult<AgentPolicy<f64>> {
    let (nz, na) = (asp.n_agent_states(), pomdp.n_actions());
    let policy = match spec {
        "uniform" => AgentPolicy::uniform(nz, na),
        "optimal" => optimal_policy(pomdp, asp, identity)?.0,
        s if s.ends_with("_always") => {
            let name = &s[..s.len() - "_always".len()];
            let a = action_by_name(pomdp, name)?;
            AgentPolicy::constant(nz, na, a)
        }
        s if looks_like_path(s) || Path::new(s).exists() => {
            AgentPolicy::from_json(&read_file("policy", s)?).map_err(|e| CliError::validation(format!("{s}: {e}")))?
        }
        s => {
            return Err(CliError::validation(format!(
                "unknown policy {s:?}: use uniform, optimal, <action>_always or a JSON path"
            )))
        }
    };
    if policy.n_agent_states() != nz || policy.n_actions() != na {
        return Err(CliError::validation(format!(
            "policy covers {}x{} agent states and actions, expected {nz}x{na}",
            policy.n_agent_states(),
            policy.n_actions()
        )));
    }
    Ok(policy)
}

fn action_by_name(pomdp: &Pomdp<f64>, name: &str) -> CliResult<usize> {
    if let Ok(i) = name.parse::<usize>() {
        if i < pomdp.n_actions() {
            return Ok(i);
        }
    }
    pomdp
        .labels()
        .and_then(|l| l.actions.iter().position(|a| a.eq_ignore_ascii_case(name)))
        .ok_or_else(|| CliError::validation(format!("unknown action {name:?}")))
}

/// `tabular`, `random:DIM:SEED` or a CSV path with `n_rows` rows.
pub fn load_features(spec: &str, n_rows: usize) -> CliResult<FeatureMap<f64>> {
    match spec {
        "tabular" => Ok(FeatureMap::tabular(n_rows)),
        s if s.starts_with("random:") => {
            let parts: Vec<&str> = s.split(':').collect();
            let parse = |x: &str| {
                x.parse::<u64>()
                    .map_err(|_| CliError::validation(format!("bad feature spec {s:?}: use random:DIM:SEED")))
            };
            if parts.len() != 3 {
                return Err(CliError::validation(format!("bad feature spec {s:?}: use random:DIM:SEED")));
            }
            FeatureMap::random(n_rows, parse(parts[1])? as usize, parse(parts[2])?).invalid()
        }
        s if looks_like_path(s) || Path::new(s).exists() => {
            let text = read_file("feature", s)?;
            let dim = text.lines().find(|l| !l.trim().is_empty()).map_or(0, |l| l.split(',').count());
            FeatureMap::from_csv(&text, n_rows, dim).map_err(|e| CliError::validation(format!("{s}: {e}")))
        }
        s => {
            Err(CliError::validation(format!("unknown feature map {s:?}: use tabular, random:DIM:SEED or a CSV path")))
        }
    }
}

impl Setup {
    pub fn new(cfg: &ExperimentConfig) -> CliResult<Self> {
        cfg.validate()?;
        let mode = cfg.critic_mode()?;
        let base = load_pomdp(&cfg.pomdp, cfg.gamma)?;
        let (pomdp, asp, asp_text) = load_agent_state(&cfg.agent_state, &base)?;
        let identity = format!("{}\n{}", pomdp.to_json(), asp_text);
        let policy = load_policy(&cfg.policy, &pomdp, &asp, &identity)?;
        let (ns, nz, na) = (pomdp.n_states(), asp.n_agent_states(), pomdp.n_actions());
        let critic_rows = match mode {
            CriticMode::Asymmetric => ns * nz * na,
            CriticMode::Symmetric => nz * na,
        };
        let critic_features = load_features(&cfg.features.critic, critic_rows)?;
        let policy_features = load_features(&cfg.features.policy, nz * na)?;
        Ok(Self { pomdp, asp, policy, mode, critic_features, policy_features, identity })
    }

    pub fn with_mode(&self, cfg: &ExperimentConfig, mode: CriticMode) -> CliResult<Self> {
        let mut c = cfg.clone();
        c.mode = mode.as_str().into();
        let mut s = self.clone();
        let (ns, nz, na) = (self.pomdp.n_states(), self.asp.n_agent_states(), self.pomdp.n_actions());
        let rows = match mode {
            CriticMode::Asymmetric => ns * nz * na,
            CriticMode::Symmetric => nz * na,
        };
        s.critic_features = load_features(&c.features.critic, rows)?;
        s.mode = mode;
        Ok(s)
    }

    /// Label of agent state `z`, taken from the observation names for
    /// last-observation processes.
    pub fn agent_state_label(&self, z: usize) -> String {
        use aliased_ac::AgentStateKind;
        match (self.asp.kind(), self.pomdp.labels()) {
            (AgentStateKind::LastObservation, Some(l)) => l.observations[z].clone(),
            (AgentStateKind::StateRevealing, Some(l)) if z < l.states.len() => l.states[z].clone(),
            _ => format!("z{z}"),
        }
    }

    pub fn state_label(&self, s: usize) -> String {
        self.pomdp.labels().map_or_else(|| format!("s{s}"), |l| l.states[s].clone())
    }

    pub fn action_label(&self, a: usize) -> String {
        self.pomdp.labels().map_or_else(|| format!("a{a}"), |l| l.actions[a].clone())
    }
}
