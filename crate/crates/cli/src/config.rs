//! TOML experiment configuration and its flag overrides.

use std::path::{Path, PathBuf};

use aliased_ac::CriticMode;
use serde::Deserialize;

use crate::error::{CliError, CliResult, Validate};

/// Largest number of grid points a sweep may expand to.
pub const MAX_GRID_POINTS: usize = 10_000;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// `tiger` or a path to a POMDP JSON file.
    pub pomdp: String,
    /// Overrides the discount stored with the POMDP.
    pub gamma: Option<f64>,
    /// `last_obs`, `window:K`, `state_revealing` or a JSON path.
    pub agent_state: String,
    /// `uniform`, `<action>_always`, `optimal` or a JSON path.
    pub policy: String,
    pub mode: String,
    /// Master seed.
    pub seed: u64,
    /// Seed indices; each run draws from `derive_seed(seed, grid, index)`.
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
    pub features: FeatureConfig,
    pub td: TdSection,
    pub nac: NacSection,
    pub bounds: BoundsSection,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// `tabular`, `random:DIM:SEED` or a CSV path.
    pub critic: String,
    pub policy: String,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TdSection {
    pub k: usize,
    pub m: usize,
    pub radius: f64,
    /// Defaults to `1/√K`.
    pub alpha: Option<f64>,
    /// Trace rows are kept every this many updates; defaults to `K/100`.
    pub error_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NacSection {
    pub outer: usize,
    pub inner: usize,
    pub critic_updates: usize,
    pub m: usize,
    pub radius: f64,
    pub eta: Option<f64>,
    pub zeta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsSection {
    pub horizon: usize,
    pub node_cap: usize,
    /// Enables the sampled fallback when enumeration exceeds `node_cap`.
    pub monte_carlo_samples: Option<usize>,
    /// Also assemble the actor bound from NAC runs.
    pub actor: bool,
}

#[derive(Debug, Clone, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// `td`, `nac` or `bounds`.
    pub command: String,
    pub k: Option<Vec<usize>>,
    pub n: Option<Vec<usize>>,
    pub t: Option<Vec<usize>>,
    pub m: Option<Vec<usize>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pomdp: "tiger".into(),
            gamma: None,
            agent_state: "last_obs".into(),
            policy: "uniform".into(),
            mode: "asym".into(),
            seed: 0,
            seeds: vec![0],
            jobs: 1,
            out: None,
            features: FeatureConfig::default(),
            td: TdSection::default(),
            nac: NacSection::default(),
            bounds: BoundsSection::default(),
            sweep: None,
        }
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { critic: "tabular".into(), policy: "tabular".into() }
    }
}

impl Default for TdSection {
    fn default() -> Self {
        Self { k: 10_000, m: 1, radius: 15.0, alpha: None, error_every: None }
    }
}

impl Default for NacSection {
    fn default() -> Self {
        Self { outer: 50, inner: 2000, critic_updates: 50_000, m: 1, radius: 25.0, eta: None, zeta: None }
    }
}

impl Default for BoundsSection {
    fn default() -> Self {
        Self {
            horizon: aliased_ac::bounds::DEFAULT_HORIZON,
            node_cap: aliased_ac::bounds::DEFAULT_NODE_CAP,
            monte_carlo_samples: None,
            actor: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub jobs: Option<usize>,
    pub pomdp: Option<String>,
    pub gamma: Option<f64>,
    pub policy: Option<String>,
    pub agent_state: Option<String>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub radius: Option<f64>,
    pub outer: Option<usize>,
    pub inner: Option<usize>,
    pub critic_updates: Option<usize>,
    pub horizon: Option<usize>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).invalid()
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(o.seed => self.seed);
        set!(o.mode => self.mode);
        set!(o.jobs => self.jobs);
        set!(o.pomdp => self.pomdp);
        set!(o.policy => self.policy);
        set!(o.agent_state => self.agent_state);
        set!(o.k => self.td.k);
        set!(o.m => self.td.m);
        set!(o.radius => self.td.radius);
        set!(o.outer => self.nac.outer);
        set!(o.inner => self.nac.inner);
        set!(o.critic_updates => self.nac.critic_updates);
        set!(o.horizon => self.bounds.horizon);
        if let Some(n) = o.seeds {
            self.seeds = (0..n as u64).collect();
        }
        if o.gamma.is_some() {
            self.gamma = o.gamma;
        }
        if o.out.is_some() {
            self.out = o.out.clone();
        }
        if let Some(m) = o.m {
            self.nac.m = m;
        }
        if let Some(r) = o.radius {
            self.nac.radius = r;
        }
    }

    pub fn critic_mode(&self) -> CliResult<CriticMode> {
        self.mode
            .parse::<CriticMode>()
            .map_err(|_| CliError::validation(format!("mode must be asym or sym, got {:?}", self.mode)))
    }

    /// Range checks that must pass before any run starts.
    pub fn validate(&self) -> CliResult<()> {
        self.critic_mode()?;
        let bad = |what: &str| Err(CliError::validation(what.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.jobs == 0 {
            return bad("jobs must be at least 1");
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return bad("gamma must lie in [0, 1)");
            }
        }
        if self.td.k == 0 || self.td.m == 0 {
            return bad("td.k and td.m must be at least 1");
        }
        if !(self.td.radius > 0.0) || !(self.nac.radius > 0.0) {
            return bad("radius must be positive");
        }
        if let Some(a) = self.td.alpha {
            if !(a > 0.0) || !a.is_finite() {
                return bad("td.alpha must be positive");
            }
        }
        if self.nac.outer == 0 || self.nac.inner == 0 || self.nac.critic_updates == 0 || self.nac.m == 0 {
            return bad("nac.outer, nac.inner, nac.critic_updates and nac.m must be at least 1");
        }
        for (name, v) in [("nac.eta", self.nac.eta), ("nac.zeta", self.nac.zeta)] {
            if let Some(x) = v {
                if !(x >= 0.0) || !x.is_finite() {
                    return bad(&format!("{name} must be non-negative"));
                }
            }
        }
        if self.bounds.node_cap == 0 {
            return bad("bounds.node_cap must be at least 1");
        }
        Ok(())
    }
}

/// One point of a sweep grid; unset axes keep the base configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GridPoint {
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub t: Option<usize>,
    pub m: Option<usize>,
}

impl GridPoint {
    pub fn apply(&self, cfg: &ExperimentConfig) -> ExperimentConfig {
        let mut c = cfg.clone();
        if let Some(k) = self.k {
            c.td.k = k;
            c.nac.critic_updates = k;
        }
        if let Some(n) = self.n {
            c.nac.inner = n;
        }
        if let Some(t) = self.t {
            c.nac.outer = t;
        }
        if let Some(m) = self.m {
            c.td.m = m;
            c.nac.m = m;
        }
        c
    }
}

impl SweepSection {
    /// Cartesian product in `k, n, t, m` order with `m` varying fastest.
    pub fn grid(&self) -> CliResult<Vec<GridPoint>> {
        let axes = [&self.k, &self.n, &self.t, &self.m];
        if axes.iter().all(|a| a.is_none()) {
            return Err(CliError::validation("sweep grid is empty: set at least one of k, n, t, m"));
        }
        let mut size = 1usize;
        for (name, axis) in ["k", "n", "t", "m"].iter().zip(axes) {
            if let Some(v) = axis {
                if v.is_empty() {
                    return Err(CliError::validation(format!("sweep grid is empty: axis {name} has no values")));
                }
                if v.contains(&0) {
                    return Err(CliError::validation(format!("sweep axis {name} must contain positive values")));
                }
                size = size.saturating_mul(v.len());
            }
        }
        if size > MAX_GRID_POINTS {
            return Err(CliError::validation(format!(
                "sweep grid has {size} points, above the limit of {MAX_GRID_POINTS}"
            )));
        }
        let opt = |a: &Option<Vec<usize>>| a.as_ref().map_or(vec![None], |v| v.iter().map(|&x| Some(x)).collect());
        let mut out = Vec::with_capacity(size);
        for &k in &opt(&self.k) {
            for &n in &opt(&self.n) {
                for &t in &opt(&self.t) {
                    for &m in &opt(&self.m) {
                        out.push(GridPoint { k, n, t, m });
                    }
                }
            }
        }
        Ok(out)
    }
}
