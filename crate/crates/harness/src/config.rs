//! Experiment configuration.
//!
//! A config is a TOML document with top-level `experiment`, `seeds` and
//! `output_dir` keys plus one table per concern. Each experiment starts
//! from a built-in preset; a file only overrides what it names. Tables
//! the experiment does not read and unknown keys are both rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use ipslab::flow::Integrator;
use ipslab::grid::{EqualRewardGrid, GridSpec};
use ipslab::trainer::{Algorithm, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

fn bad(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    BanditFlow,
    BanditStochastic,
    Hypergrid,
    EqualReward,
    Ablation,
    OracleDump,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::BanditFlow => "bandit-flow",
            Experiment::BanditStochastic => "bandit-stochastic",
            Experiment::Hypergrid => "hypergrid",
            Experiment::EqualReward => "equal-reward",
            Experiment::Ablation => "ablation",
            Experiment::OracleDump => "oracle-dump",
        }
    }

    /// Tables this experiment reads; everything else is rejected.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            Experiment::BanditFlow => &["flow"],
            Experiment::BanditStochastic => &["stochastic"],
            Experiment::Hypergrid => &["grid", "train", "eval"],
            Experiment::EqualReward => &["equal_reward", "train", "eval"],
            Experiment::Ablation => &["grid", "train", "ablation", "eval"],
            Experiment::OracleDump => &["grid"],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainer settings shared by both algorithms; the algorithm and seed are
/// filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub group_size: usize,
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub updates: usize,
    pub ppo_clip: bool,
    pub ppo_clip_ratio: f64,
    pub inner_epochs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            group_size: d.group_size,
            clip_eps: d.clip_eps,
            learning_rate: d.learning_rate,
            entropy_coef: d.entropy_coef,
            kl_coef: d.kl_coef,
            updates: 3000,
            ppo_clip: true,
            ppo_clip_ratio: d.ppo_clip_ratio.unwrap_or(0.2),
            inner_epochs: d.inner_epochs,
        }
    }
}

impl TrainSection {
    pub fn to_train(&self, algorithm: Algorithm, seed: u64) -> TrainConfig {
        TrainConfig {
            algorithm,
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            learning_rate: self.learning_rate,
            entropy_coef: self.entropy_coef,
            kl_coef: self.kl_coef,
            updates: self.updates,
            seed,
            ppo_clip_ratio: self.ppo_clip.then_some(self.ppo_clip_ratio),
            inner_epochs: self.inner_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    pub rewards: Vec<f64>,
    /// Shared by every seed when given; otherwise uniform plus seeded noise.
    pub init_logits: Option<Vec<f64>>,
    pub init_noise: f64,
    pub step_size: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub collapse_threshold: f64,
    pub identity_tol: f64,
    /// Pairs whose probabilities drop below this are left out of the identity check.
    pub min_prob: f64,
    pub potential_tol: f64,
    /// Keep every n-th step in the trace CSV.
    pub record_every: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        Self {
            rewards: vec![2.0, 1.0, 1.0],
            init_logits: None,
            init_noise: 1e-3,
            step_size: 1e-3,
            horizon: 100.0,
            integrator: Integrator::Rk4,
            collapse_threshold: 0.99,
            identity_tol: 1e-6,
            min_prob: 1e-6,
            potential_tol: 1e-10,
            record_every: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StochasticSection {
    pub rewards: Vec<f64>,
    pub init_logits: Option<Vec<f64>>,
    pub init_noise: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub updates: usize,
    pub clip_eps: f64,
    pub baseline: bool,
    /// Expected-return runs count as collapsed when `max p` reaches this.
    pub collapse_threshold: f64,
    /// IPS runs count as on target within this ℓ1 of `r / Σ r`.
    pub target_l1: f64,
    /// Fraction of seeds each side must satisfy.
    pub min_pass_fraction: f64,
    pub record_every: usize,
}

impl Default for StochasticSection {
    fn default() -> Self {
        Self {
            rewards: vec![1.0; 4],
            init_logits: None,
            init_noise: 1e-3,
            group_size: 8,
            learning_rate: 0.45,
            updates: 5000,
            clip_eps: 0.1,
            baseline: false,
            collapse_threshold: 0.95,
            target_l1: 0.2,
            min_pass_fraction: 0.8,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub group_sizes: Vec<usize>,
    pub clip_eps: Vec<f64>,
    /// Add an `ε = 1` column and compare it bit for bit with plain GRPO.
    pub reduction_check: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self { group_sizes: vec![4, 8, 16, 32, 64], clip_eps: vec![0.01, 0.1, 0.2], reduction_check: true }
    }
}

/// Evaluation budgets and pass thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Samples behind the sampled ℓ1 and density estimates.
    pub samples: usize,
    /// Samples drawn from each trained policy when counting recovered modes.
    pub recovery_budget: usize,
    /// Required ratio of GRPO's to IPS-GRPO's median final ℓ1.
    pub min_l1_ratio: f64,
    pub recovery_check: bool,
    /// Mode frequency GRPO must reach on the equal-reward grid.
    pub collapse_freq: f64,
    /// Band every goal frequency must stay in under IPS-GRPO.
    pub balance_band: [f64; 2],
    /// Trailing fraction of training averaged for the frequency checks.
    pub final_fraction: f64,
    /// Updates per path-exploration window.
    pub exploration_window: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            recovery_budget: 1024,
            min_l1_ratio: 3.0,
            recovery_check: true,
            collapse_freq: 0.95,
            balance_band: [0.35, 0.65],
            final_fraction: 0.25,
            exploration_window: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equal_reward: Option<EqualRewardGrid>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
}

/// Only used to surface unknown keys with line numbers before merging.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct FileShape {
    experiment: Option<Experiment>,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    grid: Option<GridSpec>,
    train: Option<TrainSection>,
    flow: Option<FlowSection>,
    stochastic: Option<StochasticSection>,
    equal_reward: Option<EqualRewardGrid>,
    ablation: Option<AblationSection>,
    eval: Option<EvalSection>,
}

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

impl ExperimentConfig {
    /// The built-in configuration of an experiment.
    pub fn preset(experiment: Experiment) -> Self {
        let mut cfg = Self {
            experiment,
            seeds: DEFAULT_SEEDS.to_vec(),
            output_dir: PathBuf::from("out").join(experiment.name()),
            grid: None,
            train: None,
            flow: None,
            stochastic: None,
            equal_reward: None,
            ablation: None,
            eval: None,
        };
        match experiment {
            Experiment::BanditFlow => cfg.flow = Some(FlowSection::default()),
            Experiment::BanditStochastic => {
                cfg.stochastic = Some(StochasticSection::default());
                cfg.seeds = (1..=20).collect();
            }
            Experiment::Hypergrid => {
                cfg.grid = Some(GridSpec::default());
                cfg.train = Some(TrainSection::default());
                cfg.eval = Some(EvalSection::default());
            }
            Experiment::EqualReward => {
                cfg.equal_reward = Some(EqualRewardGrid::default());
                // A fast, lightly regularized schedule lets GRPO finish its
                // drift before the dead-end mass (and with it every nonzero
                // advantage) vanishes.
                cfg.train = Some(TrainSection {
                    learning_rate: 5.0,
                    entropy_coef: 0.001,
                    updates: 2000,
                    ..TrainSection::default()
                });
                cfg.eval = Some(EvalSection::default());
            }
            Experiment::Ablation => {
                cfg.grid = Some(GridSpec::default());
                cfg.train = Some(TrainSection::default());
                cfg.ablation = Some(AblationSection::default());
                cfg.eval = Some(EvalSection::default());
            }
            Experiment::OracleDump => cfg.grid = Some(GridSpec::default()),
        }
        cfg
    }

    /// Reads `path` and merges it over the preset of `experiment`.
    pub fn load(path: &Path, experiment: Experiment) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, experiment).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: path.to_path_buf(), message },
            other => other,
        })
    }

    pub fn from_toml(text: &str, experiment: Experiment) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse { path: PathBuf::from("<config>"), message };
        let shape: FileShape = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if let Some(named) = shape.experiment {
            if named != experiment {
                return Err(bad("experiment", format!("file is for `{named}` but `{experiment}` was requested")));
            }
        }
        let file: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        for (key, value) in &file {
            if value.is_table() && !experiment.sections().contains(&key.as_str()) {
                return Err(bad(key, format!("section is not read by `{experiment}`")));
            }
        }

        let mut merged = toml::Table::try_from(Self::preset(experiment)).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, file);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let present = [
            ("grid", self.grid.is_some()),
            ("train", self.train.is_some()),
            ("flow", self.flow.is_some()),
            ("stochastic", self.stochastic.is_some()),
            ("equal_reward", self.equal_reward.is_some()),
            ("ablation", self.ablation.is_some()),
            ("eval", self.eval.is_some()),
        ];
        for (name, is_some) in present {
            let wanted = self.experiment.sections().contains(&name);
            if is_some && !wanted {
                return Err(bad(name, format!("section is not read by `{}`", self.experiment)));
            }
            if wanted && !is_some {
                return Err(bad(name, format!("section is required by `{}`", self.experiment)));
            }
        }
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(|e| bad("grid", e.to_string()))?;
        }
        if let Some(t) = &self.train {
            t.to_train(Algorithm::IpsGrpo, 0).validate().map_err(|e| bad("train", e.to_string()))?;
        }
        if let Some(e) = &self.equal_reward {
            e.validate().map_err(|err| bad("equal_reward", err.to_string()))?;
        }
        if let Some(f) = &self.flow {
            if f.rewards.len() < 2 {
                return Err(bad("flow.rewards", "need at least two outcomes"));
            }
            if let Some(z) = &f.init_logits {
                if z.len() != f.rewards.len() {
                    return Err(bad("flow.init_logits", "length differs from flow.rewards"));
                }
            }
            if !(f.step_size > 0.0 && f.step_size <= f.horizon) {
                return Err(bad("flow.step_size", "must lie in (0, horizon]"));
            }
            if !(f.collapse_threshold > 0.0 && f.collapse_threshold < 1.0) {
                return Err(bad("flow.collapse_threshold", "must lie in (0, 1)"));
            }
            if f.record_every == 0 {
                return Err(bad("flow.record_every", "must be >= 1"));
            }
        }
        if let Some(s) = &self.stochastic {
            if s.rewards.len() < 2 {
                return Err(bad("stochastic.rewards", "need at least two outcomes"));
            }
            if let Some(z) = &s.init_logits {
                if z.len() != s.rewards.len() {
                    return Err(bad("stochastic.init_logits", "length differs from stochastic.rewards"));
                }
            }
            if s.group_size == 0 || s.updates == 0 {
                return Err(bad("stochastic", "group_size and updates must be >= 1"));
            }
            if !(s.clip_eps > 0.0 && s.clip_eps <= 1.0) {
                return Err(bad("stochastic.clip_eps", "must lie in (0, 1]"));
            }
            if !(s.learning_rate > 0.0) {
                return Err(bad("stochastic.learning_rate", "must be positive"));
            }
            if s.record_every == 0 {
                return Err(bad("stochastic.record_every", "must be >= 1"));
            }
        }
        if let Some(a) = &self.ablation {
            if a.group_sizes.is_empty() || a.clip_eps.is_empty() {
                return Err(bad("ablation", "group_sizes and clip_eps must be nonempty"));
            }
            if a.group_sizes.contains(&0) {
                return Err(bad("ablation.group_sizes", "group sizes must be >= 1"));
            }
            if a.clip_eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
                return Err(bad("ablation.clip_eps", "every ε must lie in (0, 1]"));
            }
        }
        if let Some(e) = &self.eval {
            if e.samples == 0 || e.recovery_budget == 0 || e.exploration_window == 0 {
                return Err(bad("eval", "samples, recovery_budget and exploration_window must be >= 1"));
            }
            if !(e.final_fraction > 0.0 && e.final_fraction <= 1.0) {
                return Err(bad("eval.final_fraction", "must lie in (0, 1]"));
            }
            if e.balance_band[0] > e.balance_band[1] {
                return Err(bad("eval.balance_band", "lower bound exceeds upper bound"));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON of everything
    /// except `output_dir`, so equal settings hash equally wherever they write.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn grid(&self) -> &GridSpec {
        self.grid.as_ref().expect("validated")
    }
    pub fn train(&self) -> &TrainSection {
        self.train.as_ref().expect("validated")
    }
    pub fn eval(&self) -> &EvalSection {
        self.eval.as_ref().expect("validated")
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parses `1,2,5` and inclusive ranges `1-5`, in any combination.
pub fn parse_seeds(list: &str) -> Result<Vec<u64>, ConfigError> {
    let mut seeds = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad("--seeds", format!("`{part}` is not a seed or range")));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(bad("--seeds", format!("empty range `{part}`")));
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(num(part)?),
        }
    }
    if seeds.is_empty() {
        return Err(bad("--seeds", "no seeds given"));
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for e in [
            Experiment::BanditFlow,
            Experiment::BanditStochastic,
            Experiment::Hypergrid,
            Experiment::EqualReward,
            Experiment::Ablation,
            Experiment::OracleDump,
        ] {
            ExperimentConfig::preset(e).validate().unwrap();
        }
    }

    #[test]
    fn file_overrides_merge_over_preset() {
        let cfg = ExperimentConfig::from_toml("seeds = [7]\n[train]\nupdates = 10\n", Experiment::Hypergrid).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.train().updates, 10);
        assert_eq!(cfg.train().group_size, 16);
        assert_eq!(cfg.grid().h, 8);
    }

    #[test]
    fn unknown_keys_and_foreign_sections_are_fatal() {
        let e = ExperimentConfig::from_toml("[train]\nupdate = 10\n", Experiment::Hypergrid).unwrap_err();
        assert!(e.to_string().contains("update"), "{e}");
        let e = ExperimentConfig::from_toml("[flow]\nhorizon = 1.0\n", Experiment::Hypergrid).unwrap_err();
        assert!(e.to_string().starts_with("flow:"), "{e}");
        let e = ExperimentConfig::from_toml("experiment = \"oracle-dump\"\n", Experiment::Hypergrid).unwrap_err();
        assert!(e.to_string().starts_with("experiment:"), "{e}");
        let e = ExperimentConfig::from_toml("[grid]\nr1 = 0.01\n", Experiment::Hypergrid).unwrap_err();
        assert!(e.to_string().starts_with("grid:"), "{e}");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::preset(Experiment::Hypergrid);
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![9];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("1-3,7").unwrap(), vec![1, 2, 3, 7]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("x").is_err());
        assert!(parse_seeds("").is_err());
    }
}
