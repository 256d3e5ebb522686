//! Run configuration: named profiles, TOML parsing with profile defaults,
//! environment overrides and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::airspace::{ObservationConfig, ScenarioConfig};
use crate::ddpg::DdpgHyperparams;
use crate::error::{Error, Result};
use crate::evaluation::{ScenarioKind, ScenarioSpec};
use crate::optim::OptimizerKind;
use crate::rewards::{RewardConfig, ShapingMode};
use crate::training::{StageInit, StageSpec, TrainingContext};

pub const ENV_OUTPUT_DIR: &str = "UAM_OUTPUT_DIR";
pub const ENV_SEED: &str = "UAM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    DeskScale,
    PaperScale,
    /// Desk defaults, expected to be overridden.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub single_ppz: ScenarioSpec,
    pub capacity: ScenarioSpec,
    pub capacity_n: Vec<usize>,
    /// Single-PPZ trial whose trajectory is exported.
    pub traced_trial: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            single_ppz: ScenarioSpec {
                kind: ScenarioKind::SinglePpz,
                trials: 50,
                ..ScenarioSpec::default()
            },
            capacity: ScenarioSpec {
                kind: ScenarioKind::MultiUav,
                trials: 100,
                ..ScenarioSpec::default()
            },
            capacity_n: vec![1, 2, 4, 6, 8, 10],
            traced_trial: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Rolling-rate window (episodes).
    pub window: usize,
    pub checkpoint_every: usize,
    pub reward: RewardConfig,
    pub ddpg: DdpgHyperparams,
    pub observation: ObservationConfig,
    pub stages: Vec<StageSpec>,
    pub evaluation: EvaluationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

fn curriculum(template: &ScenarioConfig, episodes: [usize; 3]) -> Vec<StageSpec> {
    let stage = |name: &str, statics, dynamics, ppzs, episodes, init| StageSpec {
        name: name.into(),
        scenario: ScenarioConfig {
            statics,
            dynamics,
            ppzs,
            ..template.clone()
        },
        reward_mode: ShapingMode::Dot,
        episodes,
        init,
    };
    vec![
        stage("free", 0, 0, 0, episodes[0], StageInit::Random),
        stage("obstacles", 3, 0, 3, episodes[1], StageInit::Previous),
        stage("dense", 18, 2, 3, episodes[2], StageInit::Previous),
    ]
}

impl RunConfig {
    /// Small networks in a 4 km world; trains in minutes on one core.
    pub fn desk_scale() -> Self {
        let template = ScenarioConfig {
            bounds: 4000.0,
            max_steps: 300,
            ..ScenarioConfig::default()
        };
        Self {
            profile: Profile::DeskScale,
            master_seed: 0,
            output_dir: PathBuf::from("runs/desk"),
            window: 100,
            checkpoint_every: 500,
            reward: RewardConfig::default(),
            ddpg: DdpgHyperparams {
                hidden_layers: vec![64, 64],
                optimizer: OptimizerKind::Adam,
                ..DdpgHyperparams::default()
            },
            // keep the 4 km scaling when flying in larger evaluation worlds
            observation: ObservationConfig {
                scale: Some(template.bounds),
                ..ObservationConfig::default()
            },
            stages: curriculum(&template, [1500, 1500, 1500]),
            evaluation: EvaluationConfig::default(),
        }
    }

    /// The published hyperparameters in a 10 km world.
    pub fn paper_scale() -> Self {
        let template = ScenarioConfig::default();
        Self {
            profile: Profile::PaperScale,
            output_dir: PathBuf::from("runs/paper"),
            ddpg: DdpgHyperparams {
                discount: 0.9,
                tau: 1.0,
                lr_critic: 5e-4,
                lr_actor: 5e-5,
                buffer_capacity: 10_000_000,
                hidden_layers: vec![300, 400],
                optimizer: OptimizerKind::Sgd,
                ..DdpgHyperparams::default()
            },
            observation: ObservationConfig::default(),
            stages: curriculum(&template, [2000, 15_000, 15_000]),
            ..Self::desk_scale()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::DeskScale => Self::desk_scale(),
            Profile::PaperScale => Self::paper_scale(),
            Profile::Custom => Self {
                profile: Profile::Custom,
                ..Self::desk_scale()
            },
        }
    }

    /// Range checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let out_of_range = |key: String, reason: String| Error::ConfigOutOfRange { key, reason };
        if self.window == 0 {
            return Err(out_of_range("window".into(), "must be at least 1".into()));
        }
        self.ddpg
            .check()
            .map_err(|(k, r)| out_of_range(format!("ddpg.{k}"), r))?;
        self.reward
            .check()
            .map_err(|(k, r)| out_of_range(format!("reward.{k}"), r))?;
        self.observation.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => {
                out_of_range(format!("observation.{name}"), reason)
            }
            other => other,
        })?;
        if self.stages.is_empty() {
            return Err(out_of_range("stages".into(), "at least one stage is required".into()));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let key = |k: &str| format!("stages[{i}].{k}");
            if stage.episodes == 0 {
                return Err(out_of_range(key("episodes"), "must be at least 1".into()));
            }
            stage.scenario.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => {
                    out_of_range(key(&format!("scenario.{name}")), reason)
                }
                other => other,
            })?;
            match &stage.init {
                StageInit::Previous if i == 0 => {
                    return Err(out_of_range(
                        key("init"),
                        "the first stage has no previous stage".into(),
                    ))
                }
                StageInit::FromCheckpoint(p) if !p.is_file() => {
                    return Err(out_of_range(
                        key("init"),
                        format!("checkpoint {} does not exist", p.display()),
                    ))
                }
                _ => {}
            }
        }
        for (name, spec) in [
            ("single_ppz", &self.evaluation.single_ppz),
            ("capacity", &self.evaluation.capacity),
        ] {
            spec.check()
                .map_err(|(k, r)| out_of_range(format!("evaluation.{name}.{k}"), r))?;
            if let Some(p) = &spec.checkpoint {
                if !p.is_file() {
                    return Err(out_of_range(
                        format!("evaluation.{name}.checkpoint"),
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        if self.evaluation.capacity_n.iter().any(|&n| n == 0) {
            return Err(out_of_range(
                "evaluation.capacity_n".into(),
                "fleet sizes must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigSyntax(e.to_string()))
    }

    /// Context for stage `index` of this run.
    pub fn training_context(&self, index: usize) -> TrainingContext {
        TrainingContext {
            master_seed: self.master_seed,
            stage_index: index,
            hyper: self.ddpg.clone(),
            reward: self.reward,
            observation: self.observation,
            window: self.window,
            checkpoint_dir: Some(self.output_dir.clone()),
            checkpoint_every: self.checkpoint_every,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for stage in &mut self.stages {
            if let StageInit::FromCheckpoint(p) = &mut stage.init {
                resolve(p);
            }
        }
        for spec in [&mut self.evaluation.single_ppz, &mut self.evaluation.capacity] {
            if let Some(p) = spec.checkpoint.as_mut() {
                resolve(p);
            }
        }
    }
}

/// Overlay `user` onto `base`; tables merge key by key, anything else is
/// replaced.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.split("unknown field `").nth(1)?;
    Some(rest.split('`').next()?.to_string())
}

/// Parse TOML text onto the defaults of the profile it names. Relative
/// checkpoint paths resolve against `base_dir`. No environment overrides.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let user: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::ConfigSyntax(e.to_string()))?;
    let profile = match user.get("profile") {
        None => Profile::default(),
        Some(v) => Profile::deserialize(v.clone())
            .map_err(|e| Error::ConfigSyntax(format!("profile: {}", e.message())))?,
    };
    let defaults = RunConfig::for_profile(profile);
    let mut table = toml::Table::try_from(&defaults)
        .map_err(|e| Error::ConfigSyntax(e.to_string()))?;
    merge(&mut table, user);
    let mut cfg = RunConfig::deserialize(toml::Value::Table(table)).map_err(|e| {
        match unknown_key(e.message()) {
            Some(k) => Error::ConfigUnknownKey(k),
            None => Error::ConfigSyntax(e.message().to_string()),
        }
    })?;
    cfg.resolve_paths(base_dir);
    cfg.validate()?;
    Ok(cfg)
}

/// Apply output-directory and seed overrides from `lookup`.
pub fn apply_env_overrides(
    cfg: &mut RunConfig,
    lookup: impl Fn(&str) -> Option<String>,
) -> Result<()> {
    if let Some(dir) = lookup(ENV_OUTPUT_DIR) {
        cfg.output_dir = PathBuf::from(dir);
    }
    if let Some(seed) = lookup(ENV_SEED) {
        cfg.master_seed = seed.trim().parse().map_err(|_| Error::ConfigOutOfRange {
            key: ENV_SEED.into(),
            reason: format!("`{seed}` is not an unsigned integer"),
        })?;
    }
    Ok(())
}

/// Read, parse and validate a config file, then apply environment
/// overrides.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    if !path.is_file() {
        return Err(Error::ConfigMissing(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut cfg = parse_config_str(&text, base)?;
    apply_env_overrides(&mut cfg, |k| std::env::var(k).ok())?;
    Ok(cfg)
}

// Manifest

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageArtifacts {
    pub name: String,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Record of one invocation: the effective config and every file written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub config: RunConfig,
    pub stages: Vec<StageArtifacts>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn begin(command: impl Into<String>, config: &RunConfig) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.into(),
            started_unix: unix_seconds(),
            finished_unix: None,
            config: config.clone(),
            stages: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Stamp the end time and write `manifest.json` into `dir`. Fails if
    /// any listed artifact is missing.
    pub fn finalize(&mut self, dir: &Path) -> Result<PathBuf> {
        let listed = self
            .stages
            .iter()
            .flat_map(|s| [&s.checkpoint, &s.metrics])
            .chain(&self.outputs);
        for p in listed {
            if !p.exists() {
                return Err(Error::io(
                    "finalizing manifest",
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("{} was not written", p.display()),
                    ),
                ));
            }
        }
        self.finished_unix = Some(unix_seconds());
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }
}
