//! Episode loop, staged training with transfer, and rolling outcome rates.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::airspace::{
    build_observation, clamp_action, classify, nearest_entity_vector, sample_scenario,
    step_kinematics, EnvInstance, Observation, ObservationConfig, ScenarioConfig, Status,
};
use crate::ddpg::{Agent, DdpgHyperparams, LearnOutcome, StateVec, Transition};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rewards::{total_reward_full, total_reward_simple, RewardConfig, ShapingMode, StepContext};
use crate::seeding::{stage_index, stream_rng, SimRng, Stream};
use crate::trajectory::{TrajectoryLog, TrajectoryRow};

/// Anything that can fly a vehicle.
pub trait Policy {
    /// `features` is the normalized, flattened form of `obs`.
    fn act(
        &mut self,
        obs: &Observation,
        features: &StateVec,
        epsilon: f64,
        rng: &mut SimRng,
    ) -> Result<Vec2>;

    fn record(&mut self, _transition: Transition) {}

    fn learn(&mut self, _rng: &mut SimRng) -> Result<LearnOutcome> {
        Ok(LearnOutcome::Skipped { buffer_len: 0 })
    }
}

impl Policy for Agent {
    fn act(
        &mut self,
        _obs: &Observation,
        features: &StateVec,
        epsilon: f64,
        rng: &mut SimRng,
    ) -> Result<Vec2> {
        self.select_action(features, epsilon, rng)
    }

    fn record(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn learn(&mut self, rng: &mut SimRng) -> Result<LearnOutcome> {
        self.learn_step(rng)
    }
}

/// Greedy, frozen view of an agent.
pub struct Greedy<'a>(pub &'a Agent);

impl Policy for Greedy<'_> {
    fn act(&mut self, _: &Observation, features: &StateVec, _: f64, _: &mut SimRng) -> Result<Vec2> {
        self.0.act(features)
    }
}

/// Policy computed from the raw (meters, m/s) observation.
pub struct Scripted<F>(pub F);

impl<F: FnMut(&Observation) -> Vec2> Policy for Scripted<F> {
    fn act(&mut self, obs: &Observation, _: &StateVec, _: f64, _: &mut SimRng) -> Result<Vec2> {
        Ok((self.0)(obs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSettings {
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    pub epsilon: f64,
    pub learn: bool,
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub status: Status,
    pub steps: u32,
    pub cumulative_reward: f64,
    pub mean_critic_loss: Option<f64>,
    pub trajectory: Option<TrajectoryLog>,
}

fn nearest_obstacle(env: &EnvInstance, p: Vec2, t: f64) -> Option<(Vec2, f64)> {
    nearest_entity_vector(p, env.obstacles_at(t).into_iter().map(|(c, _)| c))
}

fn nearest_ppz(env: &EnvInstance, p: Vec2) -> Option<(Vec2, f64)> {
    nearest_entity_vector(p, env.ppzs.iter().map(|z| z.center))
}

fn has_entities(env: &EnvInstance) -> bool {
    !(env.statics.is_empty() && env.dynamics.is_empty() && env.ppzs.is_empty())
}

/// Reward for one step: the simple composition in entity-free worlds, the
/// full one otherwise.
pub fn step_reward(env: &EnvInstance, ctx: &StepContext, cfg: &RewardConfig) -> Result<f64> {
    if has_entities(env) {
        Ok(total_reward_full(ctx, cfg))
    } else {
        total_reward_simple(ctx, cfg)
    }
}

/// Fly one vehicle from the origin until a terminal status.
///
/// Each step: observe, act, clamp, integrate, classify against the
/// obstacles' positions at the new time, reward, store the transition and
/// (when `learn`) take one learning step. Timeouts are stored as
/// non-terminal so the critic still bootstraps through them.
pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    env: &EnvInstance,
    settings: &EpisodeSettings,
    rng: &mut SimRng,
    learn_rng: &mut SimRng,
) -> Result<EpisodeOutcome> {
    env.validate()?;
    let scale = settings.observation.scale_for(env);
    let mut u = env.initial_state();
    let mut obs = build_observation(env, &u, &settings.observation, &[]);
    let mut cumulative_reward = 0.0;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut trajectory = settings.record_trajectory.then(TrajectoryLog::default);
    loop {
        let features = obs.normalize(scale).features();
        let action = clamp_action(policy.act(&obs, &features, settings.epsilon, rng)?)?;
        let t = env.time_of(&u);
        let ctx_obstacle = nearest_obstacle(env, u.position, t);
        let ctx_ppz = nearest_ppz(env, u.position);

        let mut next = step_kinematics(&u, action, env.dt)?;
        next.status = classify(env, &next);
        let ctx = StepContext {
            prev_position: u.position,
            new_position: next.position,
            destination: env.destination,
            nearest_obstacle: ctx_obstacle,
            nearest_ppz: ctx_ppz,
            status: next.status,
        };
        let reward = step_reward(env, &ctx, &settings.reward)?;
        cumulative_reward += reward;

        let next_obs = build_observation(env, &next, &settings.observation, &[]);
        policy.record(Transition {
            state: features,
            action,
            reward,
            next_state: next_obs.normalize(scale).features(),
            terminal: next.status.is_terminal() && next.status != Status::Timeout,
        });
        if settings.learn {
            if let LearnOutcome::Updated { critic_loss, .. } = policy.learn(learn_rng)? {
                loss_sum += critic_loss;
                loss_count += 1;
            }
        }
        if let Some(log) = trajectory.as_mut() {
            let t_next = env.time_of(&next);
            log.push(TrajectoryRow::new(
                t_next,
                0,
                next.position,
                next.velocity,
                action,
                env.destination,
                nearest_obstacle(env, next.position, t_next).map(|(_, d)| d),
                nearest_ppz(env, next.position).map(|(_, d)| d),
            ));
        }
        u = next;
        obs = next_obs;
        if u.status.is_terminal() {
            break;
        }
    }
    Ok(EpisodeOutcome {
        status: u.status,
        steps: u.step_count,
        cumulative_reward,
        mean_critic_loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
        trajectory,
    })
}

// Rolling metrics

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct OutcomeRates {
    pub success: f64,
    pub collision: f64,
    pub ppz: f64,
    pub exit: f64,
    pub timeout: f64,
}

impl OutcomeRates {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a Status>) -> Self {
        let mut counts = [0usize; 5];
        let mut n = 0usize;
        for s in outcomes {
            n += 1;
            match s {
                Status::Success => counts[0] += 1,
                Status::Collision => counts[1] += 1,
                Status::PpzEntered => counts[2] += 1,
                Status::Exited => counts[3] += 1,
                Status::Timeout | Status::Flying => counts[4] += 1,
            }
        }
        if n == 0 {
            return Self::default();
        }
        let f = |c: usize| c as f64 / n as f64;
        Self {
            success: f(counts[0]),
            collision: f(counts[1]),
            ppz: f(counts[2]),
            exit: f(counts[3]),
            timeout: f(counts[4]),
        }
    }

    pub fn sum(&self) -> f64 {
        self.success + self.collision + self.ppz + self.exit + self.timeout
    }
}

/// Outcome fractions over episodes `(k - window, k]` for every k; early
/// entries use the history available.
pub fn rolling_rates(outcomes: &[Status], window: usize) -> Result<Vec<OutcomeRates>> {
    if window == 0 {
        return Err(Error::invalid("window", "must be at least 1"));
    }
    Ok((1..=outcomes.len())
        .map(|k| OutcomeRates::from_outcomes(&outcomes[k.saturating_sub(window)..k]))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub outcome: Status,
    pub steps: u32,
    pub cumulative_reward: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMetrics {
    pub stage: String,
    pub window: usize,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    episode: usize,
    outcome: &'a str,
    steps: u32,
    cumulative_reward: f64,
    rolling_success: f64,
    rolling_collision: f64,
    rolling_ppz: f64,
    rolling_exit: f64,
    epsilon: f64,
}

impl TrainingMetrics {
    pub fn new(stage: impl Into<String>, window: usize) -> Self {
        Self {
            stage: stage.into(),
            window,
            episodes: Vec::new(),
        }
    }

    pub fn outcomes(&self) -> Vec<Status> {
        self.episodes.iter().map(|e| e.outcome).collect()
    }

    pub fn rolling(&self) -> Vec<OutcomeRates> {
        rolling_rates(&self.outcomes(), self.window.max(1)).expect("window >= 1")
    }

    /// Rates over the last `window` episodes.
    pub fn final_rates(&self) -> OutcomeRates {
        self.rolling().last().copied().unwrap_or_default()
    }

    /// Columns `episode, outcome, steps, cumulative_reward, rolling_success,
    /// rolling_collision, rolling_ppz, rolling_exit, epsilon`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (e, r) in self.episodes.iter().zip(self.rolling()) {
            out.serialize(MetricsRow {
                episode: e.episode,
                outcome: e.outcome.as_str(),
                steps: e.steps,
                cumulative_reward: e.cumulative_reward,
                rolling_success: r.success,
                rolling_collision: r.collision,
                rolling_ppz: r.ppz,
                rolling_exit: r.exit,
                epsilon: e.epsilon,
            })?;
        }
        out.flush().map_err(|e| Error::io("writing metrics", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

// Stages

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageInit {
    Random,
    /// Continue from the agent produced by the preceding stage.
    Previous,
    FromCheckpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub scenario: ScenarioConfig,
    pub reward_mode: ShapingMode,
    pub episodes: usize,
    pub init: StageInit,
}

impl Default for StageSpec {
    fn default() -> Self {
        Self {
            name: "stage".into(),
            scenario: ScenarioConfig::default(),
            reward_mode: ShapingMode::Dot,
            episodes: 1500,
            init: StageInit::Random,
        }
    }
}

/// Everything a stage needs besides its own spec.
#[derive(Debug, Clone)]
pub struct TrainingContext {
    pub master_seed: u64,
    /// Position of the stage in the run; keys its random streams.
    pub stage_index: usize,
    pub hyper: DdpgHyperparams,
    pub reward: RewardConfig,
    pub observation: ObservationConfig,
    pub window: usize,
    /// Directory for checkpoints; `None` writes nothing.
    pub checkpoint_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
}

#[derive(Debug)]
pub struct StageResult {
    pub agent: Agent,
    pub metrics: TrainingMetrics,
    pub final_checkpoint: Option<PathBuf>,
}

/// Rebuild `agent`'s networks under `hyper` with a fresh buffer.
fn transfer(agent: Agent, hyper: &DdpgHyperparams) -> Result<Agent> {
    let sizes = agent.actor.layer_sizes();
    if sizes[1..sizes.len() - 1] != hyper.hidden_layers[..] {
        return Err(Error::ArchitectureMismatch(format!(
            "checkpoint hidden layers {:?} differ from configured {:?}",
            &sizes[1..sizes.len() - 1],
            hyper.hidden_layers
        )));
    }
    Agent::from_parts(
        hyper.clone(),
        agent.actor,
        agent.critic,
        agent.actor_target,
        agent.critic_target,
    )
}

/// Train for `spec.episodes` episodes on freshly sampled worlds.
///
/// `previous` is consumed when `spec.init` is [`StageInit::Previous`].
/// `on_episode` observes each finished episode.
pub fn train_stage(
    spec: &StageSpec,
    previous: Option<Agent>,
    ctx: &TrainingContext,
    mut on_episode: impl FnMut(&EpisodeRecord),
) -> Result<StageResult> {
    if spec.episodes == 0 {
        return Err(Error::invalid("episodes", "must be at least 1"));
    }
    let mut agent = match &spec.init {
        StageInit::Random => Agent::new(
            ctx.hyper.clone(),
            &mut stream_rng(ctx.master_seed, Stream::Init, ctx.stage_index as u64),
        )?,
        StageInit::Previous => {
            let prev = previous.ok_or_else(|| {
                Error::invalid("init", "`previous` needs a preceding stage")
            })?;
            transfer(prev, &ctx.hyper)?
        }
        StageInit::FromCheckpoint(path) => transfer(Agent::load(path)?, &ctx.hyper)?,
    };
    let settings = EpisodeSettings {
        reward: RewardConfig {
            mode: spec.reward_mode,
            ..ctx.reward
        },
        observation: ctx.observation,
        epsilon: 0.0,
        learn: true,
        record_trajectory: false,
    };
    let mut sampling_rng = stream_rng(ctx.master_seed, Stream::Sampling, ctx.stage_index as u64);
    let mut metrics = TrainingMetrics::new(spec.name.clone(), ctx.window);
    let ckpt_path = |label: &str| {
        ctx.checkpoint_dir
            .as_ref()
            .map(|d| d.join(format!("{}_{label}.ckpt", spec.name)))
    };
    for episode in 0..spec.episodes {
        let index = stage_index(ctx.stage_index, episode as u64);
        let env = sample_scenario(
            &spec.scenario,
            &mut stream_rng(ctx.master_seed, Stream::Scenario, index),
        )?;
        let mut explore = stream_rng(ctx.master_seed, Stream::Exploration, index);
        let epsilon = ctx.hyper.epsilon_at(episode, spec.episodes);
        let out = run_episode(
            &mut agent,
            &env,
            &EpisodeSettings { epsilon, ..settings },
            &mut explore,
            &mut sampling_rng,
        )?;
        let record = EpisodeRecord {
            episode: episode + 1,
            outcome: out.status,
            steps: out.steps,
            cumulative_reward: out.cumulative_reward,
            epsilon,
        };
        on_episode(&record);
        metrics.episodes.push(record);
        if ctx.checkpoint_every > 0
            && (episode + 1) % ctx.checkpoint_every == 0
            && episode + 1 < spec.episodes
        {
            if let Some(p) = ckpt_path(&format!("ep{}", episode + 1)) {
                agent.save(&p)?;
            }
        }
    }
    let final_checkpoint = ckpt_path("final");
    if let Some(p) = &final_checkpoint {
        agent.save(p)?;
    }
    Ok(StageResult {
        agent,
        metrics,
        final_checkpoint,
    })
}

/// Paired training runs that differ only in the shaping mode.
#[derive(Debug)]
pub struct RewardComparison {
    pub dot: TrainingMetrics,
    pub distance: TrainingMetrics,
}

impl RewardComparison {
    /// Columns `mode, episodes, final_success, final_collision, final_ppz,
    /// final_exit, final_timeout`.
    pub fn write_table<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "mode",
            "episodes",
            "final_success",
            "final_collision",
            "final_ppz",
            "final_exit",
            "final_timeout",
        ])?;
        for (mode, m) in [("dot", &self.dot), ("distance", &self.distance)] {
            let r = m.final_rates();
            out.write_record([
                mode.to_string(),
                m.episodes.len().to_string(),
                r.success.to_string(),
                r.collision.to_string(),
                r.ppz.to_string(),
                r.exit.to_string(),
                r.timeout.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("writing comparison", e))
    }
}

pub fn compare_reward_modes(
    spec: &StageSpec,
    ctx: &TrainingContext,
    mut on_episode: impl FnMut(ShapingMode, &EpisodeRecord),
) -> Result<RewardComparison> {
    let ctx = TrainingContext {
        checkpoint_dir: None,
        ..ctx.clone()
    };
    let run = |mode: ShapingMode, cb: &mut dyn FnMut(ShapingMode, &EpisodeRecord)| {
        let arm = StageSpec {
            name: format!("{}_{mode}", spec.name),
            reward_mode: mode,
            init: StageInit::Random,
            ..spec.clone()
        };
        train_stage(&arm, None, &ctx, |r| cb(mode, r)).map(|r| r.metrics)
    };
    let dot = run(ShapingMode::Dot, &mut on_episode)?;
    let distance = run(ShapingMode::Distance, &mut on_episode)?;
    Ok(RewardComparison { dot, distance })
}
