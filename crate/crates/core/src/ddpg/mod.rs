//! Deep deterministic policy gradient learner.
//!
//! The actor maps an observation to an acceleration inside the 0.3 g box;
//! the critic scores `(observation, action)` pairs. Targets for the critic
//! come from slowly tracking copies of both networks. Actions are fed to
//! the critic divided by the acceleration limit so every critic input lies
//! roughly in `[-1, 1]`.

mod buffer;
mod checkpoint;

pub use buffer::{ReplayBuffer, StateVec, Transition};
pub use checkpoint::{AGENT_FORMAT_VERSION, AGENT_MAGIC};

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airspace::{MAX_ACCEL, OBSERVATION_DIM};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::nn::{Mlp, OutputActivation};
use crate::optim::{Optimizer, OptimizerKind};

pub const ACTION_DIM: usize = 2;
pub const CRITIC_INPUT_DIM: usize = OBSERVATION_DIM + ACTION_DIM;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgHyperparams {
    pub discount: f64,
    pub tau: f64,
    pub lr_critic: f64,
    pub lr_actor: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of a stage's episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub learn_start: usize,
    pub buffer_capacity: usize,
    pub hidden_layers: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for DdpgHyperparams {
    fn default() -> Self {
        Self {
            discount: 0.9,
            tau: 0.01,
            lr_critic: 5e-4,
            lr_actor: 5e-5,
            batch_size: 64,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.2,
            learn_start: 1000,
            buffer_capacity: 1_000_000,
            hidden_layers: vec![300, 400],
            optimizer: OptimizerKind::Sgd,
        }
    }
}

impl DdpgHyperparams {
    /// Returns the name of the first offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(("discount", format!("{} not in [0, 1)", self.discount)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(("tau", format!("{} not in (0, 1]", self.tau)));
        }
        if !(self.lr_critic >= 0.0 && self.lr_critic.is_finite()) {
            return Err(("lr_critic", "must be non-negative".into()));
        }
        if !(self.lr_actor >= 0.0 && self.lr_actor.is_finite()) {
            return Err(("lr_actor", "must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(("batch_size", "must be at least 1".into()));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("epsilon_decay_fraction", self.epsilon_decay_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err((name, format!("{v} not in [0, 1]")));
            }
        }
        if self.buffer_capacity == 0 {
            return Err(("buffer_capacity", "must be at least 1".into()));
        }
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return Err(("hidden_layers", "need at least one non-empty layer".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(k, r)| Error::invalid(k, r))
    }

    /// Epsilon for `episode` (0-based) of a stage with `total` episodes.
    pub fn epsilon_at(&self, episode: usize, total: usize) -> f64 {
        let horizon = self.epsilon_decay_fraction * total as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    fn actor_sizes(&self) -> Vec<usize> {
        let mut v = vec![OBSERVATION_DIM];
        v.extend(&self.hidden_layers);
        v.push(ACTION_DIM);
        v
    }

    fn critic_sizes(&self) -> Vec<usize> {
        let mut v = vec![CRITIC_INPUT_DIM];
        v.extend(&self.hidden_layers);
        v.push(1);
        v
    }
}

/// Result of one learning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearnOutcome {
    /// The buffer had not reached `learn_start` (or one batch) yet.
    Skipped { buffer_len: usize },
    Updated {
        critic_loss: f64,
        actor_objective: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub buffer: ReplayBuffer,
    pub hyper: DdpgHyperparams,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
}

fn stack_states<'a>(states: impl ExactSizeIterator<Item = &'a StateVec>) -> Array2<f64> {
    let n = states.len();
    let mut m = Array2::zeros((n, OBSERVATION_DIM));
    for (i, s) in states.enumerate() {
        m.row_mut(i).assign(&ArrayView2::from_shape((1, OBSERVATION_DIM), s).unwrap().row(0));
    }
    m
}

/// `[state, action / MAX_ACCEL]` rows.
fn critic_input(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    let n = states.nrows();
    let mut x = Array2::zeros((n, CRITIC_INPUT_DIM));
    x.slice_mut(s![.., ..OBSERVATION_DIM]).assign(&states);
    x.slice_mut(s![.., OBSERVATION_DIM..])
        .assign(&(&actions * (1.0 / MAX_ACCEL)));
    x
}

fn action_matrix(batch: &[Transition]) -> Array2<f64> {
    let mut a = Array2::zeros((batch.len(), ACTION_DIM));
    for (i, t) in batch.iter().enumerate() {
        a[[i, 0]] = t.action.x;
        a[[i, 1]] = t.action.y;
    }
    a
}

impl Agent {
    /// Random actor and critic; targets start as exact copies.
    pub fn new<R: Rng + ?Sized>(hyper: DdpgHyperparams, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let actor = Mlp::init_random(
            &hyper.actor_sizes(),
            OutputActivation::TanhScaled(MAX_ACCEL),
            rng,
        )?;
        let critic = Mlp::init_random(&hyper.critic_sizes(), OutputActivation::Linear, rng)?;
        Self::from_networks(hyper, actor, critic)
    }

    /// Wrap given networks; targets are copies of the sources.
    pub fn from_networks(hyper: DdpgHyperparams, actor: Mlp, critic: Mlp) -> Result<Self> {
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        Self::from_parts(hyper, actor, critic, actor_target, critic_target)
    }

    pub(crate) fn from_parts(
        hyper: DdpgHyperparams,
        actor: Mlp,
        critic: Mlp,
        actor_target: Mlp,
        critic_target: Mlp,
    ) -> Result<Self> {
        hyper.validate()?;
        if actor.input_dim() != OBSERVATION_DIM || actor.output_dim() != ACTION_DIM {
            return Err(Error::ArchitectureMismatch(format!(
                "actor must map {OBSERVATION_DIM} -> {ACTION_DIM}, got {:?}",
                actor.layer_sizes()
            )));
        }
        if critic.input_dim() != CRITIC_INPUT_DIM || critic.output_dim() != 1 {
            return Err(Error::ArchitectureMismatch(format!(
                "critic must map {CRITIC_INPUT_DIM} -> 1, got {:?}",
                critic.layer_sizes()
            )));
        }
        if actor_target.layer_sizes() != actor.layer_sizes()
            || critic_target.layer_sizes() != critic.layer_sizes()
        {
            return Err(Error::ArchitectureMismatch(
                "target networks differ from their sources".into(),
            ));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(hyper.buffer_capacity)?,
            actor_opt: Optimizer::new(hyper.optimizer),
            critic_opt: Optimizer::new(hyper.optimizer),
            actor,
            critic,
            actor_target,
            critic_target,
            hyper,
        })
    }

    /// Greedy action `mu(state)`.
    pub fn act(&self, state: &StateVec) -> Result<Vec2> {
        let out = self.actor.forward_one(state)?;
        Ok(Vec2::new(out[0], out[1]))
    }

    /// With probability `epsilon` a uniform draw from the action box,
    /// otherwise the actor's output. The whole vector is randomized.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &StateVec,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<Vec2> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid("epsilon", "must lie in [0, 1]"));
        }
        if rng.random::<f64>() < epsilon {
            Ok(Vec2::new(
                rng.random_range(-MAX_ACCEL..=MAX_ACCEL),
                rng.random_range(-MAX_ACCEL..=MAX_ACCEL),
            ))
        } else {
            self.act(state)
        }
    }

    /// `Q(s, a)` from the online critic.
    pub fn q_value(&self, state: &StateVec, action: Vec2) -> Result<f64> {
        let s = stack_states(std::iter::once(state));
        let a = Array2::from_shape_vec((1, 2), vec![action.x, action.y]).unwrap();
        Ok(self.critic.predict(critic_input(s.view(), a.view()).view())?[[0, 0]])
    }

    /// `y = r + gamma * Q'(s', mu'(s'))`, or `y = r` on terminal transitions.
    pub fn bellman_targets(&self, batch: &[Transition]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must not be empty"));
        }
        let next = stack_states(batch.iter().map(|t| &t.next_state));
        let next_actions = self.actor_target.predict(next.view())?;
        let q_next = self
            .critic_target
            .predict(critic_input(next.view(), next_actions.view()).view())?;
        Ok(batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if t.terminal {
                    t.reward
                } else {
                    t.reward + self.hyper.discount * q_next[[i, 0]]
                }
            })
            .collect())
    }

    /// One descent step on the mean squared Bellman error. Returns the
    /// loss before the step.
    pub fn critic_update(&mut self, batch: &[Transition], targets: &[f64]) -> Result<f64> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: targets.len(),
            });
        }
        let n = batch.len() as f64;
        let states = stack_states(batch.iter().map(|t| &t.state));
        let actions = action_matrix(batch);
        let cache = self
            .critic
            .forward(critic_input(states.view(), actions.view()).view())?;
        let q = cache.output();
        let mut loss = 0.0;
        let mut grad = Array2::zeros((batch.len(), 1));
        for (i, &y) in targets.iter().enumerate() {
            let err = y - q[[i, 0]];
            loss += err * err;
            grad[[i, 0]] = -2.0 * err / n;
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("critic loss"));
        }
        let grads = self.critic.backward(&cache, grad.view())?;
        self.critic_opt
            .step(&mut self.critic, &grads, self.hyper.lr_critic)?;
        Ok(loss)
    }

    /// Deterministic policy gradient step: ascend `mean Q(s, mu(s))` in the
    /// actor's parameters through the critic's action gradient. Returns the
    /// objective before the step.
    pub fn actor_update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("batch", "must not be empty"));
        }
        let n = batch.len() as f64;
        let states = stack_states(batch.iter().map(|t| &t.state));
        let actor_cache = self.actor.forward(states.view())?;
        let actions = actor_cache.output();
        let critic_cache = self
            .critic
            .forward(critic_input(states.view(), actions.view()).view())?;
        let objective = critic_cache.output().sum() / n;
        // descend on -Q
        let dq = Array2::from_elem((batch.len(), 1), -1.0 / n);
        let critic_grads = self.critic.backward(&critic_cache, dq.view())?;
        let d_action = critic_grads
            .input
            .slice(s![.., OBSERVATION_DIM..])
            .mapv(|g| g / MAX_ACCEL);
        let actor_grads = self.actor.backward(&actor_cache, d_action.view())?;
        self.actor_opt
            .step(&mut self.actor, &actor_grads, self.hyper.lr_actor)?;
        Ok(objective)
    }

    pub fn soft_update_targets(&mut self) -> Result<()> {
        self.actor_target.soft_update(&self.actor, self.hyper.tau)?;
        self.critic_target.soft_update(&self.critic, self.hyper.tau)
    }

    pub fn ready_to_learn(&self) -> bool {
        self.buffer.len() >= self.hyper.learn_start.max(self.hyper.batch_size)
    }

    /// Sample, compute targets, update critic then actor, then move both
    /// targets toward their sources.
    pub fn learn_step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LearnOutcome> {
        if !self.ready_to_learn() {
            return Ok(LearnOutcome::Skipped {
                buffer_len: self.buffer.len(),
            });
        }
        let batch = self.buffer.sample(self.hyper.batch_size, rng)?;
        let targets = self.bellman_targets(&batch)?;
        let critic_loss = self.critic_update(&batch, &targets)?;
        let actor_objective = self.actor_update(&batch)?;
        self.soft_update_targets()?;
        Ok(LearnOutcome::Updated {
            critic_loss,
            actor_objective,
        })
    }
}
