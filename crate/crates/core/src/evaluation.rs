//! Frozen-policy evaluation: the single-PPZ scenario, synchronous
//! multi-vehicle flights and the fleet-size capacity sweep.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::airspace::{
    build_observation, clamp_action, classify, step_kinematics, EnvInstance, ObservationConfig,
    Ppz, Status, UavState, ARRIVAL_RADIUS, DEFAULT_BOUNDS, DEFAULT_DT, DEFAULT_MAX_STEPS,
    OBSTACLE_SAFETY_RADIUS, PPZ_SAFETY_RADIUS,
};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rewards::RewardConfig;
use crate::seeding::{stage_index, stream_rng, SimRng, Stream};
use crate::training::{run_episode, EpisodeSettings, OutcomeRates, Policy};
use crate::trajectory::TrajectoryRow;
pub use crate::trajectory::{export_timeseries, TrajectoryLog};

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Evaluation streams are keyed by scenario kind so the sweep and the
/// single-PPZ runs never share draws.
const SINGLE_PPZ_STAGE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SinglePpz,
    MultiUav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n_uavs: usize,
    pub bounds: f64,
    /// Minimum pairwise distance between origins (m).
    pub origin_spacing: f64,
    pub trials: usize,
    pub max_steps: u32,
    pub min_od_distance: f64,
    /// Largest off-midpoint shift of the single PPZ (m).
    pub ppz_offset: f64,
    /// Required gap between an endpoint and the PPZ buffer (m).
    pub clearance: f64,
    pub rejection_budget: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::MultiUav,
            n_uavs: 1,
            bounds: DEFAULT_BOUNDS,
            origin_spacing: 900.0,
            trials: 100,
            max_steps: DEFAULT_MAX_STEPS,
            min_od_distance: 1000.0,
            ppz_offset: 200.0,
            clearance: 200.0,
            rejection_budget: 10_000,
            checkpoint: None,
        }
    }
}

impl ScenarioSpec {
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.n_uavs == 0 {
            return Err(("n_uavs", "must be at least 1".into()));
        }
        if !positive(self.bounds) {
            return Err(("bounds", "must be positive".into()));
        }
        if !(self.origin_spacing >= 0.0) {
            return Err(("origin_spacing", "must be non-negative".into()));
        }
        if self.trials == 0 {
            return Err(("trials", "must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(("max_steps", "must be at least 1".into()));
        }
        if !(self.min_od_distance > ARRIVAL_RADIUS) || self.min_od_distance > self.bounds * 2f64.sqrt() {
            return Err((
                "min_od_distance",
                "must exceed the arrival radius and fit in the airspace".into(),
            ));
        }
        if !(self.ppz_offset >= 0.0) || !(self.clearance >= 0.0) {
            return Err(("ppz_offset", "offsets must be non-negative".into()));
        }
        if self.rejection_budget == 0 {
            return Err(("rejection_budget", "must be at least 1".into()));
        }
        if max_spaced_points(self.bounds, self.origin_spacing) < self.n_uavs {
            return Err((
                "n_uavs",
                format!(
                    "{} origins {} m apart cannot fit in a {} m square",
                    self.n_uavs, self.origin_spacing, self.bounds
                ),
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(k, r)| Error::invalid(k, r))
    }

    fn world(&self, origin: Vec2, destination: Vec2) -> EnvInstance {
        EnvInstance {
            max_steps: self.max_steps,
            dt: DEFAULT_DT,
            ..EnvInstance::open(self.bounds, origin, destination)
        }
    }
}

/// Upper bound on how many points with pairwise spacing `s` fit in a
/// square of side `l` (disc packing area argument).
fn max_spaced_points(l: f64, s: f64) -> usize {
    if s <= 0.0 {
        return usize::MAX;
    }
    let per_side = (l / s).floor() + 1.0;
    let area = (l + s).powi(2) / (std::f64::consts::PI * s * s / 4.0);
    per_side.powi(2).max(area).min(usize::MAX as f64) as usize
}

fn uniform_point<R: Rng + ?Sized>(bounds: f64, rng: &mut R) -> Vec2 {
    Vec2::new(rng.random_range(0.0..=bounds), rng.random_range(0.0..=bounds))
}

// Outcome tables

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityRow {
    pub n_uavs: usize,
    pub trials: usize,
    pub success: f64,
    pub collision: f64,
    pub ppz: f64,
    pub exit: f64,
    pub timeout: f64,
    /// Half-width of the 95% normal-approximation interval on `success`.
    pub success_ci: f64,
}

impl CapacityRow {
    /// Pool vehicle outcomes; the interval uses the vehicle count.
    pub fn from_outcomes(n_uavs: usize, trials: usize, outcomes: &[Status]) -> Self {
        let r = OutcomeRates::from_outcomes(outcomes);
        let n = outcomes.len().max(1) as f64;
        Self {
            n_uavs,
            trials,
            success: r.success,
            collision: r.collision,
            ppz: r.ppz,
            exit: r.exit,
            timeout: r.timeout,
            success_ci: Z95 * (r.success * (1.0 - r.success) / n).sqrt(),
        }
    }

    pub fn rate_sum(&self) -> f64 {
        self.success + self.collision + self.ppz + self.exit + self.timeout
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CapacityResult {
    pub rows: Vec<CapacityRow>,
}

impl CapacityResult {
    /// Columns `n_uavs, trials, success, collision, ppz, exit, timeout, success_ci`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("writing capacity table", e))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn row(&self, n: usize) -> Option<&CapacityRow> {
        self.rows.iter().find(|r| r.n_uavs == n)
    }
}

// Single PPZ

/// World with one PPZ centred at the origin-destination midpoint plus `offset`.
pub fn single_ppz_instance(
    spec: &ScenarioSpec,
    origin: Vec2,
    destination: Vec2,
    offset: Vec2,
) -> Result<EnvInstance> {
    let span = origin.distance(destination);
    if span < 2.0 * PPZ_SAFETY_RADIUS {
        return Err(Error::Infeasible(format!(
            "origin and destination {span:.0} m apart; the PPZ buffer would cover an endpoint"
        )));
    }
    let center = (origin + destination) * 0.5 + offset;
    let keep_out = PPZ_SAFETY_RADIUS + spec.clearance;
    if origin.distance(center) <= keep_out || destination.distance(center) <= keep_out {
        return Err(Error::Infeasible(format!(
            "an endpoint lies within {keep_out} m of the PPZ center"
        )));
    }
    let mut env = spec.world(origin, destination);
    env.ppzs.push(Ppz {
        center,
        safety_radius: PPZ_SAFETY_RADIUS,
    });
    env.validate()?;
    Ok(env)
}

/// Draw endpoints and offset until the placement is feasible.
pub fn sample_single_ppz<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<EnvInstance> {
    for _ in 0..spec.rejection_budget {
        let origin = uniform_point(spec.bounds, rng);
        let destination = uniform_point(spec.bounds, rng);
        if origin.distance(destination) < spec.min_od_distance {
            continue;
        }
        let r = spec.ppz_offset * rng.random::<f64>().sqrt();
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let offset = Vec2::new(r * theta.cos(), r * theta.sin());
        match single_ppz_instance(spec, origin, destination, offset) {
            Ok(env) => return Ok(env),
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RejectionBudgetExhausted {
        what: "single-PPZ scenario",
        budget: spec.rejection_budget,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    pub status: Status,
    pub steps: u32,
    /// Closest logged approach to the PPZ center (m).
    pub min_ppz_distance: f64,
}

#[derive(Debug, Clone)]
pub struct SinglePpzReport {
    pub result: CapacityRow,
    pub trials: Vec<TrialRecord>,
    /// Log of the designated trial.
    pub trajectory: Option<TrajectoryLog>,
}

/// Greedy flights through `spec.trials` single-PPZ worlds.
pub fn run_single_ppz<P: Policy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &mut P,
    observation: &ObservationConfig,
    master_seed: u64,
    traced_trial: Option<usize>,
) -> Result<SinglePpzReport> {
    spec.validate()?;
    let settings = EpisodeSettings {
        reward: RewardConfig::default(),
        observation: *observation,
        epsilon: 0.0,
        learn: false,
        record_trajectory: true,
    };
    let mut trials = Vec::with_capacity(spec.trials);
    let mut trajectory = None;
    for trial in 0..spec.trials {
        let mut rng = stream_rng(
            master_seed,
            Stream::Evaluation,
            stage_index(SINGLE_PPZ_STAGE, trial as u64),
        );
        let env = sample_single_ppz(spec, &mut rng)?;
        let mut unused = rng.clone();
        let out = run_episode(policy, &env, &settings, &mut rng, &mut unused)?;
        let log = out.trajectory.expect("trajectory requested");
        let center = env.ppzs[0].center;
        let min_ppz_distance = log
            .rows
            .iter()
            .map(|r| r.position().distance(center))
            .fold(env.origin.distance(center), f64::min);
        trials.push(TrialRecord {
            trial,
            status: out.status,
            steps: out.steps,
            min_ppz_distance,
        });
        if traced_trial == Some(trial) {
            trajectory = Some(log);
        }
    }
    let statuses: Vec<Status> = trials.iter().map(|t| t.status).collect();
    Ok(SinglePpzReport {
        result: CapacityRow::from_outcomes(1, spec.trials, &statuses),
        trials,
        trajectory,
    })
}

// Multiple vehicles

/// Origins with pairwise spacing and free destinations, one per vehicle.
pub fn place_fleet<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(Vec2, Vec2)>> {
    let mut origins: Vec<Vec2> = Vec::with_capacity(n);
    let mut tries = 0usize;
    while origins.len() < n {
        tries += 1;
        if tries > spec.rejection_budget {
            return Err(Error::RejectionBudgetExhausted {
                what: "UAV origins",
                budget: spec.rejection_budget,
            });
        }
        let p = uniform_point(spec.bounds, rng);
        if origins.iter().all(|o| o.distance(p) >= spec.origin_spacing) {
            origins.push(p);
        }
    }
    let mut fleet = Vec::with_capacity(n);
    for o in origins {
        let d = loop {
            tries += 1;
            if tries > spec.rejection_budget {
                return Err(Error::RejectionBudgetExhausted {
                    what: "UAV destinations",
                    budget: spec.rejection_budget,
                });
            }
            let d = uniform_point(spec.bounds, rng);
            if o.distance(d) >= spec.min_od_distance {
                break d;
            }
        };
        fleet.push((o, d));
    }
    Ok(fleet)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FleetOutcome {
    pub statuses: Vec<Status>,
    pub trajectory: Option<TrajectoryLog>,
}

/// Vehicles that others see as obstacles: still flying, or collided and
/// frozen in place. Arrived and departed vehicles are gone.
fn occupies_airspace(s: Status) -> bool {
    matches!(s, Status::Flying | Status::Collision)
}

/// Fly a fleet synchronously until every vehicle is terminal.
///
/// Every vehicle observes the same pre-tick snapshot, with the other
/// vehicles present in its obstacle channel. After all vehicles move,
/// any pair closer than the obstacle safety radius collides.
pub fn run_fleet<P: Policy + ?Sized>(
    spec: &ScenarioSpec,
    fleet: &[(Vec2, Vec2)],
    policy: &mut P,
    observation: &ObservationConfig,
    rng: &mut SimRng,
    record: bool,
) -> Result<FleetOutcome> {
    let envs = fleet
        .iter()
        .map(|&(o, d)| {
            let env = spec.world(o, d);
            env.validate().map(|_| env)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<UavState> = envs.iter().map(EnvInstance::initial_state).collect();
    let mut trajectory = record.then(TrajectoryLog::default);
    let others = |states: &[UavState], i: usize| -> Vec<Vec2> {
        states
            .iter()
            .enumerate()
            .filter(|&(j, s)| j != i && occupies_airspace(s.status))
            .map(|(_, s)| s.position)
            .collect()
    };

    while states.iter().any(|s| s.status == Status::Flying) {
        let snapshot = states.clone();
        let mut actions = vec![Vec2::ZERO; states.len()];
        for (i, env) in envs.iter().enumerate() {
            if snapshot[i].status != Status::Flying {
                continue;
            }
            let obs = build_observation(env, &snapshot[i], observation, &others(&snapshot, i));
            let features = obs.normalize(observation.scale_for(env)).features();
            actions[i] = clamp_action(policy.act(&obs, &features, 0.0, rng)?)?;
        }
        for (i, env) in envs.iter().enumerate() {
            if snapshot[i].status == Status::Flying {
                let mut next = step_kinematics(&snapshot[i], actions[i], env.dt)?;
                next.status = classify(env, &next);
                states[i] = next;
            }
        }
        let moved: Vec<usize> = (0..states.len())
            .filter(|&i| snapshot[i].status == Status::Flying)
            .collect();
        let mut collided = vec![false; states.len()];
        for &i in &moved {
            for j in 0..states.len() {
                let present = j != i && (moved.contains(&j) || snapshot[j].status == Status::Collision);
                if present && states[i].position.distance(states[j].position) < OBSTACLE_SAFETY_RADIUS {
                    collided[i] = true;
                    collided[j] = true;
                }
            }
        }
        for &i in &moved {
            if collided[i] {
                states[i].status = Status::Collision;
            }
        }
        if let Some(log) = trajectory.as_mut() {
            for &i in &moved {
                let env = &envs[i];
                let u = &states[i];
                let d_obst = states
                    .iter()
                    .enumerate()
                    .filter(|&(j, s)| j != i && occupies_airspace(s.status))
                    .map(|(_, s)| s.position.distance(u.position))
                    .reduce(f64::min);
                log.push(TrajectoryRow::new(
                    env.time_of(u),
                    i,
                    u.position,
                    u.velocity,
                    actions[i],
                    env.destination,
                    d_obst,
                    None,
                ));
            }
        }
    }
    Ok(FleetOutcome {
        statuses: states.into_iter().map(|s| s.status).collect(),
        trajectory,
    })
}

/// One seeded multi-vehicle trial with `spec.n_uavs` vehicles.
pub fn run_multi_uav<P: Policy + ?Sized>(
    spec: &ScenarioSpec,
    policy: &mut P,
    observation: &ObservationConfig,
    master_seed: u64,
    trial: usize,
    record: bool,
) -> Result<FleetOutcome> {
    spec.validate()?;
    let mut rng = stream_rng(
        master_seed,
        Stream::Evaluation,
        stage_index(spec.n_uavs, trial as u64),
    );
    let fleet = place_fleet(spec, spec.n_uavs, &mut rng)?;
    run_fleet(spec, &fleet, policy, observation, &mut rng, record)
}

/// Pooled vehicle outcomes for each fleet size in `n_list`.
pub fn capacity_sweep<P: Policy + ?Sized>(
    n_list: &[usize],
    trials_per_n: usize,
    spec: &ScenarioSpec,
    policy: &mut P,
    observation: &ObservationConfig,
    master_seed: u64,
    mut on_row: impl FnMut(&CapacityRow),
) -> Result<CapacityResult> {
    if n_list.is_empty() {
        return Err(Error::invalid("n", "fleet size list is empty"));
    }
    let mut result = CapacityResult::default();
    for &n in n_list {
        let spec_n = ScenarioSpec {
            kind: ScenarioKind::MultiUav,
            n_uavs: n,
            trials: trials_per_n,
            ..spec.clone()
        };
        spec_n.validate()?;
        let mut outcomes = Vec::with_capacity(n * trials_per_n);
        for trial in 0..trials_per_n {
            let out = run_multi_uav(&spec_n, policy, observation, master_seed, trial, false)?;
            outcomes.extend(out.statuses);
        }
        let row = CapacityRow::from_outcomes(n, trials_per_n, &outcomes);
        on_row(&row);
        result.rows.push(row);
    }
    Ok(result)
}

/// Spearman rank correlation; ties share their mean rank. `None` when
/// either series is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = mean;
            }
            i = j + 1;
        }
        r
    };
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
