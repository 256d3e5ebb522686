//! Deterministic 2D airspace: vehicle kinematics, obstacles, prior-permission
//! zones (PPZs) and outcome classification.
//!
//! Positions live in the square `[0, bounds] x [0, bounds]`. Obstacles and
//! PPZs are points surrounded by circular safety buffers. Dynamic obstacles
//! are pure functions of time, so an [`EnvInstance`] never mutates while an
//! episode runs; the clock is the vehicle's `step_count * dt`.

mod observation;
mod scenario;

pub use observation::{build_observation, Observation, ObservationConfig, OBSERVATION_DIM};
pub use scenario::{sample_scenario, ScenarioConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;

pub const GRAVITY: f64 = 9.81;
/// Per-axis acceleration limit, 0.3 g.
pub const MAX_ACCEL: f64 = 0.3 * GRAVITY;
pub const MAX_SPEED: f64 = 70.0;
pub const OBSTACLE_SAFETY_RADIUS: f64 = 50.0;
pub const PPZ_SAFETY_RADIUS: f64 = 1000.0;
pub const ARRIVAL_RADIUS: f64 = 100.0;
pub const DEFAULT_BOUNDS: f64 = 10_000.0;
pub const DEFAULT_MAX_STEPS: u32 = 800;
pub const DEFAULT_DT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Flying,
    Success,
    Collision,
    PpzEntered,
    Exited,
    Timeout,
}

impl Status {
    pub const TERMINAL: [Status; 5] = [
        Status::Success,
        Status::Collision,
        Status::PpzEntered,
        Status::Exited,
        Status::Timeout,
    ];

    pub fn is_terminal(self) -> bool {
        self != Status::Flying
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Flying => "flying",
            Status::Success => "success",
            Status::Collision => "collision",
            Status::PpzEntered => "ppz",
            Status::Exited => "exit",
            Status::Timeout => "timeout",
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub status: Status,
    pub step_count: u32,
}

impl UavState {
    pub fn at_rest(position: Vec2) -> Self {
        Self {
            position,
            velocity: Vec2::ZERO,
            status: Status::Flying,
            step_count: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticObstacle {
    pub center: Vec2,
    #[serde(default = "default_obstacle_radius")]
    pub safety_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicObstacle {
    pub anchor: Vec2,
    /// Unit vector of the oscillation axis.
    pub direction: Vec2,
    /// m/s, within [20, 50].
    pub speed: f64,
    pub half_amplitude: f64,
    /// Path-length offset in [-half_amplitude, half_amplitude].
    pub phase_offset: f64,
    #[serde(default = "default_obstacle_radius")]
    pub safety_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ppz {
    pub center: Vec2,
    #[serde(default = "default_ppz_radius")]
    pub safety_radius: f64,
}

fn default_obstacle_radius() -> f64 {
    OBSTACLE_SAFETY_RADIUS
}

fn default_ppz_radius() -> f64 {
    PPZ_SAFETY_RADIUS
}

/// Triangle wave of period `4 * amplitude`, rising from 0 to `amplitude`
/// over the first quarter period.
pub fn triangle_wave(path: f64, amplitude: f64) -> f64 {
    if amplitude <= 0.0 {
        return 0.0;
    }
    let period = 4.0 * amplitude;
    let u = path.rem_euclid(period);
    if u < amplitude {
        u
    } else if u < 3.0 * amplitude {
        2.0 * amplitude - u
    } else {
        u - period
    }
}

impl DynamicObstacle {
    /// Signed offset from the anchor along `direction` at time `t`.
    pub fn displacement(&self, t: f64) -> f64 {
        triangle_wave(self.speed * t + self.phase_offset, self.half_amplitude)
    }

    pub fn position_at(&self, t: f64) -> Vec2 {
        self.anchor + self.direction * self.displacement(t)
    }
}

/// Positions of every dynamic obstacle at time `t`.
pub fn step_dynamic_obstacles(dynamics: &[DynamicObstacle], t: f64) -> Vec<Vec2> {
    dynamics.iter().map(|d| d.position_at(t)).collect()
}

/// One sampled world: geometry, entities and episode limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvInstance {
    /// Side length of the square airspace (m).
    pub bounds: f64,
    #[serde(default)]
    pub statics: Vec<StaticObstacle>,
    #[serde(default)]
    pub dynamics: Vec<DynamicObstacle>,
    #[serde(default)]
    pub ppzs: Vec<Ppz>,
    pub origin: Vec2,
    pub destination: Vec2,
    pub arrival_radius: f64,
    pub max_steps: u32,
    pub dt: f64,
}

impl EnvInstance {
    /// An entity-free world.
    pub fn open(bounds: f64, origin: Vec2, destination: Vec2) -> Self {
        Self {
            bounds,
            statics: Vec::new(),
            dynamics: Vec::new(),
            ppzs: Vec::new(),
            origin,
            destination,
            arrival_radius: ARRIVAL_RADIUS,
            max_steps: DEFAULT_MAX_STEPS,
            dt: DEFAULT_DT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bounds > 0.0 && self.bounds.is_finite()) {
            return Err(Error::invalid("bounds", "must be positive and finite"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        if !(self.arrival_radius > 0.0) {
            return Err(Error::invalid("arrival_radius", "must be positive"));
        }
        if !self.contains(self.origin) {
            return Err(Error::invalid("origin", "outside bounds"));
        }
        if !self.contains(self.destination) {
            return Err(Error::invalid("destination", "outside bounds"));
        }
        if self.origin.distance(self.destination) <= self.arrival_radius {
            return Err(Error::invalid(
                "destination",
                "origin already within arrival radius",
            ));
        }
        if self.statics.iter().any(|s| !(s.safety_radius > 0.0))
            || self.dynamics.iter().any(|d| !(d.safety_radius > 0.0))
        {
            return Err(Error::invalid("safety_radius", "must be positive"));
        }
        if self.ppzs.iter().any(|p| !(p.safety_radius > 0.0)) {
            return Err(Error::invalid("ppz.safety_radius", "must be positive"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.bounds && p.y >= 0.0 && p.y <= self.bounds
    }

    pub fn initial_state(&self) -> UavState {
        UavState::at_rest(self.origin)
    }

    /// Obstacle centers and safety radii at time `t`, statics first.
    pub fn obstacles_at(&self, t: f64) -> Vec<(Vec2, f64)> {
        self.statics
            .iter()
            .map(|s| (s.center, s.safety_radius))
            .chain(
                self.dynamics
                    .iter()
                    .map(|d| (d.position_at(t), d.safety_radius)),
            )
            .collect()
    }

    pub fn time_of(&self, u: &UavState) -> f64 {
        f64::from(u.step_count) * self.dt
    }
}

/// Clamp each acceleration component into `[-0.3g, 0.3g]`.
pub fn clamp_action(a: Vec2) -> Result<Vec2> {
    if !a.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    Ok(Vec2::new(
        a.x.clamp(-MAX_ACCEL, MAX_ACCEL),
        a.y.clamp(-MAX_ACCEL, MAX_ACCEL),
    ))
}

/// Semi-implicit Euler step: velocity first (speed-capped by rescaling),
/// then position with the new velocity.
pub fn step_kinematics(u: &UavState, a: Vec2, dt: f64) -> Result<UavState> {
    if u.status != Status::Flying {
        return Err(Error::invalid("status", "only a flying vehicle can be stepped"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("acceleration"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let velocity = (u.velocity + a * dt).clamp_norm(MAX_SPEED);
    Ok(UavState {
        position: u.position + velocity * dt,
        velocity,
        status: Status::Flying,
        step_count: u.step_count + 1,
    })
}

/// Offset from `p` to the nearest point in `centers` and its length.
/// Ties keep the lowest index; an empty iterator yields `None`.
pub fn nearest_entity_vector<I>(p: Vec2, centers: I) -> Option<(Vec2, f64)>
where
    I: IntoIterator<Item = Vec2>,
{
    let mut best: Option<(Vec2, f64)> = None;
    for c in centers {
        let offset = c - p;
        let d = offset.norm();
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((offset, d)),
        }
    }
    best
}

/// Outcome of a positioned vehicle.
///
/// Priority: Collision > PpzEntered > Exited > Success > Timeout > Flying.
pub fn classify(env: &EnvInstance, u: &UavState) -> Status {
    classify_with(env, u, &[])
}

/// [`classify`] with additional point obstacles (other vehicles) that use
/// the standard obstacle safety radius.
pub fn classify_with(env: &EnvInstance, u: &UavState, extra_obstacles: &[Vec2]) -> Status {
    let p = u.position;
    let t = env.time_of(u);
    let hits_obstacle = env
        .obstacles_at(t)
        .iter()
        .any(|&(c, r)| p.distance(c) < r)
        || extra_obstacles
            .iter()
            .any(|&c| p.distance(c) < OBSTACLE_SAFETY_RADIUS);
    if hits_obstacle {
        Status::Collision
    } else if env
        .ppzs
        .iter()
        .any(|z| p.distance(z.center) < z.safety_radius)
    {
        Status::PpzEntered
    } else if !env.contains(p) {
        Status::Exited
    } else if p.distance(env.destination) <= env.arrival_radius {
        Status::Success
    } else if u.step_count >= env.max_steps {
        Status::Timeout
    } else {
        Status::Flying
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flying(position: Vec2, velocity: Vec2) -> UavState {
        UavState {
            position,
            velocity,
            status: Status::Flying,
            step_count: 0,
        }
    }

    #[test]
    fn clamp_action_examples() {
        assert_eq!(clamp_action(Vec2::new(5.0, 0.0)).unwrap(), Vec2::new(2.943, 0.0));
        assert_eq!(clamp_action(Vec2::new(1.0, -1.0)).unwrap(), Vec2::new(1.0, -1.0));
        let c = clamp_action(Vec2::new(-10.0, 10.0)).unwrap();
        assert!((c.x + 2.943).abs() < 1e-12 && (c.y - 2.943).abs() < 1e-12);
        assert!(clamp_action(Vec2::new(f64::NAN, 0.0)).is_err());
        assert!(clamp_action(Vec2::new(0.0, f64::INFINITY)).is_err());
    }

    #[test]
    fn kinematics_examples() {
        let u = flying(Vec2::ZERO, Vec2::ZERO);
        let n = step_kinematics(&u, Vec2::new(MAX_ACCEL, 0.0), 1.0).unwrap();
        assert_eq!(n.velocity, Vec2::new(MAX_ACCEL, 0.0));
        assert_eq!(n.position, Vec2::new(MAX_ACCEL, 0.0));
        assert_eq!(n.step_count, 1);

        let u = flying(Vec2::ZERO, Vec2::new(69.0, 0.0));
        let n = step_kinematics(&u, Vec2::new(MAX_ACCEL, 0.0), 1.0).unwrap();
        assert!((n.velocity.x - 70.0).abs() < 1e-12 && n.velocity.y == 0.0);

        let u = flying(Vec2::new(5.0, 5.0), Vec2::new(10.0, 0.0));
        let n = step_kinematics(&u, Vec2::ZERO, 1.0).unwrap();
        assert_eq!(n.position, Vec2::new(15.0, 5.0));
        assert_eq!(n.velocity, Vec2::new(10.0, 0.0));
    }

    #[test]
    fn terminal_vehicle_cannot_step() {
        let mut u = flying(Vec2::ZERO, Vec2::ZERO);
        u.status = Status::Success;
        assert!(step_kinematics(&u, Vec2::ZERO, 1.0).is_err());
    }

    #[test]
    fn triangle_wave_examples() {
        let d = DynamicObstacle {
            anchor: Vec2::ZERO,
            direction: Vec2::new(0.0, 1.0),
            speed: 25.0,
            half_amplitude: 500.0,
            phase_offset: 0.0,
            safety_radius: 50.0,
        };
        assert_eq!(d.displacement(0.0), 0.0);
        assert_eq!(d.displacement(20.0), 500.0);
        assert_eq!(d.displacement(40.0), 0.0);
        assert_eq!(d.displacement(60.0), -500.0);
        assert_eq!(d.position_at(20.0), Vec2::new(0.0, 500.0));
    }

    /// Reflecting walker: starts at `phase` heading +1 and reverses at +-A.
    fn bounce_oracle(speed: f64, amplitude: f64, phase: f64, t: f64, ticks: usize) -> f64 {
        let mut pos = phase;
        let mut dir = 1.0_f64;
        let h = speed * t / ticks as f64;
        for _ in 0..ticks {
            pos += dir * h;
            if pos > amplitude {
                pos = 2.0 * amplitude - pos;
                dir = -dir;
            } else if pos < -amplitude {
                pos = -2.0 * amplitude - pos;
                dir = -dir;
            }
        }
        pos
    }

    #[test]
    fn triangle_wave_matches_bounce_simulation() {
        assert!((bounce_oracle(25.0, 500.0, 0.0, 40.0, 4000) - 0.0).abs() < 1e-6);
        for &(speed, amp, phase, t) in &[
            (25.0, 500.0, 0.0, 40.0),
            (37.0, 300.0, 120.0, 113.0),
            (20.0, 450.0, -300.0, 7.5),
            (50.0, 250.0, -250.0, 1234.0),
        ] {
            let d = DynamicObstacle {
                anchor: Vec2::ZERO,
                direction: Vec2::new(1.0, 0.0),
                speed,
                half_amplitude: amp,
                phase_offset: phase,
                safety_radius: 50.0,
            };
            let oracle = bounce_oracle(speed, amp, phase, t, 100_000);
            assert!((d.displacement(t) - oracle).abs() < 1e-6, "{speed} {amp} {t}");
        }
    }

    #[test]
    fn nearest_entity_examples() {
        let (v, d) =
            nearest_entity_vector(Vec2::ZERO, [Vec2::new(3.0, 4.0), Vec2::new(10.0, 0.0)])
                .unwrap();
        assert_eq!(v, Vec2::new(3.0, 4.0));
        assert_eq!(d, 5.0);

        let (v, d) = nearest_entity_vector(Vec2::new(1.0, 1.0), [Vec2::new(1.0, 1.0)]).unwrap();
        assert_eq!(v, Vec2::ZERO);
        assert_eq!(d, 0.0);

        let (v, _) =
            nearest_entity_vector(Vec2::ZERO, [Vec2::new(0.0, 5.0), Vec2::new(5.0, 0.0)])
                .unwrap();
        assert_eq!(v, Vec2::new(0.0, 5.0));

        assert!(nearest_entity_vector(Vec2::ZERO, std::iter::empty()).is_none());
    }

    fn env_with(dest: Vec2) -> EnvInstance {
        EnvInstance::open(10_000.0, Vec2::new(1000.0, 1000.0), dest)
    }

    #[test]
    fn classify_examples() {
        let env = env_with(Vec2::new(5000.0, 5000.0));
        let u = flying(Vec2::new(5099.0, 5000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Success);
        let u = flying(Vec2::new(5100.0, 5000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Success);
        let u = flying(Vec2::new(5100.5, 5000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Flying);

        let mut env = env_with(Vec2::new(9000.0, 9000.0));
        env.statics.push(StaticObstacle {
            center: Vec2::new(2000.0, 2000.0),
            safety_radius: 50.0,
        });
        let u = flying(Vec2::new(2049.0, 2000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Collision);
        let u = flying(Vec2::new(2050.0, 2000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Flying);

        env.ppzs.push(Ppz {
            center: Vec2::new(6000.0, 2000.0),
            safety_radius: 1000.0,
        });
        let u = flying(Vec2::new(6999.0, 2000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::PpzEntered);
        let u = flying(Vec2::new(7000.0, 2000.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Flying);
    }

    #[test]
    fn classify_priority_order() {
        // destination inside an obstacle buffer, inside a PPZ and outside bounds
        let mut env = env_with(Vec2::new(9990.0, 5000.0));
        let p = Vec2::new(10_010.0, 5000.0);
        let mut u = flying(p, Vec2::ZERO);
        u.step_count = env.max_steps;
        assert_eq!(classify(&env, &u), Status::Exited);
        env.ppzs.push(Ppz {
            center: Vec2::new(10_500.0, 5000.0),
            safety_radius: 1000.0,
        });
        assert_eq!(classify(&env, &u), Status::PpzEntered);
        env.statics.push(StaticObstacle {
            center: p,
            safety_radius: 50.0,
        });
        assert_eq!(classify(&env, &u), Status::Collision);

        let env = env_with(Vec2::new(5000.0, 5000.0));
        let mut u = flying(Vec2::new(5000.0, 5050.0), Vec2::ZERO);
        u.step_count = env.max_steps;
        assert_eq!(classify(&env, &u), Status::Success);
        u.position = Vec2::new(3000.0, 3000.0);
        assert_eq!(classify(&env, &u), Status::Timeout);
    }

    #[test]
    fn dynamic_obstacles_collide_at_their_current_position() {
        let mut env = env_with(Vec2::new(9000.0, 9000.0));
        env.dynamics.push(DynamicObstacle {
            anchor: Vec2::new(3000.0, 3000.0),
            direction: Vec2::new(0.0, 1.0),
            speed: 25.0,
            half_amplitude: 500.0,
            phase_offset: 0.0,
            safety_radius: 50.0,
        });
        let mut u = flying(Vec2::new(3000.0, 3500.0), Vec2::ZERO);
        assert_eq!(classify(&env, &u), Status::Flying);
        u.step_count = 20;
        assert_eq!(classify(&env, &u), Status::Collision);
    }

    proptest! {
        #[test]
        fn speed_and_displacement_stay_capped(
            actions in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..200)
        ) {
            let mut u = flying(Vec2::new(500.0, 500.0), Vec2::ZERO);
            for (ax, ay) in actions {
                let a = clamp_action(Vec2::new(ax, ay)).unwrap();
                let n = step_kinematics(&u, a, 1.0).unwrap();
                prop_assert!(n.velocity.norm() <= MAX_SPEED + 1e-9);
                prop_assert!(n.position.distance(u.position) <= MAX_SPEED + 1e-9);
                u = n;
            }
        }

        #[test]
        fn dynamic_obstacle_stays_on_its_segment(
            speed in 20.0f64..50.0,
            amp in 1.0f64..2000.0,
            phase_frac in -1.0f64..1.0,
            t in 0.0f64..10_000.0,
        ) {
            let d = DynamicObstacle {
                anchor: Vec2::new(100.0, 200.0),
                direction: Vec2::new(0.6, 0.8),
                speed,
                half_amplitude: amp,
                phase_offset: phase_frac * amp,
                safety_radius: 50.0,
            };
            let s = d.displacement(t);
            prop_assert!(s.abs() <= amp + 1e-9);
            let off = d.position_at(t) - d.anchor;
            prop_assert!(off.norm() <= amp + 1e-6);
        }
    }
}
