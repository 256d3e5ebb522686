use serde::{Deserialize, Serialize};

use super::{nearest_entity_vector, EnvInstance, UavState, MAX_SPEED};
use crate::error::{Error, Result};
use crate::geometry::Vec2;

/// Length of the flattened observation: destination, velocity, nearest
/// obstacle, nearest PPZ (two components each).
pub const OBSERVATION_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    /// Obstacles and PPZs farther than this are reported as "nothing nearby".
    pub sense_radius: f64,
    /// Length used to saturate and normalize distance vectors. `None` uses
    /// the environment's side length.
    pub scale: Option<f64>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            sense_radius: 2000.0,
            scale: None,
        }
    }
}

impl ObservationConfig {
    pub fn scale_for(&self, env: &EnvInstance) -> f64 {
        self.scale.unwrap_or(env.bounds)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sense_radius > 0.0 && self.sense_radius.is_finite()) {
            return Err(Error::invalid("sense_radius", "must be positive"));
        }
        if let Some(s) = self.scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("scale", "must be positive"));
            }
            if self.sense_radius > s {
                return Err(Error::invalid("sense_radius", "must not exceed scale"));
            }
        }
        Ok(())
    }
}

/// What one vehicle perceives, in meters and m/s unless `normalized`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub to_destination: Vec2,
    pub velocity: Vec2,
    pub to_nearest_obstacle: Vec2,
    pub to_nearest_ppz: Vec2,
    /// Whether the obstacle/PPZ vectors describe a real entity within range.
    pub obstacle_sensed: bool,
    pub ppz_sensed: bool,
    pub normalized: bool,
}

impl Observation {
    /// Divide distance vectors by `scale` and velocity by the speed cap.
    pub fn normalize(&self, scale: f64) -> Observation {
        if self.normalized {
            return *self;
        }
        let inv = 1.0 / scale;
        Observation {
            to_destination: self.to_destination * inv,
            velocity: self.velocity * (1.0 / MAX_SPEED),
            to_nearest_obstacle: self.to_nearest_obstacle * inv,
            to_nearest_ppz: self.to_nearest_ppz * inv,
            normalized: true,
            ..*self
        }
    }

    pub fn features(&self) -> [f64; OBSERVATION_DIM] {
        [
            self.to_destination.x,
            self.to_destination.y,
            self.velocity.x,
            self.velocity.y,
            self.to_nearest_obstacle.x,
            self.to_nearest_obstacle.y,
            self.to_nearest_ppz.x,
            self.to_nearest_ppz.y,
        ]
    }
}

/// Canonical "nothing nearby" vector: `sense_radius` long, pointing
/// opposite the direction of travel (or away from the destination when
/// stationary).
fn nothing_nearby(velocity: Vec2, to_destination: Vec2, sense_radius: f64) -> Vec2 {
    let behind = velocity
        .try_normalized()
        .or_else(|| to_destination.try_normalized())
        .map(|u| -u)
        .unwrap_or(Vec2::new(-1.0, 0.0));
    behind * sense_radius
}

fn sensed(
    p: Vec2,
    centers: impl IntoIterator<Item = Vec2>,
    sense_radius: f64,
) -> Option<Vec2> {
    match nearest_entity_vector(p, centers) {
        Some((v, d)) if d <= sense_radius => Some(v),
        _ => None,
    }
}

/// Raw (unnormalized) observation of `u` in `env`. `extra_obstacles`
/// are additional point obstacles such as other vehicles.
pub fn build_observation(
    env: &EnvInstance,
    u: &UavState,
    cfg: &ObservationConfig,
    extra_obstacles: &[Vec2],
) -> Observation {
    let scale = cfg.scale_for(env);
    let p = u.position;
    let to_destination = (env.destination - p).clamp_norm(scale);
    let t = env.time_of(u);
    let obstacles = env
        .obstacles_at(t)
        .into_iter()
        .map(|(c, _)| c)
        .chain(extra_obstacles.iter().copied());
    let obstacle = sensed(p, obstacles, cfg.sense_radius);
    let ppz = sensed(p, env.ppzs.iter().map(|z| z.center), cfg.sense_radius);
    let fallback = nothing_nearby(u.velocity, to_destination, cfg.sense_radius);
    Observation {
        to_destination,
        velocity: u.velocity,
        to_nearest_obstacle: obstacle.unwrap_or(fallback),
        to_nearest_ppz: ppz.unwrap_or(fallback),
        obstacle_sensed: obstacle.is_some(),
        ppz_sensed: ppz.is_some(),
        normalized: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airspace::{Ppz, StaticObstacle, Status};
    use proptest::prelude::*;

    fn state(position: Vec2, velocity: Vec2) -> UavState {
        UavState {
            position,
            velocity,
            status: Status::Flying,
            step_count: 0,
        }
    }

    #[test]
    fn destination_is_normalized_by_bounds() {
        let env = EnvInstance::open(10_000.0, Vec2::ZERO, Vec2::new(3000.0, 4000.0));
        let cfg = ObservationConfig::default();
        let o = build_observation(&env, &state(Vec2::ZERO, Vec2::ZERO), &cfg, &[]);
        let n = o.normalize(cfg.scale_for(&env));
        assert!((n.to_destination.x - 0.3).abs() < 1e-12);
        assert!((n.to_destination.y - 0.4).abs() < 1e-12);
        assert!(!o.obstacle_sensed && !o.ppz_sensed);
    }

    #[test]
    fn velocity_is_normalized_by_speed_cap() {
        let env = EnvInstance::open(10_000.0, Vec2::ZERO, Vec2::new(3000.0, 4000.0));
        let cfg = ObservationConfig::default();
        let o = build_observation(&env, &state(Vec2::ZERO, Vec2::new(70.0, 0.0)), &cfg, &[]);
        assert_eq!(o.normalize(10_000.0).velocity, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn distant_obstacle_saturates() {
        let mut env = EnvInstance::open(10_000.0, Vec2::ZERO, Vec2::new(9000.0, 9000.0));
        env.statics.push(StaticObstacle {
            center: Vec2::new(2500.0, 0.0),
            safety_radius: 50.0,
        });
        let cfg = ObservationConfig::default();
        let u = state(Vec2::ZERO, Vec2::new(10.0, 0.0));
        let o = build_observation(&env, &u, &cfg, &[]);
        assert!(!o.obstacle_sensed);
        assert!((o.to_nearest_obstacle.norm() - 2000.0).abs() < 1e-9);
        assert_eq!(o.to_nearest_obstacle, Vec2::new(-2000.0, 0.0));

        env.statics[0].center = Vec2::new(1500.0, 0.0);
        let o = build_observation(&env, &u, &cfg, &[]);
        assert!(o.obstacle_sensed);
        assert_eq!(o.to_nearest_obstacle, Vec2::new(1500.0, 0.0));
    }

    #[test]
    fn other_vehicles_count_as_obstacles() {
        let env = EnvInstance::open(10_000.0, Vec2::ZERO, Vec2::new(9000.0, 9000.0));
        let cfg = ObservationConfig::default();
        let u = state(Vec2::new(100.0, 100.0), Vec2::ZERO);
        let o = build_observation(&env, &u, &cfg, &[Vec2::new(400.0, 500.0)]);
        assert!(o.obstacle_sensed);
        assert_eq!(o.to_nearest_obstacle, Vec2::new(300.0, 400.0));
    }

    #[test]
    fn ppz_channel_reports_nearest_zone() {
        let mut env = EnvInstance::open(10_000.0, Vec2::ZERO, Vec2::new(9000.0, 9000.0));
        env.ppzs.push(Ppz {
            center: Vec2::new(5000.0, 5000.0),
            safety_radius: 1000.0,
        });
        env.ppzs.push(Ppz {
            center: Vec2::new(1200.0, 0.0),
            safety_radius: 1000.0,
        });
        let o = build_observation(
            &env,
            &state(Vec2::ZERO, Vec2::ZERO),
            &ObservationConfig::default(),
            &[],
        );
        assert!(o.ppz_sensed);
        assert_eq!(o.to_nearest_ppz, Vec2::new(1200.0, 0.0));
    }

    proptest! {
        #[test]
        fn normalized_components_stay_in_unit_box(
            px in 0.0f64..4000.0, py in 0.0f64..4000.0,
            dx in 0.0f64..4000.0, dy in 0.0f64..4000.0,
            vx in -70.0f64..70.0, vy in -70.0f64..70.0,
            ox in -1000.0f64..5000.0, oy in -1000.0f64..5000.0,
        ) {
            let mut env = EnvInstance::open(4000.0, Vec2::ZERO, Vec2::new(dx, dy));
            env.statics.push(StaticObstacle { center: Vec2::new(ox, oy), safety_radius: 50.0 });
            env.ppzs.push(Ppz { center: Vec2::new(oy, ox), safety_radius: 1000.0 });
            let v = Vec2::new(vx, vy).clamp_norm(MAX_SPEED);
            let u = state(Vec2::new(px, py), v);
            let cfg = ObservationConfig::default();
            let o = build_observation(&env, &u, &cfg, &[]).normalize(cfg.scale_for(&env));
            for c in o.features() {
                prop_assert!((-1.0..=1.0).contains(&c), "component {c}");
            }
        }
    }
}
