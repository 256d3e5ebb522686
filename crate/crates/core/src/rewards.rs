//! Reward composition for goal-directed flight.
//!
//! Two progress-shaping terms are available: an exponential distance
//! penalty and a thresholded heading-alignment (dot-product) reward. The
//! simple composition adds arrival/exit terminals to one of them; the full
//! composition adds collision and PPZ terminals plus alignment rewards for
//! moving away from a nearby obstacle or PPZ.

use serde::{Deserialize, Serialize};

use crate::airspace::Status;
use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapingMode {
    Distance,
    Dot,
}

impl std::fmt::Display for ShapingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapingMode::Distance => "distance",
            ShapingMode::Dot => "dot",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub mode: ShapingMode,
    pub r1_success: f64,
    pub r2_exit: f64,
    pub r3_collision: f64,
    pub r4_ppz: f64,
    pub dot_alpha: f64,
    pub dot_beta: f64,
    pub dot_gamma: f64,
    pub dot_threshold: f64,
    /// 1/m
    pub dist_alpha: f64,
    pub dist_beta: f64,
    pub avoid_weight_obstacle: f64,
    pub avoid_weight_ppz: f64,
    pub alert_radius_obstacle: f64,
    pub alert_radius_ppz: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            mode: ShapingMode::Dot,
            r1_success: 100.0,
            r2_exit: -100.0,
            r3_collision: -100.0,
            r4_ppz: -100.0,
            dot_alpha: 2.0,
            dot_beta: 1.0,
            dot_gamma: 1.0,
            dot_threshold: 0.9,
            dist_alpha: 2e-4,
            dist_beta: 1.0,
            avoid_weight_obstacle: 0.5,
            avoid_weight_ppz: 0.5,
            alert_radius_obstacle: 500.0,
            alert_radius_ppz: 1500.0,
        }
    }
}

impl RewardConfig {
    /// Returns the name of the first offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let finite = [
            ("r1_success", self.r1_success),
            ("r2_exit", self.r2_exit),
            ("r3_collision", self.r3_collision),
            ("r4_ppz", self.r4_ppz),
            ("dot_alpha", self.dot_alpha),
            ("dot_beta", self.dot_beta),
            ("dot_gamma", self.dot_gamma),
            ("dist_beta", self.dist_beta),
            ("avoid_weight_obstacle", self.avoid_weight_obstacle),
            ("avoid_weight_ppz", self.avoid_weight_ppz),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return Err((name, "must be finite".into()));
            }
        }
        if !(self.dot_threshold > 0.0 && self.dot_threshold < 1.0) {
            return Err(("dot_threshold", "must lie in (0, 1)".into()));
        }
        let positive = [
            ("dist_alpha", self.dist_alpha),
            ("alert_radius_obstacle", self.alert_radius_obstacle),
            ("alert_radius_ppz", self.alert_radius_ppz),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err((name, "must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Everything one step contributes to the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext {
    pub prev_position: Vec2,
    pub new_position: Vec2,
    pub destination: Vec2,
    /// Offset from `prev_position` to the nearest obstacle, and its length.
    pub nearest_obstacle: Option<(Vec2, f64)>,
    pub nearest_ppz: Option<(Vec2, f64)>,
    pub status: Status,
}

impl StepContext {
    fn displacement_dir(&self) -> Vec2 {
        (self.new_position - self.prev_position).normalized()
    }
}

/// `beta * exp(-alpha * d) - beta`: zero at the destination, tending to
/// `-beta` far away.
pub fn reward_distance(distance: f64, cfg: &RewardConfig) -> f64 {
    cfg.dist_beta * (-cfg.dist_alpha * distance).exp() - cfg.dist_beta
}

/// Thresholded alignment reward for the cosine `c` between the heading to
/// the goal and the step displacement.
pub fn reward_dot_cosine(c: f64, cfg: &RewardConfig) -> f64 {
    if c > cfg.dot_threshold {
        cfg.dot_alpha * c - cfg.dot_beta
    } else {
        cfg.dot_gamma * c - cfg.dot_beta
    }
}

/// [`reward_dot_cosine`] of two directions. A zero vector contributes a
/// cosine of 0.
pub fn reward_dot(to_goal: Vec2, displacement: Vec2, cfg: &RewardConfig) -> f64 {
    reward_dot_cosine(to_goal.normalized().dot(displacement.normalized()), cfg)
}

fn shaping(ctx: &StepContext, cfg: &RewardConfig) -> f64 {
    match cfg.mode {
        ShapingMode::Distance => reward_distance(ctx.new_position.distance(ctx.destination), cfg),
        ShapingMode::Dot => reward_dot(
            ctx.destination - ctx.prev_position,
            ctx.new_position - ctx.prev_position,
            cfg,
        ),
    }
}

/// Arrival + exit terminals plus one shaping term, for obstacle-free worlds.
pub fn total_reward_simple(ctx: &StepContext, cfg: &RewardConfig) -> Result<f64> {
    let reach = ctx.status == Status::Success;
    let exit = ctx.status == Status::Exited;
    if reach && exit {
        return Err(Error::ConflictingIndicators("reach and exit".into()));
    }
    let mut r = shaping(ctx, cfg);
    if reach {
        r += cfg.r1_success;
    }
    if exit {
        r += cfg.r2_exit;
    }
    Ok(r)
}

/// `weight * (e_away . e_d)` when the entity is inside `alert_radius`.
fn avoidance(
    nearest: Option<(Vec2, f64)>,
    e_d: Vec2,
    weight: f64,
    alert_radius: f64,
) -> f64 {
    match nearest {
        Some((offset, d)) if d < alert_radius => weight * (-offset).normalized().dot(e_d),
        _ => 0.0,
    }
}

/// Four terminal indicators, heading reward toward the destination and
/// gated heading rewards away from the nearest obstacle and PPZ.
pub fn total_reward_full(ctx: &StepContext, cfg: &RewardConfig) -> f64 {
    let e_d = ctx.displacement_dir();
    let terminal = match ctx.status {
        Status::Success => cfg.r1_success,
        Status::Exited => cfg.r2_exit,
        Status::Collision => cfg.r3_collision,
        Status::PpzEntered => cfg.r4_ppz,
        Status::Flying | Status::Timeout => 0.0,
    };
    let progress = shaping(ctx, cfg);
    let obstacle = avoidance(
        ctx.nearest_obstacle,
        e_d,
        cfg.avoid_weight_obstacle,
        cfg.alert_radius_obstacle,
    );
    let ppz = avoidance(
        ctx.nearest_ppz,
        e_d,
        cfg.avoid_weight_ppz,
        cfg.alert_radius_ppz,
    );
    terminal + progress + obstacle + ppz
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> RewardConfig {
        RewardConfig::default()
    }

    fn ctx(prev: Vec2, new: Vec2, dest: Vec2, status: Status) -> StepContext {
        StepContext {
            prev_position: prev,
            new_position: new,
            destination: dest,
            nearest_obstacle: None,
            nearest_ppz: None,
            status,
        }
    }

    /// Series expansion of exp, independent of `f64::exp`.
    fn exp_series(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= x / k as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn distance_reward_examples() {
        assert_eq!(reward_distance(0.0, &cfg()), 0.0);
        assert!((reward_distance(1e9, &cfg()) + 1.0).abs() < 1e-12);
        let expected = exp_series(-1.0) - 1.0;
        assert!((expected - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert!((reward_distance(5000.0, &cfg()) - expected).abs() < 1e-12);
    }

    #[test]
    fn dot_reward_examples() {
        assert_eq!(reward_dot_cosine(1.0, &cfg()), 1.0);
        assert_eq!(reward_dot_cosine(0.0, &cfg()), -1.0);
        assert!((reward_dot_cosine(0.9, &cfg()) + 0.1).abs() < 1e-12);
        let aligned = reward_dot(Vec2::new(10.0, 0.0), Vec2::new(3.0, 0.0), &cfg());
        assert_eq!(aligned, 1.0);
        assert_eq!(reward_dot(Vec2::new(1.0, 0.0), Vec2::ZERO, &cfg()), -1.0);
    }

    #[test]
    fn dot_reward_jumps_once_at_threshold() {
        let c = cfg();
        let below = reward_dot_cosine(0.9, &c);
        let above = reward_dot_cosine(0.9 + 1e-12, &c);
        let jump = (c.dot_alpha - c.dot_gamma) * 0.9;
        assert!((above - below - jump).abs() < 1e-9);
    }

    #[test]
    fn simple_reward_examples() {
        let d = Vec2::new(1000.0, 0.0);
        let s = ctx(Vec2::new(850.0, 0.0), Vec2::new(920.0, 0.0), d, Status::Success);
        assert_eq!(total_reward_simple(&s, &cfg()).unwrap(), 101.0);

        let e = ctx(Vec2::ZERO, Vec2::new(0.0, 10.0), d, Status::Exited);
        assert_eq!(total_reward_simple(&e, &cfg()).unwrap(), -101.0);

        let dist = RewardConfig {
            mode: ShapingMode::Distance,
            ..cfg()
        };
        let f = ctx(
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 0.0),
            Vec2::new(5000.0, 0.0),
            Status::Flying,
        );
        let r = total_reward_simple(&f, &dist).unwrap();
        assert!((r - (exp_series(-1.0) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn full_reward_examples() {
        let d = Vec2::new(5000.0, 0.0);
        let flying = ctx(Vec2::ZERO, Vec2::new(70.0, 0.0), d, Status::Flying);
        assert_eq!(total_reward_full(&flying, &cfg()), 1.0);

        // collision while flying perpendicular, obstacle 300 m behind the motion
        let mut col = ctx(Vec2::ZERO, Vec2::new(0.0, 70.0), d, Status::Collision);
        col.nearest_obstacle = Some((Vec2::new(0.0, -300.0), 300.0));
        assert!((total_reward_full(&col, &cfg()) - (-100.0 - 1.0 + 0.5)).abs() < 1e-12);

        // moving straight away from an obstacle 300 m ahead of the goal line
        let mut away = ctx(Vec2::ZERO, Vec2::new(-70.0, 0.0), d, Status::Flying);
        away.nearest_obstacle = Some((Vec2::new(300.0, 0.0), 300.0));
        let r6 = total_reward_full(&away, &cfg()) - reward_dot_cosine(-1.0, &cfg());
        assert!((r6 - 0.5).abs() < 1e-12);

        // outside the alert radius the avoidance terms vanish
        let mut far = flying;
        far.nearest_obstacle = Some((Vec2::new(0.0, 600.0), 600.0));
        far.nearest_ppz = Some((Vec2::new(0.0, 1600.0), 1600.0));
        assert_eq!(total_reward_full(&far, &cfg()), 1.0);

        let mut ppz = ctx(Vec2::ZERO, Vec2::new(0.0, -70.0), d, Status::Flying);
        ppz.nearest_ppz = Some((Vec2::new(0.0, 1200.0), 1200.0));
        assert!((total_reward_full(&ppz, &cfg()) - (-1.0 + 0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn distance_reward_is_decreasing_and_bounded(a in 0.0f64..50_000.0, b in 0.0f64..50_000.0) {
            let c = cfg();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let (rl, rh) = (reward_distance(lo, &c), reward_distance(hi, &c));
            prop_assert!(rl >= rh);
            if hi - lo > 1.0 { prop_assert!(rl > rh); }
            prop_assert!(rh > -c.dist_beta && rl <= 0.0);
        }

        #[test]
        fn shaping_terms_are_bounded(
            px in -1e4f64..1e4, py in -1e4f64..1e4,
            dx in -70.0f64..70.0, dy in -70.0f64..70.0,
            ox in -600.0f64..600.0, oy in -600.0f64..600.0,
        ) {
            let c = cfg();
            let prev = Vec2::new(px, py);
            let mut s = ctx(prev, prev + Vec2::new(dx, dy), Vec2::new(3.0, 7.0), Status::Flying);
            let off = Vec2::new(ox, oy);
            s.nearest_obstacle = Some((off, off.norm()));
            s.nearest_ppz = Some((off, off.norm()));
            let r = total_reward_full(&s, &c);
            let bound = c.dot_alpha.max(c.dot_gamma) + c.dot_beta
                + c.avoid_weight_obstacle + c.avoid_weight_ppz;
            prop_assert!(r.abs() <= bound + 1e-12);
        }
    }
}
