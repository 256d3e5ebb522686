//! Planar vectors for positions, velocities and accelerations.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2D vector. Units depend on context (m, m/s or m/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (other - self).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction. The zero vector maps to zero.
    pub fn normalized(self) -> Vec2 {
        self.try_normalized().unwrap_or(Vec2::ZERO)
    }

    /// Unit vector, or `None` for a zero-length input.
    pub fn try_normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n > 0.0 && n.is_finite() {
            Some(Vec2::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    /// Rescale so the magnitude does not exceed `max`, preserving direction.
    pub fn clamp_norm(self, max: f64) -> Vec2 {
        let n = self.norm();
        if n <= max {
            return self;
        }
        let mut v = self * (max / n);
        // rounding can leave the rescaled vector an ulp too long
        while v.norm() > max {
            v = v * (1.0 - f64::EPSILON);
        }
        v
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_vectors_have_unit_norm() {
        let u = Vec2::new(3.0, -4.0).normalized();
        assert!((u.norm() - 1.0).abs() < 1e-9);
        assert_eq!(Vec2::ZERO.normalized(), Vec2::ZERO);
        assert!(Vec2::ZERO.try_normalized().is_none());
    }

    #[test]
    fn clamp_norm_preserves_direction() {
        let v = Vec2::new(60.0, 80.0).clamp_norm(70.0);
        assert!((v.norm() - 70.0).abs() < 1e-12);
        assert!((v.x / v.y - 0.75).abs() < 1e-12);
        assert_eq!(Vec2::new(1.0, 2.0).clamp_norm(70.0), Vec2::new(1.0, 2.0));
    }

    #[test]
    fn clamp_norm_never_overshoots() {
        for i in 1..20_000 {
            let t = f64::from(i) * 0.37;
            let v = Vec2::new(t.cos(), t.sin()) * (70.0 + f64::from(i % 97) * 0.013);
            assert!(v.clamp_norm(70.0).norm() <= 70.0, "{v:?}");
        }
    }
}
