//! Vectors and the one direction convention used everywhere.
//!
//! Camera space: the camera looks along -Z, so the fixed outgoing direction
//! toward the viewer is `(0, 0, 1)`. Equirectangular "up" is +Y. A direction
//! `(x, y, z)` maps to colatitude `theta = acos(y)` and azimuth
//! `phi = atan2(x, -z)` wrapped into `[0, 2pi)`.

use core::f64::consts::TAU;
use core::ops::{Add, AddAssign, Mul, Neg, Sub};

// shadowed by inherent methods whenever std is in the build graph
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

pub type Rgb = [f64; 3];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Direction from the surface toward the orthographic camera.
pub const VIEW_DIR: Vec3 = Vec3::new(0.0, 0.0, 1.0);

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn normalize(self) -> Self {
        self * (1.0 / self.norm())
    }

    /// Mirror `self` about the unit vector `n`: `2 (n . v) n - v`.
    #[inline]
    pub fn reflect(self, n: Self) -> Self {
        n * (2.0 * n.dot(self)) - self
    }

    /// Orthonormal tangent frame `(t, b)` completing `self` (assumed unit).
    pub fn tangent_frame(self) -> (Self, Self) {
        // Duff et al. branchless basis.
        let sign = if self.z >= 0.0 { 1.0 } else { -1.0 };
        let a = -1.0 / (sign + self.z);
        let b = self.x * self.y * a;
        let t = Self::new(1.0 + sign * self.x * self.x * a, sign * b, -sign * self.x);
        let bt = Self::new(b, sign + self.y * self.y * a, -self.y);
        (t, bt)
    }
}

impl Add for Vec3 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Self;
    #[inline]
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// `(theta, phi)` of a unit direction.
pub fn direction_to_angles(d: Vec3) -> (f64, f64) {
    let theta = d.y.clamp(-1.0, 1.0).acos();
    let mut phi = d.x.atan2(-d.z);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    (theta, phi)
}

/// Inverse of [`direction_to_angles`].
pub fn angles_to_direction(theta: f64, phi: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vec3::new(st * sp, ct, -st * cp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn angles_round_trip() {
        for &(t, p) in &[(0.3, 0.1), (1.2, 3.0), (2.9, 6.0), (PI / 2.0, PI)] {
            let (t2, p2) = direction_to_angles(angles_to_direction(t, p));
            assert!((t - t2).abs() < 1e-12 && (p - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_and_toward_camera() {
        let (t, p) = direction_to_angles(Vec3::new(0.0, 0.0, -1.0));
        assert!((t - PI / 2.0).abs() < 1e-15 && p.abs() < 1e-15);
        let (_, p) = direction_to_angles(VIEW_DIR);
        assert!((p - PI).abs() < 1e-15);
    }

    #[test]
    fn tangent_frame_is_orthonormal() {
        for n in [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.6, 0.0, -0.8), Vec3::new(0.2, 0.3, 0.5).normalize()] {
            let (t, b) = n.tangent_frame();
            assert!(t.dot(n).abs() < 1e-12 && b.dot(n).abs() < 1e-12 && t.dot(b).abs() < 1e-12);
            assert!((t.norm() - 1.0).abs() < 1e-12 && (b.norm() - 1.0).abs() < 1e-12);
        }
    }
}
