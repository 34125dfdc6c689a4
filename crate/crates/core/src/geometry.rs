//! 3-D vectors, rotations and rigid transforms, plus azimuth helpers.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zeros() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn from_f64(v: [f64; 3]) -> Self {
        Self::new(T::lit(v[0]), T::lit(v[1]), T::lit(v[2]))
    }

    pub fn to_f64(self) -> [f64; 3] {
        [self.x.as_f64(), self.y.as_f64(), self.z.as_f64()]
    }

    /// Horizontal unit vector at `azimuth_deg`, counter-clockwise from +x.
    pub fn from_azimuth_deg(azimuth_deg: T) -> Self {
        let a = azimuth_deg.to_radians();
        Self::new(a.cos(), a.sin(), T::zero())
    }

    /// Azimuth of the horizontal projection, in `[0, 360)`.
    pub fn azimuth_deg(self) -> T {
        wrap_degrees(self.y.atan2(self.x).to_degrees())
    }

    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    pub fn distance(self, o: Self) -> T {
        (self - o).norm()
    }

    /// Reflection through the `xz` plane.
    pub fn mirror_y(self) -> Self {
        Self::new(self.x, -self.y, self.z)
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Row-major 3×3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot3<T> {
    m: [[T; 3]; 3],
}

impl<T: Real> Rot3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            m: [[o, z, z], [z, o, z], [z, z, o]],
        }
    }

    /// Rodrigues rotation about `axis` (normalized here) by `angle` radians.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n == T::zero() || angle == T::zero() {
            return Self::identity();
        }
        let Vec3 { x, y, z } = axis * (T::one() / n);
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn rows(&self) -> [[T; 3]; 3] {
        self.m
    }

    pub fn apply(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn compose(&self, o: &Self) -> Self {
        let mut m = [[T::zero(); 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).fold(T::zero(), |acc, k| acc + self.m[r][k] * o.m[k][c]);
            }
        }
        Self { m }
    }

    pub fn transpose(&self) -> Self {
        let mut m = self.m;
        for (r, row) in m.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.m[c][r];
            }
        }
        Self { m }
    }
}

/// Rigid transform `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform<T> {
    pub rotation: Rot3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Transform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Rot3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Rot3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Self::new(Rot3::identity(), t)
    }

    pub fn rotation(r: Rot3<T>) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self ∘ o`: apply `o` first, then `self`.
    pub fn compose(&self, o: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&o.rotation),
            translation: self.rotation.apply(o.translation) + self.translation,
        }
    }

    pub fn apply_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.apply(p) + self.translation
    }

    pub fn apply_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.apply(v)
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees<T: Real>(deg: T) -> T {
    let full = T::lit(360.0);
    let w = deg % full;
    let w = if w < T::zero() { w + full } else { w };
    if w >= full {
        T::zero()
    } else {
        w
    }
}

/// Signed circular difference `a - b` in `(-180, 180]` degrees.
pub fn circular_diff_deg<T: Real>(a: T, b: T) -> T {
    let half = T::lit(180.0);
    let d = wrap_degrees(a - b);
    if d > half {
        d - T::lit(360.0)
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_about_z_quarter_turn() {
        let r = Rot3::from_axis_angle(Vec3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2);
        let v = r.apply(Vec3::new(1.0, 0.0, 0.0));
        assert!((v - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn transform_composition_order() {
        let a = Transform::translation(Vec3::new(1.0, 0.0, 0.0));
        let b = Transform::rotation(Rot3::from_axis_angle(
            Vec3::new(0.0, 0.0, 1.0),
            std::f64::consts::FRAC_PI_2,
        ));
        // rotate then translate
        let p = a.compose(&b).apply_point(Vec3::new(1.0, 0.0, 0.0));
        assert!((p - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn azimuth_wrapping() {
        assert_eq!(wrap_degrees(-10.0), 350.0);
        assert_eq!(wrap_degrees(720.0), 0.0);
        assert_eq!(circular_diff_deg(5.0, 350.0), 15.0);
        assert_eq!(circular_diff_deg(350.0, 5.0), -15.0);
        assert!((Vec3::from_azimuth_deg(225.0f64).azimuth_deg() - 225.0).abs() < 1e-12);
    }
}
