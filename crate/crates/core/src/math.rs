//! Small numeric helpers shared by the physics and solver code.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub type Vec3 = nalgebra::Vector3<f64>;

/// Scalar abstraction used by the closed-form radiance model so the same code
/// evaluates on plain `f64` and on forward-mode dual numbers.
pub trait Real:
    Copy + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn square(self) -> Self {
        self * self
    }

    fn scale(self, k: f64) -> Self {
        self * Self::cst(k)
    }
}

impl Real for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Minimal 3-vector over any [`Real`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct V3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> V3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        Self::new(T::cst(v.x), T::cst(v.y), T::cst(v.z))
    }

    pub fn to_vec3(&self) -> Vec3 {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn scale(&self, k: T) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn normalize(&self) -> Self {
        let inv = T::cst(1.0) / self.norm_squared().sqrt();
        self.scale(inv)
    }
}

/// Orthonormal basis `(t, b, n)` with `n` the given unit vector.
pub fn orthonormal_basis(n: &Vec3) -> (Vec3, Vec3) {
    // Duff et al. branchless construction.
    let sign = 1f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let t = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let bt = Vec3::new(b, sign + n.y * n.y * a, -n.y);
    (t, bt)
}

/// Rotation matrix for a unit axis and an angle in radians (Rodrigues).
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> nalgebra::Matrix3<f64> {
    let unit = nalgebra::Unit::new_normalize(*axis);
    nalgebra::Rotation3::from_axis_angle(&unit, angle).into_inner()
}

pub fn is_unit(v: &Vec3, tol: f64) -> bool {
    (v.norm() - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal() {
        for n in [
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
            Vec3::new(1.0, 2.0, -3.0).normalize(),
            Vec3::new(-0.3, 0.1, 0.2).normalize(),
        ] {
            let (t, b) = orthonormal_basis(&n);
            assert!((t.norm() - 1.0).abs() < 1e-12);
            assert!((b.norm() - 1.0).abs() < 1e-12);
            assert!(t.dot(&b).abs() < 1e-12);
            assert!(t.dot(&n).abs() < 1e-12);
            assert!((t.cross(&b) - n).norm() < 1e-12);
        }
    }

    #[test]
    fn generic_vector_matches_nalgebra() {
        let a = Vec3::new(0.3, -1.2, 2.0);
        let b = Vec3::new(-0.7, 0.4, 0.9);
        let ga = V3::<f64>::from_vec3(&a);
        let gb = V3::<f64>::from_vec3(&b);
        assert_eq!(ga.dot(&gb), a.dot(&b));
        assert!((ga.cross(&gb).to_vec3() - a.cross(&b)).norm() < 1e-15);
        assert!((ga.normalize().to_vec3() - a.normalize()).norm() < 1e-15);
    }
}
