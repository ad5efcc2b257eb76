//! Stokes-vector and Mueller-matrix calculus for linear polarization.
//!
//! Conventions used throughout the crate:
//!
//! * angles (AoP, polarizer orientation) are measured from the camera x axis
//!   toward the camera y axis;
//! * the intensity seen through an ideal linear polarizer is the first
//!   component of the filtered Stokes vector, `I = (M_θ s)[0]`, which equals
//!   `½(s0 + s1 cos 2θ + s2 sin 2θ)`;
//! * the circular component `s3` is carried but never populated.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul};

use crate::error::{Error, Result};

/// Slack allowed when checking `sqrt(s1² + s2² + s3²) ≤ s0`.
pub const REALIZABILITY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub const ZERO: StokesVector = StokesVector {
        s0: 0.0,
        s1: 0.0,
        s2: 0.0,
        s3: 0.0,
    };

    pub const fn new(s0: f64, s1: f64, s2: f64, s3: f64) -> Self {
        Self { s0, s1, s2, s3 }
    }

    /// Linearly polarized light with `s3 = 0`.
    pub const fn linear(s0: f64, s1: f64, s2: f64) -> Self {
        Self::new(s0, s1, s2, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.s0, self.s1, self.s2, self.s3]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn polarized_magnitude(&self) -> f64 {
        (self.s1 * self.s1 + self.s2 * self.s2 + self.s3 * self.s3).sqrt()
    }

    pub fn is_realizable(&self) -> bool {
        self.is_finite()
            && self.s0 >= -REALIZABILITY_TOL
            && self.polarized_magnitude() <= self.s0 + REALIZABILITY_TOL * self.s0.abs().max(1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.s0 * k, self.s1 * k, self.s2 * k, self.s3 * k)
    }
}

impl Add for StokesVector {
    type Output = StokesVector;

    fn add(self, rhs: StokesVector) -> StokesVector {
        StokesVector::new(self.s0 + rhs.s0, self.s1 + rhs.s1, self.s2 + rhs.s2, self.s3 + rhs.s3)
    }
}

/// A 4×4 real matrix acting on Stokes vectors, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuellerMatrix(pub [[f64; 4]; 4]);

impl MuellerMatrix {
    pub const IDENTITY: MuellerMatrix = MuellerMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    /// Ideal linear polarizer transmitting along the reference x axis.
    pub const HORIZONTAL_POLARIZER: MuellerMatrix = MuellerMatrix([
        [0.5, 0.5, 0.0, 0.0],
        [0.5, 0.5, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0],
    ]);

    pub fn transpose(&self) -> MuellerMatrix {
        let mut out = [[0.0; 4]; 4];
        for (r, row) in self.0.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                out[c][r] = *v;
            }
        }
        MuellerMatrix(out)
    }

    pub fn matmul(&self, rhs: &MuellerMatrix) -> MuellerMatrix {
        let mut out = [[0.0; 4]; 4];
        for (r, out_row) in out.iter_mut().enumerate() {
            for (c, cell) in out_row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| self.0[r][k] * rhs.0[k][c]).sum();
            }
        }
        MuellerMatrix(out)
    }

    pub fn max_abs_diff(&self, other: &MuellerMatrix) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for MuellerMatrix {
    type Output = MuellerMatrix;

    fn mul(self, rhs: MuellerMatrix) -> MuellerMatrix {
        self.matmul(&rhs)
    }
}

impl Mul<StokesVector> for MuellerMatrix {
    type Output = StokesVector;

    fn mul(self, rhs: StokesVector) -> StokesVector {
        apply_mueller(&self, rhs)
    }
}

/// Unpolarized intensity, degree and angle of linear polarization.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolarizationInfo {
    pub unpolarized_intensity: f64,
    pub dop: f64,
    /// Radians in `(−π/2, π/2]`.
    pub aop: f64,
}

impl PolarizationInfo {
    /// Rebuilds `(s0, s1, s2)`; inverse of [`extract_polarization_info`].
    pub fn to_stokes(&self) -> StokesVector {
        let s0 = 2.0 * self.unpolarized_intensity;
        let p = self.dop * s0;
        StokesVector::linear(s0, p * (2.0 * self.aop).cos(), p * (2.0 * self.aop).sin())
    }
}

/// Maps any angle onto `(−π/2, π/2]`.
pub fn canonical_aop(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Maps any angle onto `[0, π)`.
pub fn canonical_polarizer_angle(angle: f64) -> f64 {
    let a = angle.rem_euclid(PI);
    if a >= PI {
        0.0
    } else {
        a
    }
}

/// Smallest distance between two angles modulo π, in `[0, π/2]`.
pub fn angle_distance_mod_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

pub fn extract_polarization_info(s: StokesVector) -> Result<PolarizationInfo> {
    if !s.is_finite() {
        return Err(Error::Domain(format!("non-finite Stokes vector {s:?}")));
    }
    if s.s0 < 0.0 {
        return Err(Error::Domain(format!("negative intensity s0 = {}", s.s0)));
    }
    if s.s0 == 0.0 {
        return Ok(PolarizationInfo::default());
    }
    let linear = s.s1.hypot(s.s2);
    let aop = if linear == 0.0 {
        0.0
    } else {
        canonical_aop(0.5 * s.s2.atan2(s.s1))
    };
    Ok(PolarizationInfo {
        unpolarized_intensity: 0.5 * s.s0,
        dop: linear / s.s0,
        aop,
    })
}

/// Sinusoidal transmission law in `(I_un, ρ, φ)` form.
pub fn malus_intensity(info: &PolarizationInfo, pol_angle: f64) -> f64 {
    info.unpolarized_intensity * (1.0 + info.dop * (2.0 * info.aop - 2.0 * pol_angle).cos())
}

/// Reference-frame rotation by `angle`; acts as a rotation by `2·angle` on
/// `(s1, s2)` and leaves `s0`, `s3` untouched.
pub fn rotation_mueller(angle: f64) -> MuellerMatrix {
    let (s, c) = (2.0 * angle).sin_cos();
    MuellerMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, c, s, 0.0],
        [0.0, -s, c, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Ideal linear polarizer with its transmission axis at `pol_angle`:
/// `Rᵀ(θ) · M_LP · R(θ)`.
pub fn linear_polarizer_mueller(pol_angle: f64) -> MuellerMatrix {
    let r = rotation_mueller(pol_angle);
    r.transpose() * MuellerMatrix::HORIZONTAL_POLARIZER * r
}

pub fn apply_mueller(m: &MuellerMatrix, s: StokesVector) -> StokesVector {
    let v = s.to_array();
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m.0.iter()) {
        *o = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    }
    StokesVector::from_array(out)
}

/// Intensity recorded behind a linear polarizer at `pol_angle`.
pub fn filter_intensity(s: StokesVector, pol_angle: f64) -> f64 {
    apply_mueller(&linear_polarizer_mueller(pol_angle), s).s0
}

/// Stokes vector from four polarizer orientations 0°, 45°, 90°, 135°.
pub fn stokes_from_quad(i0: f64, i45: f64, i90: f64, i135: f64) -> Result<StokesVector> {
    for (name, v) in [("i0", i0), ("i45", i45), ("i90", i90), ("i135", i135)] {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("{name} = {v} must be a non-negative intensity")));
        }
    }
    Ok(StokesVector::linear(i0 + i90, i0 - i90, i45 - i135))
}

/// Relative tolerance on the feasible band used by
/// [`solve_polarizer_angle_closed_form`].
pub const CLOSED_FORM_TOL: f64 = 1e-9;

/// Polarizer orientations in `[0, π)` that explain `observed` given the
/// outgoing Stokes vector. Generically two; one at an extremum.
pub fn solve_polarizer_angle_closed_form(s: StokesVector, observed: f64) -> Result<Vec<f64>> {
    let info = extract_polarization_info(s)?;
    if info.dop <= 0.0 || info.unpolarized_intensity <= 0.0 {
        return Err(Error::Unconstrained);
    }
    let i_un = info.unpolarized_intensity;
    let lo = i_un * (1.0 - info.dop);
    let hi = i_un * (1.0 + info.dop);
    let slack = CLOSED_FORM_TOL * i_un.max(1.0);
    if observed < lo - slack || observed > hi + slack {
        return Err(Error::Inconsistent { observed, lo, hi });
    }
    let cos_term = ((observed / i_un - 1.0) / info.dop).clamp(-1.0, 1.0);
    let half = 0.5 * cos_term.acos();
    let a = canonical_polarizer_angle(info.aop - half);
    let b = canonical_polarizer_angle(info.aop + half);
    if angle_distance_mod_pi(a, b) < 1e-12 {
        Ok(vec![a])
    } else if a < b {
        Ok(vec![a, b])
    } else {
        Ok(vec![b, a])
    }
}
