//! Fresnel intensity coefficients for an air→dielectric interface and the
//! reference-frame rotation that carries them into the camera frame.

use crate::error::{Error, Result};
use crate::math::{Real, Vec3};

pub const DEFAULT_IOR: f64 = 1.5;

/// Reflectance/transmittance split into the parts the pBRDF consumes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FresnelPack {
    pub r_s: f64,
    pub r_p: f64,
    pub t_s: f64,
    pub t_p: f64,
    pub r_plus: f64,
    /// `(r_s − r_p) / 2`
    pub r_minus: f64,
    pub t_plus: f64,
    /// `(t_p − t_s) / 2`
    pub t_minus: f64,
    pub dop_reflection: f64,
    pub dop_transmission: f64,
}

/// `(r_s, r_p)` for external incidence. Transmittance is `1 − r` per
/// polarization; the radiance factor `η² cos θ_t / cos θ_i` is already folded
/// in by that identity.
pub(crate) fn reflectances<T: Real>(cos_i: T, eta: f64) -> (T, T) {
    let one = T::cst(1.0);
    let sin2_i = one - cos_i * cos_i;
    let sin2_t = sin2_i.scale(1.0 / (eta * eta));
    let cos_t = (one - sin2_t).sqrt();
    let eta_cos_t = cos_t.scale(eta);
    let eta_cos_i = cos_i.scale(eta);
    let rs = ((cos_i - eta_cos_t) / (cos_i + eta_cos_t)).square();
    let rp = ((eta_cos_i - cos_t) / (eta_cos_i + cos_t)).square();
    (rs, rp)
}

/// Generic `(R⁺, R⁻, T⁺, T⁻)`; `T⁻ = R⁻` for a lossless interface.
pub(crate) fn split_terms<T: Real>(cos_i: T, eta: f64) -> [T; 4] {
    let (rs, rp) = reflectances(cos_i, eta);
    let r_plus = (rs + rp).scale(0.5);
    let r_minus = (rs - rp).scale(0.5);
    let t_plus = T::cst(1.0) - r_plus;
    [r_plus, r_minus, t_plus, r_minus]
}

fn check_ior(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 1.0 {
        Ok(())
    } else {
        Err(Error::UnsupportedMedium(eta))
    }
}

fn dop(a: f64, b: f64) -> f64 {
    let sum = a + b;
    if sum > 0.0 {
        ((a - b).abs() / sum).min(1.0)
    } else {
        0.0
    }
}

pub fn fresnel_pack(cos_theta_i: f64, eta: f64) -> Result<FresnelPack> {
    if !(cos_theta_i > 0.0 && cos_theta_i <= 1.0) {
        return Err(Error::Domain(format!("cos_theta_i = {cos_theta_i} must lie in (0, 1]")));
    }
    check_ior(eta)?;
    Ok(pack_unchecked(cos_theta_i, eta))
}

pub(crate) fn pack_unchecked(cos_theta_i: f64, eta: f64) -> FresnelPack {
    let (r_s, r_p) = reflectances(cos_theta_i, eta);
    let t_s = 1.0 - r_s;
    let t_p = 1.0 - r_p;
    FresnelPack {
        r_s,
        r_p,
        t_s,
        t_p,
        r_plus: 0.5 * (r_s + r_p),
        r_minus: 0.5 * (r_s - r_p),
        t_plus: 0.5 * (t_s + t_p),
        t_minus: 0.5 * (t_p - t_s),
        dop_reflection: dop(r_s, r_p),
        dop_transmission: dop(t_p, t_s),
    }
}

/// Incidence angle at which p-polarized reflectance vanishes.
pub fn brewster_angle(eta: f64) -> Result<f64> {
    check_ior(eta)?;
    Ok(eta.atan())
}

/// Rotation between the camera reference axis and a scattering axis.
///
/// `psi` is measured counter-clockwise when looking down `view_dir` (from the
/// surface toward the camera). Seen from the camera the scattering axis
/// therefore sits at angle `−psi` from camera x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRotation {
    pub psi: f64,
    pub cos2psi: f64,
    pub sin2psi: f64,
}

impl FrameRotation {
    pub fn from_angle(psi: f64) -> Self {
        let (s, c) = (2.0 * psi).sin_cos();
        Self {
            psi,
            cos2psi: c,
            sin2psi: s,
        }
    }

    /// The same frame with its reference axis turned by 90°.
    pub fn perpendicular(&self) -> Self {
        Self {
            psi: self.psi + std::f64::consts::FRAC_PI_2,
            cos2psi: -self.cos2psi,
            sin2psi: -self.sin2psi,
        }
    }
}

const FRAME_EPS: f64 = 1e-12;

/// Frame rotation from `camera_x_axis` to the scattering axis defined by
/// `plane_axis` projected onto the plane perpendicular to `view_dir`.
///
/// For the transmission (diffuse) plane pass the surface normal: its
/// projection is the axis parallel to the plane of incidence. For the
/// reflection plane pass `view_dir × half_vector`, the perpendicular axis.
pub fn frame_rotation(camera_x_axis: &Vec3, view_dir: &Vec3, plane_axis: &Vec3) -> Result<FrameRotation> {
    let x = camera_x_axis - view_dir * camera_x_axis.dot(view_dir);
    let x_norm = x.norm();
    if x_norm < FRAME_EPS {
        return Err(Error::FrameDegenerate(
            "camera x axis is parallel to the view direction".into(),
        ));
    }
    let p = plane_axis - view_dir * plane_axis.dot(view_dir);
    let p_norm = p.norm();
    if p_norm < FRAME_EPS {
        return Err(Error::FrameDegenerate(
            "scattering plane is undefined along the view direction".into(),
        ));
    }
    let x = x / x_norm;
    let p = p / p_norm;
    let psi = p.cross(&x).dot(view_dir).atan2(x.dot(&p));
    Ok(FrameRotation::from_angle(psi))
}
