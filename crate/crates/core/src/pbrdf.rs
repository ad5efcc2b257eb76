//! Polarimetric BRDF: diffuse (transmission-driven) plus specular
//! (reflection-driven) outgoing Stokes vectors under a single unpolarized
//! distant light.
//!
//! Two independent evaluation routes exist:
//!
//! * [`pbrdf_stokes`] builds per-channel Stokes vectors using
//!   [`frame_rotation`] and the Mueller calculus of [`crate::polcore`];
//! * [`radiance_closed_form`] evaluates the filtered intensity directly from
//!   the Fresnel coefficients and the polarization angles of the two
//!   scattering planes. It is generic over [`Real`] so the solver can
//!   differentiate it.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fresnel::{self, frame_rotation, FrameRotation, DEFAULT_IOR};
use crate::math::{is_unit, Real, Vec3, V3};
use crate::polcore::{filter_intensity, StokesVector};

/// Below this `n·v` the surface is treated as grazing and emits nothing.
pub const GRAZING_COS: f64 = 1e-6;

const UNIT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub kd: [f64; 3],
    pub ks: [f64; 3],
    pub roughness: f64,
    pub ior: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            kd: [0.5; 3],
            ks: [0.5; 3],
            roughness: 0.5,
            ior: DEFAULT_IOR,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        for (c, v) in self.kd.iter().enumerate() {
            if !(v.is_finite() && (0.0..=1.0).contains(v)) {
                return Err(Error::Domain(format!("kd[{c}] = {v} outside [0, 1]")));
            }
        }
        for (c, v) in self.ks.iter().enumerate() {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::Domain(format!("ks[{c}] = {v} must be non-negative")));
            }
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return Err(Error::Domain(format!("roughness {} outside (0, 1]", self.roughness)));
        }
        if !(self.ior.is_finite() && self.ior > 1.0) {
            return Err(Error::UnsupportedMedium(self.ior));
        }
        Ok(())
    }
}

/// Directions at a shading point. `v` points from the surface to the camera,
/// `i` from the surface to the light.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadingGeometry {
    pub n: Vec3,
    pub v: Vec3,
    pub i: Vec3,
    pub h: Vec3,
    pub camera_x: Vec3,
}

impl ShadingGeometry {
    pub fn new(n: Vec3, v: Vec3, i: Vec3, camera_x: Vec3) -> Result<Self> {
        let h = (v + i).normalize();
        let geom = Self { n, v, i, h, camera_x };
        geom.validate()?;
        Ok(geom)
    }

    /// Geometry with the light along the mirrored view direction, so `h = n`.
    pub fn mirrored(n: Vec3, v: Vec3, camera_x: Vec3) -> Result<Self> {
        let i = mirror_incident(&v, &n)?;
        Self::new(n, v, i, camera_x)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, vec) in [
            ("n", &self.n),
            ("v", &self.v),
            ("i", &self.i),
            ("h", &self.h),
            ("camera_x", &self.camera_x),
        ] {
            if !is_unit(vec, UNIT_TOL) {
                return Err(Error::Geometry(format!("{name} is not unit length: {vec:?}")));
            }
        }
        if self.n.dot(&self.v) <= 0.0 {
            return Err(Error::Geometry("back-facing: n·v ≤ 0".into()));
        }
        Ok(())
    }

    fn is_grazing(&self) -> bool {
        self.n.dot(&self.v) < GRAZING_COS || self.n.dot(&self.i) < GRAZING_COS
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StokesRGB(pub [StokesVector; 3]);

impl StokesRGB {
    pub const ZERO: StokesRGB = StokesRGB([StokesVector::ZERO; 3]);

    pub fn is_realizable(&self) -> bool {
        self.0.iter().all(StokesVector::is_realizable)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(StokesVector::is_finite)
    }

    pub fn filtered(&self, pol_angle: f64) -> [f64; 3] {
        self.0.map(|s| filter_intensity(s, pol_angle))
    }
}

pub fn mirror_incident(v: &Vec3, n: &Vec3) -> Result<Vec3> {
    let c = n.dot(v);
    if c <= 0.0 {
        return Err(Error::Geometry("back-facing: n·v ≤ 0".into()));
    }
    Ok(n * (2.0 * c) - v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicrofacetTerms {
    /// GGX normal distribution at `h`.
    pub d: f64,
    /// Smith height-correlated shadowing-masking.
    pub g: f64,
    /// `D·G / (4 n·v)`.
    pub w: f64,
}

/// GGX with `sin²θ_h` supplied separately; near the peak `1 − cos²` cancels
/// badly at low roughness.
pub(crate) fn ggx_d_split<T: Real>(cos2_h: T, sin2_h: T, alpha: T) -> T {
    let a2 = alpha * alpha;
    let denom = sin2_h + cos2_h * a2;
    a2 / (denom * denom).scale(PI)
}

pub(crate) fn smith_lambda<T: Real>(cos: T, alpha: T) -> T {
    let c2 = cos * cos;
    let tan2 = (T::cst(1.0) - c2) / c2;
    ((T::cst(1.0) + alpha * alpha * tan2).sqrt() - T::cst(1.0)).scale(0.5)
}

pub(crate) fn smith_g<T: Real>(cos_v: T, cos_i: T, alpha: T) -> T {
    T::cst(1.0) / (T::cst(1.0) + smith_lambda(cos_v, alpha) + smith_lambda(cos_i, alpha))
}

pub fn microfacet_terms(geom: &ShadingGeometry, roughness: f64) -> Result<MicrofacetTerms> {
    let cos_v = geom.n.dot(&geom.v);
    if cos_v <= 0.0 {
        return Err(Error::Geometry("back-facing: n·v ≤ 0".into()));
    }
    if !(roughness > 0.0 && roughness <= 1.0) {
        return Err(Error::Domain(format!("roughness {roughness} outside (0, 1]")));
    }
    let cos_i = geom.n.dot(&geom.i);
    let cos_h = geom.n.dot(&geom.h).max(0.0);
    let d = ggx_d_split(cos_h * cos_h, geom.n.cross(&geom.h).norm_squared(), roughness);
    let g = if cos_i > 0.0 {
        smith_g(cos_v, cos_i, roughness)
    } else {
        0.0
    };
    Ok(MicrofacetTerms {
        d,
        g,
        w: d * g / (4.0 * cos_v),
    })
}

/// Per-channel scalar weights of the diffuse and specular Stokes bases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadianceSplit {
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
}

pub fn decompose_radiance(geom: &ShadingGeometry, mat: &Material, light: [f64; 3]) -> Result<RadianceSplit> {
    geom.validate()?;
    mat.validate()?;
    check_light(light)?;
    if geom.is_grazing() {
        return Ok(RadianceSplit {
            diffuse: [0.0; 3],
            specular: [0.0; 3],
        });
    }
    let w = microfacet_terms(geom, mat.roughness)?.w;
    let cos_i = geom.n.dot(&geom.i);
    let mut diffuse = [0.0; 3];
    let mut specular = [0.0; 3];
    for c in 0..3 {
        diffuse[c] = light[c] * mat.kd[c] * cos_i;
        specular[c] = light[c] * mat.ks[c] * w;
    }
    Ok(RadianceSplit { diffuse, specular })
}

/// Unit-weight diffuse and specular Stokes vectors; the full pBRDF output is
/// `c_d · diffuse + c_s · specular` per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbrdfBasis {
    pub diffuse: StokesVector,
    pub specular: StokesVector,
}

fn frame_or_identity(camera_x: &Vec3, v: &Vec3, axis: &Vec3) -> Result<FrameRotation> {
    match frame_rotation(camera_x, v, axis) {
        Ok(f) => Ok(f),
        // The plane of incidence is undefined only at normal incidence, where
        // the polarized Fresnel terms vanish.
        Err(Error::FrameDegenerate(_)) if axis.cross(v).norm() < 1e-12 => Ok(FrameRotation::from_angle(0.0)),
        Err(e) => Err(e),
    }
}

pub fn pbrdf_basis(geom: &ShadingGeometry, ior: f64) -> Result<PbrdfBasis> {
    geom.validate()?;
    if !(ior.is_finite() && ior > 1.0) {
        return Err(Error::UnsupportedMedium(ior));
    }
    if geom.is_grazing() {
        return Ok(PbrdfBasis {
            diffuse: StokesVector::ZERO,
            specular: StokesVector::ZERO,
        });
    }
    let exit = fresnel::pack_unchecked(geom.n.dot(&geom.v).min(1.0), ior);
    let entry = fresnel::pack_unchecked(geom.n.dot(&geom.i).min(1.0), ior);
    let refl = fresnel::pack_unchecked(geom.v.dot(&geom.h).clamp(GRAZING_COS, 1.0), ior);

    let transmission = frame_or_identity(&geom.camera_x, &geom.v, &geom.n)?;
    let reflection_axis = geom.v.cross(&geom.h);
    let reflection = if reflection_axis.norm() < 1e-12 {
        FrameRotation::from_angle(0.0)
    } else {
        frame_rotation(&geom.camera_x, &geom.v, &reflection_axis.normalize())?
    };
    let (beta, alpha) = (transmission.cos2psi, transmission.sin2psi);
    let (gamma, chi) = (reflection.cos2psi, reflection.sin2psi);

    let diffuse = StokesVector::linear(
        exit.t_plus * entry.t_plus,
        exit.t_minus * entry.t_plus * beta,
        -exit.t_minus * entry.t_plus * alpha,
    );
    let specular = StokesVector::linear(refl.r_plus, refl.r_minus * gamma, -refl.r_minus * chi);
    Ok(PbrdfBasis { diffuse, specular })
}

fn check_light(light: [f64; 3]) -> Result<()> {
    if light.iter().all(|l| l.is_finite() && *l >= 0.0) {
        Ok(())
    } else {
        Err(Error::Domain(format!("light {light:?} must be non-negative")))
    }
}

pub fn pbrdf_stokes(geom: &ShadingGeometry, mat: &Material, light: [f64; 3]) -> Result<StokesRGB> {
    let split = decompose_radiance(geom, mat, light)?;
    let basis = pbrdf_basis(geom, mat.ior)?;
    let mut out = StokesRGB::ZERO;
    for c in 0..3 {
        out.0[c] = basis.diffuse.scale(split.diffuse[c]) + basis.specular.scale(split.specular[c]);
    }
    if !out.is_finite() {
        return Err(Error::Numeric(format!("non-finite pBRDF output {out:?}")));
    }
    Ok(out)
}

/// Filtered RGB radiance via the Stokes route.
pub fn radiance_at_filter(geom: &ShadingGeometry, mat: &Material, light: [f64; 3], pol_angle: f64) -> Result<[f64; 3]> {
    Ok(pbrdf_stokes(geom, mat, light)?.filtered(pol_angle))
}

/// Material parameters for the generic closed-form model.
#[derive(Clone, Copy, Debug)]
pub struct MaterialParams<T> {
    pub kd: [T; 3],
    pub ks: [T; 3],
    pub roughness: T,
    pub ior: f64,
}

impl MaterialParams<f64> {
    pub fn from_material(m: &Material) -> Self {
        Self {
            kd: m.kd,
            ks: m.ks,
            roughness: m.roughness,
            ior: m.ior,
        }
    }
}

/// `cos 2φ`, `sin 2φ` of the direction `axis` projected into the camera
/// image plane spanned by `x` and `y`. Zero when the projection vanishes.
fn double_angle<T: Real>(axis: &V3<T>, x: &V3<T>, y: &V3<T>) -> (T, T) {
    let px = axis.dot(x);
    let py = axis.dot(y);
    let q = px * px + py * py;
    if q.value() <= 1e-300 {
        return (T::cst(0.0), T::cst(0.0));
    }
    ((px * px - py * py) / q, (px * py).scale(2.0) / q)
}

/// Filtered RGB radiance in closed form:
///
/// `I = ½ L [ k_d (n·i) T_i⁺ (T_o⁺ + T_o⁻ cos(2φ_t − 2θ)) + k_s W (R⁺ + R⁻ cos(2φ_r − 2θ)) ]`
///
/// with `φ_t` the orientation of the plane of incidence and `φ_r` the
/// orientation perpendicular to the reflection plane, both measured in the
/// camera frame. `light_dir = None` places the light along the mirrored view
/// direction.
pub fn radiance_closed_form<T: Real>(
    n: &V3<T>,
    view: &Vec3,
    light_dir: Option<&Vec3>,
    camera_x: &Vec3,
    mat: &MaterialParams<T>,
    light: [f64; 3],
    pol_angle: T,
) -> [T; 3] {
    let zero = [T::cst(0.0); 3];
    let v = V3::<T>::from_vec3(view);
    let cos_v = n.dot(&v);
    let i = match light_dir {
        Some(l) => V3::from_vec3(l),
        None => n.scale(cos_v.scale(2.0)).sub(&v),
    };
    let cos_i = n.dot(&i);
    if cos_v.value() < GRAZING_COS || cos_i.value() < GRAZING_COS {
        return zero;
    }
    let h = v.add(&i).normalize();
    let cos_h = n.dot(&h);
    let mut cos_vh = v.dot(&h);
    if cos_vh.value() > 1.0 {
        cos_vh = T::cst(1.0);
    }

    let [_, _, t_out_plus, t_out_minus] = fresnel::split_terms(cos_v, mat.ior);
    let [_, _, t_in_plus, _] = fresnel::split_terms(cos_i, mat.ior);
    let [r_plus, r_minus, _, _] = fresnel::split_terms(cos_vh, mat.ior);

    let d = ggx_d_split(cos_h * cos_h, n.cross(&h).norm_squared(), mat.roughness);
    let g = smith_g(cos_v, cos_i, mat.roughness);
    let w = d * g / cos_v.scale(4.0);

    let cam_x = (camera_x - view * camera_x.dot(view)).normalize();
    let cam_y = view.cross(&cam_x);
    let (x, y) = (V3::<T>::from_vec3(&cam_x), V3::<T>::from_vec3(&cam_y));
    let in_plane = n.sub(&v.scale(cos_v));
    let (cos2t, sin2t) = double_angle(&in_plane, &x, &y);
    let perp = v.cross(&h);
    let (cos2r, sin2r) = double_angle(&perp, &x, &y);

    let two_theta = pol_angle.scale(2.0);
    let (c2p, s2p) = (two_theta.cos(), two_theta.sin());
    let trans_mod = cos2t * c2p + sin2t * s2p;
    let refl_mod = cos2r * c2p + sin2r * s2p;

    let diffuse_common = cos_i * t_in_plus * (t_out_plus + t_out_minus * trans_mod);
    let specular_common = w * (r_plus + r_minus * refl_mod);
    let mut out = zero;
    for c in 0..3 {
        out[c] = (mat.kd[c] * diffuse_common + mat.ks[c] * specular_common).scale(0.5 * light[c]);
    }
    out
}

/// f64 convenience wrapper around [`radiance_closed_form`] for a validated
/// geometry.
pub fn radiance_at_filter_closed_form(
    geom: &ShadingGeometry,
    mat: &Material,
    light: [f64; 3],
    pol_angle: f64,
) -> Result<[f64; 3]> {
    geom.validate()?;
    mat.validate()?;
    check_light(light)?;
    Ok(radiance_closed_form(
        &V3::from_vec3(&geom.n),
        &geom.v,
        Some(&geom.i),
        &geom.camera_x,
        &MaterialParams::from_material(mat),
        light,
        pol_angle,
    ))
}
