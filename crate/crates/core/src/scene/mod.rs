//! Analytic signed-distance scenes and the SDF→density transform used by the
//! volume integrator.

mod config;

pub use config::{load_scene_config, parse_scene_config, CameraSpec, RenderSettings, SceneConfig};

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::math::{axis_angle_matrix, Vec3};
use crate::pbrdf::Material;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: Vec3,
    },
    /// Ring in the local xy-plane around the local z axis.
    Torus {
        major_radius: f64,
        minor_radius: f64,
    },
    /// Half-space `z ≤ 0` in local coordinates.
    Plane,
}

impl Shape {
    /// Radius of the smallest origin-centred ball holding the shape; `None`
    /// for the unbounded plane.
    pub fn extent(&self) -> Option<f64> {
        match *self {
            Shape::Sphere { radius } => Some(radius),
            Shape::Box { half_extents } => Some(half_extents.norm()),
            Shape::Torus {
                major_radius,
                minor_radius,
            } => Some(major_radius + minor_radius),
            Shape::Plane => None,
        }
    }

    fn distance(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let outside = q.map(|c| c.max(0.0)).norm();
                let inside = q.x.max(q.y).max(q.z).min(0.0);
                outside + inside
            }
            Shape::Torus {
                major_radius,
                minor_radius,
            } => {
                let ring = p.x.hypot(p.y) - major_radius;
                ring.hypot(p.z) - minor_radius
            }
            Shape::Plane => p.z,
        }
    }

    /// Analytic gradient; may be zero or NaN on the medial axis.
    fn gradient(&self, p: &Vec3) -> Vec3 {
        match *self {
            Shape::Sphere { .. } => p / p.norm(),
            Shape::Box { half_extents } => {
                let q = p.abs() - half_extents;
                let sign = p.map(|c| if c < 0.0 { -1.0 } else { 1.0 });
                if q.iter().any(|c| *c > 0.0) {
                    let outside = q.map(|c| c.max(0.0));
                    (outside / outside.norm()).component_mul(&sign)
                } else {
                    let axis = q.imax();
                    let mut g = Vec3::zeros();
                    g[axis] = sign[axis];
                    g
                }
            }
            Shape::Torus { major_radius, .. } => {
                let rho = p.x.hypot(p.y);
                let ring = rho - major_radius;
                let len = ring.hypot(p.z);
                Vec3::new(ring * p.x / rho, ring * p.y / rho, p.z) / len
            }
            Shape::Plane => Vec3::new(0.0, 0.0, 1.0),
        }
    }
}

/// Rigid placement with uniform scale; maps local to world coordinates as
/// `x = position + scale · rotation · local`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    pub position: Vec3,
    pub rotation: Matrix3<f64>,
    pub scale: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            position: Vec3::zeros(),
            rotation: Matrix3::identity(),
            scale: 1.0,
        }
    }
}

impl Placement {
    pub fn new(position: Vec3, axis: Vec3, angle: f64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Domain(format!("scale {scale} must be positive")));
        }
        let rotation = if angle == 0.0 {
            Matrix3::identity()
        } else {
            if axis.norm() < 1e-12 {
                return Err(Error::Domain("rotation axis must be non-zero".into()));
            }
            axis_angle_matrix(&axis, angle)
        };
        Ok(Self {
            position,
            rotation,
            scale,
        })
    }

    pub fn translation(position: Vec3) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn to_local(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.position) / self.scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub placement: Placement,
    pub material: Material,
}

impl Primitive {
    pub fn new(shape: Shape, placement: Placement, material: Material) -> Self {
        Self {
            shape,
            placement,
            material,
        }
    }

    pub fn distance(&self, x: &Vec3) -> f64 {
        self.placement.scale * self.shape.distance(&self.placement.to_local(x))
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        self.placement.rotation * self.shape.gradient(&self.placement.to_local(x))
    }
}

/// Union of primitives inside a bounding sphere centred at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfScene {
    pub primitives: Vec<Primitive>,
    pub bounding_radius: f64,
}

impl SdfScene {
    pub fn new(bounding_radius: f64) -> Result<Self> {
        if !(bounding_radius.is_finite() && bounding_radius > 0.0) {
            return Err(Error::Domain(format!(
                "bounding radius {bounding_radius} must be positive"
            )));
        }
        Ok(Self {
            primitives: Vec::new(),
            bounding_radius,
        })
    }

    pub fn with(mut self, primitive: Primitive) -> Self {
        self.primitives.push(primitive);
        self
    }

    /// Unit sphere at the origin with the given material.
    pub fn unit_sphere(material: Material, bounding_radius: f64) -> Result<Self> {
        Ok(Self::new(bounding_radius)?.with(Primitive::new(
            Shape::Sphere { radius: 1.0 },
            Placement::default(),
            material,
        )))
    }

    fn closest(&self, x: &Vec3) -> Option<(usize, f64)> {
        self.primitives
            .iter()
            .enumerate()
            .map(|(k, p)| (k, p.distance(x)))
            .fold(None, |best, (k, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((k, d)),
            })
    }

    /// Material of the primitive closest to `x`.
    pub fn material_at(&self, x: &Vec3) -> Option<Material> {
        self.closest(x).map(|(k, _)| self.primitives[k].material)
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match self.closest(x) {
            Some((k, _)) => self.primitives[k].gradient(x),
            None => Vec3::zeros(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityParams {
    pub beta: f64,
}

impl DensityParams {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::Domain(format!("beta {beta} must be positive")));
        }
        Ok(Self { beta })
    }

    pub fn default_for(scene: &SdfScene) -> Self {
        Self {
            beta: 1e-3 * scene.bounding_radius,
        }
    }
}

/// Signed distance of the union; `+∞` for a scene without primitives.
pub fn sdf_eval(scene: &SdfScene, x: &Vec3) -> f64 {
    scene.closest(x).map_or(f64::INFINITY, |(_, d)| d)
}

/// Unit normal from the analytic gradient of the closest primitive.
pub fn sdf_normal(scene: &SdfScene, x: &Vec3) -> Result<Vec3> {
    let g = scene.gradient(x);
    let len = g.norm();
    if !(len.is_finite() && len > 1e-9) {
        return Err(Error::DegenerateNormal { x: x.x, y: x.y, z: x.z });
    }
    Ok(g / len)
}

/// Central-difference gradient with step `1e-5 × bounding radius`.
pub fn sdf_gradient_fd(scene: &SdfScene, x: &Vec3) -> Vec3 {
    sdf_gradient_fd_step(scene, x, 1e-5 * scene.bounding_radius)
}

pub fn sdf_gradient_fd_step(scene: &SdfScene, x: &Vec3, step: f64) -> Vec3 {
    let mut g = Vec3::zeros();
    for axis in 0..3 {
        let mut e = Vec3::zeros();
        e[axis] = step;
        g[axis] = (sdf_eval(scene, &(x + e)) - sdf_eval(scene, &(x - e))) / (2.0 * step);
    }
    g
}

/// Laplace-CDF density: `1/β` deep inside, `1/(2β)` on the surface, decaying
/// to zero outside.
pub fn density_from_sdf(d: f64, params: &DensityParams) -> f64 {
    let beta = params.beta;
    if d <= 0.0 {
        (1.0 - 0.5 * (d / beta).exp()) / beta
    } else {
        0.5 * (-d / beta).exp() / beta
    }
}
