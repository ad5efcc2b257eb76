//! Cameras, ray generation, surface finding and Stokes-image synthesis.

mod io;

pub use io::{
    decode_float_image, decode_stokes_image, encode_float_image, encode_stokes_image, read_float_image,
    read_stokes_image, write_float_image, write_png, write_stokes_image, SVIM_CHANNELS, SVIM_VERSION,
};

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::pbrdf::{pbrdf_stokes, ShadingGeometry, StokesRGB};
use crate::polcore::filter_intensity;
use crate::scene::{density_from_sdf, sdf_eval, sdf_normal, CameraSpec, DensityParams, SdfScene};

pub const DEFAULT_VOLUME_SAMPLES: usize = 128;
const MAX_TRACE_STEPS: usize = 1000;
const MASK_THRESHOLD: f64 = 0.5;

/// Pinhole camera. `rotation` maps camera to world coordinates; its columns
/// are the right, up and backward axes (the camera looks along `-z`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub position: Vec3,
    pub rotation: Matrix3<f64>,
    /// Vertical field of view in radians.
    pub fov: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: Vec3, rotation: Matrix3<f64>, fov: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self {
            position,
            rotation,
            fov,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn look_at(position: Vec3, target: Vec3, up: Vec3, fov: f64, width: usize, height: usize) -> Result<Self> {
        let forward = target - position;
        if forward.norm() < 1e-12 {
            return Err(Error::Geometry("camera position coincides with look_at".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Geometry("camera up vector is parallel to the view axis".into()));
        }
        let right = right.normalize();
        let true_up = right.cross(&forward);
        let rotation = Matrix3::from_columns(&[right, true_up, -forward]);
        Self::new(position, rotation, fov, width, height)
    }

    pub fn from_spec(spec: &CameraSpec) -> Result<Self> {
        Self::look_at(
            spec.position,
            spec.look_at,
            spec.up,
            spec.fov_deg.to_radians(),
            spec.width,
            spec.height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(Error::Domain(format!("fov {} outside (0, π)", self.fov)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("camera resolution must be non-zero".into()));
        }
        let gram = self.rotation.transpose() * self.rotation;
        if (gram - Matrix3::identity()).abs().max() > 1e-9 || (self.rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Domain("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn right(&self) -> Vec3 {
        self.rotation.column(0).into()
    }

    pub fn up(&self) -> Vec3 {
        self.rotation.column(1).into()
    }

    pub fn forward(&self) -> Vec3 {
        -Vec3::from(self.rotation.column(2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

/// Ray through the centre of pixel `(px, py)`; the origin is the top-left.
pub fn generate_ray(camera: &Camera, px: usize, py: usize) -> Result<Ray> {
    if px >= camera.width || py >= camera.height {
        return Err(Error::Index {
            x: px,
            y: py,
            width: camera.width,
            height: camera.height,
        });
    }
    let half = (camera.fov / 2.0).tan();
    let aspect = camera.width as f64 / camera.height as f64;
    let sx = (2.0 * (px as f64 + 0.5) / camera.width as f64 - 1.0) * half * aspect;
    let sy = (1.0 - 2.0 * (py as f64 + 0.5) / camera.height as f64) * half;
    let dir = (camera.right() * sx + camera.up() * sy + camera.forward()).normalize();
    Ok(Ray {
        origin: camera.position,
        dir,
    })
}

/// Parameter interval where the ray is inside the bounding sphere.
pub fn bounding_interval(ray: &Ray, radius: f64) -> Option<(f64, f64)> {
    let b = ray.origin.dot(&ray.dir);
    let c = ray.origin.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc <= 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let (t0, t1) = (-b - root, -b + root);
    if t1 <= 0.0 {
        return None;
    }
    Some((t0.max(0.0), t1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub point: Vec3,
    pub t: f64,
    pub normal: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceOutcome {
    Hit(Hit),
    Miss,
    /// Step budget ran out before convergence; treated as a miss.
    Exhausted,
}

impl TraceOutcome {
    pub fn hit(&self) -> Option<Hit> {
        match self {
            TraceOutcome::Hit(h) => Some(*h),
            _ => None,
        }
    }
}

/// First zero crossing of the scene SDF along the ray inside the bounding
/// sphere, converged to `|sdf| < 1e-6 × bounding radius`.
pub fn sphere_trace(scene: &SdfScene, ray: &Ray) -> Result<TraceOutcome> {
    let Some((t0, t1)) = bounding_interval(ray, scene.bounding_radius) else {
        return Ok(TraceOutcome::Miss);
    };
    let eps = 1e-6 * scene.bounding_radius;
    let mut t = t0;
    for _ in 0..MAX_TRACE_STEPS {
        let d = sdf_eval(scene, &ray.at(t));
        if d.abs() < eps {
            return finish_hit(scene, ray, t, eps).map(TraceOutcome::Hit);
        }
        if d < 0.0 {
            // Started inside a solid; no front-facing crossing to report.
            return Ok(TraceOutcome::Miss);
        }
        t += d;
        if t > t1 {
            return Ok(TraceOutcome::Miss);
        }
    }
    Ok(TraceOutcome::Exhausted)
}

/// Newton polish of a converged trace along the ray direction.
fn finish_hit(scene: &SdfScene, ray: &Ray, mut t: f64, eps: f64) -> Result<Hit> {
    for _ in 0..8 {
        let x = ray.at(t);
        let d = sdf_eval(scene, &x);
        if d == 0.0 {
            break;
        }
        let slope = match sdf_normal(scene, &x) {
            Ok(n) => n.dot(&ray.dir),
            Err(_) => break,
        };
        if slope > -0.05 {
            break;
        }
        let next = t - d / slope;
        if sdf_eval(scene, &ray.at(next)).abs() >= d.abs() {
            break;
        }
        t = next;
    }
    let point = ray.at(t);
    debug_assert!(sdf_eval(scene, &point).abs() < eps);
    let normal = sdf_normal(scene, &point)?;
    Ok(Hit { point, t, normal })
}

/// Compositing weights `w_i = T_i (1 − exp(−σ_i δ_i))`.
pub fn volume_weights(sigmas: &[f64], deltas: &[f64]) -> Result<Vec<f64>> {
    if sigmas.len() != deltas.len() {
        return Err(Error::Domain(format!(
            "{} densities but {} spacings",
            sigmas.len(),
            deltas.len()
        )));
    }
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut optical_depth = 0.0f64;
    let mut total = 0.0f64;
    for (k, (&sigma, &delta)) in sigmas.iter().zip(deltas).enumerate() {
        if sigma.is_nan() || sigma < 0.0 {
            return Err(Error::Domain(format!("density {sigma} at sample {k} is negative")));
        }
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("spacing {delta} at sample {k} must be positive")));
        }
        let transmittance = (-optical_depth).exp();
        let tau = sigma * delta;
        // Rounding must not push the running sum past one.
        let w = (transmittance * -(-tau).exp_m1()).min(1.0 - total).max(0.0);
        weights.push(w);
        total += w;
        optical_depth += tau;
    }
    Ok(weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RenderMode {
    SphereTrace,
    Volume,
}

impl fmt::Display for RenderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RenderMode::SphereTrace => "sphere_trace",
            RenderMode::Volume => "volume",
        })
    }
}

impl FromStr for RenderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere_trace" => Ok(RenderMode::SphereTrace),
            "volume" => Ok(RenderMode::Volume),
            other => Err(Error::Domain(format!(
                "unknown render mode `{other}` (expected sphere_trace or volume)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub density: DensityParams,
    pub samples: usize,
    /// Seeds the stratified jitter of volume mode.
    pub seed: u64,
    pub light: [f64; 3],
}

impl RenderOptions {
    pub fn sphere_trace() -> Self {
        Self {
            mode: RenderMode::SphereTrace,
            density: DensityParams { beta: 1e-3 },
            samples: DEFAULT_VOLUME_SAMPLES,
            seed: 0,
            light: [1.0; 3],
        }
    }

    pub fn volume(density: DensityParams, seed: u64) -> Self {
        Self {
            mode: RenderMode::Volume,
            density,
            seed,
            ..Self::sphere_trace()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Pixel {
    pub stokes: StokesRGB,
    pub mask: bool,
    pub normal: Vec3,
    pub depth: f64,
}

impl Pixel {
    pub const EMPTY: Pixel = Pixel {
        stokes: StokesRGB::ZERO,
        mask: false,
        normal: Vec3::new(0.0, 0.0, 0.0),
        depth: 0.0,
    };
}

/// Per-pixel Stokes vectors with hit mask, surface normal and depth. Pixels
/// are stored row-major from the top-left.
#[derive(Clone, Debug, PartialEq)]
pub struct StokesImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Pixel>,
}

impl StokesImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![Pixel::EMPTY; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Result<&Pixel> {
        if x >= self.width || y >= self.height {
            return Err(Error::Index {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(&self.pixels[y * self.width + x])
    }

    /// Per-channel Stokes component as a 3-channel image (`component` 0..4).
    pub fn stokes_channel(&self, component: usize) -> FloatImage {
        let mut out = FloatImage::zeros(self.width, self.height, 3);
        for (k, p) in self.pixels.iter().enumerate() {
            for c in 0..3 {
                out.data[k * 3 + c] = p.stokes.0[c].to_array()[component];
            }
        }
        out
    }

    pub fn mask_image(&self) -> Vec<bool> {
        self.pixels.iter().map(|p| p.mask).collect()
    }
}

/// Dense float image with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FloatImage {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &FloatImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }
}

/// Counters for pixels that did not render cleanly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderDiagnostics {
    pub trace_exhausted: usize,
    pub failed_pixels: usize,
}

pub fn render_stokes_image(scene: &SdfScene, camera: &Camera, options: &RenderOptions) -> Result<StokesImage> {
    render_stokes_image_with_diagnostics(scene, camera, options).map(|(img, _)| img)
}

pub fn render_stokes_image_with_diagnostics(
    scene: &SdfScene,
    camera: &Camera,
    options: &RenderOptions,
) -> Result<(StokesImage, RenderDiagnostics)> {
    camera.validate()?;
    if options.mode == RenderMode::Volume && options.samples == 0 {
        return Err(Error::Domain("volume mode needs at least one sample".into()));
    }
    let exhausted = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let pixels: Vec<Pixel> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|k| {
            let (px, py) = (k % camera.width, k / camera.width);
            let result = generate_ray(camera, px, py).and_then(|ray| match options.mode {
                RenderMode::SphereTrace => shade_traced(scene, camera, &ray, options, &exhausted),
                RenderMode::Volume => shade_volume(scene, camera, &ray, options, k as u64),
            });
            match result {
                Ok(p) if p.stokes.is_finite() => p,
                _ => {
                    failed.fetch_add(1, Ordering::Relaxed);
                    Pixel::EMPTY
                }
            }
        })
        .collect();
    let diagnostics = RenderDiagnostics {
        trace_exhausted: exhausted.into_inner(),
        failed_pixels: failed.into_inner(),
    };
    Ok((
        StokesImage {
            width: camera.width,
            height: camera.height,
            pixels,
        },
        diagnostics,
    ))
}

fn shade_traced(
    scene: &SdfScene,
    camera: &Camera,
    ray: &Ray,
    options: &RenderOptions,
    exhausted: &AtomicUsize,
) -> Result<Pixel> {
    let hit = match sphere_trace(scene, ray)? {
        TraceOutcome::Hit(h) => h,
        TraceOutcome::Miss => return Ok(Pixel::EMPTY),
        TraceOutcome::Exhausted => {
            exhausted.fetch_add(1, Ordering::Relaxed);
            return Ok(Pixel::EMPTY);
        }
    };
    let material = scene
        .material_at(&hit.point)
        .ok_or_else(|| Error::Geometry("hit without a primitive".into()))?;
    let stokes = shade_point(&hit.normal, &-ray.dir, camera, &material, options.light)?;
    Ok(Pixel {
        stokes,
        mask: true,
        normal: hit.normal,
        depth: hit.t,
    })
}

/// Stokes output at a point lit from the mirrored view direction. Back-facing
/// points emit nothing.
fn shade_point(
    normal: &Vec3,
    view: &Vec3,
    camera: &Camera,
    material: &crate::pbrdf::Material,
    light: [f64; 3],
) -> Result<StokesRGB> {
    if normal.dot(view) <= 0.0 {
        return Ok(StokesRGB::ZERO);
    }
    let geom = ShadingGeometry::mirrored(*normal, *view, camera.right())?;
    pbrdf_stokes(&geom, material, light)
}

/// Stratified sample distances along `ray` inside the bounding sphere and
/// their compositing weights, exactly as volume mode uses them for pixel
/// `pixel_index`. `None` when the ray misses the bounding sphere.
pub fn volume_samples(
    scene: &SdfScene,
    ray: &Ray,
    options: &RenderOptions,
    pixel_index: u64,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let Some((t0, t1)) = bounding_interval(ray, scene.bounding_radius) else {
        return Ok(None);
    };
    let n = options.samples;
    let delta = (t1 - t0) / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    rng.set_stream(pixel_index);
    let ts: Vec<f64> = (0..n).map(|k| t0 + (k as f64 + rng.gen::<f64>()) * delta).collect();
    let sigmas: Vec<f64> = ts
        .iter()
        .map(|&t| density_from_sdf(sdf_eval(scene, &ray.at(t)), &options.density))
        .collect();
    let weights = volume_weights(&sigmas, &vec![delta; n])?;
    Ok(Some((ts, weights)))
}

fn shade_volume(scene: &SdfScene, camera: &Camera, ray: &Ray, options: &RenderOptions, stream: u64) -> Result<Pixel> {
    let Some((ts, weights)) = volume_samples(scene, ray, options, stream)? else {
        return Ok(Pixel::EMPTY);
    };
    let total: f64 = weights.iter().sum();
    if total <= MASK_THRESHOLD {
        return Ok(Pixel::EMPTY);
    }

    let view = -ray.dir;
    let mut stokes = StokesRGB::ZERO;
    let mut normal_sum = Vec3::zeros();
    let mut depth = 0.0;
    for (&t, &w) in ts.iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let x = ray.at(t);
        let Ok(normal) = sdf_normal(scene, &x) else {
            continue;
        };
        let material = scene
            .material_at(&x)
            .ok_or_else(|| Error::Geometry("sample without a primitive".into()))?;
        let s = shade_point(&normal, &view, camera, &material, options.light)?;
        for c in 0..3 {
            stokes.0[c] = stokes.0[c] + s.0[c].scale(w);
        }
        normal_sum += normal * w;
        depth += w * t;
    }
    let normal = if normal_sum.norm() > 0.0 {
        normal_sum.normalize()
    } else {
        Vec3::zeros()
    };
    Ok(Pixel {
        stokes,
        mask: true,
        normal,
        depth: depth / total,
    })
}

/// Filtered RGB intensity behind a polarizer at `pol_angle`.
pub fn render_polarized_image(image: &StokesImage, pol_angle: f64) -> FloatImage {
    let mut out = FloatImage::zeros(image.width, image.height, 3);
    for (k, p) in image.pixels.iter().enumerate() {
        if !p.mask {
            continue;
        }
        for c in 0..3 {
            out.data[k * 3 + c] = filter_intensity(p.stokes.0[c], pol_angle);
        }
    }
    out
}
