//! Multi-view datasets and their line-oriented `key: value` manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use super::point::ModelSettings;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::{
    read_float_image, read_stokes_image, render_polarized_image, Camera, FloatImage, RenderMode, StokesImage,
};

const MANIFEST_FORMAT: &str = "polarec-dataset";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestView {
    /// Stokes image with mask, normal and depth channels.
    pub svim: String,
    /// Filtered RGB intensity (PFIM), the only radiometric input of the solver.
    pub observed: String,
    pub png: String,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub scene: String,
    pub mode: RenderMode,
    pub seed: u64,
    pub ior: f64,
    pub bounding_radius: f64,
    /// Ground truth for evaluation; never read by the solver.
    pub truth_pol_angle_deg: Option<f64>,
    pub views: Vec<ManifestView>,
}

fn vec_text(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k}: {v}");
        };
        line("format", MANIFEST_FORMAT.into());
        line("version", MANIFEST_VERSION.to_string());
        line("scene", self.scene.clone());
        line("mode", self.mode.to_string());
        line("seed", self.seed.to_string());
        line("ior", self.ior.to_string());
        line("bounding_radius", self.bounding_radius.to_string());
        if let Some(a) = self.truth_pol_angle_deg {
            line("truth.pol_angle_deg", a.to_string());
        }
        line("views", self.views.len().to_string());
        for (k, v) in self.views.iter().enumerate() {
            let c = &v.camera;
            line(&format!("view.{k}.svim"), v.svim.clone());
            line(&format!("view.{k}.observed"), v.observed.clone());
            line(&format!("view.{k}.png"), v.png.clone());
            line(&format!("view.{k}.camera.position"), vec_text(c.position.as_slice()));
            let rows: Vec<f64> = (0..3)
                .flat_map(|r| (0..3).map(move |col| c.rotation[(r, col)]))
                .collect();
            line(&format!("view.{k}.camera.rotation"), vec_text(&rows));
            line(&format!("view.{k}.camera.fov"), c.fov.to_string());
            line(&format!("view.{k}.camera.width"), c.width.to_string());
            line(&format!("view.{k}.camera.height"), c.height.to_string());
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::schema(format!("line {}", n + 1), "expected `key: value`"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::schema(k, "missing field"));
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse::<f64>()
                .map_err(|e| Error::schema(k, e.to_string()))
                .and_then(|x| {
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(Error::schema(k, "must be finite"))
                    }
                })
        };
        let int = |k: &str| -> Result<u64> { get(k)?.parse::<u64>().map_err(|e| Error::schema(k, e.to_string())) };
        let floats = |k: &str, n: usize| -> Result<Vec<f64>> {
            let v = get(k)?
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::schema(k, e.to_string()))?;
            if v.len() != n {
                return Err(Error::schema(k, format!("expected {n} numbers, found {}", v.len())));
            }
            Ok(v)
        };

        if get("format")? != MANIFEST_FORMAT {
            return Err(Error::schema("format", format!("expected `{MANIFEST_FORMAT}`")));
        }
        if int("version")? != MANIFEST_VERSION as u64 {
            return Err(Error::schema("version", format!("expected {MANIFEST_VERSION}")));
        }
        let mode: RenderMode = get("mode")?
            .parse()
            .map_err(|e: Error| Error::schema("mode", e.to_string()))?;
        let count = int("views")? as usize;
        let mut views = Vec::with_capacity(count);
        for k in 0..count {
            let key = |s: &str| format!("view.{k}.{s}");
            let p = floats(&key("camera.position"), 3)?;
            let r = floats(&key("camera.rotation"), 9)?;
            let camera = Camera::new(
                Vec3::new(p[0], p[1], p[2]),
                Matrix3::from_row_slice(&r),
                num(&key("camera.fov"))?,
                int(&key("camera.width"))? as usize,
                int(&key("camera.height"))? as usize,
            )
            .map_err(|e| Error::schema(key("camera"), e.to_string()))?;
            views.push(ManifestView {
                svim: get(&key("svim"))?.clone(),
                observed: get(&key("observed"))?.clone(),
                png: get(&key("png"))?.clone(),
                camera,
            });
        }
        Ok(Self {
            scene: get("scene")?.clone(),
            mode,
            seed: int("seed")?,
            ior: num("ior")?,
            bounding_radius: num("bounding_radius")?,
            truth_pol_angle_deg: match map.get("truth.pol_angle_deg") {
                Some(_) => Some(num("truth.pol_angle_deg")?),
                None => None,
            },
            views,
        })
    }
}

/// One view as seen by the solver: polarized intensities plus the geometric
/// channels of the render.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetView {
    pub camera: Camera,
    /// Filtered RGB intensity, 3 channels.
    pub observed: FloatImage,
    pub mask: Vec<bool>,
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
}

impl DatasetView {
    /// Builds a view from a rendered Stokes image filtered at `pol_angle`.
    pub fn from_render(camera: Camera, image: &StokesImage, pol_angle: f64) -> Self {
        Self::from_parts(camera, image, render_polarized_image(image, pol_angle))
    }

    fn from_parts(camera: Camera, image: &StokesImage, observed: FloatImage) -> Self {
        Self {
            camera,
            observed,
            mask: image.pixels.iter().map(|p| p.mask).collect(),
            depth: image.pixels.iter().map(|p| p.depth).collect(),
            normals: image.pixels.iter().map(|p| p.normal).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub views: Vec<DatasetView>,
    pub model: ModelSettings,
    pub bounding_radius: f64,
}

/// Loads a dataset from its manifest; relative paths resolve against the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, Dataset)> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = Manifest::parse(&text)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut views = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        let stokes = read_stokes_image(&dir.join(&v.svim))?;
        let observed = read_float_image(&dir.join(&v.observed))?;
        if observed.width != stokes.width || observed.height != stokes.height || observed.channels != 3 {
            return Err(Error::Domain(format!(
                "{} does not match the dimensions of {}",
                v.observed, v.svim
            )));
        }
        if stokes.width != v.camera.width || stokes.height != v.camera.height {
            return Err(Error::Domain(format!(
                "{} does not match its camera resolution",
                v.svim
            )));
        }
        views.push(DatasetView::from_parts(v.camera, &stokes, observed));
    }
    let model = ModelSettings {
        ior: manifest.ior,
        light: [1.0; 3],
    };
    let bounding_radius = manifest.bounding_radius;
    Ok((
        manifest,
        Dataset {
            views,
            model,
            bounding_radius,
        },
    ))
}
