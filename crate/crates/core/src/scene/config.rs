//! TOML scene configuration.
//!
//! ```toml
//! [scene]
//! bounding_radius = 2.0
//!
//! [[primitives]]
//! shape = "sphere"
//! radius = 1.0
//! position = [0.0, 0.0, 0.0]
//! rotation = [0.0, 0.0, 1.0, 0.0]   # axis x, y, z and angle in degrees
//! material = { kd = [0.5, 0.5, 0.5], ks = [0.5, 0.5, 0.5], roughness = 0.3, ior = 1.5 }
//!
//! [density]
//! beta = 0.002
//!
//! [[cameras]]
//! position = [0.0, 0.0, 4.0]
//! look_at = [0.0, 0.0, 0.0]
//! up = [0.0, 1.0, 0.0]
//! fov_deg = 40.0
//! width = 32
//! height = 32
//!
//! [render]
//! pol_angle_deg = 45.0
//! mode = "sphere_trace"
//! ```

use std::path::Path;

use toml::value::{Table, Value};

use super::{DensityParams, Placement, Primitive, SdfScene, Shape};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::pbrdf::Material;
use crate::render::RenderMode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraSpec {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    pub pol_angle_deg: f64,
    pub mode: RenderMode,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            pol_angle_deg: 0.0,
            mode: RenderMode::SphereTrace,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub scene: SdfScene,
    pub density: DensityParams,
    pub cameras: Vec<CameraSpec>,
    pub render: RenderSettings,
}

pub fn load_scene_config(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_config(&text)
}

pub fn parse_scene_config(text: &str) -> Result<SceneConfig> {
    let root: Table = toml::from_str(text).map_err(|e| Error::schema("<document>", e.message().to_string()))?;
    check_keys(&root, "", &["scene", "primitives", "density", "cameras", "render"])?;

    let scene_table = table(&root, "scene", "scene")?;
    check_keys(scene_table, "scene", &["bounding_radius"])?;
    let radius = number(scene_table, "bounding_radius", "scene.bounding_radius")?;
    let mut scene = SdfScene::new(radius).map_err(|e| Error::schema("scene.bounding_radius", e.to_string()))?;

    for (k, item) in array(&root, "primitives")?.iter().enumerate() {
        let path = format!("primitives[{k}]");
        let prim = primitive(item, &path)?;
        if let Some(extent) = prim.shape.extent() {
            let reach = prim.placement.position.norm() + prim.placement.scale * extent;
            if reach > radius * (1.0 + 1e-9) {
                return Err(Error::schema(
                    path,
                    format!("extends to {reach} from the origin, beyond scene.bounding_radius {radius}"),
                ));
            }
        }
        scene.primitives.push(prim);
    }

    let density = match root.get("density") {
        None => DensityParams::default_for(&scene),
        Some(v) => {
            let t = as_table(v, "density")?;
            check_keys(t, "density", &["beta"])?;
            let beta = number(t, "beta", "density.beta")?;
            DensityParams::new(beta).map_err(|e| Error::schema("density.beta", e.to_string()))?
        }
    };

    let cameras = array(&root, "cameras")?
        .iter()
        .enumerate()
        .map(|(k, v)| camera(v, &format!("cameras[{k}]")))
        .collect::<Result<Vec<_>>>()?;

    let render = match root.get("render") {
        None => RenderSettings::default(),
        Some(v) => {
            let t = as_table(v, "render")?;
            check_keys(t, "render", &["pol_angle_deg", "mode"])?;
            let pol_angle_deg = match t.get("pol_angle_deg") {
                None => 0.0,
                Some(_) => number(t, "pol_angle_deg", "render.pol_angle_deg")?,
            };
            let mode = match t.get("mode") {
                None => RenderMode::SphereTrace,
                Some(Value::String(s)) => s
                    .parse()
                    .map_err(|e: Error| Error::schema("render.mode", e.to_string()))?,
                Some(_) => return Err(Error::schema("render.mode", "expected a string")),
            };
            RenderSettings { pol_angle_deg, mode }
        }
    };

    Ok(SceneConfig {
        scene,
        density,
        cameras,
        render,
    })
}

fn primitive(v: &Value, path: &str) -> Result<Primitive> {
    let t = as_table(v, path)?;
    let shape_name = match t.get("shape") {
        Some(Value::String(s)) => s.as_str(),
        Some(_) => return Err(Error::schema(format!("{path}.shape"), "expected a string")),
        None => return Err(Error::schema(format!("{path}.shape"), "missing field")),
    };
    let field = |name: &str| format!("{path}.{name}");
    let common = ["shape", "position", "rotation", "scale", "material"];
    let (shape, extra): (Shape, &[&str]) = match shape_name {
        "sphere" => (
            Shape::Sphere {
                radius: positive(t, "radius", &field("radius"))?,
            },
            &["radius"],
        ),
        "box" => {
            let half_extents = vec3(t, "half_extents", &field("half_extents"))?;
            if half_extents.iter().any(|c| *c <= 0.0) {
                return Err(Error::schema(field("half_extents"), "components must be positive"));
            }
            (Shape::Box { half_extents }, &["half_extents"])
        }
        "torus" => {
            let major_radius = positive(t, "major_radius", &field("major_radius"))?;
            let minor_radius = positive(t, "minor_radius", &field("minor_radius"))?;
            if minor_radius >= major_radius {
                return Err(Error::schema(field("minor_radius"), "must be below major_radius"));
            }
            (
                Shape::Torus {
                    major_radius,
                    minor_radius,
                },
                &["major_radius", "minor_radius"],
            )
        }
        "plane" => (Shape::Plane, &[]),
        other => {
            return Err(Error::schema(
                field("shape"),
                format!("unknown shape `{other}` (expected sphere, box, torus or plane)"),
            ))
        }
    };
    let allowed: Vec<&str> = common.iter().chain(extra.iter()).copied().collect();
    check_keys(t, path, &allowed)?;

    let position = vec3(t, "position", &field("position"))?;
    let (axis, angle_deg) = match t.get("rotation") {
        None => (Vec3::z(), 0.0),
        Some(v) => {
            let r = floats(v, &field("rotation"), 4)?;
            (Vec3::new(r[0], r[1], r[2]), r[3])
        }
    };
    let scale = match t.get("scale") {
        None => 1.0,
        Some(_) => positive(t, "scale", &field("scale"))?,
    };
    let placement = Placement::new(position, axis, angle_deg.to_radians(), scale)
        .map_err(|e| Error::schema(field("rotation"), e.to_string()))?;
    let material = material(t.get("material"), &field("material"))?;
    Ok(Primitive::new(shape, placement, material))
}

fn material(v: Option<&Value>, path: &str) -> Result<Material> {
    let v = v.ok_or_else(|| Error::schema(path, "missing field"))?;
    let t = as_table(v, path)?;
    check_keys(t, path, &["kd", "ks", "roughness", "ior"])?;
    let rgb = |name: &str| -> Result<[f64; 3]> {
        let f = floats(
            t.get(name)
                .ok_or_else(|| Error::schema(format!("{path}.{name}"), "missing field"))?,
            &format!("{path}.{name}"),
            3,
        )?;
        Ok([f[0], f[1], f[2]])
    };
    let m = Material {
        kd: rgb("kd")?,
        ks: rgb("ks")?,
        roughness: number(t, "roughness", &format!("{path}.roughness"))?,
        ior: match t.get("ior") {
            None => crate::fresnel::DEFAULT_IOR,
            Some(_) => number(t, "ior", &format!("{path}.ior"))?,
        },
    };
    m.validate().map_err(|e| {
        let name = match e {
            Error::UnsupportedMedium(_) => "ior",
            Error::Domain(ref msg) if msg.starts_with("kd") => "kd",
            Error::Domain(ref msg) if msg.starts_with("ks") => "ks",
            _ => "roughness",
        };
        Error::schema(format!("{path}.{name}"), e.to_string())
    })?;
    Ok(m)
}

fn camera(v: &Value, path: &str) -> Result<CameraSpec> {
    let t = as_table(v, path)?;
    check_keys(t, path, &["position", "look_at", "up", "fov_deg", "width", "height"])?;
    let field = |name: &str| format!("{path}.{name}");
    let fov_deg = positive(t, "fov_deg", &field("fov_deg"))?;
    if fov_deg >= 180.0 {
        return Err(Error::schema(field("fov_deg"), "must be below 180"));
    }
    Ok(CameraSpec {
        position: vec3(t, "position", &field("position"))?,
        look_at: vec3(t, "look_at", &field("look_at"))?,
        up: vec3(t, "up", &field("up"))?,
        fov_deg,
        width: size(t, "width", &field("width"))?,
        height: size(t, "height", &field("height"))?,
    })
}

fn check_keys(t: &Table, path: &str, allowed: &[&str]) -> Result<()> {
    for key in t.keys() {
        if !allowed.contains(&key.as_str()) {
            let full = if path.is_empty() {
                key.clone()
            } else {
                format!("{path}.{key}")
            };
            return Err(Error::schema(full, "unknown field"));
        }
    }
    Ok(())
}

fn as_table<'a>(v: &'a Value, path: &str) -> Result<&'a Table> {
    v.as_table().ok_or_else(|| Error::schema(path, "expected a table"))
}

fn table<'a>(t: &'a Table, key: &str, path: &str) -> Result<&'a Table> {
    as_table(t.get(key).ok_or_else(|| Error::schema(path, "missing field"))?, path)
}

fn array<'a>(t: &'a Table, key: &str) -> Result<&'a [Value]> {
    match t.get(key) {
        None => Ok(&[]),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(Error::schema(key, "expected an array of tables")),
    }
}

fn to_f64(v: &Value, path: &str) -> Result<f64> {
    let x = match v {
        Value::Float(f) => *f,
        Value::Integer(i) => *i as f64,
        _ => return Err(Error::schema(path, "expected a number")),
    };
    if !x.is_finite() {
        return Err(Error::schema(path, "must be finite"));
    }
    Ok(x)
}

fn number(t: &Table, key: &str, path: &str) -> Result<f64> {
    to_f64(t.get(key).ok_or_else(|| Error::schema(path, "missing field"))?, path)
}

fn positive(t: &Table, key: &str, path: &str) -> Result<f64> {
    let x = number(t, key, path)?;
    if x <= 0.0 {
        return Err(Error::schema(path, format!("{x} must be positive")));
    }
    Ok(x)
}

fn size(t: &Table, key: &str, path: &str) -> Result<usize> {
    match t.get(key) {
        Some(Value::Integer(i)) if *i > 0 && *i <= 1 << 16 => Ok(*i as usize),
        Some(Value::Integer(i)) => Err(Error::schema(path, format!("{i} outside [1, 65536]"))),
        Some(_) => Err(Error::schema(path, "expected an integer")),
        None => Err(Error::schema(path, "missing field")),
    }
}

fn floats(v: &Value, path: &str, len: usize) -> Result<Vec<f64>> {
    let a = v
        .as_array()
        .ok_or_else(|| Error::schema(path, format!("expected an array of {len} numbers")))?;
    if a.len() != len {
        return Err(Error::schema(
            path,
            format!("expected {len} numbers, found {}", a.len()),
        ));
    }
    a.iter().map(|x| to_f64(x, path)).collect()
}

fn vec3(t: &Table, key: &str, path: &str) -> Result<Vec3> {
    let v = t.get(key).ok_or_else(|| Error::schema(path, "missing field"))?;
    let f = floats(v, path, 3)?;
    Ok(Vec3::new(f[0], f[1], f[2]))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[scene]
bounding_radius = 3.0

[[primitives]]
shape = "sphere"
radius = 1.0
position = [0.0, 0.0, 0.0]
rotation = [0.0, 0.0, 1.0, 0.0]
material = { kd = [0.2, 0.4, 0.6], ks = [0.5, 0.5, 0.5], roughness = 0.3, ior = 1.5 }

[[primitives]]
shape = "torus"
major_radius = 1.5
minor_radius = 0.2
position = [0, 0, 0]
rotation = [1, 0, 0, 90]
material = { kd = [0.1, 0.1, 0.1], ks = [1, 1, 1], roughness = 0.1 }

[density]
beta = 0.003

[[cameras]]
position = [0.0, 0.0, 5.0]
look_at = [0.0, 0.0, 0.0]
up = [0.0, 1.0, 0.0]
fov_deg = 40
width = 16
height = 8

[render]
pol_angle_deg = 30.0
mode = "volume"
"#;

    #[test]
    fn parses_full_document() {
        let c = parse_scene_config(FULL).unwrap();
        assert_eq!(c.scene.bounding_radius, 3.0);
        assert_eq!(c.scene.primitives.len(), 2);
        assert_eq!(c.scene.primitives[0].material.kd, [0.2, 0.4, 0.6]);
        assert_eq!(c.scene.primitives[1].material.ior, 1.5);
        assert_eq!(c.density.beta, 0.003);
        assert_eq!(c.cameras[0].width, 16);
        assert_eq!(c.render.mode, RenderMode::Volume);
        assert_eq!(c.render.pol_angle_deg, 30.0);
        // Torus turned 90° about x: its ring now lies in the xz-plane.
        let d = super::super::sdf_eval(&c.scene, &Vec3::new(0.0, 0.0, 1.5));
        assert!((d + 0.2).abs() < 1e-12);
    }

    #[test]
    fn minimal_document_uses_defaults() {
        let c = parse_scene_config("[scene]\nbounding_radius = 2.0\n").unwrap();
        assert!(c.scene.primitives.is_empty());
        assert_eq!(c.density.beta, 2e-3);
        assert_eq!(c.render, RenderSettings::default());
    }

    #[test]
    fn primitives_must_fit_the_bounding_sphere() {
        let base = "[scene]\nbounding_radius = 2.0\n\n[[primitives]]\n\
                    material = { kd = [0.5, 0.5, 0.5], ks = [0.5, 0.5, 0.5], roughness = 0.3 }\n";
        let sphere = |pos: &str, scale: f64| {
            format!(
                "{base}shape = \"sphere\"\nradius = 1.0\nposition = {pos}\nrotation = [0, 0, 1, 0]\nscale = {scale}\n"
            )
        };
        assert!(parse_scene_config(&sphere("[1, 0, 0]", 1.0)).is_ok());
        assert_eq!(field_of(&sphere("[1.5, 0, 0]", 1.0)), "primitives[0]");
        assert_eq!(field_of(&sphere("[0, 0, 0]", 2.5)), "primitives[0]");
        let plane = format!("{base}shape = \"plane\"\nposition = [0, 0, -1]\nrotation = [0, 0, 1, 0]\n");
        assert!(parse_scene_config(&plane).is_ok());
    }

    fn field_of(text: &str) -> String {
        match parse_scene_config(text) {
            Err(Error::Schema { field, .. }) => field,
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_field() {
        assert_eq!(field_of(""), "scene");
        assert_eq!(field_of("[scene]\nbounding_radius = -1\n"), "scene.bounding_radius");
        assert_eq!(field_of("[scene]\nbounding_radius = 1\nbogus = 2\n"), "scene.bogus");
        let bad_radius = FULL.replace("radius = 1.0\n", "radius = \"big\"\n");
        assert_eq!(field_of(&bad_radius), "primitives[0].radius");
        let bad_rough = FULL.replace("roughness = 0.3", "roughness = 3.0");
        assert_eq!(field_of(&bad_rough), "primitives[0].material.roughness");
        let bad_ior = FULL.replace("ior = 1.5", "ior = 0.9");
        assert_eq!(field_of(&bad_ior), "primitives[0].material.ior");
        let bad_mode = FULL.replace("\"volume\"", "\"raster\"");
        assert_eq!(field_of(&bad_mode), "render.mode");
        let bad_width = FULL.replace("width = 16", "width = 0");
        assert_eq!(field_of(&bad_width), "cameras[0].width");
        let bad_shape = FULL.replace("\"torus\"", "\"cone\"");
        assert_eq!(field_of(&bad_shape), "primitives[1].shape");
        assert_eq!(field_of("not toml ["), "<document>");
    }
}
