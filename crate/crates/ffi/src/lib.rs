//! C ABI over `polarec`.
//!
//! Every fallible call returns a [`PolarecStatus`]. On failure the message is
//! kept per thread and can be read with [`polarec_last_error_message`].
//! Objects are opaque handles created by `*_load`/`*_render`/`*_solve` and
//! released with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use polarec::fresnel::fresnel_pack;
use polarec::inverse::{load_dataset, solve_scene, Dataset, SceneSolution, SceneSolveOptions};
use polarec::polcore::{extract_polarization_info, filter_intensity, stokes_from_quad, StokesVector};
use polarec::render::{read_stokes_image, render_stokes_image, Camera, RenderOptions, StokesImage};
use polarec::scene::{load_scene_config, SceneConfig};
use polarec::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolarecStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    UnsupportedMedium = 4,
    FrameDegenerate = 5,
    Geometry = 6,
    DegenerateNormal = 7,
    Numeric = 8,
    Unconstrained = 9,
    Inconsistent = 10,
    Index = 11,
    Format = 12,
    Schema = 13,
    NoSignal = 14,
    Io = 15,
    BufferTooSmall = 16,
    Panic = 17,
}

impl From<&Error> for PolarecStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => Self::Domain,
            Error::UnsupportedMedium(_) => Self::UnsupportedMedium,
            Error::FrameDegenerate(_) => Self::FrameDegenerate,
            Error::Geometry(_) => Self::Geometry,
            Error::DegenerateNormal { .. } => Self::DegenerateNormal,
            Error::Numeric(_) => Self::Numeric,
            Error::Unconstrained => Self::Unconstrained,
            Error::Inconsistent { .. } => Self::Inconsistent,
            Error::Index { .. } => Self::Index,
            Error::Format { .. } => Self::Format,
            Error::Schema { .. } => Self::Schema,
            Error::NoSignal(_) => Self::NoSignal,
            Error::Io { .. } => Self::Io,
        }
    }
}

/// Scene description loaded from a TOML file.
pub struct PolarecScene(SceneConfig);

/// Per-pixel RGB Stokes image.
pub struct PolarecImage(StokesImage);

/// Rendered views with their polarizer-filtered observations.
pub struct PolarecDataset(Dataset);

pub struct PolarecSolution(SceneSolution);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PolarecPolarization {
    pub unpolarized_intensity: f64,
    pub dop: f64,
    pub aop: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PolarecFresnel {
    pub r_s: f64,
    pub r_p: f64,
    pub t_s: f64,
    pub t_p: f64,
    pub dop_reflection: f64,
    pub dop_transmission: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PolarecSolveOptions {
    pub max_points: usize,
    pub seed: u64,
    pub known_geometry: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PolarecStatus, msg: impl Into<String>) -> PolarecStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), PolarecStatus>) -> PolarecStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PolarecStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(PolarecStatus::Panic, "internal panic"),
    }
}

fn lib<T>(r: polarec::Result<T>) -> Result<T, PolarecStatus> {
    r.map_err(|e| fail((&e).into(), format!("{}: {e}", e.kind())))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), PolarecStatus> {
    if p.is_null() {
        Err(fail(PolarecStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, PolarecStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(PolarecStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length in bytes,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn polarec_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Intensity behind a linear polarizer at `pol_angle` radians.
///
/// # Safety
/// `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_filter_intensity(
    s0: f64,
    s1: f64,
    s2: f64,
    pol_angle: f64,
    out: *mut f64,
) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = filter_intensity(StokesVector::linear(s0, s1, s2), pol_angle);
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_polarization_info(
    s0: f64,
    s1: f64,
    s2: f64,
    out: *mut PolarecPolarization,
) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let info = lib(extract_polarization_info(StokesVector::linear(s0, s1, s2)))?;
        *out = PolarecPolarization {
            unpolarized_intensity: info.unpolarized_intensity,
            dop: info.dop,
            aop: info.aop,
        };
        Ok(())
    })
}

/// Stokes vector from intensities at 0°, 45°, 90° and 135°. `out` receives
/// `s0, s1, s2`.
///
/// # Safety
/// `out` must be valid for writing three values.
#[no_mangle]
pub unsafe extern "C" fn polarec_stokes_from_quad(
    i0: f64,
    i45: f64,
    i90: f64,
    i135: f64,
    out: *mut f64,
) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = lib(stokes_from_quad(i0, i45, i90, i135))?;
        *out = s.s0;
        *out.add(1) = s.s1;
        *out.add(2) = s.s2;
        Ok(())
    })
}

/// # Safety
/// `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_fresnel(cos_theta_i: f64, eta: f64, out: *mut PolarecFresnel) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let f = lib(fresnel_pack(cos_theta_i, eta))?;
        *out = PolarecFresnel {
            r_s: f.r_s,
            r_p: f.r_p,
            t_s: f.t_s,
            t_p: f.t_p,
            dop_reflection: f.dop_reflection,
            dop_transmission: f.dop_transmission,
        };
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_scene_load(path: *const c_char, out: *mut *mut PolarecScene) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path, "path")?;
        put(out, PolarecScene(lib(load_scene_config(&path))?));
        Ok(())
    })
}

/// # Safety
/// `scene` must be null or a handle from [`polarec_scene_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn polarec_scene_free(scene: *mut PolarecScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` must be a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_scene_camera_count(scene: *const PolarecScene) -> usize {
    scene.as_ref().map_or(0, |s| s.0.cameras.len())
}

/// Renders camera `view`. `volume` selects volume rendering, seeded by `seed`;
/// otherwise the surface is sphere traced.
///
/// # Safety
/// `scene` must be a live scene handle; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_render(
    scene: *const PolarecScene,
    view: usize,
    volume: bool,
    seed: u64,
    out: *mut *mut PolarecImage,
) -> PolarecStatus {
    guard(|| {
        non_null(scene, "scene")?;
        non_null(out, "out")?;
        let config = &(*scene).0;
        let spec = config.cameras.get(view).ok_or_else(|| {
            fail(
                PolarecStatus::Domain,
                format!("view {view} out of range for {} cameras", config.cameras.len()),
            )
        })?;
        let camera = lib(Camera::from_spec(spec))?;
        let options = if volume {
            RenderOptions::volume(config.density, seed)
        } else {
            RenderOptions::sphere_trace()
        };
        put(
            out,
            PolarecImage(lib(render_stokes_image(&config.scene, &camera, &options))?),
        );
        Ok(())
    })
}

/// Reads an SVIM Stokes image from disk.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_image_load(path: *const c_char, out: *mut *mut PolarecImage) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path, "path")?;
        put(out, PolarecImage(lib(read_stokes_image(&path))?));
        Ok(())
    })
}

/// # Safety
/// `image` must be null or a live image handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_image_free(image: *mut PolarecImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// # Safety
/// `image` must be a live image handle; `width`/`height` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_image_size(
    image: *const PolarecImage,
    width: *mut usize,
    height: *mut usize,
) -> PolarecStatus {
    guard(|| {
        non_null(image, "image")?;
        non_null(width, "width")?;
        non_null(height, "height")?;
        *width = (*image).0.width;
        *height = (*image).0.height;
        Ok(())
    })
}

/// Writes `s0, s1, s2` per channel per pixel (`width·height·9` values, row
/// major, RGB order).
///
/// # Safety
/// `image` must be a live image handle; `buf` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn polarec_image_stokes(image: *const PolarecImage, buf: *mut f64, len: usize) -> PolarecStatus {
    guard(|| {
        non_null(image, "image")?;
        non_null(buf, "buf")?;
        let img = &(*image).0;
        let need = img.pixels.len() * 9;
        if len < need {
            return Err(fail(
                PolarecStatus::BufferTooSmall,
                format!("need {need} values, got {len}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (chunk, px) in dst.chunks_exact_mut(9).zip(&img.pixels) {
            for (c, s) in px.stokes.0.iter().enumerate() {
                chunk[3 * c..3 * c + 3].copy_from_slice(&[s.s0, s.s1, s.s2]);
            }
        }
        Ok(())
    })
}

/// Writes the RGB intensity seen through a polarizer at `pol_angle` radians
/// (`width·height·3` values).
///
/// # Safety
/// `image` must be a live image handle; `buf` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn polarec_image_filter(
    image: *const PolarecImage,
    pol_angle: f64,
    buf: *mut f64,
    len: usize,
) -> PolarecStatus {
    guard(|| {
        non_null(image, "image")?;
        non_null(buf, "buf")?;
        let img = &(*image).0;
        let need = img.pixels.len() * 3;
        if len < need {
            return Err(fail(
                PolarecStatus::BufferTooSmall,
                format!("need {need} values, got {len}"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (chunk, px) in dst.chunks_exact_mut(3).zip(&img.pixels) {
            for (d, s) in chunk.iter_mut().zip(&px.stokes.0) {
                *d = filter_intensity(*s, pol_angle);
            }
        }
        Ok(())
    })
}

/// Loads a dataset from a `manifest.txt` written by `polarec render`.
///
/// # Safety
/// `manifest` must be a NUL-terminated string; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_dataset_load(manifest: *const c_char, out: *mut *mut PolarecDataset) -> PolarecStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(manifest, "manifest")?;
        put(out, PolarecDataset(lib(load_dataset(&path))?.1));
        Ok(())
    })
}

/// # Safety
/// `dataset` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_dataset_free(dataset: *mut PolarecDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

#[no_mangle]
pub extern "C" fn polarec_solve_options_default() -> PolarecSolveOptions {
    let d = SceneSolveOptions::default();
    PolarecSolveOptions {
        max_points: d.max_points,
        seed: d.seed,
        known_geometry: d.known_geometry,
    }
}

/// Recovers the polarizer angle and per-point surface parameters.
///
/// # Safety
/// `dataset` must be a live dataset handle; `options` null (defaults) or
/// valid; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn polarec_solve(
    dataset: *const PolarecDataset,
    options: *const PolarecSolveOptions,
    out: *mut *mut PolarecSolution,
) -> PolarecStatus {
    guard(|| {
        non_null(dataset, "dataset")?;
        non_null(out, "out")?;
        let mut opts = SceneSolveOptions::default();
        if let Some(o) = options.as_ref() {
            opts.max_points = o.max_points;
            opts.seed = o.seed;
            opts.known_geometry = o.known_geometry;
        }
        put(out, PolarecSolution(lib(solve_scene(&(*dataset).0, &opts))?));
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_free(solution: *mut PolarecSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Recovered polarizer angle in radians, `[0, π)`. NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_pol_angle(solution: *const PolarecSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.state.pol_angle)
}

/// # Safety
/// `solution` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_loss(solution: *const PolarecSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.loss)
}

/// False when the observations carry no polarization, so any angle fits.
///
/// # Safety
/// `solution` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_identifiable(solution: *const PolarecSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.0.pol_angle_identifiable)
}

/// # Safety
/// `solution` must be null or a live solution handle.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_point_count(solution: *const PolarecSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.state.points.len())
}

/// Writes the unit normal of point `index` into `out[0..3]`.
///
/// # Safety
/// `solution` must be a live solution handle; `out` valid for three values.
#[no_mangle]
pub unsafe extern "C" fn polarec_solution_normal(
    solution: *const PolarecSolution,
    index: usize,
    out: *mut f64,
) -> PolarecStatus {
    guard(|| {
        non_null(solution, "solution")?;
        non_null(out, "out")?;
        let points = &(*solution).0.state.points;
        let p = points.get(index).ok_or_else(|| {
            fail(
                PolarecStatus::Domain,
                format!("point {index} out of range for {}", points.len()),
            )
        })?;
        let n = p.normal();
        *out = n.x;
        *out.add(1) = n.y;
        *out.add(2) = n.z;
        Ok(())
    })
}
