//! Subcommands of the `polarec` binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::inverse::{load_dataset, solve_scene, Manifest, ManifestView, SceneSolveOptions};
use crate::math::Vec3;
use crate::metrics::{chamfer_normalized, normal_mae, psnr, read_points, ssim, write_points, MetricReport};
use crate::polcore::{angle_distance_mod_pi, extract_polarization_info};
use crate::render::{
    decode_stokes_image, encode_stokes_image, read_float_image, read_stokes_image, render_polarized_image,
    render_stokes_image, write_float_image, write_png, write_stokes_image, Camera, FloatImage, RenderMode,
    RenderOptions, StokesImage,
};
use crate::scene::load_scene_config;

#[derive(Debug, Parser)]
#[command(name = "polarec", version, about = "Polarimetric rendering and inverse estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render one Stokes image and one polarized intensity image per camera.
    Render(RenderArgs),
    /// Recover normals, materials and the polarizer angle from a dataset.
    Solve(SolveArgs),
    /// Split a Stokes image into DoP, AoP, unpolarized, diffuse and specular maps.
    Decompose(DecomposeArgs),
    /// Compare images, normals or point sets.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Overrides the scene's polarizer angle.
    #[arg(long)]
    pub pol_angle_deg: Option<f64>,
    /// Overrides the scene's render mode (sphere_trace or volume).
    #[arg(long)]
    pub mode: Option<String>,
    /// Render only the first N cameras.
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Dataset manifest written by `render`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Keep normals at the dataset's normal channel.
    #[arg(long)]
    pub known_geometry: bool,
    /// Number of surface points sampled from the reference view.
    #[arg(long, default_value_t = 48)]
    pub points: usize,
    /// Use only the first N views.
    #[arg(long)]
    pub views: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Stokes image (SVIM).
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Image to score (PFIM, or SVIM for its s0 channel).
    #[arg(long, requires = "image_ref")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub image_ref: Option<PathBuf>,
    /// SVIM whose normal channel is scored.
    #[arg(long, requires = "normals_ref")]
    pub normals: Option<PathBuf>,
    #[arg(long)]
    pub normals_ref: Option<PathBuf>,
    /// Point list, one `x y z` per line.
    #[arg(long, requires = "points_ref")]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub points_ref: Option<PathBuf>,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Render(a) => &a.common,
            Command::Solve(a) => &a.common,
            Command::Decompose(a) => &a.common,
            Command::Eval(a) => &a.common,
        }
    }
}

/// Runs a parsed command inside a thread pool of the requested size.
pub fn run(cli: &Cli) -> Result<()> {
    let workers = cli.command.common().workers;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Render(a) => cmd_render(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Eval(a) => cmd_eval(a),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Seed of the volume jitter for view `k`.
fn view_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let config = load_scene_config(&args.scene)?;
    let mode = match &args.mode {
        Some(m) => m.parse()?,
        None => config.render.mode,
    };
    let pol_deg = args.pol_angle_deg.unwrap_or(config.render.pol_angle_deg);
    if !pol_deg.is_finite() {
        return Err(Error::Domain(format!("polarizer angle {pol_deg} is not finite")));
    }
    let count = match args.views {
        Some(n) if n > config.cameras.len() => {
            return Err(Error::Domain(format!(
                "{n} views requested but the scene defines {} cameras",
                config.cameras.len()
            )));
        }
        Some(n) => n,
        None => config.cameras.len(),
    };
    let out = &args.common.out;
    create_dir(out)?;

    let mut views = Vec::with_capacity(count);
    for (k, spec) in config.cameras.iter().take(count).enumerate() {
        let camera = Camera::from_spec(spec).map_err(|e| Error::schema(format!("cameras[{k}]"), e.to_string()))?;
        let options = match mode {
            RenderMode::SphereTrace => RenderOptions::sphere_trace(),
            RenderMode::Volume => RenderOptions::volume(config.density, view_seed(args.common.seed, k)),
        };
        // Filter the stored f32 values so the dataset is self-consistent.
        let image = decode_stokes_image(&encode_stokes_image(&render_stokes_image(
            &config.scene,
            &camera,
            &options,
        )?)?)?;
        let observed = render_polarized_image(&image, pol_deg.to_radians());
        let view = ManifestView {
            svim: format!("view_{k:03}.svim"),
            observed: format!("view_{k:03}_observed.pfim"),
            png: format!("view_{k:03}.png"),
            camera,
        };
        write_stokes_image(&out.join(&view.svim), &image)?;
        write_float_image(&out.join(&view.observed), &observed)?;
        write_png(&out.join(&view.png), &observed)?;
        views.push(view);
    }
    let manifest = Manifest {
        scene: args.scene.display().to_string(),
        mode,
        seed: args.common.seed,
        ior: dataset_ior(&config.scene),
        bounding_radius: config.scene.bounding_radius,
        truth_pol_angle_deg: Some(pol_deg),
        views,
    };
    write_text(&out.join("manifest.txt"), &manifest.to_text())
}

/// Refractive index assumed known by the solver: the first primitive's, or
/// the default for an empty scene.
fn dataset_ior(scene: &crate::scene::SdfScene) -> f64 {
    scene
        .primitives
        .first()
        .map_or(crate::fresnel::DEFAULT_IOR, |p| p.material.ior)
}

pub fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let (manifest, mut dataset) = load_dataset(&args.input)?;
    if let Some(n) = args.views {
        if n == 0 || n > dataset.views.len() {
            return Err(Error::Domain(format!(
                "{n} views requested but the dataset has {}",
                dataset.views.len()
            )));
        }
        dataset.views.truncate(n);
    }
    let view_count = dataset.views.len();
    if view_count < 4 {
        eprintln!("warning: {view_count} views cannot determine the ten unknowns of a point; solving anyway");
    }
    let options = SceneSolveOptions {
        max_points: args.points,
        seed: args.common.seed,
        known_geometry: args.known_geometry,
        ..SceneSolveOptions::default()
    };
    let sol = solve_scene(&dataset, &options)?;
    let out = &args.common.out;
    create_dir(out)?;

    let angle = sol.state.pol_angle;
    let mut s = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(s, "{k}: {v}");
    };
    line("input", args.input.display().to_string());
    line("seed", args.common.seed.to_string());
    line("views", view_count.to_string());
    line("points", sol.samples.len().to_string());
    line("known_geometry", args.known_geometry.to_string());
    line("pol_angle_identifiable", sol.pol_angle_identifiable.to_string());
    line("pol_angle_rad", angle.to_string());
    line("pol_angle_deg", angle.to_degrees().to_string());
    if let Some(truth) = manifest.truth_pol_angle_deg {
        line("truth_pol_angle_deg", truth.to_string());
        let err = angle_distance_mod_pi(angle, truth.to_radians()).to_degrees();
        line("pol_angle_error_deg", err.to_string());
    }
    line("loss", sol.loss.to_string());
    line("l1_loss", sol.l1_loss.to_string());
    line("converged", sol.converged.to_string());
    line("underdetermined", (sol.underdetermined || view_count < 4).to_string());
    let mae: f64 = sol
        .state
        .points
        .iter()
        .zip(&sol.samples)
        .map(|(p, s)| p.normal().angle(&s.known_normal).to_degrees())
        .sum::<f64>()
        / sol.samples.len() as f64;
    line("normal_mae_deg", mae.to_string());
    write_text(&out.join("report.txt"), &s)?;

    let mut table = String::from("columns: x y z nx ny nz kd_r kd_g kd_b ks_r ks_g ks_b roughness loss\n");
    for (k, ((p, sample), loss)) in sol
        .state
        .points
        .iter()
        .zip(&sol.samples)
        .zip(&sol.point_losses)
        .enumerate()
    {
        let n = p.normal();
        let x = sample.position;
        let _ = writeln!(
            table,
            "point_{k:03}: {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            x.x, x.y, x.z, n.x, n.y, n.z, p.kd[0], p.kd[1], p.kd[2], p.ks[0], p.ks[1], p.ks[2], p.roughness, loss
        );
    }
    write_text(&out.join("points.txt"), &table)?;
    let positions: Vec<Vec3> = sol.samples.iter().map(|s| s.position).collect();
    write_points(&out.join("positions.xyz"), &positions)
}

/// Per-pixel polarization maps of a Stokes image, three channels each.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub dop: FloatImage,
    /// Degrees in `(−90, 90]`.
    pub aop_deg: FloatImage,
    /// `s0 / 2`.
    pub unpolarized: FloatImage,
    /// `s0 − √(s1² + s2²)`: the part explained by unpolarized light.
    pub diffuse: FloatImage,
    /// `√(s1² + s2²)`: the polarized part.
    pub specular: FloatImage,
}

pub fn decompose(image: &StokesImage) -> Result<Decomposition> {
    let blank = FloatImage::zeros(image.width, image.height, 3);
    let mut d = Decomposition {
        dop: blank.clone(),
        aop_deg: blank.clone(),
        unpolarized: blank.clone(),
        diffuse: blank.clone(),
        specular: blank,
    };
    for (k, px) in image.pixels.iter().enumerate() {
        for c in 0..3 {
            let s = px.stokes.0[c];
            let info = extract_polarization_info(s)?;
            let polarized = s.s1.hypot(s.s2);
            let i = 3 * k + c;
            d.dop.data[i] = info.dop;
            d.aop_deg.data[i] = info.aop.to_degrees();
            d.unpolarized.data[i] = info.unpolarized_intensity;
            d.diffuse.data[i] = s.s0 - polarized;
            d.specular.data[i] = polarized;
        }
    }
    Ok(d)
}

pub fn cmd_decompose(args: &DecomposeArgs) -> Result<()> {
    let image = read_stokes_image(&args.input)?;
    let d = decompose(&image)?;
    let out = &args.common.out;
    create_dir(out)?;
    // AoP previews map (−90°, 90°] onto [0, 1].
    let aop_preview = FloatImage {
        data: d.aop_deg.data.iter().map(|a| (a + 90.0) / 180.0).collect(),
        ..d.aop_deg.clone()
    };
    for (name, img, preview) in [
        ("dop", &d.dop, &d.dop),
        ("aop", &d.aop_deg, &aop_preview),
        ("unpolarized", &d.unpolarized, &d.unpolarized),
        ("diffuse", &d.diffuse, &d.diffuse),
        ("specular", &d.specular, &d.specular),
    ] {
        write_float_image(&out.join(format!("{name}.pfim")), img)?;
        write_png(&out.join(format!("{name}.png")), preview)?;
    }
    Ok(())
}

fn load_image(path: &Path) -> Result<(FloatImage, Option<Vec<bool>>)> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svim")) {
        let img = read_stokes_image(path)?;
        Ok((img.stokes_channel(0), Some(img.mask_image())))
    } else {
        Ok((read_float_image(path)?, None))
    }
}

fn combined_mask(a: Option<Vec<bool>>, b: Option<Vec<bool>>) -> Option<Vec<bool>> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.iter().zip(&b).map(|(x, y)| *x && *y).collect()),
        (a, b) => a.or(b),
    }
}

pub fn evaluate(args: &EvalArgs) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    if let (Some(a), Some(b)) = (&args.image, &args.image_ref) {
        let (ia, ma) = load_image(a)?;
        let (ib, mb) = load_image(b)?;
        if !ia.same_shape(&ib) {
            return Err(Error::Domain(format!(
                "{} and {} have different dimensions",
                a.display(),
                b.display()
            )));
        }
        let mask = combined_mask(ma, mb);
        report.psnr = Some(psnr(&ia, &ib, mask.as_deref())?);
        report.ssim = Some(ssim(&ia, &ib, mask.as_deref())?);
    }
    if let (Some(a), Some(b)) = (&args.normals, &args.normals_ref) {
        let sa = read_stokes_image(a)?;
        let sb = read_stokes_image(b)?;
        if sa.width != sb.width || sa.height != sb.height {
            return Err(Error::Domain(format!(
                "{} and {} have different dimensions",
                a.display(),
                b.display()
            )));
        }
        let mask = combined_mask(Some(sa.mask_image()), Some(sb.mask_image()));
        let na: Vec<Vec3> = sa.pixels.iter().map(|p| p.normal).collect();
        let nb: Vec<Vec3> = sb.pixels.iter().map(|p| p.normal).collect();
        report.normal_mae = Some(normal_mae(&na, &nb, mask.as_deref())?);
    }
    if let (Some(a), Some(b)) = (&args.points, &args.points_ref) {
        report.chamfer = Some(chamfer_normalized(&read_points(a)?, &read_points(b)?)?);
    }
    if report == MetricReport::default() {
        return Err(Error::Domain(
            "nothing to evaluate: pass --image/--image-ref, --normals/--normals-ref or --points/--points-ref".into(),
        ));
    }
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let report = evaluate(args)?;
    create_dir(&args.common.out)?;
    write_text(&args.common.out.join("metrics.txt"), &report.to_text())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polcore::StokesVector;

    #[test]
    fn parses_render_flags() {
        let cli = Cli::try_parse_from([
            "polarec",
            "render",
            "--scene",
            "s.toml",
            "--out",
            "o",
            "--pol-angle-deg",
            "30",
            "--mode",
            "volume",
            "--workers",
            "2",
        ])
        .unwrap();
        let Command::Render(a) = cli.command else { panic!() };
        assert_eq!(a.pol_angle_deg, Some(30.0));
        assert_eq!(a.mode.as_deref(), Some("volume"));
        assert_eq!(a.common.workers, 2);
        assert_eq!(a.common.seed, 0);
        assert!(Cli::try_parse_from(["polarec", "eval", "--out", "o", "--image", "a.pfim"]).is_err());
    }

    #[test]
    fn decomposition_maps() {
        let mut img = StokesImage::empty(2, 1);
        img.pixels[0].mask = true;
        img.pixels[0].stokes.0 = [StokesVector::linear(1.0, 0.0, 0.5); 3];
        img.pixels[1].mask = true;
        img.pixels[1].stokes.0 = [StokesVector::linear(2.0, 0.0, 0.0); 3];
        let d = decompose(&img).unwrap();
        assert!((d.dop.data[0] - 0.5).abs() < 1e-15);
        assert!((d.aop_deg.data[0] - 45.0).abs() < 1e-12);
        assert_eq!(d.specular.data[0] + d.diffuse.data[0], 1.0);
        assert_eq!(d.dop.data[3], 0.0);
        assert_eq!(d.unpolarized.data[3], 1.0);
        assert_eq!(d.diffuse.data[3], 2.0);
    }

    #[test]
    fn view_seeds_differ() {
        assert_ne!(view_seed(7, 0), view_seed(7, 1));
        assert_ne!(view_seed(7, 0), view_seed(8, 0));
    }
}
