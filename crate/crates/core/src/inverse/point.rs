//! Per-point unknowns, residuals and the damped Gauss–Newton point solver.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dual::Dual;
use crate::error::{Error, Result};
use crate::fresnel::DEFAULT_IOR;
use crate::math::{orthonormal_basis, Real, Vec3, V3};
use crate::pbrdf::{radiance_closed_form, MaterialParams};
use crate::polcore::canonical_polarizer_angle;

pub const ROUGHNESS_MIN: f64 = 1e-3;
/// Point unknowns plus the shared polarizer angle.
pub const N_UNKNOWNS: usize = 10;
pub const POL: usize = 9;
pub const UNKNOWN_NAMES: [&str; N_UNKNOWNS] = [
    "theta",
    "phi",
    "kd_r",
    "kd_g",
    "kd_b",
    "ks_r",
    "ks_g",
    "ks_b",
    "roughness",
    "pol_angle",
];
const RECENTER_EVERY: usize = 50;

pub(crate) type D10 = Dual<N_UNKNOWNS>;
pub(crate) type Params = [f64; N_UNKNOWNS];
type Mat10 = SMatrix<f64, N_UNKNOWNS, N_UNKNOWNS>;
type Vec10 = SVector<f64, N_UNKNOWNS>;

/// Orthonormal frame for the spherical normal angles. Its pole is kept
/// perpendicular to the current normal estimate, so the estimate sits on the
/// equator (`θ = π/2`, `φ = 0`) far from the coordinate singularities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalFrame(pub Matrix3<f64>);

impl NormalFrame {
    pub fn about(n: &Vec3) -> Self {
        let n = n.normalize();
        let (t, b) = orthonormal_basis(&n);
        // n × t = b, so (n, t, b) is right-handed.
        Self(Matrix3::from_columns(&[n, t, b]))
    }

    pub fn normal(&self, theta: f64, phi: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        self.0 * Vec3::new(st * cp, st * sp, ct)
    }

    fn normal_generic<T: Real>(&self, theta: T, phi: T) -> V3<T> {
        let (st, ct) = (theta.sin(), theta.cos());
        let (sp, cp) = (phi.sin(), phi.cos());
        let local = [st * cp, st * sp, ct];
        let row =
            |r: usize| local[0].scale(self.0[(r, 0)]) + local[1].scale(self.0[(r, 1)]) + local[2].scale(self.0[(r, 2)]);
        V3::new(row(0), row(1), row(2))
    }

    /// Spherical angles of a unit vector in this frame.
    pub fn angles(&self, n: &Vec3) -> (f64, f64) {
        let local = self.0.transpose() * n;
        (local.z.clamp(-1.0, 1.0).acos(), local.y.atan2(local.x))
    }
}

/// The nine point-intrinsic unknowns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointUnknowns {
    pub theta: f64,
    pub phi: f64,
    pub kd: [f64; 3],
    pub ks: [f64; 3],
    pub roughness: f64,
    pub frame: NormalFrame,
}

impl PointUnknowns {
    pub fn from_normal(n: &Vec3, kd: [f64; 3], ks: [f64; 3], roughness: f64) -> Self {
        Self {
            theta: FRAC_PI_2,
            phi: 0.0,
            kd,
            ks,
            roughness,
            frame: NormalFrame::about(n),
        }
    }

    pub fn normal(&self) -> Vec3 {
        self.frame.normal(self.theta, self.phi)
    }

    pub fn recentered(&self) -> Self {
        Self::from_normal(&self.normal(), self.kd, self.ks, self.roughness)
    }

    pub fn within_bounds(&self) -> bool {
        (0.0..=PI).contains(&self.theta)
            && (-PI..PI).contains(&self.phi)
            && self.kd.iter().all(|k| (0.0..=1.0).contains(k))
            && self.ks.iter().all(|k| *k >= 0.0 && k.is_finite())
            && (ROUGHNESS_MIN..=1.0).contains(&self.roughness)
    }

    pub(crate) fn to_params(self, pol_angle: f64) -> Params {
        [
            self.theta,
            self.phi,
            self.kd[0],
            self.kd[1],
            self.kd[2],
            self.ks[0],
            self.ks[1],
            self.ks[2],
            self.roughness,
            pol_angle,
        ]
    }

    pub(crate) fn from_params(p: &Params, frame: NormalFrame) -> Self {
        Self {
            theta: p[0],
            phi: p[1],
            kd: [p[2], p[3], p[4]],
            ks: [p[5], p[6], p[7]],
            roughness: p[8],
            frame,
        }
    }
}

/// Projects a parameter vector onto the feasible box; angles are wrapped.
pub(crate) fn project(p: &mut Params) {
    p[0] = p[0].clamp(0.0, PI);
    p[1] = (p[1] + PI).rem_euclid(2.0 * PI) - PI;
    for k in 2..5 {
        p[k] = p[k].clamp(0.0, 1.0);
    }
    for k in 5..8 {
        p[k] = p[k].max(0.0);
    }
    p[8] = p[8].clamp(ROUGHNESS_MIN, 1.0);
    p[POL] = canonical_polarizer_angle(p[POL]);
}

/// One polarized measurement of a surface point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewObservation {
    /// Unit direction from the point toward the camera.
    pub view: Vec3,
    /// Camera x axis; polarizer angles are measured from it.
    pub camera_x: Vec3,
    pub intensity: [f64; 3],
    pub weight: f64,
}

impl ViewObservation {
    pub fn new(view: Vec3, camera_x: Vec3, intensity: [f64; 3]) -> Self {
        Self {
            view,
            camera_x,
            intensity,
            weight: 1.0,
        }
    }
}

/// Known quantities of the forward model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSettings {
    pub ior: f64,
    pub light: [f64; 3],
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            ior: DEFAULT_IOR,
            light: [1.0; 3],
        }
    }
}

fn model<T: Real>(p: &[T; N_UNKNOWNS], frame: &NormalFrame, obs: &ViewObservation, settings: &ModelSettings) -> [T; 3] {
    let n = frame.normal_generic(p[0], p[1]);
    let mat = MaterialParams {
        kd: [p[2], p[3], p[4]],
        ks: [p[5], p[6], p[7]],
        roughness: p[8],
        ior: settings.ior,
    };
    radiance_closed_form(&n, &obs.view, None, &obs.camera_x, &mat, settings.light, p[POL])
}

/// Forward prediction for one view.
pub fn predict(unknowns: &PointUnknowns, pol_angle: f64, obs: &ViewObservation, settings: &ModelSettings) -> [f64; 3] {
    model(&unknowns.to_params(pol_angle), &unknowns.frame, obs, settings)
}

/// Weighted residuals `w (model − observed)`, three per view. Returns the
/// residuals and the number of views whose model output was non-finite; those
/// contribute zero.
pub fn point_residuals(
    unknowns: &PointUnknowns,
    pol_angle: f64,
    obs: &[ViewObservation],
    settings: &ModelSettings,
) -> (Vec<f64>, usize) {
    let p = unknowns.to_params(pol_angle);
    let mut out = Vec::with_capacity(3 * obs.len());
    let mut degenerate = 0;
    for o in obs {
        let m = model(&p, &unknowns.frame, o, settings);
        if m.iter().all(|x| x.is_finite()) {
            out.extend((0..3).map(|c| o.weight * (m[c] - o.intensity[c])));
        } else {
            degenerate += 1;
            out.extend([0.0; 3]);
        }
    }
    (out, degenerate)
}

/// Residuals and their derivatives with respect to all ten unknowns.
pub(crate) fn residuals_and_jacobian(
    p: &Params,
    frame: &NormalFrame,
    obs: &[ViewObservation],
    settings: &ModelSettings,
) -> (Vec<f64>, Vec<Params>) {
    residuals_and_jacobian_in(p, frame, obs, settings, false)
}

/// As [`residuals_and_jacobian`]; with `amplitude` set, slots 5..8 hold the
/// specular peak amplitudes `ks / α²` instead of `ks`.
fn residuals_and_jacobian_in(
    p: &Params,
    frame: &NormalFrame,
    obs: &[ViewObservation],
    settings: &ModelSettings,
    amplitude: bool,
) -> (Vec<f64>, Vec<Params>) {
    let mut dp: [D10; N_UNKNOWNS] = std::array::from_fn(|k| D10::variable(p[k], k));
    if amplitude {
        let a2 = dp[8] * dp[8];
        for k in 5..8 {
            dp[k] = dp[k] * a2;
        }
    }
    let mut r = Vec::with_capacity(3 * obs.len());
    let mut jac = Vec::with_capacity(3 * obs.len());
    for o in obs {
        let m = model(&dp, frame, o, settings);
        let finite = m.iter().all(|x| x.v.is_finite() && x.d.iter().all(|d| d.is_finite()));
        for c in 0..3 {
            if finite {
                r.push(o.weight * (m[c].v - o.intensity[c]));
                jac.push(m[c].d.map(|d| d * o.weight));
            } else {
                r.push(0.0);
                jac.push([0.0; N_UNKNOWNS]);
            }
        }
    }
    (r, jac)
}

pub(crate) fn half_norm2(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Jacobian of the point residuals (rows: view × channel, columns: the ten
/// unknowns in [`UNKNOWN_NAMES`] order).
pub fn point_jacobian(
    unknowns: &PointUnknowns,
    pol_angle: f64,
    obs: &[ViewObservation],
    settings: &ModelSettings,
) -> DMatrix<f64> {
    let (_, rows) = residuals_and_jacobian(&unknowns.to_params(pol_angle), &unknowns.frame, obs, settings);
    DMatrix::from_fn(rows.len(), N_UNKNOWNS, |i, j| rows[i][j])
}

/// Numerical rank with singular values below `1e-9 σ_max` treated as zero.
pub fn jacobian_rank(jac: &DMatrix<f64>) -> usize {
    let sv = jac.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > 1e-9 * max).count()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolarizerAngle {
    Fixed(f64),
    /// Free, starting from the given value.
    Free(f64),
}

impl PolarizerAngle {
    pub fn value(&self) -> f64 {
        match *self {
            PolarizerAngle::Fixed(a) | PolarizerAngle::Free(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointSolveOptions {
    pub model: ModelSettings,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    /// Keep the normal at its initial value.
    pub fix_normal: bool,
}

impl Default for PointSolveOptions {
    fn default() -> Self {
        Self {
            model: ModelSettings::default(),
            max_iterations: 500,
            step_tolerance: 1e-10,
            fix_normal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointSolution {
    pub unknowns: PointUnknowns,
    pub pol_angle: f64,
    /// `½‖r‖²` at the returned iterate.
    pub loss: f64,
    /// Loss after each accepted step, starting with the initial loss.
    pub loss_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Damping hit its ceiling without finding a descent step.
    pub damping_saturated: bool,
    /// Fewer residuals than free unknowns.
    pub underdetermined: bool,
    pub degenerate_views: usize,
}

/// Damped Gauss–Newton (Levenberg–Marquardt) with projection onto bounds.
pub fn solve_point(
    obs: &[ViewObservation],
    init: &PointUnknowns,
    pol: PolarizerAngle,
    options: &PointSolveOptions,
) -> Result<PointSolution> {
    if obs.is_empty() {
        return Err(Error::Domain("a point needs at least one observation".into()));
    }
    if !init.within_bounds() {
        return Err(Error::Domain(format!("initial unknowns out of bounds: {init:?}")));
    }
    let mut active = [true; N_UNKNOWNS];
    if options.fix_normal {
        active[0] = false;
        active[1] = false;
    }
    active[POL] = matches!(pol, PolarizerAngle::Free(_));
    let n_active = active.iter().filter(|a| **a).count();

    let mut frame = init.frame;
    let mut x = to_amplitude(init.to_params(canonical_polarizer_angle(pol.value())));
    let settings = options.model;
    let eval = |x: &Params, frame: &NormalFrame| residuals_and_jacobian_in(x, frame, obs, &settings, true);
    let (mut r, mut jac) = eval(&x, &frame);
    let mut loss = half_norm2(&r);
    let mut trace = vec![loss];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut saturated = false;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if loss == 0.0 {
            converged = true;
            break;
        }
        let (h, g) = normal_equations(&r, &jac, &active);
        let mut accepted = false;
        while lambda <= 1e16 {
            let Some(delta) = damped_step(&h, &g, lambda, &active) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x;
            for k in 0..N_UNKNOWNS {
                trial[k] += delta[k];
            }
            project(&mut trial);
            let step = step_norm(&x, &trial);
            if step < options.step_tolerance {
                converged = true;
                break;
            }
            let (tr, tj) = eval(&trial, &frame);
            let trial_loss = half_norm2(&tr);
            if trial_loss < loss {
                x = trial;
                r = tr;
                jac = tj;
                loss = trial_loss;
                trace.push(loss);
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            saturated = true;
            converged = true;
            break;
        }
        let sin_theta = x[0].sin();
        if !options.fix_normal && (iterations % RECENTER_EVERY == 0 || sin_theta < 0.1) {
            let n = frame.normal(x[0], x[1]);
            frame = NormalFrame::about(&n);
            x[0] = FRAC_PI_2;
            x[1] = 0.0;
            let (nr, nj) = eval(&x, &frame);
            r = nr;
            jac = nj;
        }
    }

    let x = from_amplitude(x);
    let unknowns = PointUnknowns::from_params(&x, frame);
    let (_, degenerate_views) = point_residuals(&unknowns, x[POL], obs, &settings);
    Ok(PointSolution {
        unknowns,
        pol_angle: x[POL],
        loss,
        loss_trace: trace,
        iterations,
        converged,
        damping_saturated: saturated,
        underdetermined: 3 * obs.len() < n_active,
        degenerate_views,
    })
}

fn to_amplitude(mut p: Params) -> Params {
    let a2 = p[8] * p[8];
    for k in 5..8 {
        p[k] /= a2;
    }
    p
}

fn from_amplitude(mut p: Params) -> Params {
    let a2 = p[8] * p[8];
    for k in 5..8 {
        p[k] *= a2;
    }
    p
}

/// Step length with the periodic angles measured the short way round.
fn step_norm(a: &Params, b: &Params) -> f64 {
    let mut s = 0.0;
    for k in 0..N_UNKNOWNS {
        let mut d = (b[k] - a[k]).abs();
        if k == 1 {
            d = d.min(2.0 * PI - d);
        }
        if k == POL {
            d = d.min(PI - d);
        }
        s += d * d;
    }
    s.sqrt()
}

fn normal_equations(r: &[f64], jac: &[Params], active: &[bool; N_UNKNOWNS]) -> (Mat10, Vec10) {
    let mut h = Mat10::zeros();
    let mut g = Vec10::zeros();
    for (ri, row) in r.iter().zip(jac) {
        for a in 0..N_UNKNOWNS {
            if !active[a] || row[a] == 0.0 {
                continue;
            }
            g[a] += row[a] * ri;
            for b in a..N_UNKNOWNS {
                if active[b] {
                    h[(a, b)] += row[a] * row[b];
                }
            }
        }
    }
    for a in 0..N_UNKNOWNS {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    (h, g)
}

/// Solves `(H + λ diag(H)) δ = −g` on the active unknowns.
fn damped_step(h: &Mat10, g: &Vec10, lambda: f64, active: &[bool; N_UNKNOWNS]) -> Option<Params> {
    let mut a = *h;
    for k in 0..N_UNKNOWNS {
        if active[k] {
            a[(k, k)] += lambda * h[(k, k)].max(1e-9);
        } else {
            a[(k, k)] = 1.0;
        }
    }
    let chol = a.cholesky()?;
    let rhs = Vec10::from_fn(|k, _| if active[k] { -g[k] } else { 0.0 });
    let delta = chol.solve(&rhs);
    if delta.iter().all(|d| d.is_finite()) {
        Some(std::array::from_fn(|k| if active[k] { delta[k] } else { 0.0 }))
    } else {
        None
    }
}

/// Default initialization: grey material, medium roughness, normal along the
/// mean view direction.
pub fn default_init(obs: &[ViewObservation]) -> PointUnknowns {
    let mean: Vec3 = obs.iter().map(|o| o.view).sum();
    let n = if mean.norm() > 1e-9 {
        mean.normalize()
    } else {
        Vec3::z()
    };
    PointUnknowns::from_normal(&n, [0.5; 3], [0.5; 3], 0.5)
}

pub const POL_GRID: usize = 64;

/// Best polarizer angle on a uniform grid over `[0, π)`, each candidate scored
/// by a fixed-angle solve from `init`.
pub fn grid_search_pol(obs: &[ViewObservation], init: &PointUnknowns, options: &PointSolveOptions) -> Result<f64> {
    let mut best = (f64::INFINITY, 0.0);
    for k in 0..POL_GRID {
        let angle = k as f64 * PI / POL_GRID as f64;
        let s = solve_point(obs, init, PolarizerAngle::Fixed(angle), options)?;
        if s.loss < best.0 {
            best = (s.loss, angle);
        }
    }
    Ok(best.1)
}

/// Random initialization: normal within 60° of the mean view direction,
/// uniform material and polarizer angle.
pub fn random_init(obs: &[ViewObservation], rng: &mut impl Rng) -> (PointUnknowns, f64) {
    let axis = default_init(obs).normal();
    let (t, b) = orthonormal_basis(&axis);
    let cos_max = 0.5f64;
    let z = rng.gen_range(cos_max..1.0);
    let phi = rng.gen_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    let n = axis * z + t * (s * phi.cos()) + b * (s * phi.sin());
    let kd = [rng.gen(), rng.gen(), rng.gen()];
    let ks = [rng.gen(), rng.gen(), rng.gen()];
    let roughness = rng.gen_range(0.05..1.0);
    (
        PointUnknowns::from_normal(&n, kd, ks, roughness),
        rng.gen_range(0.0..PI),
    )
}

/// Solves with the polarizer angle free from `restarts` starting points: the
/// default initialization with a grid-searched angle, then seeded random
/// ones. Returns the lowest-loss solution.
pub fn solve_point_restarts(
    obs: &[ViewObservation],
    restarts: usize,
    seed: u64,
    options: &PointSolveOptions,
) -> Result<PointSolution> {
    let init = default_init(obs);
    let pol = grid_search_pol(obs, &init, options)?;
    let mut best = solve_point(obs, &init, PolarizerAngle::Free(pol), options)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 1..restarts {
        let (init, pol) = random_init(obs, &mut rng);
        let s = solve_point(obs, &init, PolarizerAngle::Free(pol), options)?;
        if s.loss < best.loss {
            best = s;
        }
    }
    Ok(best)
}
