//! Joint recovery over many surface points sharing one polarizer angle.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{Dataset, DatasetView};
use super::point::{
    default_init, half_norm2, project, residuals_and_jacobian, solve_point, PointSolution, PointSolveOptions,
    PointUnknowns, PolarizerAngle, ViewObservation, POL, POL_GRID,
};
use super::{l1_loss, objective, SolveState};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::polcore::canonical_polarizer_angle;
use crate::render::{generate_ray, Camera};

type Mat9 = SMatrix<f64, 9, 9>;
type Vec9 = SVector<f64, 9>;

/// Relative spread of the angle profile below which the polarizer angle is
/// declared unidentifiable.
const FLAT_PROFILE: f64 = 1e-9;
const RECENTER_EVERY: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSolveOptions {
    pub max_points: usize,
    pub seed: u64,
    /// Fix normals to the dataset's normal channel.
    pub known_geometry: bool,
    pub reference_view: usize,
    pub point: PointSolveOptions,
    pub golden_steps: usize,
    pub joint_iterations: usize,
}

impl Default for SceneSolveOptions {
    fn default() -> Self {
        Self {
            max_points: 48,
            seed: 0,
            known_geometry: false,
            reference_view: 0,
            point: PointSolveOptions::default(),
            golden_steps: 24,
            joint_iterations: 200,
        }
    }
}

/// A surface point with its multi-view observations.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSample {
    pub position: Vec3,
    pub reference_pixel: (usize, usize),
    pub observations: Vec<ViewObservation>,
    /// Normal channel of the reference view at this pixel.
    pub known_normal: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSolution {
    pub state: SolveState,
    pub samples: Vec<PointSample>,
    pub pol_angle_identifiable: bool,
    /// Summed point loss at each grid angle `k π / 64`.
    pub profile: Vec<f64>,
    pub loss: f64,
    pub l1_loss: f64,
    pub point_losses: Vec<f64>,
    pub converged: bool,
    /// Some point had fewer than four usable views.
    pub underdetermined: bool,
}

fn interior(view: &DatasetView, x: usize, y: usize) -> bool {
    let w = view.camera.width;
    let h = view.camera.height;
    if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
        return false;
    }
    [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
        .iter()
        .all(|&(a, b)| view.mask[b * w + a])
}

/// Continuous pixel coordinates (centre of pixel `i` at `i`) of a world point.
fn project_point(camera: &Camera, x: &Vec3) -> Option<(f64, f64)> {
    let local = camera.rotation.transpose() * (x - camera.position);
    if local.z >= -1e-12 {
        return None;
    }
    let half = (camera.fov / 2.0).tan();
    let aspect = camera.width as f64 / camera.height as f64;
    let sx = local.x / -local.z / (half * aspect);
    let sy = local.y / -local.z / half;
    Some((
        (sx + 1.0) * 0.5 * camera.width as f64 - 0.5,
        (1.0 - sy) * 0.5 * camera.height as f64 - 0.5,
    ))
}

/// Bilinearly interpolated observation, provided all four neighbours are
/// surface pixels whose depth agrees with the point's distance.
fn sample_view(view: &DatasetView, x: &Vec3) -> Option<[f64; 3]> {
    let cam = &view.camera;
    let (u, v) = project_point(cam, x)?;
    let (i0, j0) = (u.floor(), v.floor());
    if i0 < 0.0 || j0 < 0.0 || i0 + 1.0 >= cam.width as f64 || j0 + 1.0 >= cam.height as f64 {
        return None;
    }
    let (i0, j0) = (i0 as usize, j0 as usize);
    let (fu, fv) = (u - i0 as f64, v - j0 as f64);
    let distance = (x - cam.position).norm();
    let mut out = [0.0; 3];
    for (di, dj, w) in [
        (0, 0, (1.0 - fu) * (1.0 - fv)),
        (1, 0, fu * (1.0 - fv)),
        (0, 1, (1.0 - fu) * fv),
        (1, 1, fu * fv),
    ] {
        let k = (j0 + dj) * cam.width + i0 + di;
        if !view.mask[k] || (view.depth[k] - distance).abs() > 0.02 * distance {
            return None;
        }
        let px = view.observed.pixel(k);
        for c in 0..3 {
            out[c] += w * px[c];
        }
    }
    Some(out)
}

/// Samples surface points from the reference view's depth and collects
/// their observations in every view where they are visible.
pub fn gather_observations(dataset: &Dataset, options: &SceneSolveOptions) -> Result<Vec<PointSample>> {
    if dataset.views.iter().all(|v| v.mask.iter().all(|m| !m)) {
        return Err(Error::NoSignal("every view is background".into()));
    }
    let reference = dataset
        .views
        .get(options.reference_view)
        .ok_or_else(|| Error::Domain(format!("reference view {} does not exist", options.reference_view)))?;
    let cam = &reference.camera;
    let candidates: Vec<(usize, usize)> = (0..cam.height)
        .flat_map(|y| (0..cam.width).map(move |x| (x, y)))
        .filter(|&(x, y)| interior(reference, x, y))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut chosen: Vec<usize> = if candidates.len() <= options.max_points {
        (0..candidates.len()).collect()
    } else {
        rand::seq::index::sample(&mut rng, candidates.len(), options.max_points).into_vec()
    };
    chosen.sort_unstable();

    let needed = dataset.views.len().min(4);
    let mut samples = Vec::new();
    for k in chosen {
        let (px, py) = candidates[k];
        let idx = py * cam.width + px;
        let ray = generate_ray(cam, px, py)?;
        let position = ray.at(reference.depth[idx]);
        let mut observations = Vec::with_capacity(dataset.views.len());
        for (j, view) in dataset.views.iter().enumerate() {
            let intensity = if j == options.reference_view {
                let p = reference.observed.pixel(idx);
                Some([p[0], p[1], p[2]])
            } else {
                sample_view(view, &position)
            };
            if let Some(intensity) = intensity {
                let dir = (view.camera.position - position).normalize();
                observations.push(ViewObservation::new(dir, view.camera.right(), intensity));
            }
        }
        if observations.len() >= needed {
            samples.push(PointSample {
                position,
                reference_pixel: (px, py),
                observations,
                known_normal: reference.normals[idx],
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::NoSignal("no surface point is visible in enough views".into()));
    }
    Ok(samples)
}

fn initial_unknowns(sample: &PointSample, known_geometry: bool) -> PointUnknowns {
    if known_geometry {
        PointUnknowns::from_normal(&sample.known_normal, [0.5; 3], [0.5; 3], 0.5)
    } else {
        default_init(&sample.observations)
    }
}

/// Fixed-angle solves for every point; each keeps the better of the two
/// starting points.
fn solve_all_fixed(
    samples: &[PointSample],
    starts: &[(PointUnknowns, PointUnknowns)],
    angle: f64,
    options: &PointSolveOptions,
) -> Result<Vec<PointSolution>> {
    samples
        .par_iter()
        .zip(starts)
        .map(|(s, (a, b))| {
            let first = solve_point(&s.observations, a, PolarizerAngle::Fixed(angle), options)?;
            if a == b {
                return Ok(first);
            }
            let second = solve_point(&s.observations, b, PolarizerAngle::Fixed(angle), options)?;
            Ok(if second.loss < first.loss { second } else { first })
        })
        .collect()
}

fn total_loss(solutions: &[PointSolution]) -> f64 {
    solutions.iter().map(|s| s.loss).sum()
}

pub fn solve_scene(dataset: &Dataset, options: &SceneSolveOptions) -> Result<SceneSolution> {
    let samples = gather_observations(dataset, options)?;
    let point_options = PointSolveOptions {
        model: dataset.model,
        fix_normal: options.known_geometry,
        ..options.point
    };
    let inits: Vec<PointUnknowns> = samples
        .iter()
        .map(|s| initial_unknowns(s, options.known_geometry))
        .collect();

    // Angle profile over [0, π), warm-starting each angle from the previous.
    let mut profile = Vec::with_capacity(POL_GRID);
    let mut warm = inits.clone();
    let mut best: Option<(f64, f64, Vec<PointSolution>)> = None;
    for k in 0..POL_GRID {
        let angle = k as f64 * PI / POL_GRID as f64;
        let starts: Vec<_> = inits.iter().cloned().zip(warm.iter().cloned()).collect();
        let sols = solve_all_fixed(&samples, &starts, angle, &point_options)?;
        let loss = total_loss(&sols);
        profile.push(loss);
        warm = sols.iter().map(|s| s.unknowns).collect();
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, angle, sols));
        }
    }
    let (_, grid_angle, grid_solutions) = best.expect("grid is non-empty");

    let hi = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    let identifiable = hi - lo > FLAT_PROFILE * hi;
    let underdetermined = samples.iter().any(|s| s.observations.len() < 4);
    let obs: Vec<Vec<ViewObservation>> = samples.iter().map(|s| s.observations.clone()).collect();

    if !identifiable {
        let state = SolveState::new(grid_solutions.iter().map(|s| s.unknowns).collect(), grid_angle);
        return finish(state, samples, obs, profile, false, true, underdetermined, dataset);
    }

    // Golden-section search on the profile around the best grid angle.
    let anchors: Vec<(PointUnknowns, PointUnknowns)> =
        grid_solutions.iter().map(|s| (s.unknowns, s.unknowns)).collect();
    let eval = |angle: f64| -> Result<(f64, Vec<PointSolution>)> {
        let sols = solve_all_fixed(&samples, &anchors, angle, &point_options)?;
        Ok((total_loss(&sols), sols))
    };
    let step = PI / POL_GRID as f64;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (grid_angle - step, grid_angle + step);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    for _ in 0..options.golden_steps {
        if fc.0 < fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = eval(d)?;
        }
    }
    let (line_angle, line_sols) = if fc.0 < fd.0 { (c, fc.1) } else { (d, fd.1) };
    let (angle, sols) = if total_loss(&line_sols) <= total_loss(&grid_solutions) {
        (line_angle, line_sols)
    } else {
        (grid_angle, grid_solutions)
    };

    let mut state = SolveState::new(sols.iter().map(|s| s.unknowns).collect(), angle);
    let converged = joint_polish(&mut state, &obs, &point_options, options.joint_iterations);
    finish(state, samples, obs, profile, true, converged, underdetermined, dataset)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    state: SolveState,
    samples: Vec<PointSample>,
    obs: Vec<Vec<ViewObservation>>,
    profile: Vec<f64>,
    identifiable: bool,
    converged: bool,
    underdetermined: bool,
    dataset: &Dataset,
) -> Result<SceneSolution> {
    let settings = dataset.model;
    let loss = objective(&state, &obs, &settings)?;
    let l1 = l1_loss(&state, &obs, &settings)?;
    let point_losses = state
        .points
        .iter()
        .zip(&obs)
        .map(|(p, o)| half_norm2(&super::point_residuals(p, state.pol_angle, o, &settings).0))
        .collect();
    Ok(SceneSolution {
        state,
        samples,
        pol_angle_identifiable: identifiable,
        profile,
        loss,
        l1_loss: l1,
        point_losses,
        converged,
        underdetermined,
    })
}

struct PointBlocks {
    a: Mat9,
    b: Vec9,
    g: Vec9,
    c: f64,
    gq: f64,
}

fn blocks(p: &PointUnknowns, pol: f64, obs: &[ViewObservation], options: &PointSolveOptions) -> (PointBlocks, f64) {
    let (r, jac) = residuals_and_jacobian(&p.to_params(pol), &p.frame, obs, &options.model);
    let mut out = PointBlocks {
        a: Mat9::zeros(),
        b: Vec9::zeros(),
        g: Vec9::zeros(),
        c: 0.0,
        gq: 0.0,
    };
    let first = if options.fix_normal { 2 } else { 0 };
    for (ri, row) in r.iter().zip(&jac) {
        for i in first..9 {
            out.g[i] += row[i] * ri;
            out.b[i] += row[i] * row[POL];
            for j in first..9 {
                out.a[(i, j)] += row[i] * row[j];
            }
        }
        out.c += row[POL] * row[POL];
        out.gq += row[POL] * ri;
    }
    for i in 0..first {
        out.a[(i, i)] = 1.0;
    }
    (out, half_norm2(&r))
}

/// Levenberg–Marquardt on all unknowns at once; the shared angle is
/// eliminated through the Schur complement of the block-diagonal point part.
fn joint_polish(
    state: &mut SolveState,
    obs: &[Vec<ViewObservation>],
    options: &PointSolveOptions,
    max_iterations: usize,
) -> bool {
    let first = if options.fix_normal { 2 } else { 0 };
    let mut lambda = 1e-3;
    let evaluate = |st: &SolveState| -> (Vec<PointBlocks>, f64) {
        let parts: Vec<(PointBlocks, f64)> = st
            .points
            .par_iter()
            .zip(obs)
            .map(|(p, o)| blocks(p, st.pol_angle, o, options))
            .collect();
        let loss = parts.iter().map(|p| p.1).sum();
        (parts.into_iter().map(|p| p.0).collect(), loss)
    };
    let (mut current, mut loss) = evaluate(state);
    state.loss_trace.push(loss);

    for it in 1..=max_iterations {
        state.iterations += 1;
        if loss == 0.0 {
            return true;
        }
        let c: f64 = current.iter().map(|b| b.c).sum();
        let gq: f64 = current.iter().map(|b| b.gq).sum();
        let mut accepted = false;
        while lambda <= 1e16 {
            let mut solved = Vec::with_capacity(current.len());
            let mut schur = c + lambda * c.max(1e-9);
            let mut rhs = -gq;
            let mut ok = true;
            for blk in &current {
                let mut a = blk.a;
                for i in first..9 {
                    a[(i, i)] += lambda * blk.a[(i, i)].max(1e-9);
                }
                let Some(chol) = a.cholesky() else {
                    ok = false;
                    break;
                };
                let u = chol.solve(&blk.b);
                let w = chol.solve(&blk.g);
                schur -= blk.b.dot(&u);
                rhs += blk.b.dot(&w);
                solved.push((u, w));
            }
            if !ok || !(schur > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let dq = rhs / schur;
            let mut trial = state.clone();
            let mut step2 = 0.0;
            for (k, (u, w)) in solved.iter().enumerate() {
                let dp = -(w + u * dq);
                let mut params = state.points[k].to_params(state.pol_angle);
                for i in first..9 {
                    params[i] += dp[i];
                }
                params[POL] = state.pol_angle + dq;
                project(&mut params);
                for i in 0..9 {
                    let mut d = (params[i] - state.points[k].to_params(0.0)[i]).abs();
                    if i == 1 {
                        d = d.min(2.0 * PI - d);
                    }
                    step2 += d * d;
                }
                trial.points[k] = PointUnknowns::from_params(&params, state.points[k].frame);
            }
            trial.pol_angle = canonical_polarizer_angle(state.pol_angle + dq);
            step2 += dq * dq;
            if step2.sqrt() < options.step_tolerance {
                return true;
            }
            let (next, trial_loss) = evaluate(&trial);
            if trial_loss < loss {
                *state = trial;
                current = next;
                loss = trial_loss;
                state.loss_trace.push(loss);
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            return true;
        }
        if !options.fix_normal && it % RECENTER_EVERY == 0 {
            for p in &mut state.points {
                *p = p.recentered();
            }
            current = evaluate(state).0;
        }
    }
    false
}
