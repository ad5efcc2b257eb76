//! Recovery of per-point normals and materials plus the single shared
//! polarizer angle from one polarized intensity image per view.

mod dataset;
pub mod dual;
mod point;
mod scene;

pub use dataset::{load_dataset, Dataset, DatasetView, Manifest, ManifestView};
pub use point::{
    default_init, grid_search_pol, jacobian_rank, point_jacobian, point_residuals, predict, random_init, solve_point,
    solve_point_restarts, ModelSettings, NormalFrame, PointSolution, PointSolveOptions, PointUnknowns, PolarizerAngle,
    ViewObservation, N_UNKNOWNS, POL_GRID, ROUGHNESS_MIN, UNKNOWN_NAMES,
};
pub use scene::{gather_observations, solve_scene, PointSample, SceneSolution, SceneSolveOptions};

use crate::error::{Error, Result};
use crate::polcore::canonical_polarizer_angle;
use point::{residuals_and_jacobian, POL};

/// Unknowns of a multi-point solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveState {
    pub points: Vec<PointUnknowns>,
    /// Shared polarizer angle in `[0, π)`.
    pub pol_angle: f64,
    pub iterations: usize,
    /// Objective after each accepted step.
    pub loss_trace: Vec<f64>,
}

impl SolveState {
    pub fn new(points: Vec<PointUnknowns>, pol_angle: f64) -> Self {
        Self {
            points,
            pol_angle: canonical_polarizer_angle(pol_angle),
            iterations: 0,
            loss_trace: Vec::new(),
        }
    }

    /// Flattened unknowns: nine per point, then the polarizer angle.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .points
            .iter()
            .flat_map(|p| p.to_params(0.0)[..POL].to_vec())
            .collect();
        out.push(self.pol_angle);
        out
    }

    /// Inverse of [`Self::to_vector`]; normal frames are kept. No projection
    /// onto the bounds is applied.
    pub fn with_vector(&self, x: &[f64]) -> Self {
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut params = [0.0; N_UNKNOWNS];
                params[..POL].copy_from_slice(&x[9 * k..9 * k + 9]);
                PointUnknowns::from_params(&params, p.frame)
            })
            .collect();
        Self {
            points,
            pol_angle: x[x.len() - 1],
            iterations: self.iterations,
            loss_trace: self.loss_trace.clone(),
        }
    }

    pub fn unknown_name(&self, index: usize) -> String {
        if index == 9 * self.points.len() {
            "pol_angle".into()
        } else {
            format!("point[{}].{}", index / 9, UNKNOWN_NAMES[index % 9])
        }
    }
}

fn check_shapes(state: &SolveState, obs: &[Vec<ViewObservation>]) -> Result<()> {
    if state.points.len() != obs.len() {
        return Err(Error::Domain(format!(
            "{} points but {} observation sets",
            state.points.len(),
            obs.len()
        )));
    }
    Ok(())
}

/// Concatenated weighted residuals of every point.
pub fn residuals(state: &SolveState, obs: &[Vec<ViewObservation>], settings: &ModelSettings) -> Result<Vec<f64>> {
    check_shapes(state, obs)?;
    Ok(state
        .points
        .iter()
        .zip(obs)
        .flat_map(|(p, o)| point_residuals(p, state.pol_angle, o, settings).0)
        .collect())
}

/// `½‖r‖²`.
pub fn objective(state: &SolveState, obs: &[Vec<ViewObservation>], settings: &ModelSettings) -> Result<f64> {
    Ok(0.5 * residuals(state, obs, settings)?.iter().map(|r| r * r).sum::<f64>())
}

/// `Σ |r|`, reported alongside the squared objective.
pub fn l1_loss(state: &SolveState, obs: &[Vec<ViewObservation>], settings: &ModelSettings) -> Result<f64> {
    Ok(residuals(state, obs, settings)?.iter().map(|r| r.abs()).sum())
}

/// Gradient of `½‖r‖²` in [`SolveState::to_vector`] order.
pub fn gradient(state: &SolveState, obs: &[Vec<ViewObservation>], settings: &ModelSettings) -> Result<Vec<f64>> {
    check_shapes(state, obs)?;
    let np = state.points.len();
    let mut grad = vec![0.0; 9 * np + 1];
    for (k, (p, o)) in state.points.iter().zip(obs).enumerate() {
        let (r, jac) = residuals_and_jacobian(&p.to_params(state.pol_angle), &p.frame, o, settings);
        for (ri, row) in r.iter().zip(&jac) {
            for j in 0..9 {
                grad[9 * k + j] += ri * row[j];
            }
            grad[9 * np] += ri * row[POL];
        }
    }
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for {}",
            state.unknown_name(bad)
        )));
    }
    Ok(grad)
}
