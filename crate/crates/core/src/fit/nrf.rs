use nalgebra::DVector;

use super::{correspond, per_vertex_error, DeformationSolver, FitError};
use crate::geometry::{estimate_similarity, SimilarityTransform};
use crate::learn::SlcModel;
use crate::mesh_io::{Mesh, Point};

/// Stopping and regularization parameters of [`nrf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NrfParams {
    /// Minimum error improvement per iteration, mm.
    pub tau_e: f64,
    pub max_iter: usize,
    pub lambda: f64,
}

impl Default for NrfParams {
    fn default() -> Self {
        NrfParams {
            tau_e: 0.01,
            max_iter: 30,
            lambda: 1.0,
        }
    }
}

/// Output of [`nrf`].
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Deformed model, in the frame of `aligned_target`.
    pub shape: Vec<Point>,
    /// Per-iteration coefficient increments.
    pub alpha: Vec<DVector<f64>>,
    /// Mean nearest-neighbour error after every iteration, mm.
    pub error_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Error of the model mean before the first iteration.
    pub initial_error: f64,
    /// Input target after all similarity re-alignments.
    pub aligned_target: Vec<Point>,
    /// Composition of those re-alignments (input target frame → fit frame).
    pub target_transform: SimilarityTransform,
    /// Outlier rejections of the last correspondence step.
    pub last_rejected: usize,
}

impl FitResult {
    pub fn final_error(&self) -> f64 {
        self.error_trace.last().copied().unwrap_or(self.initial_error)
    }

    /// Fitted shape mapped back into the frame of the input target.
    pub fn shape_in_target_frame(&self) -> Option<Vec<Point>> {
        Some(self.target_transform.inverse()?.apply(&self.shape))
    }
}

/// Non-rigid fit of `model` to a cropped, rigidly aligned target.
pub fn nrf(model: &SlcModel, target: &Mesh, params: &NrfParams) -> Result<FitResult, FitError> {
    nrf_points(model, &target.vertices, params)
}

/// [`nrf`] on a bare point set.
pub fn nrf_points(model: &SlcModel, target: &[Point], params: &NrfParams) -> Result<FitResult, FitError> {
    if target.is_empty() || model.vertex_count() == 0 {
        return Err(FitError::EmptyInput);
    }
    if !(params.tau_e >= 0.0) {
        return Err(FitError::InvalidParam(format!("tau_e must be >= 0, got {}", params.tau_e)));
    }
    let solver = DeformationSolver::new(model, params.lambda)?;
    let mut shape = model.mean.to_points();
    let mut aligned = target.to_vec();
    let mut transform = SimilarityTransform::identity();
    let initial_error = per_vertex_error(&shape, &aligned)?.0;

    let mut err = initial_error;
    let mut alpha = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut last_rejected = 0;
    let mut delta = f64::INFINITY;
    let mut i = 0;
    while i < params.max_iter && delta > params.tau_e {
        let corr = correspond(&shape, &aligned)?;
        last_rejected = corr.rejected_count;
        let step = estimate_similarity(&shape, &corr.targets)?;
        let targets = step.apply(&corr.targets);
        aligned = step.apply(&aligned);
        transform = transform.then(&step);

        let a = solver.solve(&targets, &shape)?;
        shape = solver.apply(&shape, &a);
        alpha.push(a);

        let e = per_vertex_error(&shape, &aligned)?.0;
        trace.push(e);
        delta = err - e;
        err = e;
        i += 1;
        if delta < 0.0 {
            break;
        }
        if delta <= params.tau_e {
            converged = true;
        }
    }

    Ok(FitResult {
        shape,
        alpha,
        error_trace: trace,
        iterations: i,
        converged,
        initial_error,
        aligned_target: aligned,
        target_transform: transform,
        last_rejected,
    })
}
