//! Raw scan to fitted, re-indexed model: crop, nose-tip alignment, rigid ICP,
//! non-rigid fit, then annotation transfer in the frame of the raw scan.

use thiserror::Error;

use crate::fit::{nrf_points, FitError, FitResult, NrfParams};
use crate::geometry::{crop_and_center, nose_tip, rigid_icp, GeometryError, SimilarityTransform, DEFAULT_CROP_RADIUS};
use crate::learn::SlcModel;
use crate::mesh_io::{LandmarkMap, Mesh, Point};
use crate::transfer::{transfer_annotation, ReindexedModel, TransferError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error("alignment transform is not invertible")]
    NonInvertible,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    /// `None` skips cropping (the barycentre is still moved to the origin).
    pub crop_radius: Option<f64>,
    pub icp_max_iter: usize,
    pub icp_tol: f64,
    pub nrf: NrfParams,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            crop_radius: Some(DEFAULT_CROP_RADIUS),
            icp_max_iter: 50,
            icp_tol: 1e-6,
            nrf: NrfParams::default(),
        }
    }
}

/// A raw target moved into the frame of the model mean.
#[derive(Debug, Clone)]
pub struct PreparedTarget {
    pub points: Vec<Point>,
    /// Raw target vertex index of every prepared point.
    pub kept: Vec<usize>,
    /// Raw frame → model frame.
    pub transform: SimilarityTransform,
    pub icp_rms: Vec<f64>,
}

/// Crops around the nose tip, centres, moves the nose tip onto the
/// template's and refines with rigid ICP against `template`.
pub fn prepare_target(template: &[Point], raw: &Mesh, params: &PipelineParams) -> Result<PreparedTarget, PipelineError> {
    let radius = params.crop_radius.unwrap_or(f64::INFINITY);
    let crop = crop_and_center(raw, radius)?;
    let mut transform = SimilarityTransform::translation(crop.translation);
    let template_tip = nose_tip(template).ok_or(GeometryError::EmptyInput)?;
    let shift = template[template_tip] - crop.mesh.vertices[crop.nose_tip];
    transform = transform.then(&SimilarityTransform::translation(shift));
    let coarse = transform.apply(&raw_points(raw, &crop.kept));
    let icp = rigid_icp(&coarse, template, params.icp_max_iter, params.icp_tol)?;
    transform = transform.then(&icp.transform);
    Ok(PreparedTarget {
        points: icp.transform.apply(&coarse),
        kept: crop.kept,
        transform,
        icp_rms: icp.rms_trace,
    })
}

fn raw_points(raw: &Mesh, kept: &[usize]) -> Vec<Point> {
    kept.iter().map(|&i| raw.vertices[i]).collect()
}

/// Non-rigid fit of a raw target.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub fit: FitResult,
    pub prepared: PreparedTarget,
    /// Fitted shape in the frame of the raw target.
    pub shape_raw: Vec<Point>,
    /// Raw frame → fitting frame, including the similarity re-alignments.
    pub total_transform: SimilarityTransform,
}

pub fn fit_target(model: &SlcModel, raw: &Mesh, params: &PipelineParams) -> Result<FitOutcome, PipelineError> {
    let template = model.mean.to_points();
    let prepared = prepare_target(&template, raw, params)?;
    let fit = nrf_points(model, &prepared.points, &params.nrf)?;
    let total_transform = prepared.transform.then(&fit.target_transform);
    let shape_raw = total_transform.inverse().ok_or(PipelineError::NonInvertible)?.apply(&fit.shape);
    Ok(FitOutcome {
        fit,
        prepared,
        shape_raw,
        total_transform,
    })
}

/// [`fit_target`] followed by [`transfer_annotation`] onto the raw target.
pub fn fit_and_transfer(
    model: &SlcModel,
    template_faces: &[[usize; 3]],
    template_landmarks: &LandmarkMap,
    raw: &Mesh,
    params: &PipelineParams,
) -> Result<(FitOutcome, ReindexedModel), PipelineError> {
    let outcome = fit_target(model, raw, params)?;
    let reindexed = transfer_annotation(&outcome.shape_raw, raw, template_faces, template_landmarks)?;
    Ok((outcome, reindexed))
}
