//! Non-rigid fitting of an SLC model to a target point set.

mod correspond;
mod deform;
mod nrf;

use thiserror::Error;

pub use correspond::{correspond, Correspondence, SourceKind};
pub use deform::{solve_deformation, DeformationSolver};
pub use nrf::{nrf, nrf_points, FitResult, NrfParams};

use crate::geometry::{GeometryError, SpatialIndex};
use crate::mesh_io::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("empty input")]
    EmptyInput,
    #[error("deformation system is singular")]
    SingularSystem,
    #[error("expected {expected} points, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Distance from every fitted vertex to its nearest target point, and their mean.
pub fn per_vertex_error(fitted: &[Point], target: &[Point]) -> Result<(f64, Vec<f64>), FitError> {
    if fitted.is_empty() || target.is_empty() {
        return Err(FitError::EmptyInput);
    }
    let index = SpatialIndex::new(target);
    let per_vertex: Vec<f64> = index.nearest_all(fitted).iter().map(|n| n.distance()).collect();
    let mean = per_vertex.iter().sum::<f64>() / per_vertex.len() as f64;
    Ok((mean, per_vertex))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sets_have_zero_error() {
        let pts: Vec<Point> = (0..20).map(|i| Point::new(i as f64, 0.5 * i as f64, 1.0)).collect();
        let (mean, per) = per_vertex_error(&pts, &pts).unwrap();
        assert_eq!(mean, 0.0);
        assert!(per.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn offset_plane() {
        let grid: Vec<Point> = (0..41)
            .flat_map(|i| (0..41).map(move |j| Point::new(i as f64 * 0.5, j as f64 * 0.5, 0.0)))
            .collect();
        let lifted: Vec<Point> = grid.iter().map(|p| Point::new(p.x, p.y, 0.25)).collect();
        let (mean, _) = per_vertex_error(&lifted, &grid).unwrap();
        assert!((mean - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(per_vertex_error(&[], &[Point::origin()]).unwrap_err(), FitError::EmptyInput);
    }
}
