//! Training matrices, sparse and locally coherent (SLC) component learning,
//! and the PCA baseline.

mod pca;
mod slc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pca::{learn_pca, PcaModel};
pub use slc::{learn_slc, learn_slc_with, sparsity, LearnLog, SlcParams, SolverMode};

use crate::mesh_io::{Mesh, Point};

/// Floor applied to `μ` before it is inverted in the fitting regularizer.
pub const WEIGHT_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("training set needs at least 2 shapes, got {0}")]
    TooFewShapes(usize),
    #[error("shape {index} has dimension {found}, expected {expected}")]
    InconsistentShape {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparam(String),
    #[error("k = {k} exceeds the maximum {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("coefficient vector has length {found}, model has {expected} components")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Linearized `[x1, y1, z1, ..., xm, ym, zm]` coordinates of a registered mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeVector(DVector<f64>);

impl ShapeVector {
    pub fn new(v: DVector<f64>) -> Self {
        assert!(v.len() % 3 == 0, "shape vector length must be a multiple of 3");
        ShapeVector(v)
    }

    pub fn from_points(points: &[Point]) -> Self {
        ShapeVector(DVector::from_iterator(
            3 * points.len(),
            points.iter().flat_map(|p| [p.x, p.y, p.z]),
        ))
    }

    pub fn to_points(&self) -> Vec<Point> {
        self.0
            .as_slice()
            .chunks_exact(3)
            .map(|c| Point::new(c[0], c[1], c[2]))
            .collect()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn vertex_count(&self) -> usize {
        self.0.len() / 3
    }
}

/// `N ≥ 2` registered shapes sharing one topology.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    shapes: Vec<ShapeVector>,
    faces: Vec<[usize; 3]>,
}

impl TrainingSet {
    pub fn new(shapes: Vec<ShapeVector>, faces: Vec<[usize; 3]>) -> Result<Self, LearnError> {
        if shapes.len() < 2 {
            return Err(LearnError::TooFewShapes(shapes.len()));
        }
        let dim = shapes[0].as_vector().len();
        if let Some((index, s)) = shapes.iter().enumerate().find(|(_, s)| s.as_vector().len() != dim) {
            return Err(LearnError::InconsistentShape {
                index,
                expected: dim,
                found: s.as_vector().len(),
            });
        }
        Ok(TrainingSet { shapes, faces })
    }

    /// Topology is taken from the first mesh.
    pub fn from_meshes(meshes: &[Mesh]) -> Result<Self, LearnError> {
        let faces = meshes.first().map(|m| m.faces.clone()).unwrap_or_default();
        let shapes = meshes.iter().map(|m| ShapeVector::from_points(&m.vertices)).collect();
        TrainingSet::new(shapes, faces)
    }

    pub fn shapes(&self) -> &[ShapeVector] {
        &self.shapes
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Number of scans.
    pub fn n(&self) -> usize {
        self.shapes.len()
    }

    /// Number of vertices per scan.
    pub fn m(&self) -> usize {
        self.shapes[0].vertex_count()
    }
}

/// Mean shape and the `3m × N` displacement matrix `V` with columns `f_i − mean`.
pub fn build_displacements(ts: &TrainingSet) -> (ShapeVector, DMatrix<f64>) {
    let dim = 3 * ts.m();
    let n = ts.n();
    let mut mean = DVector::zeros(dim);
    for s in ts.shapes() {
        mean += s.as_vector();
    }
    mean /= n as f64;
    let mut v = DMatrix::zeros(dim, n);
    for (i, s) in ts.shapes().iter().enumerate() {
        v.set_column(i, &(s.as_vector() - &mean));
    }
    (ShapeVector(mean), v)
}

/// Learning hyperparameters recorded on an [`SlcModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlcHyperparams {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Mean shape, deformation components (`basis = Cᵀ`, `3m × k`), primary
/// directions `D` (`N × k`) and weights `μ_j = mean_i D_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlcModel {
    pub mean: ShapeVector,
    pub basis: DMatrix<f64>,
    pub directions: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// Not stored in the model container.
    pub hyperparams: Option<SlcHyperparams>,
}

impl SlcModel {
    pub fn vertex_count(&self) -> usize {
        self.mean.vertex_count()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    /// `λ · μ̂⁻¹` diagonal used by the fitting regularizer, with `μ` floored
    /// at [`WEIGHT_FLOOR`].
    pub fn inverse_weights(&self) -> DVector<f64> {
        self.weights.map(|w| 1.0 / w.max(WEIGHT_FLOOR))
    }

    /// Keeps the first `k` components.
    pub fn truncated(&self, k: usize) -> Result<SlcModel, LearnError> {
        if k > self.k() {
            return Err(LearnError::KTooLarge { k, max: self.k() });
        }
        Ok(SlcModel {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, k).into_owned(),
            directions: self.directions.columns(0, k).into_owned(),
            weights: self.weights.rows(0, k).into_owned(),
            hyperparams: self.hyperparams,
        })
    }
}

/// Shared view of mean-plus-linear-basis models.
pub trait LinearShapeModel {
    fn mean(&self) -> &ShapeVector;
    fn basis(&self) -> &DMatrix<f64>;

    fn k(&self) -> usize {
        self.basis().ncols()
    }

    /// Per-component diagonal that `λ` scales in the fitting system.
    fn fit_regularizer(&self) -> DVector<f64>;

    /// `mean + basis · α`.
    fn synthesize(&self, alpha: &DVector<f64>) -> Result<ShapeVector, LearnError> {
        if alpha.len() != self.k() {
            return Err(LearnError::DimensionMismatch {
                expected: self.k(),
                found: alpha.len(),
            });
        }
        Ok(ShapeVector(self.mean().as_vector() + self.basis() * alpha))
    }
}

impl LinearShapeModel for SlcModel {
    fn mean(&self) -> &ShapeVector {
        &self.mean
    }
    fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    fn fit_regularizer(&self) -> DVector<f64> {
        self.inverse_weights()
    }
}

impl LinearShapeModel for PcaModel {
    fn mean(&self) -> &ShapeVector {
        &self.mean
    }
    fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }
    /// PCA has no weights; plain ridge.
    fn fit_regularizer(&self) -> DVector<f64> {
        DVector::from_element(self.basis.ncols(), 1.0)
    }
}

/// Free-function form of [`LinearShapeModel::synthesize`].
pub fn synthesize<M: LinearShapeModel + ?Sized>(
    model: &M,
    alpha: &DVector<f64>,
) -> Result<ShapeVector, LearnError> {
    model.synthesize(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(vals: &[f64]) -> ShapeVector {
        ShapeVector::new(DVector::from_row_slice(vals))
    }

    #[test]
    fn identical_shapes_have_zero_displacement() {
        let s = shape(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let ts = TrainingSet::new(vec![s.clone(), s.clone()], vec![]).unwrap();
        let (mean, v) = build_displacements(&ts);
        assert_eq!(mean, s);
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn symmetric_pair() {
        let x = [1.0, -2.0, 0.5];
        let ts = TrainingSet::new(vec![shape(&x), shape(&x.map(|a| -a))], vec![]).unwrap();
        let (mean, v) = build_displacements(&ts);
        assert!(mean.as_vector().iter().all(|&a| a == 0.0));
        assert_eq!(v.column(0).as_slice(), &x);
        assert_eq!(v.column(1).as_slice(), &x.map(|a| -a));
    }

    #[test]
    fn training_set_validation() {
        assert_eq!(
            TrainingSet::new(vec![shape(&[0.0; 3])], vec![]).unwrap_err(),
            LearnError::TooFewShapes(1)
        );
        assert!(matches!(
            TrainingSet::new(vec![shape(&[0.0; 3]), shape(&[0.0; 6])], vec![]),
            Err(LearnError::InconsistentShape { index: 1, .. })
        ));
    }

    fn toy_model() -> SlcModel {
        SlcModel {
            mean: shape(&[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]),
            basis: DMatrix::from_fn(6, 2, |r, c| (r + 2 * c) as f64),
            directions: DMatrix::from_element(3, 2, 0.5),
            weights: DVector::from_element(2, 0.5),
            hyperparams: None,
        }
    }

    #[test]
    fn synthesize_zero_and_unit() {
        let model = toy_model();
        assert_eq!(model.synthesize(&DVector::zeros(2)).unwrap(), model.mean);
        let e1 = DVector::from_row_slice(&[0.0, 1.0]);
        let s = model.synthesize(&e1).unwrap();
        assert_eq!(s.as_vector(), &(model.mean.as_vector() + model.basis.column(1)));
        assert!(matches!(
            model.synthesize(&DVector::zeros(3)),
            Err(LearnError::DimensionMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn synthesize_is_linear() {
        let model = toy_model();
        let a1 = DVector::from_row_slice(&[0.3, -1.2]);
        let a2 = DVector::from_row_slice(&[2.0, 0.7]);
        let (a, b) = (1.5, -0.25);
        let mean = model.mean.as_vector();
        let lhs = model.synthesize(&(&a1 * a + &a2 * b)).unwrap().into_inner() - mean;
        let rhs = (model.synthesize(&a1).unwrap().into_inner() - mean) * a
            + (model.synthesize(&a2).unwrap().into_inner() - mean) * b;
        assert!((lhs - rhs).amax() < 1e-9);
    }

    #[test]
    fn inverse_weights_are_floored() {
        let mut model = toy_model();
        model.weights[0] = 0.0;
        let inv = model.inverse_weights();
        assert_eq!(inv[0], 1.0 / WEIGHT_FLOOR);
        assert_eq!(inv[1], 2.0);
    }
}
