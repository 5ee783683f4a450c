use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::mesh_io::Point;

/// Affine map in row-vector convention: `out = in · P + T`.
///
/// `P` carries rotation and scale (it is a general 3×3 when estimated by
/// least squares); `T` is the translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub linear: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        SimilarityTransform {
            linear: Matrix3::identity(),
            translation: t,
        }
    }

    /// From a column-convention rotation `R` (`out = R·x + t`).
    pub fn from_rotation(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        SimilarityTransform {
            linear: rotation.transpose(),
            translation,
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Point) -> Point {
        // row vector times P == Pᵀ times column vector
        Point::from(self.linear.tr_mul(&p.coords) + self.translation)
    }

    pub fn apply(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|p| self.apply_point(p)).collect()
    }

    /// `self` followed by `next`.
    pub fn then(&self, next: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            linear: self.linear * next.linear,
            translation: next.linear.tr_mul(&self.translation) + next.translation,
        }
    }

    pub fn inverse(&self) -> Option<SimilarityTransform> {
        let inv = self.linear.try_inverse()?;
        Some(SimilarityTransform {
            linear: inv,
            translation: -inv.tr_mul(&self.translation),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.translation.iter()).all(|x| x.is_finite())
    }
}

/// Row-vector convention application, matching `s = t̂ᶜ · P + 𝟙 · T`.
pub fn apply_transform(points: &[Point], transform: &SimilarityTransform) -> Vec<Point> {
    transform.apply(points)
}

pub(crate) fn centroid(points: &[Point]) -> Vector3<f64> {
    let mut acc = Vector3::zeros();
    for p in points {
        acc += p.coords;
    }
    acc / points.len() as f64
}

/// Least-squares affine map taking `reindexed_target` onto `template`
/// (paired by index).
///
/// `P` is the pseudo-inverse solution on barycentre-centred coordinates and
/// `T = s̄ − t̄ᶜ·P`.
pub fn estimate_similarity(
    template: &[Point],
    reindexed_target: &[Point],
) -> Result<SimilarityTransform, GeometryError> {
    let m = template.len();
    if m != reindexed_target.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: m,
            found: reindexed_target.len(),
        });
    }
    if m < 4 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "similarity estimation needs at least 4 points, got {m}"
        )));
    }
    let s_bar = centroid(template);
    let t_bar = centroid(reindexed_target);
    let tc = DMatrix::from_fn(m, 3, |r, c| reindexed_target[r][c] - t_bar[c]);
    let sc = DMatrix::from_fn(m, 3, |r, c| template[r][c] - s_bar[c]);

    let svd = tc.svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let rank = sigma.iter().filter(|&&s| s > 1e-10 * smax && s > 0.0).count();
    if rank < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "target points are affinely dependent (rank {rank})"
        )));
    }
    let pinv = svd
        .pseudo_inverse(1e-10 * smax)
        .map_err(|e| GeometryError::DegenerateConfiguration(e.to_string()))?;
    let p = pinv * sc;
    let linear = Matrix3::from_fn(|r, c| p[(r, c)]);
    let translation = s_bar - linear.tr_mul(&t_bar);
    let transform = SimilarityTransform { linear, translation };
    if !transform.is_finite() || linear.determinant() == 0.0 {
        return Err(GeometryError::DegenerateConfiguration(
            "estimated transform is singular".into(),
        ));
    }
    Ok(transform)
}

/// Root-mean-square of `‖template_j − (target_j·P + T)‖`.
pub fn rms_residual(template: &[Point], target: &[Point], transform: &SimilarityTransform) -> f64 {
    let sum: f64 = template
        .iter()
        .zip(target)
        .map(|(s, t)| (s - transform.apply_point(t)).norm_squared())
        .sum();
    (sum / template.len().max(1) as f64).sqrt()
}
