//! Preprocessing and rigid alignment.

mod spatial;
mod transform;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub use spatial::{dist2, Neighbor, SpatialIndex};
pub use transform::{apply_transform, estimate_similarity, rms_residual, SimilarityTransform};
pub(crate) use transform::centroid;

use crate::mesh_io::{LandmarkMap, Mesh, Point};

/// Cropping radius around the nose tip used for raw scans, in mm.
pub const DEFAULT_CROP_RADIUS: f64 = 95.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("empty input")]
    EmptyInput,
    #[error("no vertices within {radius} mm of the nose tip")]
    EmptyResult { radius: f64 },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("point sets differ in size: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Index of the vertex with the largest `z`; ties go to the lowest index.
pub fn nose_tip(points: &[Point]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        match best {
            Some(b) if points[b].z >= p.z => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Output of [`crop_and_center`].
#[derive(Debug, Clone)]
pub struct CropResult {
    pub mesh: Mesh,
    /// For every kept vertex, its index in the input mesh.
    pub kept: Vec<usize>,
    /// Translation that was added to every kept vertex.
    pub translation: Vector3<f64>,
    /// Index of the nose tip within the cropped mesh.
    pub nose_tip: usize,
}

/// Keeps vertices within `radius` (inclusive) of the nose tip and moves the
/// barycentre of what is left to the origin. Faces touching a removed vertex
/// are dropped; landmarks are remapped or dropped.
pub fn crop_and_center(mesh: &Mesh, radius: f64) -> Result<CropResult, GeometryError> {
    let tip = nose_tip(&mesh.vertices).ok_or(GeometryError::EmptyInput)?;
    let tip_pos = mesh.vertices[tip];
    let r2 = radius * radius;
    let mut remap = vec![usize::MAX; mesh.vertices.len()];
    let mut kept = Vec::new();
    if radius >= 0.0 {
        for (i, v) in mesh.vertices.iter().enumerate() {
            if dist2(v, &tip_pos) <= r2 {
                remap[i] = kept.len();
                kept.push(i);
            }
        }
    }
    if kept.is_empty() {
        return Err(GeometryError::EmptyResult { radius });
    }
    let points: Vec<Point> = kept.iter().map(|&i| mesh.vertices[i]).collect();
    let translation = -centroid(&points);
    let vertices = points.iter().map(|p| p + translation).collect();
    let faces = mesh
        .faces
        .iter()
        .filter_map(|f| {
            let g = [remap[f[0]], remap[f[1]], remap[f[2]]];
            g.iter().all(|&i| i != usize::MAX).then_some(g)
        })
        .collect();
    let landmarks: LandmarkMap = mesh
        .landmarks
        .iter()
        .filter(|(_, &i)| remap[i] != usize::MAX)
        .map(|(name, &i)| (name.clone(), remap[i]))
        .collect();
    Ok(CropResult {
        mesh: Mesh {
            vertices,
            faces,
            landmarks,
        },
        nose_tip: remap[tip],
        kept,
        translation,
    })
}

/// Optimal rotation and translation taking `source[i]` onto `target[i]`
/// (Kabsch with reflection guard).
pub fn kabsch(source: &[Point], target: &[Point]) -> Result<SimilarityTransform, GeometryError> {
    if source.len() != target.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: source.len(),
            found: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "rigid alignment needs 3 non-collinear correspondences, got {}",
            source.len()
        )));
    }
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s.coords - cs) * (t.coords - ct).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    let smax = sv.max();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if smax <= 0.0 || sorted[1] <= 1e-12 * smax {
        return Err(GeometryError::DegenerateConfiguration(
            "cross-covariance is rank deficient (collinear correspondences)".into(),
        ));
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut fix = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        // flip the axis of the smallest singular value
        let min_idx = (0..3).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(2);
        fix[(min_idx, min_idx)] = -1.0;
    }
    let rotation = v_t.transpose() * fix * u.transpose();
    let translation = ct - rotation * cs;
    Ok(SimilarityTransform::from_rotation(rotation, translation))
}

/// Result of [`rigid_icp`].
#[derive(Debug, Clone)]
pub struct RigidFit {
    /// Maps `source` onto `target`.
    pub transform: SimilarityTransform,
    /// RMS nearest-neighbour distance before the first step and after every step.
    pub rms_trace: Vec<f64>,
    pub iterations: usize,
}

/// Point-to-point rigid ICP from `source` onto `target`. Stops when the RMS
/// improvement drops below `tol` or after `max_iter` steps.
pub fn rigid_icp(
    source: &[Point],
    target: &[Point],
    max_iter: usize,
    tol: f64,
) -> Result<RigidFit, GeometryError> {
    if source.is_empty() || target.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let index = SpatialIndex::new(target);
    let rms = |nn: &[Neighbor]| (nn.iter().map(|n| n.dist2).sum::<f64>() / nn.len() as f64).sqrt();

    let mut transform = SimilarityTransform::identity();
    let mut nn = index.nearest_all(source);
    let mut trace = vec![rms(&nn)];
    let mut iterations = 0;
    while iterations < max_iter {
        let matched: Vec<Point> = nn.iter().map(|n| target[n.index]).collect();
        let candidate = kabsch(source, &matched)?;
        let moved = candidate.apply(source);
        let candidate_nn = index.nearest_all(&moved);
        let err = rms(&candidate_nn);
        let prev = *trace.last().expect("non-empty trace");
        iterations += 1;
        if err > prev {
            // only reachable through rounding; keep the previous estimate
            trace.push(prev);
            break;
        }
        transform = candidate;
        nn = candidate_nn;
        trace.push(err);
        if prev - err < tol {
            break;
        }
    }
    Ok(RigidFit {
        transform,
        rms_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nose_tip_tie_breaks_low() {
        let pts = vec![Point::new(0.0, 0.0, 1.0), Point::new(1.0, 0.0, 2.0), Point::new(2.0, 0.0, 2.0)];
        assert_eq!(nose_tip(&pts), Some(1));
        assert_eq!(nose_tip(&[]), None);
    }

    #[test]
    fn zero_radius_keeps_only_tip() {
        let mesh = Mesh::from_points(vec![
            Point::new(0.0, 0.0, 0.0),
            Point::new(1.0, 0.0, 5.0),
            Point::new(2.0, 0.0, 1.0),
        ]);
        let crop = crop_and_center(&mesh, 0.0).unwrap();
        assert_eq!(crop.kept, vec![1]);
        assert_eq!(crop.mesh.vertices, vec![Point::origin()]);
        assert_eq!(crop.nose_tip, 0);
    }

    #[test]
    fn negative_radius_is_empty_result() {
        let mesh = Mesh::from_points(vec![Point::origin()]);
        assert!(matches!(crop_and_center(&mesh, -1.0), Err(GeometryError::EmptyResult { .. })));
        assert!(matches!(crop_and_center(&Mesh::default(), 1.0), Err(GeometryError::EmptyInput)));
    }

    #[test]
    fn crop_remaps_faces_and_landmarks() {
        let mut mesh = Mesh::from_points(vec![
            Point::new(0.0, 0.0, 10.0),
            Point::new(1.0, 0.0, 9.0),
            Point::new(0.0, 1.0, 9.0),
            Point::new(50.0, 0.0, 0.0),
        ]);
        mesh.faces = vec![[0, 1, 2], [1, 2, 3]];
        mesh.landmarks.insert("tip".into(), 0);
        mesh.landmarks.insert("far".into(), 3);
        mesh.landmarks.insert("side".into(), 2);
        let crop = crop_and_center(&mesh, 5.0).unwrap();
        assert_eq!(crop.kept, vec![0, 1, 2]);
        assert_eq!(crop.mesh.faces, vec![[0, 1, 2]]);
        assert_eq!(crop.mesh.landmarks.len(), 2);
        assert_eq!(crop.mesh.landmarks["side"], 2);
        assert!(centroid(&crop.mesh.vertices).norm() < 1e-12);
    }

    #[test]
    fn two_points_are_degenerate() {
        let pts = vec![Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)];
        assert!(matches!(rigid_icp(&pts, &pts, 10, 1e-9), Err(GeometryError::DegenerateConfiguration(_))));
    }

    #[test]
    fn collinear_is_degenerate() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch(&pts, &pts), Err(GeometryError::DegenerateConfiguration(_))));
    }

    #[test]
    fn kabsch_recovers_rotation() {
        let pts: Vec<Point> = (0..12)
            .map(|i| {
                let f = i as f64;
                Point::new(f.sin() * 4.0, (f * 0.5).cos() * 3.0, f * 0.3)
            })
            .collect();
        let rot = nalgebra::Rotation3::from_euler_angles(0.2, -0.1, 0.4).into_inner();
        let t = SimilarityTransform::from_rotation(rot, Vector3::new(1.0, 2.0, -3.0));
        let moved = t.apply(&pts);
        let est = kabsch(&pts, &moved).unwrap();
        assert!((est.linear - t.linear).abs().max() < 1e-12);
        assert!((est.translation - t.translation).norm() < 1e-12);
    }
}
