//! Dense annotation transfer: re-indexing a raw target with the template
//! topology through a unique nearest-neighbour assignment.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::SpatialIndex;
use crate::mesh_io::{LandmarkMap, Mesh, Point};

/// Neighbour count of the first assignment round; doubled each round.
pub const INITIAL_K: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransferError {
    #[error("target has {found} vertices, the template needs at least {needed}")]
    TargetTooSmall { needed: usize, found: usize },
    #[error("no landmark names shared with the ground truth")]
    NoSharedLandmarks,
}

/// Raw target vertices arranged in template order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReindexedModel {
    pub mesh: Mesh,
    /// `mesh.vertices[j] == target.vertices[source_indices[j]]`.
    pub source_indices: Vec<usize>,
    pub landmarks: LandmarkMap,
}

/// Injective template→target assignment by global greedy matching over
/// k-nearest-neighbour candidate lists.
///
/// Candidates are accepted in increasing `(distance, template index, target
/// index)` order when both endpoints are still free. Vertices left unmatched
/// after a round are retried with twice as many neighbours.
pub fn assign_unique(fitted: &[Point], target: &[Point]) -> Result<Vec<usize>, TransferError> {
    let m = fitted.len();
    if target.len() < m {
        return Err(TransferError::TargetTooSmall {
            needed: m,
            found: target.len(),
        });
    }
    let index = SpatialIndex::new(target);
    let mut assignment = vec![usize::MAX; m];
    let mut taken = vec![false; target.len()];
    let mut pending: Vec<usize> = (0..m).collect();
    let mut k = INITIAL_K.min(target.len());
    while !pending.is_empty() {
        let mut candidates: Vec<(f64, usize, usize)> = pending
            .par_iter()
            .flat_map_iter(|&j| {
                index
                    .knn(&fitted[j], k)
                    .into_iter()
                    .filter(|n| !taken[n.index])
                    .map(move |n| (n.dist2, j, n.index))
            })
            .collect();
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, j, t) in candidates {
            if assignment[j] == usize::MAX && !taken[t] {
                assignment[j] = t;
                taken[t] = true;
            }
        }
        pending.retain(|&j| assignment[j] == usize::MAX);
        if k == target.len() {
            // every free target vertex was a candidate, so nothing can remain
            debug_assert!(pending.is_empty());
            break;
        }
        k = (k * 2).min(target.len());
    }
    Ok(assignment)
}

/// Builds `t̂′`: the raw target vertices picked by [`assign_unique`], with the
/// template faces and landmarks carried over by index.
pub fn transfer_annotation(
    fitted: &[Point],
    target: &Mesh,
    template_faces: &[[usize; 3]],
    template_landmarks: &LandmarkMap,
) -> Result<ReindexedModel, TransferError> {
    let source_indices = assign_unique(fitted, &target.vertices)?;
    let vertices = source_indices.iter().map(|&i| target.vertices[i]).collect();
    let landmarks = template_landmarks.clone();
    Ok(ReindexedModel {
        mesh: Mesh {
            vertices,
            faces: template_faces.to_vec(),
            landmarks: landmarks.clone(),
        },
        source_indices,
        landmarks,
    })
}

/// Distance between transferred and ground-truth positions for every shared
/// landmark name.
pub fn landmark_error(
    reindexed: &ReindexedModel,
    ground_truth: &BTreeMap<String, Point>,
) -> Result<BTreeMap<String, f64>, TransferError> {
    let errors: BTreeMap<String, f64> = reindexed
        .landmarks
        .iter()
        .filter_map(|(name, &j)| {
            let truth = ground_truth.get(name)?;
            let pos = reindexed.mesh.vertices.get(j)?;
            Some((name.clone(), (pos - truth).norm()))
        })
        .collect();
    if errors.is_empty() {
        return Err(TransferError::NoSharedLandmarks);
    }
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_assignment() {
        let pts: Vec<Point> = (0..30).map(|i| Point::new(i as f64, (i % 4) as f64, 0.0)).collect();
        assert_eq!(assign_unique(&pts, &pts).unwrap(), (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn closer_vertex_wins_conflict() {
        let fitted = vec![Point::new(0.0, 0.0, 0.0), Point::new(0.3, 0.0, 0.0)];
        let target = vec![Point::new(0.4, 0.0, 0.0), Point::new(-2.0, 0.0, 0.0)];
        assert_eq!(assign_unique(&fitted, &target).unwrap(), vec![1, 0]);
    }

    #[test]
    fn too_small() {
        let p = vec![Point::origin(); 3];
        assert_eq!(
            assign_unique(&p, &p[..2]).unwrap_err(),
            TransferError::TargetTooSmall { needed: 3, found: 2 }
        );
    }

    #[test]
    fn landmark_offsets() {
        let mesh = Mesh::from_points(vec![Point::new(1.0, 2.0, 3.0), Point::new(4.0, 5.0, 6.0)]);
        let landmarks: LandmarkMap = [("a".to_string(), 0), ("b".to_string(), 1)].into();
        let re = transfer_annotation(&mesh.vertices, &mesh, &[], &landmarks).unwrap();
        let shifted: BTreeMap<String, Point> = landmarks
            .iter()
            .map(|(n, &i)| (n.clone(), mesh.vertices[i] + nalgebra::Vector3::new(2.0, 0.0, 0.0)))
            .collect();
        let err = landmark_error(&re, &shifted).unwrap();
        assert!(err.values().all(|&e| (e - 2.0).abs() < 1e-12));
        let unrelated: BTreeMap<String, Point> = [("z".to_string(), Point::origin())].into();
        assert_eq!(landmark_error(&re, &unrelated).unwrap_err(), TransferError::NoSharedLandmarks);
    }
}
