//! Mean-point association with global and local outlier rejection.

use rayon::prelude::*;

use super::FitError;
use crate::geometry::SpatialIndex;
use crate::mesh_io::Point;

/// How a template vertex obtained its target point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Centroid of the surviving points of its Voronoi region.
    Centroid { region_size: usize },
    /// Nearest target point, used for empty or fully rejected regions.
    FallbackNn { target_index: usize },
}

/// Output of [`correspond`]: one target point per template vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    /// Re-indexed target `t̂ᶜ`, aligned with the template vertices.
    pub targets: Vec<Point>,
    pub source_kind: Vec<SourceKind>,
    /// Target points discarded as outliers.
    pub rejected_count: usize,
    /// Global threshold `τ_g`.
    pub global_threshold: f64,
    /// Local threshold `τ_j`, `None` for empty regions.
    pub local_thresholds: Vec<Option<f64>>,
    /// Voronoi region of every template vertex: ascending target indices whose
    /// nearest template vertex it is.
    pub regions: Vec<Vec<usize>>,
}

impl Correspondence {
    pub fn fallback_count(&self) -> usize {
        self.source_kind
            .iter()
            .filter(|k| matches!(k, SourceKind::FallbackNn { .. }))
            .count()
    }
}

/// Mean plus population standard deviation, summed in input order.
pub(crate) fn mean_plus_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut n = 0usize;
    let mut sum = 0.0;
    for v in values.clone() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let mut var = 0.0;
    for v in values {
        var += (v - mean) * (v - mean);
    }
    mean + (var / n as f64).sqrt()
}

/// Associates every template vertex with a target point.
///
/// 1. Each target point joins the Voronoi region of its nearest template vertex.
/// 2. `τ_g` is mean + std of the template→target nearest-neighbour distances.
/// 3. In each region, `τ_j` is mean + std of the distances to `s_j`; points
///    farther than `τ_g` or `τ_j` are rejected and the survivors' centroid is
///    assigned to `j`.
/// 4. Vertices left without a centroid take their nearest target point.
pub fn correspond(template: &[Point], target: &[Point]) -> Result<Correspondence, FitError> {
    if template.is_empty() || target.is_empty() {
        return Err(FitError::EmptyInput);
    }
    let template_index = SpatialIndex::new(template);
    let target_index = SpatialIndex::new(target);

    let owner = template_index.nearest_all(target);
    let mut regions: Vec<Vec<usize>> = vec![Vec::new(); template.len()];
    for (i, nn) in owner.iter().enumerate() {
        regions[nn.index].push(i);
    }

    let to_target = target_index.nearest_all(template);
    let global_threshold = mean_plus_std(to_target.iter().map(|n| n.distance()));

    struct Local {
        tau: Option<f64>,
        centroid: Option<(Point, usize)>,
        rejected: usize,
    }
    let locals: Vec<Local> = regions
        .par_iter()
        .map(|region| {
            if region.is_empty() {
                return Local {
                    tau: None,
                    centroid: None,
                    rejected: 0,
                };
            }
            let dist = |i: &usize| owner[*i].distance();
            let tau = mean_plus_std(region.iter().map(dist));
            let mut acc = nalgebra::Vector3::zeros();
            let mut kept = 0usize;
            for i in region {
                let d = dist(i);
                if d <= global_threshold && d <= tau {
                    acc += target[*i].coords;
                    kept += 1;
                }
            }
            Local {
                tau: Some(tau),
                centroid: (kept > 0).then(|| (Point::from(acc / kept as f64), kept)),
                rejected: region.len() - kept,
            }
        })
        .collect();

    let mut targets = Vec::with_capacity(template.len());
    let mut source_kind = Vec::with_capacity(template.len());
    let mut rejected_count = 0;
    let mut local_thresholds = Vec::with_capacity(template.len());
    for (j, local) in locals.into_iter().enumerate() {
        rejected_count += local.rejected;
        local_thresholds.push(local.tau);
        match local.centroid {
            Some((c, region_size)) => {
                targets.push(c);
                source_kind.push(SourceKind::Centroid { region_size });
            }
            None => {
                let nn = to_target[j];
                targets.push(target[nn.index]);
                source_kind.push(SourceKind::FallbackNn {
                    target_index: nn.index,
                });
            }
        }
    }

    Ok(Correspondence {
        targets,
        source_kind,
        rejected_count,
        global_threshold,
        local_thresholds,
        regions,
    })
}
