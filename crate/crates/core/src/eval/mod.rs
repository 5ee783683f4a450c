//! Shape-model quality metrics and hyperparameter sweeps.

mod report;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

pub use report::{MetricReport, SweepRow, SweepTable};

use crate::fit::{nrf_points, DeformationSolver, FitError, NrfParams};
use crate::learn::{learn_slc_with, sparsity, LearnError, LinearShapeModel, PcaModel, SlcParams, TrainingSet};
use crate::mesh_io::Mesh;

/// Displacement above which a vertex counts as moved by a component, mm.
pub const DEFORMED_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("k = {k} exceeds the maximum {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("invalid report: {0}")]
    InvalidReport(String),
    #[error("report parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Fraction of the total variance explained by the first `k` eigenvalues,
/// for every `k` in `ks`.
pub fn compactness(pca: &PcaModel, ks: &[usize]) -> MetricReport {
    let spectrum = pca.spectrum.as_slice();
    let total: f64 = spectrum.iter().sum();
    let mut report = MetricReport::new("compactness", "k", "fraction").with_meta("rank", spectrum.len());
    for &k in ks {
        let head: f64 = spectrum.iter().take(k).sum();
        let value = if total > 0.0 { (head / total).min(1.0) } else { 1.0 };
        report.push(k as f64, value);
    }
    report
}

/// Mean vertex-wise distance between two registered shapes.
pub fn mean_vertex_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() / 3;
    let sum: f64 = (0..n)
        .map(|j| {
            let (dx, dy, dz) = (a[3 * j] - b[3 * j], a[3 * j + 1] - b[3 * j + 1], a[3 * j + 2] - b[3 * j + 2]);
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .sum();
    sum / n as f64
}

/// Mean error of reconstructing every test shape with the first `k`
/// components and the closed-form solve, for every `k` in `ks`.
pub fn generalization<M: LinearShapeModel + Sync>(
    model: &M,
    test: &TrainingSet,
    ks: &[usize],
    lambda: f64,
) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport::new("generalization", "k", "mm").with_meta("lambda", lambda);
    let reg = model.fit_regularizer();
    let mean = model.mean().to_points();
    for &k in ks {
        if k > model.k() {
            return Err(EvalError::KTooLarge { k, max: model.k() });
        }
        let basis = model.basis().columns(0, k).into_owned();
        let solver = DeformationSolver::with_regularizer(&basis, &(reg.rows(0, k) * lambda), lambda)?;
        let errors: Vec<f64> = test
            .shapes()
            .par_iter()
            .map(|s| {
                let alpha = solver.solve(&s.to_points(), &mean)?;
                let recon = model.mean().as_vector() + &basis * alpha;
                Ok(mean_vertex_distance(&recon, s.as_vector()))
            })
            .collect::<Result<_, FitError>>()?;
        report.push(k as f64, errors.iter().sum::<f64>() / errors.len() as f64);
    }
    Ok(report)
}

/// Per-sample minima behind [`specificity`].
pub fn specificity_samples(
    model: &PcaModel,
    test: &TrainingSet,
    k: usize,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>, EvalError> {
    if k > model.k() {
        return Err(EvalError::KTooLarge { k, max: model.k() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<DVector<f64>> = (0..n_samples)
        .map(|_| {
            DVector::from_fn(k, |j, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * model.eigenvalues[j].max(0.0).sqrt()
            })
        })
        .collect();
    let basis = model.basis.columns(0, k);
    Ok(coeffs
        .par_iter()
        .map(|a| {
            let sample = model.mean.as_vector() + basis * a;
            test.shapes()
                .iter()
                .map(|t| mean_vertex_distance(&sample, t.as_vector()))
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Average over `n_samples` random model instances of the distance to the
/// closest test shape. Coefficients are independent Gaussians with variance
/// equal to the eigenvalues.
pub fn specificity(model: &PcaModel, test: &TrainingSet, k: usize, n_samples: usize, seed: u64) -> Result<f64, EvalError> {
    let s = specificity_samples(model, test, k, n_samples, seed)?;
    Ok(if s.is_empty() { 0.0 } else { s.iter().sum::<f64>() / s.len() as f64 })
}

/// Specificity for every `k` in `ks`, with the same seed throughout.
pub fn specificity_report(
    model: &PcaModel,
    test: &TrainingSet,
    ks: &[usize],
    n_samples: usize,
    seed: u64,
) -> Result<MetricReport, EvalError> {
    let mut report = MetricReport::new("specificity", "k", "mm")
        .with_meta("samples", n_samples)
        .with_meta("seed", seed);
    for &k in ks {
        report.push(k as f64, specificity(model, test, k, n_samples, seed)?);
    }
    Ok(report)
}

/// Fraction of `errors` that are `≤` each bin edge. With no errors every
/// value is 1.
pub fn cumulative_error_distribution(errors: &[f64], bins: &[f64]) -> MetricReport {
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut report = MetricReport::new("cumulative_error", "mm", "fraction");
    for &b in bins {
        let count = sorted.partition_point(|&e| e <= b);
        let value = if sorted.is_empty() { 1.0 } else { count as f64 / sorted.len() as f64 };
        report.push(b, value);
    }
    report
}

/// Average over components of the fraction of vertices a component moves by
/// more than [`DEFORMED_THRESHOLD`] at unit coefficient.
pub fn deformed_vertex_fraction(basis: &DMatrix<f64>) -> f64 {
    let m = basis.nrows() / 3;
    let k = basis.ncols();
    if m == 0 || k == 0 {
        return 0.0;
    }
    let t2 = DEFORMED_THRESHOLD * DEFORMED_THRESHOLD;
    let total: usize = (0..k)
        .map(|c| {
            let col = basis.column(c);
            (0..m)
                .filter(|&j| {
                    let (x, y, z) = (col[3 * j], col[3 * j + 1], col[3 * j + 2]);
                    x * x + y * y + z * z > t2
                })
                .count()
        })
        .sum();
    total as f64 / (m * k) as f64
}

/// Hyperparameter grid of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub lambda1s: Vec<f64>,
    pub lambda2s: Vec<f64>,
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.ks.len() {
            for b in 0..self.lambda1s.len() {
                for c in 0..self.lambda2s.len() {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

/// Seed of grid cell `(ik, i1, i2)`; cell `(0, 0, 0)` uses `seed` itself.
pub fn cell_seed(seed: u64, cell: (usize, usize, usize)) -> u64 {
    let (a, b, c) = (cell.0 as u64, cell.1 as u64, cell.2 as u64);
    seed ^ (a << 42) ^ (b << 21) ^ c
}

/// Learns a model per grid cell and fits it to every target, which must
/// already be aligned with the training mean. `base` supplies the
/// non-grid learning parameters.
pub fn sweep(
    grid: &SweepGrid,
    train: &TrainingSet,
    targets: &[Mesh],
    base: &SlcParams,
    fit: &NrfParams,
) -> Result<SweepTable, EvalError> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let rows = cells
        .par_iter()
        .map(|&cell| {
            let params = SlcParams {
                k: grid.ks[cell.0],
                lambda1: grid.lambda1s[cell.1],
                lambda2: grid.lambda2s[cell.2],
                seed: cell_seed(base.seed, cell),
                ..base.clone()
            };
            let (model, _) = learn_slc_with(train, &params)?;
            let mut total = 0.0;
            for t in targets {
                total += nrf_points(&model, &t.vertices, fit)?.final_error();
            }
            Ok(SweepRow {
                k: params.k,
                lambda1: params.lambda1,
                lambda2: params.lambda2,
                seed: params.seed,
                mean_error: if targets.is_empty() { 0.0 } else { total / targets.len() as f64 },
                deformed_fraction: deformed_vertex_fraction(&model.basis),
                sparsity: sparsity(&model),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut table = SweepTable {
        rows,
        metadata: Default::default(),
    };
    table.metadata.insert("seed".into(), base.seed.to_string());
    table.metadata.insert("iters".into(), base.iters.to_string());
    table.metadata.insert("targets".into(), targets.len().to_string());
    Ok(table)
}
