use nalgebra::{DMatrix, DVector};

use super::{build_displacements, LearnError, ShapeVector, TrainingSet};

/// PCA shape model: orthonormal basis of the top-`k` displacement directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: ShapeVector,
    /// `3m × k`, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Variances of the retained components, non-increasing.
    pub eigenvalues: DVector<f64>,
    /// Full variance spectrum of the training data, non-increasing.
    pub spectrum: DVector<f64>,
}

impl PcaModel {
    /// Keeps the first `k` components; the spectrum is unchanged.
    pub fn truncated(&self, k: usize) -> Result<PcaModel, LearnError> {
        if k > self.basis.ncols() {
            return Err(LearnError::KTooLarge {
                k,
                max: self.basis.ncols(),
            });
        }
        Ok(PcaModel {
            mean: self.mean.clone(),
            basis: self.basis.columns(0, k).into_owned(),
            eigenvalues: self.eigenvalues.rows(0, k).into_owned(),
            spectrum: self.spectrum.clone(),
        })
    }
}

/// Top-`k` principal components from the SVD of the displacement matrix.
/// Eigenvalues are `σ² / (N − 1)`.
pub fn learn_pca(ts: &TrainingSet, k: usize) -> Result<PcaModel, LearnError> {
    let n = ts.n();
    let dim = 3 * ts.m();
    let max = dim.min(n - 1);
    if k == 0 {
        return Err(LearnError::InvalidHyperparam("k must be at least 1".into()));
    }
    if k > max {
        return Err(LearnError::KTooLarge { k, max });
    }
    let (mean, v) = build_displacements(ts);
    let svd = v.svd(true, false);
    let u = svd.u.expect("u requested");
    let sigma = svd.singular_values;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let denom = (n - 1) as f64;
    let spectrum = DVector::from_iterator(order.len(), order.iter().map(|&i| sigma[i] * sigma[i] / denom));
    let mut basis = DMatrix::zeros(dim, k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut col = u.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        basis.set_column(c, &col);
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues: spectrum.rows(0, k).into_owned(),
        spectrum,
    })
}
