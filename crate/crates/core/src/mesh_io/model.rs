//! Binary model container.
//!
//! Layout, all little-endian:
//!
//! | field        | type            | count      |
//! |--------------|-----------------|------------|
//! | magic        | `b"SLC1"`       | 4 bytes    |
//! | m            | u64             | 1          |
//! | k            | u64             | 1          |
//! | n_train      | u64             | 1          |
//! | mean         | f64             | 3m         |
//! | basis        | f64, row-major  | 3m × k     |
//! | directions   | f64, row-major  | n_train × k|
//! | weights      | f64             | k          |

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::write_atomic;
use crate::learn::{ShapeVector, SlcModel};

pub const MAGIC: &[u8; 4] = b"SLC1";
const HEADER_LEN: usize = 4 + 3 * 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad magic {0:?}, expected \"SLC1\"")]
    BadMagic([u8; 4]),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Serializes a model into the container layout.
pub fn encode_model(model: &SlcModel) -> Vec<u8> {
    let m = model.vertex_count();
    let k = model.k();
    let n = model.directions.nrows();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (3 * m + 3 * m * k + n * k + k));
    out.extend_from_slice(MAGIC);
    for dim in [m, k, n] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
    model.mean.as_vector().iter().for_each(|&x| put(x));
    for r in 0..model.basis.nrows() {
        for c in 0..k {
            put(model.basis[(r, c)]);
        }
    }
    for r in 0..n {
        for c in 0..k {
            put(model.directions[(r, c)]);
        }
    }
    model.weights.iter().for_each(|&x| put(x));
    out
}

/// Parses the container layout. Hyperparameters are not part of the layout
/// and come back as `None`.
pub fn decode_model(bytes: &[u8]) -> Result<SlcModel, ModelError> {
    if bytes.len() < 4 {
        return Err(ModelError::DimensionMismatch(format!(
            "file has {} bytes, shorter than the magic",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(ModelError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::DimensionMismatch("truncated header".into()));
    }
    let dim = |i: usize| {
        let off = 4 + 8 * i;
        u64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"))
    };
    let (m, k, n) = (dim(0), dim(1), dim(2));
    let expected = (|| {
        let rows = m.checked_mul(3)?;
        let count = rows
            .checked_add(rows.checked_mul(k)?)?
            .checked_add(n.checked_mul(k)?)?
            .checked_add(k)?;
        count.checked_mul(8)?.checked_add(HEADER_LEN as u64)
    })()
    .ok_or_else(|| ModelError::DimensionMismatch("declared dimensions overflow".into()))?;
    if expected != bytes.len() as u64 {
        return Err(ModelError::DimensionMismatch(format!(
            "m={m}, k={k}, n_train={n} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let (m, k, n) = (m as usize, k as usize, n as usize);
    let mut values = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |len: usize| values.by_ref().take(len).collect::<Vec<f64>>();
    let mean = DVector::from_vec(take(3 * m));
    let basis = DMatrix::from_row_slice(3 * m, k, &take(3 * m * k));
    let directions = DMatrix::from_row_slice(n, k, &take(n * k));
    let weights = DVector::from_vec(take(k));
    if let Some((j, w)) = weights.iter().enumerate().find(|(_, w)| w.is_nan() || **w < 0.0) {
        return Err(ModelError::InvalidWeights(format!("weight {j} is {w}")));
    }
    Ok(SlcModel {
        mean: ShapeVector::new(mean),
        basis,
        directions,
        weights,
        hyperparams: None,
    })
}

pub fn write_model(model: &SlcModel, path: &Path) -> Result<(), ModelError> {
    write_atomic(path, &encode_model(model)).map_err(|e| match e {
        super::MeshIoError::Io { path, source } => ModelError::Io { path, source },
        other => ModelError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(other.to_string()),
        },
    })
}

pub fn read_model(path: &Path) -> Result<SlcModel, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
