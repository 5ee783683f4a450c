//! Mesh, landmark and model file I/O.
//!
//! Meshes are read from Wavefront OBJ and PLY (ASCII or binary little-endian);
//! only geometry is kept. Landmarks live next to the mesh in a `.lmk` CSV
//! sidecar with header `name,index`. Learned models are stored in a flat
//! little-endian binary container, see [`model`].

mod landmarks;
pub mod model;
mod obj;
mod ply;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use landmarks::{parse_landmarks, read_landmarks, sidecar_path, write_landmarks};
pub use model::{read_model, write_model, ModelError};
pub use obj::{parse_obj, write_obj};
pub use ply::{parse_ply, write_ply};

/// A 3D point in millimetres.
pub type Point = nalgebra::Point3<f64>;

/// Landmark name to vertex index.
pub type LandmarkMap = BTreeMap<String, usize>;

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("face or landmark at {location} references vertex {index} but mesh has {count} vertices")]
    Index {
        location: String,
        index: usize,
        count: usize,
    },
    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl MeshIoError {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        MeshIoError::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        MeshIoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Triangle mesh or point cloud with optional named landmarks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub faces: Vec<[usize; 3]>,
    pub landmarks: LandmarkMap,
}

impl Mesh {
    /// Point cloud without faces or landmarks.
    pub fn from_points(vertices: Vec<Point>) -> Self {
        Mesh {
            vertices,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Checks the index and finiteness invariants.
    pub fn validate(&self) -> Result<(), MeshIoError> {
        let n = self.vertices.len();
        for (i, v) in self.vertices.iter().enumerate() {
            if !v.coords.iter().all(|c| c.is_finite()) {
                return Err(MeshIoError::Invalid(format!(
                    "vertex {i} has a non-finite coordinate"
                )));
            }
        }
        for (fi, face) in self.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&idx| idx >= n) {
                return Err(MeshIoError::Index {
                    location: format!("face {fi}"),
                    index: bad,
                    count: n,
                });
            }
        }
        for (name, &idx) in &self.landmarks {
            if idx >= n {
                return Err(MeshIoError::Index {
                    location: format!("landmark '{name}'"),
                    index: idx,
                    count: n,
                });
            }
        }
        Ok(())
    }

    /// Landmark positions keyed by name.
    pub fn landmark_positions(&self) -> BTreeMap<String, Point> {
        self.landmarks
            .iter()
            .map(|(name, &idx)| (name.clone(), self.vertices[idx]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Obj,
    Ply,
}

fn format_of(path: &Path) -> Result<Format, MeshIoError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => Ok(Format::Obj),
        Some("ply") => Ok(Format::Ply),
        other => Err(MeshIoError::UnsupportedFormat(
            other.unwrap_or("<none>").to_string(),
        )),
    }
}

/// Reads an OBJ or PLY mesh, plus its `.lmk` sidecar when present.
pub fn read_mesh(path: &Path) -> Result<Mesh, MeshIoError> {
    let format = format_of(path)?;
    let bytes = fs::read(path).map_err(|e| MeshIoError::io(path, e))?;
    let mut mesh = match format {
        Format::Obj => parse_obj(&bytes)?,
        Format::Ply => parse_ply(&bytes)?,
    };
    let lmk = sidecar_path(path);
    if lmk.exists() {
        mesh.landmarks = read_landmarks(&lmk)?;
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Writes a mesh in the format given by the extension. Landmarks, if any, go to
/// the `.lmk` sidecar.
pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshIoError> {
    mesh.validate()?;
    let format = format_of(path)?;
    let mut buf = Vec::new();
    match format {
        Format::Obj => write_obj(mesh, &mut buf),
        Format::Ply => write_ply(mesh, &mut buf),
    }
    .map_err(|e| MeshIoError::io(path, e))?;
    write_atomic(path, &buf)?;
    if !mesh.landmarks.is_empty() {
        write_landmarks(&mesh.landmarks, &sidecar_path(path))?;
    }
    Ok(())
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), MeshIoError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| MeshIoError::Invalid(format!("bad output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| MeshIoError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| MeshIoError::io(&tmp, e))?;
    f.sync_all().map_err(|e| MeshIoError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| MeshIoError::io(path, e))
}

/// Fan triangulation of a polygon: (0,1,2), (0,2,3), ...
pub(crate) fn fan_triangulate(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for i in 1..poly.len().saturating_sub(1) {
        out.push([poly[0], poly[i], poly[i + 1]]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_face() {
        let mesh = Mesh {
            vertices: vec![Point::origin(); 2],
            faces: vec![[0, 1, 2]],
            ..Default::default()
        };
        assert!(matches!(mesh.validate(), Err(MeshIoError::Index { index: 2, .. })));
    }

    #[test]
    fn validate_rejects_nan() {
        let mesh = Mesh::from_points(vec![Point::new(0.0, f64::NAN, 0.0)]);
        assert!(matches!(mesh.validate(), Err(MeshIoError::Invalid(_))));
    }

    #[test]
    fn unsupported_extension() {
        let err = read_mesh(Path::new("scan.stl")).unwrap_err();
        assert!(matches!(err, MeshIoError::UnsupportedFormat(_)));
    }

    #[test]
    fn fan() {
        let mut out = Vec::new();
        fan_triangulate(&[0, 1, 2, 3, 4], &mut out);
        assert_eq!(out, vec![[0, 1, 2], [0, 2, 3], [0, 3, 4]]);
    }
}
