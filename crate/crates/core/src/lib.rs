//! Sparse and locally coherent 3D morphable face models.
//!
//! The crate covers the whole pipeline used to bring raw face scans into dense
//! semantic correspondence with a template:
//!
//! - [`mesh_io`]: OBJ/PLY meshes, `.lmk` landmark sidecars and the binary model container.
//! - [`geometry`]: exact k-d tree, nose-tip cropping, rigid ICP and the least-squares
//!   similarity used inside the fitting loop.
//! - [`learn`]: displacement fields, non-negative elastic-net dictionary learning of the
//!   deformation components, and a PCA baseline.
//! - [`fit`]: mean-point association with outlier rejection and the non-rigid fitting loop.
//! - [`transfer`]: injective k-NN annotation transfer onto the raw target.
//! - [`eval`]: compactness, generalization, specificity and hyperparameter sweeps.
//! - [`synth`]: parametric synthetic faces with ground-truth correspondence.
//! - [`cli`]: the `slcmm` batch front-end.

pub mod cli;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod learn;
pub mod mesh_io;
pub mod pipeline;
pub mod synth;
pub mod transfer;

pub use mesh_io::{LandmarkMap, Mesh, Point};
