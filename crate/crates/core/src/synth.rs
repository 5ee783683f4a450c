//! Synthetic face-like meshes with exact dense correspondence.
//!
//! A face is a height field over a `u × v` grid covering `[-1, 1]²`: an
//! ellipsoid cap plus Gaussian features (nose, eye sockets, brow, lips, chin)
//! and seed-driven identity detail. Expressions are displacements with
//! compact support, so the regions they touch are known exactly. Vertex `j`
//! of any two faces with the same resolution is the same surface point.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::learn::{LearnError, TrainingSet};
use crate::mesh_io::{write_atomic, write_mesh, LandmarkMap, Mesh, MeshIoError, Point};

pub const MIN_RESOLUTION: usize = 8;

const NOSE_EXCLUSION: f64 = 0.2;
const DETAIL_ROWS: usize = 7;
const DETAIL_COLS: usize = 6;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid face spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Io(#[from] MeshIoError),
}

/// Shape of one person. Lengths in mm, widths in grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityParams {
    /// Half-width of the face.
    pub radius_x: f64,
    /// Half-height of the face.
    pub radius_y: f64,
    /// Depth of the ellipsoid cap.
    pub radius_z: f64,
    pub nose_amplitude: f64,
    pub nose_width: f64,
    /// Widening (> 1) or narrowing of the lower face.
    pub jaw_width: f64,
    pub eye_depth: f64,
    pub brow_height: f64,
    pub lip_height: f64,
    pub chin_height: f64,
    /// Scale of the seed-driven detail bumps; 0 disables them.
    pub detail_amplitude: f64,
}

impl Default for IdentityParams {
    fn default() -> Self {
        IdentityParams {
            radius_x: 45.0,
            radius_y: 55.0,
            radius_z: 30.0,
            nose_amplitude: 18.0,
            nose_width: 0.16,
            jaw_width: 1.0,
            eye_depth: 5.0,
            brow_height: 3.0,
            lip_height: 3.0,
            chin_height: 4.0,
            detail_amplitude: 1.5,
        }
    }
}

impl IdentityParams {
    /// Everything but the ellipsoid cap switched off.
    pub fn flat() -> Self {
        IdentityParams {
            nose_amplitude: 0.0,
            eye_depth: 0.0,
            brow_height: 0.0,
            lip_height: 0.0,
            chin_height: 0.0,
            detail_amplitude: 0.0,
            ..Default::default()
        }
    }

    /// Random identity around the defaults.
    pub fn random(rng: &mut impl Rng) -> Self {
        let d = IdentityParams::default();
        let mut f = |lo: f64, hi: f64| rng.random_range(lo..hi);
        IdentityParams {
            radius_x: d.radius_x * f(0.95, 1.05),
            radius_y: d.radius_y * f(0.95, 1.05),
            radius_z: d.radius_z * f(0.92, 1.08),
            nose_amplitude: d.nose_amplitude * f(0.8, 1.2),
            nose_width: d.nose_width * f(0.8, 1.2),
            jaw_width: f(0.95, 1.05),
            eye_depth: d.eye_depth * f(0.7, 1.3),
            brow_height: d.brow_height * f(0.6, 1.4),
            lip_height: d.lip_height * f(0.6, 1.4),
            chin_height: d.chin_height * f(0.6, 1.4),
            detail_amplitude: d.detail_amplitude,
        }
    }
}

/// Expression amplitudes in mm; all zero is the neutral face.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExpressionParams {
    pub mouth_open: f64,
    /// Upward curl of the mouth corners; negative frowns.
    pub smile: f64,
    pub brow_raise: f64,
}

impl ExpressionParams {
    pub fn random(rng: &mut impl Rng) -> Self {
        ExpressionParams {
            mouth_open: rng.random_range(0.0..8.0),
            smile: rng.random_range(-3.0..5.0),
            brow_raise: rng.random_range(0.0..5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceSpec {
    pub identity: IdentityParams,
    pub expression: ExpressionParams,
    /// Grid columns and rows.
    pub resolution: (usize, usize),
    /// Drives the identity detail bumps.
    pub seed: u64,
}

impl FaceSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let (nu, nv) = self.resolution;
        if nu < MIN_RESOLUTION || nv < MIN_RESOLUTION {
            return Err(SynthError::InvalidSpec(format!(
                "resolution {nu}x{nv} is below {MIN_RESOLUTION}x{MIN_RESOLUTION}"
            )));
        }
        let i = &self.identity;
        let e = &self.expression;
        let values = [
            i.radius_x,
            i.radius_y,
            i.radius_z,
            i.nose_amplitude,
            i.nose_width,
            i.jaw_width,
            i.eye_depth,
            i.brow_height,
            i.lip_height,
            i.chin_height,
            i.detail_amplitude,
            e.mouth_open,
            e.smile,
            e.brow_raise,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SynthError::InvalidSpec("non-finite parameter".into()));
        }
        if i.radius_x <= 0.0 || i.radius_y <= 0.0 || i.nose_width <= 0.0 || i.jaw_width <= 0.0 {
            return Err(SynthError::InvalidSpec("radii, nose width and jaw factor must be positive".into()));
        }
        Ok(())
    }
}

/// Grid coordinate of column `i` of `n`, exactly antisymmetric about 0.
fn grid_coord(i: usize, n: usize) -> f64 {
    (2.0 * i as f64 - (n - 1) as f64) / (n - 1) as f64
}

/// Vertex index of grid column `i`, row `r`.
pub fn grid_index(resolution: (usize, usize), i: usize, r: usize) -> usize {
    r * resolution.0 + i
}

/// Vertex `j` and its 8-neighbourhood on the grid.
pub fn grid_neighbors(resolution: (usize, usize), j: usize) -> Vec<usize> {
    let (nu, nv) = resolution;
    let (i, r) = ((j % nu) as isize, (j / nu) as isize);
    let mut out = Vec::with_capacity(9);
    for dr in -1..=1 {
        for di in -1..=1 {
            let (a, b) = (i + di, r + dr);
            if a >= 0 && b >= 0 && (a as usize) < nu && (b as usize) < nv {
                out.push(grid_index(resolution, a as usize, b as usize));
            }
        }
    }
    out
}

/// Grid vertex closest to `(u, v)`.
fn nearest_grid(resolution: (usize, usize), u: f64, v: f64) -> usize {
    let (nu, nv) = resolution;
    let pick = |x: f64, n: usize| ((x + 1.0) * 0.5 * (n - 1) as f64).round().clamp(0.0, (n - 1) as f64) as usize;
    grid_index(resolution, pick(u, nu), pick(v, nv))
}

fn gauss(du: f64, dv: f64, w: f64) -> f64 {
    (-(du * du + dv * dv) / (2.0 * w * w)).exp()
}

/// `(1 − r²)³` inside the unit disc, 0 outside.
fn compact(r2: f64) -> f64 {
    if r2 < 1.0 {
        let a = 1.0 - r2;
        a * a * a
    } else {
        0.0
    }
}

const MOUTH: (f64, f64) = (0.0, -0.45);
const MOUTH_RADIUS: f64 = 0.35;
const CORNER_U: f64 = 0.22;
const CORNER_RADIUS: f64 = 0.25;
const BROW: (f64, f64) = (0.0, 0.5);
const BROW_RADII: (f64, f64) = (0.6, 0.2);
const EYE: (f64, f64) = (0.38, 0.3);

fn mouth_r2(u: f64, v: f64) -> f64 {
    ((u - MOUTH.0).powi(2) + (v - MOUTH.1).powi(2)) / (MOUTH_RADIUS * MOUTH_RADIUS)
}

fn corner_r2(u: f64, v: f64, side: f64) -> f64 {
    ((u - side * CORNER_U).powi(2) + (v - MOUTH.1).powi(2)) / (CORNER_RADIUS * CORNER_RADIUS)
}

fn brow_r2(u: f64, v: f64) -> f64 {
    ((u - BROW.0) / BROW_RADII.0).powi(2) + ((v - BROW.1) / BROW_RADII.1).powi(2)
}

/// Whether expression displacements can reach grid point `(u, v)`.
fn in_mouth_region(u: f64, v: f64) -> bool {
    mouth_r2(u, v) < 1.0 || corner_r2(u, v, 1.0) < 1.0 || corner_r2(u, v, -1.0) < 1.0
}

fn in_brow_region(u: f64, v: f64) -> bool {
    brow_r2(u, v) < 1.0
}

/// Detail sites on a fixed lattice of grid positions, outside the nose.
fn detail_sites(nose: (f64, f64)) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in 0..DETAIL_ROWS {
        for c in 0..DETAIL_COLS {
            let u = -0.85 + 1.7 * c as f64 / (DETAIL_COLS - 1) as f64;
            let v = -0.85 + 1.7 * r as f64 / (DETAIL_ROWS - 1) as f64;
            if (u - nose.0).hypot(v - nose.1) >= NOSE_EXCLUSION {
                out.push((u, v));
            }
        }
    }
    out
}

/// `(u, v, width, amplitude)` detail bumps of one identity: every site gets
/// a random amplitude, width and a small positional jitter.
fn detail_bumps(seed: u64, amplitude: f64, nose: (f64, f64)) -> Vec<(f64, f64, f64, f64)> {
    if amplitude == 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, amplitude).expect("finite amplitude");
    detail_sites(nose)
        .into_iter()
        .map(|(u, v)| {
            let du = rng.random_range(-0.03..0.03);
            let dv = rng.random_range(-0.03..0.03);
            let w = rng.random_range(0.09..0.15);
            (u + du, v + dv, w, normal.sample(&mut rng))
        })
        .collect()
}

/// Landmark names and their grid positions; the nose tip is handled apart.
const LANDMARK_UV: [(&str, f64, f64); 7] = [
    ("mouth_left", -CORNER_U, -0.45),
    ("mouth_right", CORNER_U, -0.45),
    ("eye_left_outer", -0.52, 0.3),
    ("eye_left_inner", -0.25, 0.3),
    ("eye_right_inner", 0.25, 0.3),
    ("eye_right_outer", 0.52, 0.3),
    ("chin", 0.0, -0.88),
];

/// Builds the face. Pure: equal specs give bitwise-equal meshes.
pub fn generate(spec: &FaceSpec) -> Result<Mesh, SynthError> {
    spec.validate()?;
    let (nu, nv) = spec.resolution;
    let id = &spec.identity;
    let ex = &spec.expression;
    let ic = (nu - 1) / 2;
    let rc = (nv - 1) / 2;
    let nose = (grid_coord(ic, nu), grid_coord(rc, nv));
    let details = detail_bumps(spec.seed, id.detail_amplitude, nose);

    let mut vertices = Vec::with_capacity(nu * nv);
    for r in 0..nv {
        let v = grid_coord(r, nv);
        for i in 0..nu {
            let u = grid_coord(i, nu);
            let jaw = 1.0 + (id.jaw_width - 1.0) * (-v).max(0.0);
            let mut x = u * id.radius_x * jaw;
            let mut y = v * id.radius_y;
            let mut z = id.radius_z * (1.0 - 0.4 * (u * u + v * v)).sqrt();

            z += id.nose_amplitude * gauss(u - nose.0, v - nose.1, id.nose_width);
            z -= id.eye_depth * (gauss(u - EYE.0, v - EYE.1, 0.12) + gauss(u + EYE.0, v - EYE.1, 0.12));
            z += id.brow_height * gauss(0.0, v - 0.48, 0.07) * gauss(u, 0.0, 0.35);
            z += id.lip_height * gauss((u - MOUTH.0) * 0.45, v - MOUTH.1, 0.06);
            z += id.chin_height * gauss(u, v + 0.85, 0.15);
            for &(bu, bv, w, a) in &details {
                z += a * gauss(u - bu, v - bv, w);
            }

            // expressions
            let m = compact(mouth_r2(u, v));
            if m > 0.0 {
                let below = 0.5 * (1.0 - ((v - MOUTH.1) / 0.05).tanh());
                y -= ex.mouth_open * m * below;
                z -= 0.3 * ex.mouth_open * m * below;
            }
            for side in [-1.0, 1.0] {
                let c = compact(corner_r2(u, v, side));
                if c > 0.0 {
                    y += ex.smile * c;
                    x += side * 0.5 * ex.smile * c;
                }
            }
            let b = compact(brow_r2(u, v));
            if b > 0.0 {
                y += ex.brow_raise * b;
                z += 0.2 * ex.brow_raise * b;
            }
            vertices.push(Point::new(x, y, z));
        }
    }

    let mut faces = Vec::with_capacity(2 * (nu - 1) * (nv - 1));
    for r in 0..nv - 1 {
        for i in 0..nu - 1 {
            let a = grid_index(spec.resolution, i, r);
            let b = a + 1;
            let c = a + nu;
            let d = c + 1;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }

    let mut landmarks = LandmarkMap::new();
    landmarks.insert("nose_tip".into(), grid_index(spec.resolution, ic, rc));
    for (name, u, v) in LANDMARK_UV {
        landmarks.insert(name.into(), nearest_grid(spec.resolution, u, v));
    }
    Ok(Mesh {
        vertices,
        faces,
        landmarks,
    })
}

/// Vertex masks of the regions expressions can displace.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMasks {
    pub mouth: Vec<bool>,
    pub brow: Vec<bool>,
}

impl RegionMasks {
    pub fn new(resolution: (usize, usize)) -> Self {
        let (nu, nv) = resolution;
        let mut mouth = Vec::with_capacity(nu * nv);
        let mut brow = Vec::with_capacity(nu * nv);
        for r in 0..nv {
            let v = grid_coord(r, nv);
            for i in 0..nu {
                let u = grid_coord(i, nu);
                mouth.push(in_mouth_region(u, v));
                brow.push(in_brow_region(u, v));
            }
        }
        RegionMasks { mouth, brow }
    }

    /// Union of all expression regions.
    pub fn expression(&self) -> Vec<bool> {
        self.mouth.iter().zip(&self.brow).map(|(a, b)| *a || *b).collect()
    }

    pub fn named(&self) -> [(&'static str, &[bool]); 2] {
        [("mouth", &self.mouth), ("brow", &self.brow)]
    }
}

/// A degraded mesh and, for each of its vertices, the source vertex index.
#[derive(Debug, Clone, PartialEq)]
pub struct Degraded {
    pub mesh: Mesh,
    pub provenance: Vec<usize>,
}

/// Gaussian noise of standard deviation `noise_sigma` on every coordinate,
/// then a random subset of `round(keep_fraction · n)` vertices (in original
/// order). Faces are kept only when every vertex is kept.
pub fn degrade(mesh: &Mesh, noise_sigma: f64, keep_fraction: f64, seed: u64) -> Result<Degraded, SynthError> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(SynthError::InvalidSpec(format!("keep_fraction {keep_fraction} not in (0, 1]")));
    }
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(SynthError::InvalidSpec(format!("noise sigma {noise_sigma} must be >= 0")));
    }
    let n = mesh.vertices.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Point> = if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        mesh.vertices
            .iter()
            .map(|p| {
                let (a, b, c) = (normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
                Point::new(p.x + a, p.y + b, p.z + c)
            })
            .collect()
    } else {
        mesh.vertices.clone()
    };
    let keep = ((keep_fraction * n as f64).round() as usize).clamp(n.min(1), n);
    let provenance: Vec<usize> = if keep == n {
        (0..n).collect()
    } else {
        let mut idx = sample(&mut rng, n, keep).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut remap = vec![usize::MAX; n];
    for (new, &old) in provenance.iter().enumerate() {
        remap[old] = new;
    }
    let faces = if keep == n { mesh.faces.clone() } else { Vec::new() };
    let landmarks = mesh
        .landmarks
        .iter()
        .filter(|(_, &i)| remap[i] != usize::MAX)
        .map(|(k, &i)| (k.clone(), remap[i]))
        .collect();
    Ok(Degraded {
        mesh: Mesh {
            vertices: provenance.iter().map(|&i| noisy[i]).collect(),
            faces,
            landmarks,
        },
        provenance,
    })
}

/// One generated mesh of a dataset.
#[derive(Debug, Clone)]
pub struct SynthFace {
    pub id: String,
    pub identity: usize,
    pub expression: usize,
    pub seed: u64,
    pub spec: FaceSpec,
    pub mesh: Mesh,
}

#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub n_expressions: usize,
    pub n_test_identities: usize,
    pub resolution: (usize, usize),
    pub seed: u64,
}

impl DatasetSpec {
    /// One held-out identity for every four training identities, at least one.
    pub fn new(n_identities: usize, n_expressions: usize, resolution: (usize, usize), seed: u64) -> Self {
        DatasetSpec {
            n_identities,
            n_expressions,
            n_test_identities: n_identities.div_ceil(4).max(1),
            resolution,
            seed,
        }
    }
}

/// Training faces, held-out faces (disjoint identities) and the region masks.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<SynthFace>,
    pub test: Vec<SynthFace>,
    pub regions: RegionMasks,
    pub resolution: (usize, usize),
    pub seed: u64,
}

impl Dataset {
    pub fn training_set(&self) -> Result<TrainingSet, SynthError> {
        Ok(to_training_set(&self.train)?)
    }

    pub fn test_set(&self) -> Result<TrainingSet, SynthError> {
        Ok(to_training_set(&self.test)?)
    }
}

fn to_training_set(faces: &[SynthFace]) -> Result<TrainingSet, LearnError> {
    let meshes: Vec<Mesh> = faces.iter().map(|f| f.mesh.clone()).collect();
    TrainingSet::from_meshes(&meshes)
}

/// SplitMix64 step, used to derive per-mesh seeds.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Face of `identity` with `expression` (0 is neutral) at `resolution`.
pub fn dataset_face(seed: u64, identity: usize, expression: usize, resolution: (usize, usize)) -> Result<SynthFace, SynthError> {
    let id_seed = derive_seed(seed, identity as u64, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(id_seed);
    let identity_params = IdentityParams::random(&mut rng);
    let ex_seed = derive_seed(seed, identity as u64, expression as u64 + 1);
    let expression_params = if expression == 0 {
        ExpressionParams::default()
    } else {
        ExpressionParams::random(&mut ChaCha8Rng::seed_from_u64(ex_seed))
    };
    let spec = FaceSpec {
        identity: identity_params,
        expression: expression_params,
        resolution,
        seed: id_seed,
    };
    Ok(SynthFace {
        id: format!("id{identity:03}_ex{expression:02}"),
        identity,
        expression,
        seed: id_seed,
        mesh: generate(&spec)?,
        spec,
    })
}

/// Identities `0..n_identities` for training, the next
/// `n_test_identities` held out; each with `n_expressions` expressions.
pub fn make_dataset_with(spec: &DatasetSpec) -> Result<Dataset, SynthError> {
    let build = |ids: std::ops::Range<usize>| -> Result<Vec<SynthFace>, SynthError> {
        let pairs: Vec<(usize, usize)> = ids
            .flat_map(|i| (0..spec.n_expressions).map(move |e| (i, e)))
            .collect();
        pairs
            .par_iter()
            .map(|&(i, e)| dataset_face(spec.seed, i, e, spec.resolution))
            .collect()
    };
    let train = build(0..spec.n_identities)?;
    let test = build(spec.n_identities..spec.n_identities + spec.n_test_identities)?;
    Ok(Dataset {
        train,
        test,
        regions: RegionMasks::new(spec.resolution),
        resolution: spec.resolution,
        seed: spec.seed,
    })
}

pub fn make_dataset(
    n_identities: usize,
    n_expressions: usize,
    resolution: (usize, usize),
    seed: u64,
) -> Result<Dataset, SynthError> {
    make_dataset_with(&DatasetSpec::new(n_identities, n_expressions, resolution, seed))
}

/// Writes `train/` and `test/` OBJ + `.lmk` files, `manifest.csv`
/// (`mesh_id,identity,expression,seed,split`) and `regions.csv`
/// (`region,vertex`).
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<(), SynthError> {
    let mut manifest = String::from("mesh_id,identity,expression,seed,split\n");
    for (split, faces) in [("train", &dataset.train), ("test", &dataset.test)] {
        let sub = dir.join(split);
        std::fs::create_dir_all(&sub).map_err(|e| MeshIoError::io(&sub, e))?;
        for f in faces.iter() {
            write_mesh(&f.mesh, &sub.join(format!("{}.obj", f.id)))?;
            let _ = writeln!(manifest, "{},{},{},{},{}", f.id, f.identity, f.expression, f.seed, split);
        }
    }
    write_atomic(&dir.join("manifest.csv"), manifest.as_bytes())?;
    let mut regions = String::from("region,vertex\n");
    for (name, mask) in dataset.regions.named() {
        for (j, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
            let _ = writeln!(regions, "{name},{j}");
        }
    }
    write_atomic(&dir.join("regions.csv"), regions.as_bytes())?;
    Ok(())
}

/// Positions of the named landmarks of `mesh`.
pub fn landmark_points(mesh: &Mesh) -> BTreeMap<String, Point> {
    mesh.landmarks
        .iter()
        .map(|(k, &i)| (k.clone(), mesh.vertices[i]))
        .collect()
}
