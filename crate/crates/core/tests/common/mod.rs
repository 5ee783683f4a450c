//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::Rng;
use slcmm::learn::{ShapeVector, TrainingSet};
use slcmm::Point;

pub fn sq(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// Linear-scan nearest neighbour, lowest index on ties.
pub fn brute_nn(points: &[Point], q: &Point) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = sq(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn mean_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let mean = sum / n;
    let mut var = 0.0;
    for v in values {
        var += (v - mean) * (v - mean);
    }
    mean + (var / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RefKind {
    Centroid(usize),
    Fallback(usize),
}

#[derive(Debug, Clone)]
pub struct RefCorrespondence {
    pub regions: Vec<Vec<usize>>,
    pub tau_g: f64,
    pub taus: Vec<Option<f64>>,
    pub targets: Vec<Point>,
    pub kinds: Vec<RefKind>,
    pub rejected: usize,
}

/// O(n·m) mean-point association.
pub fn brute_correspond(template: &[Point], target: &[Point]) -> RefCorrespondence {
    let m = template.len();
    let mut regions = vec![Vec::new(); m];
    let mut owner_dist = vec![0.0; target.len()];
    for (i, t) in target.iter().enumerate() {
        let (j, d2) = brute_nn(template, t);
        regions[j].push(i);
        owner_dist[i] = d2.sqrt();
    }
    let back: Vec<(usize, f64)> = template.iter().map(|s| brute_nn(target, s)).collect();
    let tau_g = mean_std(&back.iter().map(|b| b.1.sqrt()).collect::<Vec<_>>());
    let mut taus = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    let mut kinds = Vec::with_capacity(m);
    let mut rejected = 0;
    for j in 0..m {
        let region = &regions[j];
        if region.is_empty() {
            taus.push(None);
        } else {
            let d: Vec<f64> = region.iter().map(|&i| owner_dist[i]).collect();
            taus.push(Some(mean_std(&d)));
        }
        let tau = taus[j].unwrap_or(f64::NEG_INFINITY);
        let mut acc = Vector3::zeros();
        let mut kept = 0;
        for &i in region {
            if owner_dist[i] <= tau_g && owner_dist[i] <= tau {
                acc += target[i].coords;
                kept += 1;
            }
        }
        rejected += region.len() - kept;
        if kept > 0 {
            targets.push(Point::from(acc / kept as f64));
            kinds.push(RefKind::Centroid(kept));
        } else {
            targets.push(target[back[j].0]);
            kinds.push(RefKind::Fallback(back[j].0));
        }
    }
    RefCorrespondence {
        regions,
        tau_g,
        taus,
        targets,
        kinds,
        rejected,
    }
}

/// Minimizes `‖x − Cα‖² + λ Σ αⱼ² / μⱼ` by conjugate gradients on the
/// gradient of the quadratic, without forming `CᵀC`.
pub fn iterative_minimizer(c: &DMatrix<f64>, mu: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
    let k = c.ncols();
    let apply = |a: &DVector<f64>| -> DVector<f64> {
        let ca = c * a;
        let mut g = c.tr_mul(&ca);
        for j in 0..k {
            g[j] += lambda * a[j] / mu[j];
        }
        g
    };
    let b = c.tr_mul(x);
    let stop = 1e-28 * b.dot(&b).max(f64::MIN_POSITIVE);
    let mut a = DVector::zeros(k);
    // restarted from the true residual so rounding drift cannot accumulate
    for _ in 0..8 {
        let mut r = &b - apply(&a);
        let mut rr = r.dot(&r);
        if rr <= stop {
            break;
        }
        let mut p = r.clone();
        for _ in 0..2 * k.max(1) {
            let ap = apply(&p);
            let step = rr / p.dot(&ap);
            a += &p * step;
            r -= &ap * step;
            let next = r.dot(&r);
            if next <= stop {
                break;
            }
            p = &r + &p * (next / rr);
            rr = next;
        }
    }
    a
}

/// Value of the quadratic minimized by [`iterative_minimizer`].
pub fn quadratic(c: &DMatrix<f64>, mu: &DVector<f64>, lambda: f64, x: &DVector<f64>, a: &DVector<f64>) -> f64 {
    let r = x - c * a;
    r.norm_squared() + lambda * a.iter().zip(mu.iter()).map(|(a, m)| a * a / m).sum::<f64>()
}

/// Exact minimum-cost perfect assignment of rows to distinct columns
/// (rows ≤ columns), by the Jonker-Volgenant style shortest augmenting path.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let (n, m) = cost.shape();
    assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

pub fn random_rotation(rng: &mut impl Rng, max_deg: f64) -> Matrix3<f64> {
    let axis = loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            break v;
        }
    };
    let angle = rng.random_range(-max_deg..=max_deg).to_radians();
    Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle).into_inner()
}

/// `scale · R · p + t` on column vectors.
pub fn move_points(points: &[Point], r: &Matrix3<f64>, scale: f64, t: &Vector3<f64>) -> Vec<Point> {
    points.iter().map(|p| Point::from(r * p.coords * scale + t)).collect()
}

pub fn random_points(rng: &mut impl Rng, n: usize, half: f64) -> Vec<Point> {
    (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect()
}

pub fn random_training_set(rng: &mut impl Rng, n: usize, m: usize) -> TrainingSet {
    let base = DVector::from_fn(3 * m, |_, _| rng.random_range(-50.0..50.0));
    let shapes = (0..n)
        .map(|_| ShapeVector::new(&base + DVector::from_fn(3 * m, |_, _| rng.random_range(-3.0..3.0))))
        .collect();
    TrainingSet::new(shapes, vec![]).unwrap()
}

/// Per-coordinate samples `V′` (`N × 3m`) centred on the column means.
pub fn centred_samples(ts: &TrainingSet) -> DMatrix<f64> {
    let n = ts.n();
    let dim = 3 * ts.m();
    let mut v = DMatrix::from_fn(n, dim, |i, c| ts.shapes()[i].as_vector()[c]);
    for c in 0..dim {
        let mean = v.column(c).sum() / n as f64;
        v.column_mut(c).add_scalar_mut(-mean);
    }
    v
}

/// `(‖V′ − DC‖² + λ₁‖C‖₁ + λ₂‖C‖²) / 3m`.
pub fn slc_objective(samples: &DMatrix<f64>, d: &DMatrix<f64>, c: &DMatrix<f64>, l1: f64, l2: f64) -> f64 {
    let r = samples - d * c;
    let abs: f64 = c.iter().map(|x| x.abs()).sum();
    (r.norm_squared() + l1 * abs + l2 * c.norm_squared()) / samples.ncols() as f64
}

/// `count` area-weighted random points on the triangles of `vertices`/`faces`.
pub fn resample_surface(rng: &mut impl Rng, vertices: &[Point], faces: &[[usize; 3]], count: usize) -> Vec<Point> {
    let areas: Vec<f64> = faces
        .iter()
        .map(|f| 0.5 * (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]])).norm())
        .collect();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cumulative.push(acc);
    }
    (0..count)
        .map(|_| {
            let pick = rng.random_range(0.0..acc);
            let f = faces[cumulative.partition_point(|&c| c < pick).min(faces.len() - 1)];
            let (mut a, mut b): (f64, f64) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            if a + b > 1.0 {
                a = 1.0 - a;
                b = 1.0 - b;
            }
            let (p, q, r) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
            p + (q - p) * a + (r - p) * b
        })
        .collect()
}
