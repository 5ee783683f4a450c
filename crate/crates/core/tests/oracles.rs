mod common;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use slcmm::eval::{compactness, cumulative_error_distribution, generalization};
use slcmm::fit::{correspond, per_vertex_error, solve_deformation, SourceKind};
use slcmm::geometry::{estimate_similarity, kabsch, rms_residual, SpatialIndex};
use slcmm::learn::{learn_pca, ShapeVector, SlcModel, TrainingSet};
use slcmm::transfer::assign_unique;
use slcmm::Point;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn nearest_and_knn_match_linear_scan() {
    let mut r = rng(1);
    for _ in 0..20 {
        let n = r.random_range(1..400);
        let pts = random_points(&mut r, n, 30.0);
        let index = SpatialIndex::new(&pts);
        for q in random_points(&mut r, 50, 40.0) {
            let (i, d2) = brute_nn(&pts, &q);
            let nn = index.nearest(&q).unwrap();
            assert_eq!((nn.index, nn.dist2), (i, d2));

            let k = r.random_range(1..=pts.len().min(12));
            let mut all: Vec<(f64, usize)> = pts.iter().enumerate().map(|(i, p)| (sq(p, &q), i)).collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let got: Vec<(f64, usize)> = index.knn(&q, k).iter().map(|n| (n.dist2, n.index)).collect();
            assert_eq!(got, all[..k].to_vec());
        }
    }
}

#[test]
fn nearest_ties_go_to_lowest_index() {
    // integer lattice with duplicates: many exact ties
    let pts: Vec<Point> = (0..60).map(|i| Point::new((i % 4) as f64, ((i / 4) % 3) as f64, 0.0)).collect();
    let index = SpatialIndex::new(&pts);
    for q in &pts {
        assert_eq!(index.nearest(q).unwrap().index, brute_nn(&pts, q).0);
    }
}

#[test]
fn per_vertex_error_matches_linear_scan() {
    let mut r = rng(2);
    let a = random_points(&mut r, 300, 20.0);
    let b = random_points(&mut r, 500, 20.0);
    let (mean, per) = per_vertex_error(&a, &b).unwrap();
    let want: Vec<f64> = a.iter().map(|p| brute_nn(&b, p).1.sqrt()).collect();
    assert_eq!(per, want);
    assert!((mean - want.iter().sum::<f64>() / want.len() as f64).abs() < 1e-12);
}

fn assert_same_correspondence(template: &[Point], target: &[Point]) {
    let got = correspond(template, target).unwrap();
    let want = brute_correspond(template, target);
    assert_eq!(got.regions, want.regions);
    assert_eq!(got.global_threshold, want.tau_g);
    assert_eq!(got.local_thresholds, want.taus);
    assert_eq!(got.targets, want.targets);
    assert_eq!(got.rejected_count, want.rejected);
    for (a, b) in got.source_kind.iter().zip(&want.kinds) {
        match (a, b) {
            (SourceKind::Centroid { region_size }, RefKind::Centroid(s)) => assert_eq!(region_size, s),
            (SourceKind::FallbackNn { target_index }, RefKind::Fallback(t)) => assert_eq!(target_index, t),
            _ => panic!("{a:?} vs {b:?}"),
        }
    }
}

#[test]
fn correspond_matches_brute_force_on_surfaces() {
    let mut r = rng(3);
    for _ in 0..10 {
        let m = r.random_range(10..200);
        let template: Vec<Point> = (0..m)
            .map(|_| {
                let (u, v) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                Point::new(40.0 * u, 50.0 * v, 20.0 * (1.0 - 0.4 * (u * u + v * v)))
            })
            .collect();
        let target: Vec<Point> = (0..r.random_range(50..1000))
            .map(|_| {
                let s = template[r.random_range(0..m)];
                s + Vector3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-1.0..1.0))
            })
            .collect();
        assert_same_correspondence(&template, &target);
    }
}

#[test]
fn correspond_matches_brute_force_with_ties() {
    let template: Vec<Point> = (0..25).map(|i| Point::new((i % 5) as f64, (i / 5) as f64, 0.0)).collect();
    let target: Vec<Point> = (0..81).map(|i| Point::new((i % 9) as f64 * 0.5, (i / 9) as f64 * 0.5, 0.0)).collect();
    assert_same_correspondence(&template, &target);
}

/// Plain gradient descent with step `1/L` on the fitting quadratic.
fn gradient_descent(c: &DMatrix<f64>, mu: &DVector<f64>, lambda: f64, x: &DVector<f64>) -> DVector<f64> {
    let mut h = c.tr_mul(c);
    for j in 0..h.nrows() {
        h[(j, j)] += lambda / mu[j];
    }
    let eig = h.clone().symmetric_eigenvalues();
    let step = 1.0 / eig.max();
    let b = c.tr_mul(x);
    let mut a = DVector::zeros(c.ncols());
    for _ in 0..200_000 {
        let g = &h * &a - &b;
        if g.norm() <= 1e-13 * b.norm() {
            break;
        }
        a -= g * step;
    }
    a
}

#[test]
fn solve_matches_gradient_descent() {
    let mut r = rng(4);
    for _ in 0..10 {
        let k = r.random_range(1..8);
        let m = r.random_range(k + 2..40);
        let basis = DMatrix::from_fn(3 * m, k, |_, _| r.random_range(0.0..1.0));
        let mu = DVector::from_fn(k, |_, _| r.random_range(0.2..1.0));
        let lambda = r.random_range(0.5..2.0);
        let current = random_points(&mut r, m, 10.0);
        let targets = random_points(&mut r, m, 10.0);
        let x = DVector::from_iterator(3 * m, targets.iter().zip(&current).flat_map(|(t, s)| [t.x - s.x, t.y - s.y, t.z - s.z]));
        let model = SlcModel {
            mean: ShapeVector::new(DVector::zeros(3 * m)),
            basis: basis.clone(),
            directions: DMatrix::zeros(1, k),
            weights: mu.clone(),
            hyperparams: None,
        };
        let alpha = solve_deformation(&targets, &current, &model, lambda).unwrap();
        let reference = gradient_descent(&basis, &mu, lambda, &x);
        assert!((&alpha - &reference).norm() <= 1e-6 * reference.norm(), "{alpha} vs {reference}");
    }
}

#[test]
fn similarity_matches_normal_equations() {
    let mut r = rng(5);
    for _ in 0..20 {
        let n = r.random_range(4..200);
        let target = random_points(&mut r, n, 30.0);
        let template: Vec<Point> = target
            .iter()
            .map(|p| Point::new(1.1 * p.x - 0.2 * p.y + 3.0, 0.9 * p.y + 0.1 * p.z, p.z + 0.3 * p.x))
            .map(|p| p + Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
            .collect();
        let est = estimate_similarity(&template, &target).unwrap();
        // augmented least squares [t 1] · [P; T] = s through the normal equations
        let a = DMatrix::from_fn(n, 4, |i, c| if c < 3 { target[i][c] } else { 1.0 });
        let s = DMatrix::from_fn(n, 3, |i, c| template[i][c]);
        let sol = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * s));
        let mut res = 0.0;
        for i in 0..n {
            let row = a.row(i) * &sol;
            res += (0..3).map(|c| (row[c] - template[i][c]).powi(2)).sum::<f64>();
        }
        let oracle = (res / n as f64).sqrt();
        assert!((rms_residual(&template, &target, &est) - oracle).abs() < 1e-9);
    }
}

#[test]
fn kabsch_recovers_rotation() {
    let mut r = rng(6);
    for _ in 0..20 {
        let src = random_points(&mut r, 30, 20.0);
        let rot = random_rotation(&mut r, 180.0);
        let t = Vector3::new(1.0, -2.0, 5.0);
        let dst = move_points(&src, &rot, 1.0, &t);
        let tr = kabsch(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            assert!((tr.apply_point(s) - d).norm() < 1e-9);
        }
    }
}

#[test]
fn greedy_assignment_close_to_optimal() {
    let mut r = rng(7);
    for _ in 0..10 {
        let n = r.random_range(40..120);
        let m = r.random_range(10..=n);
        let target = random_points(&mut r, n, 20.0);
        let fitted: Vec<Point> = (0..m)
            .map(|j| target[j] + Vector3::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)))
            .collect();
        let greedy = assign_unique(&fitted, &target).unwrap();
        let cost = DMatrix::from_fn(m, n, |j, i| sq(&fitted[j], &target[i]).sqrt());
        let optimal = hungarian(&cost);
        let total = |a: &[usize]| a.iter().enumerate().map(|(j, &i)| cost[(j, i)]).sum::<f64>();
        let (g, o) = (total(&greedy), total(&optimal));
        assert!(g <= 1.1 * o + 1e-9, "greedy {g} optimal {o}");
    }
}

#[test]
fn hungarian_oracle_is_optimal_on_small_cases() {
    // exhaustive check of the oracle itself
    let mut r = rng(8);
    for _ in 0..20 {
        let cost = DMatrix::from_fn(4, 5, |_, _| r.random_range(0.0..10.0));
        let best = permutations(5, 4)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let h = hungarian(&cost);
        let got: f64 = h.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        assert!((got - best).abs() < 1e-9);
    }
}

fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n, k - 1) {
        for j in 0..n {
            if !p.contains(&j) {
                let mut q = p.clone();
                q.push(j);
                out.push(q);
            }
        }
    }
    out
}

#[test]
fn compactness_matches_gram_trace() {
    let mut r = rng(9);
    let ts = random_training_set(&mut r, 9, 40);
    let pca = learn_pca(&ts, 8).unwrap();
    let v = centred_samples(&ts);
    let gram = &v * v.transpose() / (ts.n() - 1) as f64;
    let mut eig: Vec<f64> = gram.clone().symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let trace = gram.trace();
    let ks: Vec<usize> = (1..=8).collect();
    let report = compactness(&pca, &ks);
    for (&k, &y) in ks.iter().zip(&report.y) {
        let want = eig[..k].iter().sum::<f64>() / trace;
        assert!((y - want).abs() < 1e-9, "k {k}: {y} vs {want}");
    }
}

#[test]
fn generalization_equals_projection_error() {
    let mut r = rng(10);
    let ts = random_training_set(&mut r, 8, 30);
    let test = random_training_set(&mut r, 3, 30);
    let pca = learn_pca(&ts, 5).unwrap();
    let g = generalization(&pca, &test, &[5], 0.0).unwrap().y[0];
    // orthonormal basis: the least-squares fit is the orthogonal projection
    let mut total = 0.0;
    for s in test.shapes() {
        let d = s.as_vector() - pca.mean.as_vector();
        let recon = pca.mean.as_vector() + &pca.basis * (pca.basis.transpose() * &d);
        total += (0..30)
            .map(|j| (Vector3::new(recon[3 * j], recon[3 * j + 1], recon[3 * j + 2]) - s.to_points()[j].coords).norm())
            .sum::<f64>()
            / 30.0;
    }
    assert!((g - total / 3.0).abs() < 1e-9);
}

#[test]
fn cdf_matches_counting() {
    let mut r = rng(11);
    let errors: Vec<f64> = (0..500).map(|_| (r.random_range(0.0..5.0f64) * 10.0).round() / 10.0).collect();
    let bins: Vec<f64> = (0..=60).map(|i| i as f64 * 0.1).collect();
    let report = cumulative_error_distribution(&errors, &bins);
    for (&b, &y) in bins.iter().zip(&report.y) {
        let count = errors.iter().filter(|&&e| e <= b).count();
        assert_eq!(y, count as f64 / errors.len() as f64);
    }
}

#[test]
fn training_set_rejects_mismatched_shapes() {
    let a = ShapeVector::new(DVector::zeros(6));
    let b = ShapeVector::new(DVector::zeros(9));
    assert!(TrainingSet::new(vec![a, b], vec![]).is_err());
}
