//! Non-negative elastic-net dictionary learning on the transposed
//! displacement matrix.
//!
//! Each of the `3m` coordinates contributes one sample `v'_i ∈ ℝᴺ`: its
//! displacement across the `N` training scans. The learner minimizes
//!
//! ```text
//! 1/(3m) Σ_i ‖v'_i − D c_i‖² + λ₁‖c_i‖₁ + λ₂‖c_i‖²    s.t. D ≥ 0, C ≥ 0, ‖d_j‖ ≤ 1
//! ```
//!
//! by block alternation. The C-step runs cyclic coordinate descent per sample
//! (independent across samples, parallel); the D-step runs projected gradient
//! with exact line search over the feasible set. Both steps start from the
//! current iterate and never increase the objective.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{build_displacements, LearnError, SlcHyperparams, SlcModel, TrainingSet};

/// Constraint handling of the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverMode {
    /// `D ≥ 0`, `C ≥ 0`.
    #[default]
    Nonnegative,
    /// Drops the positivity constraints; only used to sanity-check the solver
    /// against an exact factorization.
    #[doc(hidden)]
    Unconstrained,
}

#[derive(Debug, Clone)]
pub struct SlcParams {
    pub k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Maximum number of alternating rounds.
    pub iters: usize,
    pub seed: u64,
    /// Relative objective decrease below which learning stops.
    pub tol: f64,
    /// Coordinate-descent sweeps per C-step.
    pub cd_sweeps: usize,
    /// Projected-gradient steps per D-step.
    pub d_steps: usize,
    pub mode: SolverMode,
}

impl Default for SlcParams {
    fn default() -> Self {
        SlcParams {
            k: 50,
            lambda1: 1.0,
            lambda2: 1.0,
            iters: 30,
            seed: 0,
            tol: 1e-6,
            cd_sweeps: 50,
            d_steps: 20,
            mode: SolverMode::Nonnegative,
        }
    }
}

impl SlcParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |what: &str| Err(LearnError::InvalidHyperparam(what.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return bad("lambda1 must be finite and >= 0");
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return bad("lambda2 must be finite and >= 0");
        }
        if self.iters == 0 {
            return bad("iters must be at least 1");
        }
        Ok(())
    }
}

/// Per-round diagnostics.
#[derive(Debug, Clone, Default)]
pub struct LearnLog {
    /// Objective at initialization followed by the value after every round.
    pub objective: Vec<f64>,
    /// Number of dead atoms re-seeded in each round.
    pub reseeded: Vec<usize>,
    pub rounds: usize,
}

/// Learns an SLC model with default solver settings.
pub fn learn_slc(
    ts: &TrainingSet,
    k: usize,
    lambda1: f64,
    lambda2: f64,
    iters: usize,
    seed: u64,
) -> Result<SlcModel, LearnError> {
    let params = SlcParams {
        k,
        lambda1,
        lambda2,
        iters,
        seed,
        ..SlcParams::default()
    };
    learn_slc_with(ts, &params).map(|(model, _)| model)
}

/// Learns an SLC model and returns the per-round log.
pub fn learn_slc_with(ts: &TrainingSet, params: &SlcParams) -> Result<(SlcModel, LearnLog), LearnError> {
    params.validate()?;
    let (mean, v) = build_displacements(ts);
    let samples = v.transpose(); // N × 3m, one sample per column
    let mut solver = Solver::new(samples, params);
    let mut log = LearnLog {
        objective: vec![solver.objective()],
        ..Default::default()
    };
    for _ in 0..params.iters {
        solver.c_step();
        solver.d_step();
        let reseeded = solver.reseed_dead_atoms();
        let obj = solver.objective();
        let prev = *log.objective.last().expect("initial objective");
        log.objective.push(obj);
        log.reseeded.push(reseeded);
        log.rounds += 1;
        if prev <= 0.0 || (prev - obj) / prev < params.tol {
            break;
        }
    }
    let d = solver.d;
    let weights = DVector::from_fn(d.ncols(), |j, _| d.column(j).mean());
    let model = SlcModel {
        mean,
        basis: solver.c.transpose(),
        directions: d,
        weights,
        hyperparams: Some(SlcHyperparams {
            lambda1: params.lambda1,
            lambda2: params.lambda2,
        }),
    };
    Ok((model, log))
}

/// Fraction of exactly-zero entries of the component matrix.
pub fn sparsity(model: &SlcModel) -> f64 {
    let total = model.basis.len();
    if total == 0 {
        return 1.0;
    }
    model.basis.iter().filter(|&&x| x == 0.0).count() as f64 / total as f64
}

struct Solver<'a> {
    samples: DMatrix<f64>,
    d: DMatrix<f64>,
    c: DMatrix<f64>,
    params: &'a SlcParams,
}

impl<'a> Solver<'a> {
    fn new(samples: DMatrix<f64>, params: &'a SlcParams) -> Self {
        let (n, dim) = samples.shape();
        let k = params.k;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let picks: Vec<usize> = if k <= dim {
            sample(&mut rng, dim, k).into_vec()
        } else {
            (0..k).map(|_| rng.random_range(0..dim)).collect()
        };
        let mut d = DMatrix::zeros(n, k);
        for (j, &i) in picks.iter().enumerate() {
            let col = samples.column(i).map(f64::abs);
            let norm = col.norm();
            if norm > 0.0 {
                d.set_column(j, &(col / norm));
            }
        }
        Solver {
            samples,
            d,
            c: DMatrix::zeros(k, dim),
            params,
        }
    }

    fn nonneg(&self) -> bool {
        self.params.mode == SolverMode::Nonnegative
    }

    fn objective(&self) -> f64 {
        let dim = self.samples.ncols() as f64;
        let residual = &self.samples - &self.d * &self.c;
        let l1: f64 = self.c.iter().map(|x| x.abs()).sum();
        (residual.norm_squared() + self.params.lambda1 * l1 + self.params.lambda2 * self.c.norm_squared()) / dim
    }

    fn c_step(&mut self) {
        let gram = self.d.tr_mul(&self.d);
        let proj = self.d.tr_mul(&self.samples); // k × 3m
        let (l1, l2) = (self.params.lambda1, self.params.lambda2);

        if !self.nonneg() && l1 == 0.0 {
            // unconstrained ridge: exact block solve
            let mut sys = gram.clone();
            for j in 0..sys.nrows() {
                sys[(j, j)] += l2;
            }
            if let Some(chol) = sys.clone().cholesky() {
                self.c = chol.solve(&proj);
                return;
            }
            if let Some(sol) = sys.lu().solve(&proj) {
                self.c = sol;
                return;
            }
        }

        let nonneg = self.nonneg();
        let sweeps = self.params.cd_sweeps;
        let k = gram.nrows();
        let columns: Vec<Vec<f64>> = (0..self.c.ncols())
            .into_par_iter()
            .map(|i| {
                let mut c: Vec<f64> = self.c.column(i).iter().copied().collect();
                let b = proj.column(i);
                let mut q: Vec<f64> = (&gram * DVector::from_column_slice(&c)).iter().copied().collect();
                for _ in 0..sweeps {
                    let mut max_delta = 0.0f64;
                    let mut max_c = 0.0f64;
                    for j in 0..k {
                        let gjj = gram[(j, j)];
                        let denom = gjj + l2;
                        let r = b[j] - q[j] + gjj * c[j];
                        let new = if denom <= 0.0 {
                            0.0
                        } else if nonneg {
                            ((r - 0.5 * l1) / denom).max(0.0)
                        } else {
                            soft_threshold(r, 0.5 * l1) / denom
                        };
                        let delta = new - c[j];
                        if delta != 0.0 {
                            for (qi, g) in q.iter_mut().zip(gram.column(j).iter()) {
                                *qi += g * delta;
                            }
                            c[j] = new;
                            max_delta = max_delta.max(delta.abs());
                        }
                        max_c = max_c.max(new.abs());
                    }
                    if max_delta <= 1e-10 * max_c.max(1e-12) {
                        break;
                    }
                }
                c
            })
            .collect();
        for (i, col) in columns.into_iter().enumerate() {
            self.c.set_column(i, &DVector::from_vec(col));
        }
    }

    fn project_columns(&self, d: &mut DMatrix<f64>) {
        let nonneg = self.nonneg();
        for mut col in d.column_iter_mut() {
            if nonneg {
                col.apply(|x| *x = x.max(0.0));
            }
            let norm = col.norm();
            if norm > 1.0 {
                col /= norm;
            }
        }
    }

    fn d_step(&mut self) {
        let a = &self.c * self.c.transpose(); // k × k
        let b = &self.samples * self.c.transpose(); // N × k
        let lipschitz = largest_eigenvalue(&a);
        if lipschitz <= 0.0 {
            return;
        }
        for _ in 0..self.params.d_steps {
            let grad = &self.d * &a - &b;
            let mut trial = &self.d - &grad / lipschitz;
            self.project_columns(&mut trial);
            let dir = trial - &self.d;
            let slope = -grad.dot(&dir);
            let curvature = (&dir * &a).dot(&dir);
            if slope <= 0.0 || curvature <= 0.0 {
                break;
            }
            let gamma = (slope / curvature).min(1.0);
            self.d += &dir * gamma;
            if dir.norm() * gamma <= 1e-12 * self.d.norm().max(1e-12) {
                break;
            }
        }
    }

    /// Replaces all-zero atoms by the normalized magnitude of the worst
    /// reconstructed samples. The matching coefficient rows are zeroed first,
    /// so the objective does not change.
    fn reseed_dead_atoms(&mut self) -> usize {
        let dead: Vec<usize> = (0..self.d.ncols())
            .filter(|&j| self.d.column(j).iter().all(|&x| x == 0.0))
            .collect();
        if dead.is_empty() {
            return 0;
        }
        for &j in &dead {
            self.c.row_mut(j).fill(0.0);
        }
        let residual = &self.samples - &self.d * &self.c;
        let mut order: Vec<(usize, f64)> = residual
            .column_iter()
            .enumerate()
            .map(|(i, col)| (i, col.norm_squared()))
            .filter(|&(_, r)| r > 0.0)
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut count = 0;
        for (&j, &(i, _)) in dead.iter().zip(order.iter()) {
            let col = self.samples.column(i).map(f64::abs);
            let norm = col.norm();
            if norm > 0.0 {
                self.d.set_column(j, &(col / norm));
                count += 1;
            }
        }
        count
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Power iteration on a symmetric PSD matrix.
fn largest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return a.diagonal().max();
        }
        let next = w.dot(&v);
        v = w / norm;
        if (next - lambda).abs() <= 1e-9 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // the diagonal maximum is a lower bound; keep the larger estimate
    lambda.max(a.diagonal().max())
}
