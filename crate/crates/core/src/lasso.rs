//! ℓ¹-penalized least squares by coordinate descent on the Gram matrix, with
//! cross-validation and bootstrap helpers.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng;

pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// Sweep budget for bootstrap fits, which only feed selection frequencies.
pub const BOOT_MAX_ITER: usize = 10_000;
const POLISH_AFTER: usize = 20;
pub const GRID_LEN: usize = 50;
pub const GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    pub coefficients: Vec<f64>,
    pub active_set: Vec<usize>,
    /// Coordinate sweeps performed.
    pub n_iters: usize,
    pub converged: bool,
    /// Objective after each sweep.
    pub objective: Vec<f64>,
    /// `Xᵀ(y − Xβ)` at the returned coefficients.
    pub gradient: Vec<f64>,
}

impl LassoFit {
    pub fn is_active(&self, j: usize) -> bool {
        self.coefficients[j] != 0.0
    }
}

/// `½‖y − Xβ‖² + λ Σ_{penalized j} |β_j|` stored through `XᵀX`, `Xᵀy` and `yᵀy`.
#[derive(Debug, Clone)]
pub struct GramProblem {
    p: usize,
    gram: Vec<f64>,
    xty: Vec<f64>,
    yty: f64,
    penalized: Vec<bool>,
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

impl GramProblem {
    /// Full-data problem; the intercept column, when present, is unpenalized.
    pub fn from_design(design: &DesignMatrix, y: &[f64]) -> Self {
        Self::weighted(design, y, None)
    }

    /// Problem on rows with nonnegative multiplicities `w`.
    pub fn from_weights(design: &DesignMatrix, y: &[f64], w: &[f64]) -> Self {
        Self::weighted(design, y, Some(w))
    }

    fn weighted(design: &DesignMatrix, y: &[f64], w: Option<&[f64]>) -> Self {
        let (n, p) = (design.n(), design.p());
        let wcols: Vec<Vec<f64>> = match w {
            None => Vec::new(),
            Some(w) => (0..p).map(|j| design.col(j).iter().zip(w).map(|(x, w)| x * w).collect()).collect(),
        };
        let left = |j: usize| -> &[f64] {
            if w.is_some() {
                &wcols[j]
            } else {
                design.col(j)
            }
        };
        let mut gram = vec![0.0; p * p];
        for a in 0..p {
            for b in a..p {
                let v = dot(left(a), design.col(b));
                gram[a * p + b] = v;
                gram[b * p + a] = v;
            }
        }
        let xty = (0..p).map(|j| dot(left(j), y)).collect();
        let yty = match w {
            None => dot(y, y),
            Some(w) => y.iter().zip(w).map(|(v, w)| w * v * v).sum(),
        };
        debug_assert_eq!(y.len(), n);
        let mut penalized = vec![true; p];
        if design.has_intercept() {
            penalized[0] = false;
        }
        GramProblem { p, gram, xty, yty, penalized }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_penalized(&self, j: usize) -> bool {
        self.penalized[j]
    }

    fn gcol(&self, j: usize) -> &[f64] {
        &self.gram[j * self.p..(j + 1) * self.p]
    }

    /// Smallest penalty at which every penalized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        let mut beta = vec![0.0; self.p];
        let mut h = self.xty.clone();
        for j in (0..self.p).filter(|&j| !self.penalized[j]) {
            let g = self.gram[j * self.p + j];
            if g > 0.0 {
                beta[j] = h[j] / g;
                let b = beta[j];
                for (hi, gi) in h.iter_mut().zip(self.gcol(j)) {
                    *hi -= b * gi;
                }
            }
        }
        (0..self.p).filter(|&j| self.penalized[j]).map(|j| h[j].abs()).fold(0.0, f64::max)
    }

    pub fn objective(&self, beta: &[f64], gradient: &[f64], lambda: f64) -> f64 {
        let quad: f64 = beta.iter().zip(self.xty.iter().zip(gradient)).map(|(b, (c, h))| b * (c + h)).sum();
        let l1: f64 = (0..self.p).filter(|&j| self.penalized[j]).map(|j| beta[j].abs()).sum();
        0.5 * self.yty - 0.5 * quad + lambda * l1
    }

    fn gradient_at(&self, beta: &[f64]) -> Vec<f64> {
        let mut h = self.xty.clone();
        for (j, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                for (hi, gi) in h.iter_mut().zip(self.gcol(j)) {
                    *hi -= b * gi;
                }
            }
        }
        h
    }

    fn sweep(&self, lambda: f64, beta: &mut [f64], h: &mut [f64], coords: impl Iterator<Item = usize>) -> f64 {
        let mut max_delta: f64 = 0.0;
        for j in coords {
            let g = self.gram[j * self.p + j];
            if g <= 0.0 {
                continue;
            }
            let z = h[j] + g * beta[j];
            let new = if self.penalized[j] { soft_threshold(z, lambda) / g } else { z / g };
            let delta = new - beta[j];
            if delta != 0.0 {
                beta[j] = new;
                for (hi, gi) in h.iter_mut().zip(self.gcol(j)) {
                    *hi -= delta * gi;
                }
                max_delta = max_delta.max(delta.abs());
            }
        }
        max_delta
    }

    /// Exact minimizer on `active` with the current signs held fixed. Accepted
    /// only when it keeps those signs and does not raise the objective.
    fn polish(&self, lambda: f64, active: &[usize], beta: &mut [f64], h: &mut [f64]) -> bool {
        let k = active.len();
        if k == 0 {
            return false;
        }
        let g = DMatrix::from_fn(k, k, |a, b| self.gram[active[a] * self.p + active[b]]);
        let rhs = DVector::from_fn(k, |a, _| {
            let j = active[a];
            if self.penalized[j] {
                self.xty[j] - lambda * beta[j].signum()
            } else {
                self.xty[j]
            }
        });
        let Some(chol) = g.cholesky() else { return false };
        let sol = chol.solve(&rhs);
        let keeps_signs = active
            .iter()
            .zip(sol.iter())
            .all(|(&j, &v)| v.is_finite() && (!self.penalized[j] || v.signum() == beta[j].signum() && v != 0.0));
        if !keeps_signs {
            return false;
        }
        let mut cand = beta.to_vec();
        for (&j, &v) in active.iter().zip(sol.iter()) {
            cand[j] = v;
        }
        let ch = self.gradient_at(&cand);
        if self.objective(&cand, &ch, lambda) > self.objective(beta, h, lambda) {
            return false;
        }
        beta.copy_from_slice(&cand);
        h.copy_from_slice(&ch);
        true
    }

    /// Coordinate descent from `warm` (or zero) until the largest coefficient
    /// change over a full sweep falls below `tol`.
    pub fn solve(&self, lambda: f64, warm: Option<&[f64]>, tol: f64, max_iter: usize) -> LassoFit {
        let mut beta = warm.map_or_else(|| vec![0.0; self.p], <[f64]>::to_vec);
        let mut h = self.gradient_at(&beta);
        let mut objective = vec![self.objective(&beta, &h, lambda)];
        let mut iters = 0;
        let mut converged = false;
        while iters < max_iter {
            let full = self.sweep(lambda, &mut beta, &mut h, 0..self.p);
            iters += 1;
            objective.push(self.objective(&beta, &h, lambda));
            if full < tol {
                converged = true;
                break;
            }
            let active: Vec<usize> = (0..self.p).filter(|&j| beta[j] != 0.0 || !self.penalized[j]).collect();
            let (mut inner, mut next_polish) = (0, POLISH_AFTER);
            while iters < max_iter {
                let d = self.sweep(lambda, &mut beta, &mut h, active.iter().copied());
                iters += 1;
                inner += 1;
                objective.push(self.objective(&beta, &h, lambda));
                if d < tol {
                    break;
                }
                if inner == next_polish {
                    next_polish *= 2;
                    let support: Vec<usize> =
                        active.iter().copied().filter(|&j| beta[j] != 0.0 || !self.penalized[j]).collect();
                    if !self.polish(lambda, &support, &mut beta, &mut h) {
                        continue;
                    }
                    objective.push(self.objective(&beta, &h, lambda));
                    break;
                }
            }
        }
        let h = self.gradient_at(&beta);
        let active_set = (0..self.p).filter(|&j| beta[j] != 0.0).collect();
        LassoFit { lambda, coefficients: beta, active_set, n_iters: iters, converged, objective, gradient: h }
    }

    /// Largest violation of the optimality conditions at `fit`.
    pub fn kkt_violation(&self, fit: &LassoFit) -> f64 {
        (0..self.p)
            .map(|j| {
                let h = fit.gradient[j];
                let b = fit.coefficients[j];
                if !self.penalized[j] {
                    h.abs()
                } else if b != 0.0 {
                    (h - fit.lambda * b.signum()).abs()
                } else {
                    (h.abs() - fit.lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    /// Warm-started fits along a descending grid.
    pub fn path(&self, grid: &[f64], tol: f64, max_iter: usize) -> Vec<LassoFit> {
        let mut out: Vec<LassoFit> = Vec::with_capacity(grid.len());
        for &l in grid {
            let warm = out.last().map(|f| f.coefficients.as_slice());
            out.push(self.solve(l, warm, tol, max_iter));
        }
        out
    }
}

pub fn fit_lasso(design: &DesignMatrix, y: &[f64], lambda: f64, tol: f64, max_iter: usize) -> Result<LassoFit> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    if y.len() != design.n() {
        return Err(Error::Dimension(format!("y has {} rows, design has {}", y.len(), design.n())));
    }
    let fit = GramProblem::from_design(design, y).solve(lambda, None, tol, max_iter);
    if fit.converged {
        Ok(fit)
    } else {
        Err(Error::NotConverged(Box::new(fit)))
    }
}

pub fn lambda_max(design: &DesignMatrix, y: &[f64]) -> f64 {
    GramProblem::from_design(design, y).lambda_max()
}

/// `len` log-spaced penalties from `lmax` down to `lmax·ratio`.
pub fn lambda_grid(lmax: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len <= 1 {
        return vec![lmax];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| lmax * (step * i as f64).exp()).collect()
}

pub fn default_grid(design: &DesignMatrix, y: &[f64]) -> Vec<f64> {
    lambda_grid(lambda_max(design, y), GRID_LEN, GRID_RATIO)
}

/// Fold label for each row: a seeded shuffle dealt round-robin.
pub fn fold_labels(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[rng::label("folds")]));
    let mut labels = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        labels[i] = pos % n_folds;
    }
    labels
}

fn held_out_error(design: &DesignMatrix, y: &[f64], rows: &[usize], beta: &[f64]) -> f64 {
    rows.iter()
        .map(|&i| {
            let fit: f64 = beta.iter().enumerate().map(|(j, b)| b * design.get(i, j)).sum();
            (y[i] - fit).powi(2)
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// Mean held-out squared error for each grid penalty.
pub fn cv_errors(design: &DesignMatrix, y: &[f64], n_folds: usize, grid: &[f64], seed: u64) -> Result<Vec<f64>> {
    let n = design.n();
    if grid.is_empty() || n_folds < 2 || n < n_folds {
        return Err(Error::InvalidInput(format!("cross-validation needs a grid and n ≥ folds ≥ 2 (n={n})")));
    }
    let labels = fold_labels(n, n_folds, seed);
    let per_fold: Vec<Vec<f64>> = (0..n_folds)
        .into_par_iter()
        .map(|f| {
            let w: Vec<f64> = labels.iter().map(|&l| if l == f { 0.0 } else { 1.0 }).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            let prob = GramProblem::from_weights(design, y, &w);
            prob.path(grid, DEFAULT_TOL, DEFAULT_MAX_ITER)
                .iter()
                .map(|fit| held_out_error(design, y, &test, &fit.coefficients))
                .collect()
        })
        .collect();
    Ok((0..grid.len()).map(|g| per_fold.iter().map(|e| e[g]).sum::<f64>() / n_folds as f64).collect())
}

/// Grid penalty with the smallest cross-validated error, the largest on ties.
pub fn cv_lambda(design: &DesignMatrix, y: &[f64], n_folds: usize, grid: &[f64], seed: u64) -> Result<f64> {
    let errs = cv_errors(design, y, n_folds, grid, seed)?;
    let mut best = 0;
    for (i, &e) in errs.iter().enumerate() {
        if e < errs[best] {
            best = i;
        }
    }
    Ok(grid[best])
}

/// Row multiplicities of `n` draws with replacement.
pub fn bootstrap_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w = vec![0.0; n];
    for _ in 0..n {
        w[rng.random_range(0..n)] += 1.0;
    }
    w
}

/// Gram problems of `n_boot` row resamples, each drawn from its own stream.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub problems: Vec<GramProblem>,
}

impl Bootstrap {
    pub fn new(design: &DesignMatrix, y: &[f64], n_boot: usize, seed: u64) -> Self {
        let problems = (0..n_boot)
            .into_par_iter()
            .map(|b| {
                let mut r = rng::stream(seed, &[rng::label("bootstrap"), b as u64]);
                let w = bootstrap_weights(design.n(), &mut r);
                GramProblem::from_weights(design, y, &w)
            })
            .collect();
        Bootstrap { problems }
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn fit_all(&self, lambda: f64, warm: Option<&[LassoFit]>) -> Vec<LassoFit> {
        self.problems
            .par_iter()
            .enumerate()
            .map(|(b, prob)| {
                let start = warm.map(|w| w[b].coefficients.as_slice());
                prob.solve(lambda, start, DEFAULT_TOL, BOOT_MAX_ITER)
            })
            .collect()
    }

    /// Fraction of fits in which each coefficient is nonzero.
    pub fn frequencies(fits: &[LassoFit]) -> Vec<f64> {
        let p = fits.first().map_or(0, |f| f.coefficients.len());
        let mut counts = vec![0usize; p];
        for f in fits {
            for &j in &f.active_set {
                counts[j] += 1;
            }
        }
        counts.into_iter().map(|c| c as f64 / fits.len() as f64).collect()
    }
}

pub fn bolasso_frequencies(design: &DesignMatrix, y: &[f64], lambda: f64, n_boot: usize, seed: u64) -> Result<Vec<f64>> {
    if n_boot == 0 {
        return Err(Error::InvalidInput("n_boot must be at least 1".into()));
    }
    let boot = Bootstrap::new(design, y, n_boot, seed);
    Ok(Bootstrap::frequencies(&boot.fit_all(lambda, None)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::OrthoState;
    use proptest::prelude::*;

    fn gaussian(n: usize, p: usize, seed: u64) -> (DesignMatrix, Vec<f64>) {
        let mut r = rng::stream(seed, &[]);
        let mut raw = vec![1.0; n];
        raw.extend(rng::normal_vec(&mut r, n * (p - 1)));
        let d = DesignMatrix::normalize_columns(n, p, &raw).unwrap();
        let mut y = d.mul_vec(&(0..p).map(|j| if j < 3 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        for v in y.iter_mut() {
            *v += rng::normal(&mut r);
        }
        (d, y)
    }

    #[test]
    fn zero_penalty_is_least_squares() {
        let (d, y) = gaussian(40, 6, 1);
        let fit = fit_lasso(&d, &y, 0.0, 1e-12, DEFAULT_MAX_ITER).unwrap();
        let r: Vec<f64> = y.iter().zip(d.mul_vec(&fit.coefficients)).map(|(a, b)| a - b).collect();
        for j in 0..6 {
            assert!(dot(d.col(j), &r).abs() < 1e-8);
        }
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let (n, p) = (30, 5);
        let (g, y) = gaussian(n, p, 2);
        let st = OrthoState::from_design_natural(&g);
        let mut data = Vec::new();
        for j in 0..p {
            data.extend_from_slice(st.basis_vec(j));
        }
        data[..n].fill(1.0);
        let d = DesignMatrix::from_columns(n, p, data, true).unwrap();
        let lambda = 3.0;
        let fit = fit_lasso(&d, &y, lambda, 1e-12, DEFAULT_MAX_ITER).unwrap();
        for j in 0..p {
            let c = dot(d.col(j), &y);
            let expect = if j == 0 { c / n as f64 } else { soft_threshold(c, lambda) / n as f64 };
            assert!((fit.coefficients[j] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn above_lambda_max_is_empty() {
        let (d, y) = gaussian(30, 8, 3);
        let lm = lambda_max(&d, &y);
        let fit = fit_lasso(&d, &y, lm * 1.0001, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fit.active_set, vec![0]);
        let below = fit_lasso(&d, &y, lm * 0.99, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(below.active_set.len() > 1);
        let raw_max = (1..8).map(|j| dot(d.col(j), &y).abs()).fold(0.0, f64::max);
        let fit = fit_lasso(&d, &y, raw_max.max(lm), DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!(fit.coefficients[1..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn not_converged_carries_partial_fit() {
        let (d, y) = gaussian(30, 8, 4);
        match fit_lasso(&d, &y, 0.1, 1e-15, 2) {
            Err(Error::NotConverged(f)) => assert_eq!(f.n_iters, 2),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid(10.0, 50, 1e-3);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 10.0).abs() < 1e-12 && (g[49] - 0.01).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn folds_balanced_and_cv_deterministic() {
        let labels = fold_labels(37, 10, 5);
        let mut sizes = [0; 10];
        labels.iter().for_each(|&l| sizes[l] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let (d, y) = gaussian(40, 6, 5);
        let grid = default_grid(&d, &y);
        let a = cv_lambda(&d, &y, 10, &grid, 9).unwrap();
        assert_eq!(a, cv_lambda(&d, &y, 10, &grid, 9).unwrap());
        assert_eq!(cv_lambda(&d, &y, 10, &grid[3..4], 9).unwrap(), grid[3]);
    }

    #[test]
    fn cv_on_noise_prefers_large_penalties() {
        let mut upper = 0;
        let trials = 20;
        for s in 0..trials {
            let (d, _) = gaussian(60, 10, 100 + s);
            let y = rng::normal_vec(&mut rng::stream(s, &[7]), 60);
            let grid = default_grid(&d, &y);
            let l = cv_lambda(&d, &y, 10, &grid, s).unwrap();
            if grid.iter().position(|&g| g == l).unwrap() < grid.len() / 2 {
                upper += 1;
            }
        }
        assert!(upper * 2 > trials, "upper half in {upper}/{trials}");
    }

    #[test]
    fn bootstrap_frequency_extremes() {
        let (d, y) = gaussian(40, 6, 6);
        let f0 = bolasso_frequencies(&d, &y, 0.0, 20, 1).unwrap();
        assert!(f0.iter().all(|&f| f == 1.0));
        let fbig = bolasso_frequencies(&d, &y, 1e9, 20, 1).unwrap();
        assert!(fbig[1..].iter().all(|&f| f == 0.0));
        let f = bolasso_frequencies(&d, &y, 5.0, 20, 2).unwrap();
        assert_eq!(f, bolasso_frequencies(&d, &y, 5.0, 20, 2).unwrap());
        assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn kkt_and_monotone_objective(n in 5usize..30, p in 2usize..30, seed in 0u64..1000, frac in 0.01f64..1.2) {
            let (d, y) = gaussian(n, p, seed);
            let prob = GramProblem::from_design(&d, &y);
            let lambda = frac * prob.lambda_max().max(1e-3);
            let fit = prob.solve(lambda, None, DEFAULT_TOL, DEFAULT_MAX_ITER);
            prop_assert!(fit.converged);
            let scale = 1.0 + prob.lambda_max();
            prop_assert!(prob.kkt_violation(&fit) < 1e-4 * scale, "kkt {}", prob.kkt_violation(&fit));
            for w in fit.objective.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * (1.0 + w[0].abs()));
            }
        }
    }
}
