//! Comparison selectors, each followed by a least-squares refit.

use rayon::prelude::*;

use crate::design::DesignMatrix;
use crate::error::Result;
use crate::lasso::{self, cv_lambda, default_grid, fold_labels, Bootstrap, GramProblem};
use crate::ols::{benjamini_hochberg, full_model_tests, least_squares, marginal_tests, refit};
use crate::rng;

pub const CV_FOLDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Fdr,
    Fdr2,
    Lasso,
    Bolasso,
}

impl BaselineMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BaselineMethod::Fdr => "fdr",
            BaselineMethod::Fdr2 => "fdr2",
            BaselineMethod::Lasso => "lasso",
            BaselineMethod::Bolasso => "bolasso",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub j_hat: Vec<usize>,
    pub refit_beta: Vec<f64>,
    pub method: BaselineMethod,
}

fn finish(design: &DesignMatrix, y: &[f64], mut j_hat: Vec<usize>, method: BaselineMethod) -> BaselineResult {
    if !j_hat.contains(&0) {
        j_hat.push(0);
    }
    j_hat.sort_unstable();
    j_hat.dedup();
    let refit_beta = refit(design, &j_hat, y);
    BaselineResult { j_hat, refit_beta, method }
}

/// Benjamini–Hochberg at level `q` on the non-intercept p-values.
pub fn select_fdr(design: &DesignMatrix, y: &[f64], q: f64, marginal: bool) -> Result<BaselineResult> {
    let tests = if marginal { marginal_tests(design, y) } else { full_model_tests(design, y)? };
    let pv: Vec<f64> = tests[1..].iter().map(|t| t.p_value).collect();
    let keep = benjamini_hochberg(&pv, q);
    let j_hat = (1..design.p()).filter(|&j| keep[j - 1]).collect();
    let method = if marginal { BaselineMethod::Fdr2 } else { BaselineMethod::Fdr };
    Ok(finish(design, y, j_hat, method))
}

/// Active set of the Lasso at the cross-validated penalty.
pub fn select_lasso_cv(design: &DesignMatrix, y: &[f64], grid: Option<&[f64]>, seed: u64) -> Result<BaselineResult> {
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_grid(design, y);
            &default
        }
    };
    let lambda = cv_lambda(design, y, CV_FOLDS, grid, seed)?;
    let fit = GramProblem::from_design(design, y).solve(lambda, None, lasso::DEFAULT_TOL, lasso::DEFAULT_MAX_ITER);
    Ok(finish(design, y, fit.active_set, BaselineMethod::Lasso))
}

/// Frequency thresholds tried by the Bolasso cross-validation.
pub fn bolasso_thresholds() -> Vec<f64> {
    (0..=10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Selection frequencies along the grid, `freq[g][j]`.
fn path_frequencies(boot: &Bootstrap, grid: &[f64]) -> Vec<Vec<f64>> {
    let paths: Vec<Vec<Vec<usize>>> = boot
        .problems
        .par_iter()
        .map(|prob| {
            prob.path(grid, lasso::DEFAULT_TOL, lasso::DEFAULT_MAX_ITER).into_iter().map(|f| f.active_set).collect()
        })
        .collect();
    let p = boot.problems.first().map_or(0, GramProblem::p);
    (0..grid.len())
        .map(|g| {
            let mut c = vec![0usize; p];
            for path in &paths {
                for &j in &path[g] {
                    c[j] += 1;
                }
            }
            c.into_iter().map(|v| v as f64 / boot.len() as f64).collect()
        })
        .collect()
}

fn above(freq: &[f64], tau: f64) -> Vec<usize> {
    let mut s: Vec<usize> = (0..freq.len()).filter(|&j| j == 0 || freq[j] >= tau - 1e-12).collect();
    s.dedup();
    s
}

/// Bolasso with frequency threshold and penalty chosen by cross-validation.
pub fn select_bolasso_cv(
    design: &DesignMatrix,
    y: &[f64],
    n_boot: usize,
    grid: Option<&[f64]>,
    seed: u64,
) -> Result<BaselineResult> {
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_grid(design, y);
            &default
        }
    };
    let n = design.n();
    let taus = bolasso_thresholds();
    let labels = fold_labels(n, CV_FOLDS, seed);
    let fold_err: Vec<Vec<f64>> = (0..CV_FOLDS)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            let dtrain = design.row_subset(&train);
            let ytrain: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let boot = Bootstrap::new(&dtrain, &ytrain, n_boot, rng::derive_seed(seed, &[rng::label("cvfold"), f as u64]));
            let freqs = path_frequencies(&boot, grid);
            let mut errs = Vec::with_capacity(taus.len() * grid.len());
            for &tau in &taus {
                for fr in &freqs {
                    let s = above(fr, tau);
                    let b = least_squares(&dtrain, &s, &ytrain);
                    let e: f64 = test
                        .iter()
                        .map(|&i| {
                            let fit: f64 = s.iter().zip(&b).map(|(&j, bj)| design.get(i, j) * bj).sum();
                            (y[i] - fit).powi(2)
                        })
                        .sum::<f64>()
                        / test.len() as f64;
                    errs.push(e);
                }
            }
            errs
        })
        .collect();
    let m = taus.len() * grid.len();
    let mean: Vec<f64> = (0..m).map(|c| fold_err.iter().map(|e| e[c]).sum::<f64>() / CV_FOLDS as f64).collect();
    let best = (0..m).fold(0, |b, c| if mean[c] < mean[b] { c } else { b });
    let (tau, lambda) = (taus[best / grid.len()], grid[best % grid.len()]);
    let boot = Bootstrap::new(design, y, n_boot, seed);
    let freq = Bootstrap::frequencies(&boot.fit_all(lambda, None));
    Ok(finish(design, y, above(&freq, tau), BaselineMethod::Bolasso))
}

/// Variables reaching frequency `tau` at penalty `lambda`, for a fixed bootstrap.
pub fn bolasso_select(design: &DesignMatrix, y: &[f64], n_boot: usize, lambda: f64, tau: f64, seed: u64) -> BaselineResult {
    let boot = Bootstrap::new(design, y, n_boot, seed);
    let freq = Bootstrap::frequencies(&boot.fit_all(lambda, None));
    finish(design, y, above(&freq, tau), BaselineMethod::Bolasso)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    fn gaussian(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut r = rng::stream(seed, &[]);
        let mut raw = vec![1.0; n];
        raw.extend(rng::normal_vec(&mut r, n * (p - 1)));
        DesignMatrix::normalize_columns(n, p, &raw).unwrap()
    }

    fn normal_eq_ok(d: &DesignMatrix, y: &[f64], r: &BaselineResult) {
        let fit = d.mul_vec(&r.refit_beta);
        let res: Vec<f64> = y.iter().zip(fit).map(|(a, b)| a - b).collect();
        for &j in &r.j_hat {
            assert!(dot(d.col(j), &res).abs() < 1e-8 * d.n() as f64);
        }
        assert!(r.j_hat.contains(&0));
    }

    #[test]
    fn fdr_full_and_marginal() {
        let d = gaussian(50, 8, 1);
        let beta: Vec<f64> = (0..8).map(|j| if j == 2 { 1.0 } else { 0.0 }).collect();
        let mut y = d.mul_vec(&beta);
        y.iter_mut().zip(rng::normal_vec(&mut rng::stream(2, &[]), 50)).for_each(|(v, e)| *v += 0.5 * e);
        let r = select_fdr(&d, &y, 0.05, false).unwrap();
        assert!(r.j_hat.contains(&2));
        normal_eq_ok(&d, &y, &r);
        let r2 = select_fdr(&d, &y, 0.05, true).unwrap();
        assert!(r2.j_hat.contains(&2));
        normal_eq_ok(&d, &y, &r2);
    }

    #[test]
    fn lasso_cv_noise_is_small_and_deterministic() {
        let mut total = 0;
        for s in 0..10 {
            let d = gaussian(60, 12, 10 + s);
            let y = rng::normal_vec(&mut rng::stream(s, &[1]), 60);
            let r = select_lasso_cv(&d, &y, None, s).unwrap();
            normal_eq_ok(&d, &y, &r);
            assert_eq!(r, select_lasso_cv(&d, &y, None, s).unwrap());
            total += r.j_hat.len() - 1;
        }
        assert!(total as f64 / 10.0 < 6.0, "{total}");
    }

    #[test]
    fn lasso_single_grid_point() {
        let d = gaussian(40, 6, 3);
        let y = rng::normal_vec(&mut rng::stream(4, &[]), 40);
        let l = crate::lasso::lambda_max(&d, &y) * 0.3;
        let r = select_lasso_cv(&d, &y, Some(&[l]), 1).unwrap();
        let fit = GramProblem::from_design(&d, &y).solve(l, None, lasso::DEFAULT_TOL, lasso::DEFAULT_MAX_ITER);
        let mut expect = fit.active_set.clone();
        if !expect.contains(&0) {
            expect.insert(0, 0);
        }
        assert_eq!(r.j_hat, expect);
    }

    #[test]
    fn bolasso_thresholds_extremes() {
        let d = gaussian(40, 6, 5);
        let y = rng::normal_vec(&mut rng::stream(6, &[]), 40);
        let l = crate::lasso::lambda_max(&d, &y) * 0.2;
        let loose = bolasso_select(&d, &y, 20, l, 0.0, 1);
        let fit = GramProblem::from_design(&d, &y).solve(l, None, lasso::DEFAULT_TOL, lasso::DEFAULT_MAX_ITER);
        assert!(fit.active_set.iter().all(|j| loose.j_hat.contains(j)));
        let strict = bolasso_select(&d, &y, 20, l, 1.5, 1);
        assert_eq!(strict.j_hat, vec![0]);
    }

    #[test]
    fn bolasso_cv_runs_deterministically() {
        let d = gaussian(40, 6, 7);
        let beta: Vec<f64> = (0..6).map(|j| if j == 1 { 1.0 } else { 0.0 }).collect();
        let mut y = d.mul_vec(&beta);
        y.iter_mut().zip(rng::normal_vec(&mut rng::stream(8, &[]), 40)).for_each(|(v, e)| *v += 0.5 * e);
        let grid = crate::lasso::lambda_grid(crate::lasso::lambda_max(&d, &y), 10, 1e-2);
        let a = select_bolasso_cv(&d, &y, 10, Some(&grid), 3).unwrap();
        assert_eq!(a, select_bolasso_cv(&d, &y, 10, Some(&grid), 3).unwrap());
        assert!(a.j_hat.contains(&1));
        normal_eq_ok(&d, &y, &a);
    }
}
