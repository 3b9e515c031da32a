//! Least-squares refits, coefficient t-tests and Benjamini–Hochberg.

use nalgebra::{DMatrix, DVector};

use crate::design::DesignMatrix;
use crate::dists::{fisher_sf, FisherParams};
use crate::error::{Error, Result};
use crate::linalg::dot;

const RANK_TOL: f64 = 1e-10;

fn submatrix(design: &DesignMatrix, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(design.n(), cols.len(), |i, j| design.get(i, cols[j]))
}

/// Least-squares coefficients on `cols`; minimum-norm when the columns are dependent.
pub fn least_squares(design: &DesignMatrix, cols: &[usize], y: &[f64]) -> Vec<f64> {
    if cols.is_empty() {
        return Vec::new();
    }
    let x = submatrix(design, cols);
    let b = DVector::from_column_slice(y);
    if cols.len() <= design.n() {
        let qr = x.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if r.diagonal().iter().all(|v| v.abs() > RANK_TOL * diag_max.max(1.0)) {
            let qtb = qr.q().transpose() * &b;
            if let Some(beta) = r.solve_upper_triangular(&qtb) {
                return beta.iter().copied().collect();
            }
        }
    }
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    let beta = svd.solve(&b, RANK_TOL * smax.max(1.0)).expect("svd has both factors");
    beta.iter().copied().collect()
}

/// OLS refit on `selected`, embedded into a `p`-vector.
pub fn refit(design: &DesignMatrix, selected: &[usize], y: &[f64]) -> Vec<f64> {
    let mut beta = vec![0.0; design.p()];
    for (j, b) in selected.iter().zip(least_squares(design, selected, y)) {
        beta[*j] = b;
    }
    beta
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTest {
    pub p_value: f64,
    pub t_sq: f64,
}

/// Two-sided t-tests of each coefficient in the full least-squares fit.
pub fn full_model_tests(design: &DesignMatrix, y: &[f64]) -> Result<Vec<TTest>> {
    let (n, p) = (design.n(), design.p());
    if p >= n {
        return Err(Error::RankDeficient);
    }
    let x = submatrix(design, &(0..p).collect::<Vec<_>>());
    let qr = x.qr();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-8 * diag_max) {
        return Err(Error::RankDeficient);
    }
    let b = DVector::from_column_slice(y);
    let beta = r.solve_upper_triangular(&(qr.q().transpose() * &b)).ok_or(Error::RankDeficient)?;
    let resid = &b - submatrix(design, &(0..p).collect::<Vec<_>>()) * &beta;
    let df = n - p;
    let s2 = resid.norm_squared() / df as f64;
    let rinv = r.solve_upper_triangular(&DMatrix::identity(p, p)).ok_or(Error::RankDeficient)?;
    let fp = FisherParams::new(1, df);
    Ok((0..p)
        .map(|j| {
            let v = s2 * rinv.row(j).norm_squared();
            let t_sq = if v > 0.0 { beta[j] * beta[j] / v } else { f64::INFINITY };
            TTest { p_value: fisher_sf(fp, t_sq), t_sq }
        })
        .collect())
}

/// t-test of the slope in the regression of `y` on an intercept and each single column.
pub fn marginal_tests(design: &DesignMatrix, y: &[f64]) -> Vec<TTest> {
    let n = design.n();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yc: Vec<f64> = y.iter().map(|v| v - ybar).collect();
    let syy = dot(&yc, &yc);
    let fp = FisherParams::new(1, n.saturating_sub(2).max(1));
    (0..design.p())
        .map(|j| {
            let x = design.col(j);
            let xbar = x.iter().sum::<f64>() / n as f64;
            let xc: Vec<f64> = x.iter().map(|v| v - xbar).collect();
            let sxx = dot(&xc, &xc);
            if sxx <= 1e-12 * n as f64 {
                return TTest { p_value: 1.0, t_sq: 0.0 };
            }
            let sxy = dot(&xc, &yc);
            let explained = sxy * sxy / sxx;
            let rss = (syy - explained).max(0.0);
            let t_sq = if rss > 0.0 { explained / (rss / (n as f64 - 2.0)) } else { f64::INFINITY };
            TTest { p_value: fisher_sf(fp, t_sq), t_sq }
        })
        .collect()
}

/// Benjamini–Hochberg step-up: rejects the `i*` smallest p-values for the
/// largest `i*` with `p_(i*) ≤ i*·q/m`.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let cut = (1..=m).rev().find(|&i| p_values[idx[i - 1]] <= i as f64 * q / m as f64).unwrap_or(0);
    let mut out = vec![false; m];
    for &i in &idx[..cut] {
        out[i] = true;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn gaussian(n: usize, p: usize, seed: u64) -> DesignMatrix {
        let mut r = rng::stream(seed, &[]);
        let mut raw = vec![1.0; n];
        raw.extend(rng::normal_vec(&mut r, n * (p - 1)));
        DesignMatrix::normalize_columns(n, p, &raw).unwrap()
    }

    #[test]
    fn refit_normal_equations() {
        let d = gaussian(30, 6, 1);
        let y = rng::normal_vec(&mut rng::stream(2, &[]), 30);
        let sel = [0, 2, 5];
        let beta = refit(&d, &sel, &y);
        let r: Vec<f64> = y.iter().zip(d.mul_vec(&beta)).map(|(a, b)| a - b).collect();
        for &j in &sel {
            assert!(dot(d.col(j), &r).abs() < 1e-8);
        }
        assert_eq!(beta[1], 0.0);
    }

    #[test]
    fn dependent_columns_use_minimum_norm() {
        let d = gaussian(5, 8, 3);
        let y = rng::normal_vec(&mut rng::stream(2, &[]), 5);
        let beta = refit(&d, &(0..8).collect::<Vec<_>>(), &y);
        let fit = d.mul_vec(&beta);
        assert!(fit.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-8));
    }

    #[test]
    fn full_tests_match_statrs_t() {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let (n, p) = (25, 4);
        let d = gaussian(n, p, 4);
        let y = rng::normal_vec(&mut rng::stream(5, &[]), n);
        let tests = full_model_tests(&d, &y).unwrap();
        let t = StudentsT::new(0.0, 1.0, (n - p) as f64).unwrap();
        for tt in &tests {
            let two_sided = 2.0 * (1.0 - t.cdf(tt.t_sq.sqrt()));
            assert!((tt.p_value - two_sided).abs() < 1e-9);
        }
        let scaled: Vec<f64> = y.iter().map(|v| 7.5 * v).collect();
        for (a, b) in tests.iter().zip(full_model_tests(&d, &scaled).unwrap()) {
            assert!((a.p_value - b.p_value).abs() < 1e-12);
        }
    }

    #[test]
    fn full_tests_need_full_rank() {
        let d = gaussian(5, 6, 1);
        let y = vec![0.0; 5];
        assert!(matches!(full_model_tests(&d, &y), Err(Error::RankDeficient)));
    }

    #[test]
    fn marginal_matches_two_column_fit() {
        let (n, p) = (20, 5);
        let d = gaussian(n, p, 6);
        let y = rng::normal_vec(&mut rng::stream(7, &[]), n);
        let m = marginal_tests(&d, &y);
        for j in 1..p {
            let sub = d.select_columns(&[0, j]);
            let full = full_model_tests(&sub, &y).unwrap();
            assert!((full[1].p_value - m[j].p_value).abs() < 1e-9);
        }
    }

    #[test]
    fn bh_hand_example() {
        assert_eq!(benjamini_hochberg(&[0.01, 0.02, 0.9], 0.05), vec![true, true, false]);
        assert_eq!(benjamini_hochberg(&[1.0; 4], 0.05), vec![false; 4]);
        assert_eq!(benjamini_hochberg(&[0.0; 4], 0.05), vec![true; 4]);
        assert_eq!(benjamini_hochberg(&[0.04, 0.001, 0.03], 0.05), vec![true, true, true]);
    }

    #[test]
    fn bh_matches_brute_force() {
        let mut r = rng::stream(8, &[]);
        for m in 1..=12 {
            for _ in 0..200 {
                let p: Vec<f64> = (0..m).map(|_| rand::Rng::random::<f64>(&mut r).powi(3)).collect();
                let q = 0.1;
                let mut sorted = p.clone();
                sorted.sort_by(f64::total_cmp);
                let best = (1..=m).filter(|&i| sorted[i - 1] <= i as f64 * q / m as f64).max().unwrap_or(0);
                let got = benjamini_hochberg(&p, q);
                assert_eq!(got.iter().filter(|&&b| b).count(), best);
                if best > 0 {
                    assert!(p.iter().zip(&got).all(|(v, &g)| g == (*v <= sorted[best - 1])));
                }
            }
        }
    }
}
