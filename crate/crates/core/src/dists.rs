//! Fisher and χ² kernels, analytic tail bounds and order-statistic samplers.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution};

use crate::rng::normal;

/// Degrees of freedom of a Fisher distribution `F(D, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FisherParams {
    pub d_num: usize,
    pub d_den: usize,
}

impl FisherParams {
    pub fn new(d_num: usize, d_den: usize) -> Self {
        assert!(d_num >= 1 && d_den >= 1, "Fisher degrees of freedom must be positive");
        FisherParams { d_num, d_den }
    }
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + 7.5;
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_MAX_ITER: usize = 300;
const CF_EPS: f64 = 1e-14;
const FPMIN: f64 = 1e-300;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a,b)` and its complement, with `y = 1 − x`
/// supplied separately so neither side loses precision.
pub fn beta_inc_pair(a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if y <= 0.0 {
        return (1.0, 0.0);
    }
    let ln_front = a * x.ln() + b * y.ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let v = ln_front.exp() * beta_cf(a, b, x) / a;
        (v, 1.0 - v)
    } else {
        let v = ln_front.exp() * beta_cf(b, a, y) / b;
        (1.0 - v, v)
    }
}

pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    beta_inc_pair(a, b, x, 1.0 - x).0
}

/// `P(F_{D,N} > x)`.
pub fn fisher_sf(params: FisherParams, x: f64) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let d = params.d_num as f64;
    let n = params.d_den as f64;
    let denom = n + d * x;
    // sf = I_{N/(N+Dx)}(N/2, D/2)
    beta_inc_pair(n / 2.0, d / 2.0, n / denom, d * x / denom).0
}

pub fn fisher_cdf(params: FisherParams, x: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let d = params.d_num as f64;
    let n = params.d_den as f64;
    let denom = n + d * x;
    beta_inc_pair(n / 2.0, d / 2.0, n / denom, d * x / denom).1
}

pub fn fisher_ln_pdf(params: FisherParams, x: f64) -> f64 {
    let d = params.d_num as f64;
    let n = params.d_den as f64;
    0.5 * d * (d / n).ln() + (0.5 * d - 1.0) * x.ln()
        - 0.5 * (d + n) * (d * x / n).ln_1p()
        - ln_beta(0.5 * d, 0.5 * n)
}

/// `x` with `P(F_{D,N} > x) = alpha`.
pub fn fisher_quantile(params: FisherParams, alpha: f64) -> f64 {
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
    let mut lo = 0.0;
    let mut hi = 1.0;
    while fisher_sf(params, hi) > alpha {
        lo = hi;
        hi *= 2.0;
        if hi > 1e300 {
            return f64::INFINITY;
        }
    }
    while hi - lo > 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if fisher_sf(params, mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..60 {
        let f = fisher_sf(params, x) - alpha;
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = fisher_ln_pdf(params, x).exp();
        let mut next = x + f / pdf;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        let done = (next - x).abs() <= 1e-15 * x.abs() || hi - lo <= 1e-15 * hi;
        x = next;
        if done {
            break;
        }
    }
    x
}

/// Laurent–Massart level `d + 2√(dx) + 2x`, exceeded by `χ²_d` with probability ≤ `e^{−x}`.
pub fn chisq_tail_bound(d: usize, x: f64) -> f64 {
    let d = d as f64;
    d + 2.0 * (d * x).sqrt() + 2.0 * x
}

/// Closed-form upper bound on `F̄⁻¹_{D,N}(u)`.
pub fn fisher_quantile_upper_bound(params: FisherParams, u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "u must lie in (0,1)");
    let d = params.d_num as f64;
    let n = params.d_den as f64;
    let l = (1.0 / u).ln();
    let total = d
        + 2.0 * (d * (1.0 + d / n) * l).sqrt()
        + (1.0 + 2.0 * d / n) * (n / 2.0) * ((4.0 * l / n).exp() - 1.0);
    total / d
}

/// Squares of `len` standard normals sorted in decreasing order.
pub fn sorted_squares_desc<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..len).map(|_| normal(rng).powi(2)).collect();
    w.sort_unstable_by(|a, b| b.total_cmp(a));
    w
}

/// One draw of `Z_{d,D}`: the sum of the `d` largest of `D` squared standard normals.
pub fn sample_zdd<R: Rng + ?Sized>(d: usize, big_d: usize, rng: &mut R) -> f64 {
    assert!(d >= 1 && d <= big_d, "need 1 <= d <= D");
    sorted_squares_desc(big_d, rng)[..d].iter().sum()
}

/// One draw of `χ²_k`.
pub fn sample_chisq<R: Rng + ?Sized>(k: usize, rng: &mut R) -> f64 {
    ChiSquared::new(k as f64).expect("positive degrees of freedom").sample(rng)
}
