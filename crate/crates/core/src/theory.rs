//! Signal-strength conditions and constants under which the selection
//! procedures recover the support with high probability.

use std::io::Write;

use crate::design::{dense_project_sq_norm, DesignMatrix};
use crate::error::{Error, Result};

/// Largest support size for which the infimum over subsets is enumerated.
pub const MAX_EXACT_SUPPORT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

fn big_k(u: f64, n_res: f64, m_t: f64) -> f64 {
    1.0 + 2.0 * (u / n_res).sqrt() + 2.0 * m_t * u / n_res
}

pub fn constants_c123(d: usize, n_res: usize, alpha_kt: f64, gamma: f64) -> Constants {
    let (d, nn) = (d as f64, n_res as f64);
    let lt = (1.0 / alpha_kt).ln();
    let l = (2.0 / gamma).ln();
    let m_t = 2.0 * (4.0 * lt / nn).exp();
    let c1 = 2.5 * (1.0 + big_k(lt, nn, m_t).max(m_t)) * (d + lt) / nn;
    let kl = big_k(l, nn, m_t);
    let c2 = 2.5 * (1.0 + kl * kl).sqrt() * (1.0 + (d / nn).sqrt());
    let c3 = 2.5 * (m_t * kl / 2.0).max(5.0) * (1.0 + 2.0 * d / nn);
    Constants { c1, c2, c3 }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundRow {
    pub k: usize,
    pub t: u32,
    pub left: f64,
    pub right: f64,
}

impl BoundRow {
    pub fn margin(&self) -> f64 {
        self.left - self.right
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub condition: &'static str,
    pub rows: Vec<BoundRow>,
    /// The subset infimum was approximated rather than enumerated.
    pub approximate: bool,
}

impl BoundReport {
    pub fn satisfied(&self) -> bool {
        self.rows.iter().any(|r| r.left >= r.right)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["condition", "k", "t", "left", "right", "margin", "approximate"])?;
        for r in &self.rows {
            w.write_record([
                self.condition.to_string(),
                r.k.to_string(),
                r.t.to_string(),
                format!("{:e}", r.left),
                format!("{:e}", r.right),
                format!("{:e}", r.margin()),
                self.approximate.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-`t` inputs of the ordered-selection condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RkTerm {
    pub t: u32,
    pub n_res: usize,
    pub alpha_kt: f64,
    /// `‖Π_{S_{k,t}} μ‖_n²`.
    pub proj_s: f64,
    /// `‖Π_{V_{k,t}^⊥} μ‖_n²`.
    pub proj_perp: f64,
}

pub fn check_rk(k: usize, k0: usize, n: usize, sigma: f64, gamma: f64, terms: &[RkTerm]) -> BoundReport {
    let rows = terms
        .iter()
        .map(|tm| {
            let d = 1usize << tm.t;
            let c = constants_c123(d, tm.n_res, tm.alpha_kt, gamma);
            let lg = (2.0 * k0 as f64 / (tm.alpha_kt * gamma)).ln();
            let noise = sigma * sigma / n as f64 * (c.c2 * (d as f64 * lg).sqrt() + c.c3 * lg);
            BoundRow { k, t: tm.t, left: tm.proj_s, right: c.c1 * tm.proj_perp + noise }
        })
        .collect();
    BoundReport { condition: "R", rows, approximate: false }
}

/// `|T_k| = ⌊log₂(p−k)⌋ + 1`.
pub fn t_count(p: usize, k: usize) -> usize {
    (usize::BITS - (p - k).leading_zeros()) as usize
}

/// `t` values `0..=⌊log₂(k₀−k)⌋` entering the two-step conditions.
pub fn t_range(k: usize, k0: usize) -> Vec<u32> {
    if k >= k0 {
        return Vec::new();
    }
    (0..t_count(k0, k) as u32).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStepInputs {
    pub k: usize,
    pub k0: usize,
    pub n: usize,
    pub p: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
}

impl TwoStepInputs {
    fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0 && self.alpha < 1.0 && self.gamma > 0.0 && self.gamma < 1.0;
        if !ok || self.k == 0 || self.k >= self.k0 || self.k0 > self.p || self.sigma <= 0.0 {
            return Err(Error::InvalidInput(format!("invalid bound inputs {self:?}")));
        }
        Ok(())
    }

    fn n_res(&self, t: u32) -> Result<f64> {
        let used = self.k + (1usize << t);
        if used >= self.n {
            return Err(Error::DegenerateStep { k: self.k });
        }
        Ok((self.n - used) as f64)
    }
}

fn r2_right(inp: &TwoStepInputs, t: u32) -> f64 {
    let (n, d) = (inp.n as f64, (1u64 << t) as f64);
    let lg = (inp.k0 as f64 * t_count(inp.p, inp.k) as f64 / (inp.gamma * inp.alpha)).ln();
    d / n * (10.0 + 4.0 * ((inp.p - inp.k) as f64 * inp.k0 as f64 / (d * d)).ln())
        + 2.0 / n * ((2.0 * d * lg).sqrt() + lg)
}

/// The known-variance two-step condition; `inf_proj[t]` is
/// `inf{‖Π_S μ‖_n² : S ∈ B_{2ᵗ}}` for each `t` in [`t_range`].
pub fn check_r2(inp: &TwoStepInputs, inf_proj: &[f64], approximate: bool) -> Result<BoundReport> {
    inp.validate()?;
    let rows = t_range(inp.k, inp.k0)
        .into_iter()
        .zip(inf_proj)
        .map(|(t, &v)| BoundRow { k: inp.k, t, left: v / (2.0 * inp.sigma * inp.sigma), right: r2_right(inp, t) })
        .collect();
    Ok(BoundReport { condition: "R2", rows, approximate })
}

/// Coefficient magnitudes sorted ascending: `β²_{σ₂(1)} ≤ … ≤ β²_{σ₂(k₀)}`.
fn sorted_sq(beta_support: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = beta_support.iter().map(|b| b * b).collect();
    s.sort_by(f64::total_cmp);
    s
}

fn smallest_sums(beta_support: &[f64], ts: &[u32]) -> Vec<f64> {
    let s = sorted_sq(beta_support);
    ts.iter().map(|&t| s[..(1usize << t).min(s.len())].iter().sum()).collect()
}

/// Orthonormal form of [`check_r2`] with the coefficients of the support.
pub fn check_r2bis(inp: &TwoStepInputs, beta_support: &[f64]) -> Result<BoundReport> {
    let ts = t_range(inp.k, inp.k0);
    let mut rep = check_r2(inp, &smallest_sums(beta_support, &ts), false)?;
    rep.condition = "R2bis";
    Ok(rep)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambdas {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
}

pub fn lambdas(inp: &TwoStepInputs, t: u32) -> Result<Lambdas> {
    let nn = inp.n_res(t)?;
    let d = (1u64 << t) as f64;
    let lt = (t_count(inp.p, inp.k) as f64 / inp.alpha).ln();
    let m_t = (4.0 * lt / nn).exp();
    let m_p = (4.0 * d / nn * (std::f64::consts::E * (inp.p - inp.k) as f64 / d).ln()).exp();
    let l1 = (1.0 + d / nn).sqrt();
    let l2 = (1.0 + 2.0 * d / nn) * 2.0 * m_t * m_p;
    Ok(Lambdas { l1, l2, l3: 2.0 * l1 + l2 })
}

pub fn a_kt(inp: &TwoStepInputs, t: u32) -> Result<f64> {
    let nn = inp.n_res(t)?;
    let d = (1u64 << t) as f64;
    let lam = lambdas(inp, t)?;
    let pk = (inp.p - inp.k) as f64;
    Ok(d * (2.0 + d / nn + lam.l3 * (std::f64::consts::E * pk / d).ln())
        + (1.0 + lam.l2) * ((pk.log2() + 1.0) / inp.alpha).ln())
}

fn r3_pieces(inp: &TwoStepInputs, t: u32, signal: f64) -> Result<f64> {
    let nn = inp.n_res(t)?;
    let (n, d, s2) = (inp.n as f64, (1u64 << t) as f64, inp.sigma * inp.sigma);
    let lg = (2.0 * inp.k0 as f64 / inp.gamma).ln();
    let a = a_kt(inp, t)?;
    Ok(a / nn * (signal + s2 * (2.0 + 3.0 / n * lg))
        + s2 / n * (d * (6.0 + 4.0 * (inp.k0 as f64 / d).ln()) + 3.0 * lg))
}

/// The unknown-variance two-step condition.
pub fn check_r3(inp: &TwoStepInputs, inf_proj: &[f64], mu_sq_norm: f64, approximate: bool) -> Result<BoundReport> {
    inp.validate()?;
    let rows = t_range(inp.k, inp.k0)
        .into_iter()
        .zip(inf_proj)
        .map(|(t, &v)| Ok(BoundRow { k: inp.k, t, left: 0.5 * v, right: r3_pieces(inp, t, mu_sq_norm)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { condition: "R3", rows, approximate })
}

/// Orthonormal form of [`check_r3`]: the signal term uses the coefficients
/// ranked `k+2ᵗ..k₀` in increasing magnitude.
pub fn check_r3bis(inp: &TwoStepInputs, beta_support: &[f64]) -> Result<BoundReport> {
    inp.validate()?;
    let s = sorted_sq(beta_support);
    let ts = t_range(inp.k, inp.k0);
    let lefts = smallest_sums(beta_support, &ts);
    let rows = ts
        .into_iter()
        .zip(lefts)
        .map(|(t, v)| {
            let from = (inp.k + (1usize << t)).max(1) - 1;
            let tail: f64 = s[from.min(s.len())..inp.k0.min(s.len())].iter().sum();
            Ok(BoundRow { k: inp.k, t, left: 0.5 * v, right: r3_pieces(inp, t, tail)? })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundReport { condition: "R3bis", rows, approximate: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifiedR3 {
    /// `2ᵗ[log(p−k)/N + log(k₀)/n]`.
    pub shape: f64,
    pub full_right: f64,
    /// `full_right / shape`, the constant needed at this `(k, t)`.
    pub ratio: f64,
}

/// Rate form of the unknown-variance condition, valid when `2ᵗ ≤ (n−k)/2`
/// and `log(p−k) > 1`.
pub fn simplified_r3_bound(inp: &TwoStepInputs, t: u32, mu_sq_norm: f64) -> Result<SimplifiedR3> {
    let d = 1usize << t;
    let pk = (inp.p - inp.k) as f64;
    if 2 * d > inp.n - inp.k || pk.ln() <= 1.0 {
        return Err(Error::AssumptionViolated(format!(
            "needs 2^t ≤ (n−k)/2 and log(p−k) > 1 (t={t}, k={}, n={}, p={})",
            inp.k, inp.n, inp.p
        )));
    }
    let nn = inp.n_res(t)?;
    let shape = d as f64 * (pk.ln() / nn + (inp.k0 as f64).ln() / inp.n as f64);
    let full_right = r3_pieces(inp, t, mu_sq_norm)?;
    Ok(SimplifiedR3 { shape, full_right, ratio: full_right / shape })
}

fn combinations(m: usize, r: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, r: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == r {
            f(cur);
            return;
        }
        for i in start..=m - (r - cur.len()) {
            cur.push(i);
            rec(i + 1, m, r, cur, f);
            cur.pop();
        }
    }
    rec(0, m, r, &mut Vec::with_capacity(r), f);
}

/// `inf{‖Π_{span(X_I)} μ‖_n² : I ⊂ support, |I| = d}`, and whether it was enumerated.
///
/// Beyond [`MAX_EXACT_SUPPORT`] the subset of the `d` smallest coefficients is used.
pub fn inf_projection(design: &DesignMatrix, support: &[usize], beta: &[f64], d: usize) -> (f64, bool) {
    let mu = design.mul_vec(beta);
    if support.len() <= MAX_EXACT_SUPPORT {
        let mut best = f64::INFINITY;
        combinations(support.len(), d.min(support.len()), &mut |idx| {
            let cols: Vec<usize> = idx.iter().map(|&i| support[i]).collect();
            best = best.min(dense_project_sq_norm(design, &cols, &mu));
        });
        (best, true)
    } else {
        let mut s = support.to_vec();
        s.sort_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()).then(a.cmp(&b)));
        (dense_project_sq_norm(design, &s[..d.min(s.len())], &mu), false)
    }
}
