//! Monte-Carlo calibration of per-step levels `α_{k,t}` and thresholds.
//!
//! Every calibration draw `i` uses its own stream derived from
//! `(seed, procedure, k, i)`, so tables are bit-reproducible and independent
//! of the number of worker threads.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::design::{DesignMatrix, OrthoState};
use crate::dists::{fisher_quantile, fisher_sf, sample_chisq, sorted_squares_desc, FisherParams};
use crate::error::{Error, Result};
use crate::linalg::{argmax_by, dot_n, sq_norm_n};
use crate::plan::{StepPlan, TStep};
use crate::rng::{self, fill_normal};

/// Residual squared norm below which a candidate column counts as dependent.
const GREEDY_DEPENDENCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Procedure {
    /// Exact Fisher thresholds at a common Monte-Carlo level.
    P1,
    /// Bonferroni split `α/|T_k|`.
    P2,
    /// Greedy noise bound `U¹`, known variance.
    P3,
    /// `Z_{D,p−k}/n`, orthonormal family, known variance.
    P4,
    /// Greedy noise bound `Υ`, unknown variance.
    P5,
    /// `(N/D)·Z/(L+K)`, orthonormal family, unknown variance.
    P5Ortho,
}

impl Procedure {
    pub fn tag(self) -> &'static str {
        match self {
            Procedure::P1 => "P1",
            Procedure::P2 => "P2",
            Procedure::P3 => "P3",
            Procedure::P4 => "P4",
            Procedure::P5 => "P5",
            Procedure::P5Ortho => "P5O",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Some(match s {
            "P1" => Procedure::P1,
            "P2" => Procedure::P2,
            "P3" => Procedure::P3,
            "P4" => Procedure::P4,
            "P5" => Procedure::P5,
            "P5O" => Procedure::P5Ortho,
            _ => return None,
        })
    }

    fn label(self) -> u64 {
        rng::label(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedStep {
    pub step: TStep,
    pub alpha_kt: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub k: usize,
    pub procedure: Procedure,
    pub alpha: f64,
    pub steps: Vec<CalibratedStep>,
    pub n_mc: usize,
    pub seed: u64,
}

impl CalibrationTable {
    pub fn levels(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.alpha_kt).collect()
    }

    pub fn thresholds(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.threshold).collect()
    }
}

/// Monte-Carlo draws of a null statistic, one column per tested `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSample {
    pub procedure: Procedure,
    pub k: usize,
    pub steps: Vec<TStep>,
    /// `draws[t_index][i]`.
    pub draws: Vec<Vec<f64>>,
    pub seed: u64,
}

impl NullSample {
    pub fn n_mc(&self) -> usize {
        self.draws.first().map_or(0, |d| d.len())
    }

    fn from_rows(procedure: Procedure, k: usize, steps: Vec<TStep>, rows: Vec<Vec<f64>>, seed: u64) -> Self {
        let mut draws = vec![Vec::with_capacity(rows.len()); steps.len()];
        for row in rows {
            for (ti, v) in row.into_iter().enumerate() {
                draws[ti].push(v);
            }
        }
        NullSample { procedure, k, steps, draws, seed }
    }
}

fn draw_stream(seed: u64, procedure: Procedure, k: usize, i: usize) -> rng::Stream {
    rng::stream(seed, &[procedure.label(), k as u64, i as u64])
}

fn fisher_stat(num: f64, den: f64, s: &TStep) -> f64 {
    (s.n_res as f64 * num) / (s.d as f64 * den)
}

/// Draws of the Fisher statistics of pure noise over `S_{k,t}`.
///
/// In an orthonormal basis adapted to the nested spaces the noise coordinates
/// are i.i.d. standard normal, so the draw needs no design.
pub fn null_sample_p1(plan: &StepPlan, k: usize, n_mc: usize, seed: u64) -> Result<NullSample> {
    let steps = plan.steps(k)?;
    let n = plan.n();
    let free = n - k;
    let rows: Vec<Vec<f64>> = (0..n_mc)
        .into_par_iter()
        .map_init(
            || vec![0.0; free],
            |z, i| {
                let mut r = draw_stream(seed, Procedure::P1, k, i);
                fill_normal(&mut r, z);
                let total: f64 = z.iter().map(|v| v * v).sum();
                let mut cum = 0.0;
                let mut used = 0;
                steps
                    .iter()
                    .map(|s| {
                        while used < s.d {
                            cum += z[used] * z[used];
                            used += 1;
                        }
                        fisher_stat(cum, total - cum, s)
                    })
                    .collect()
            },
        )
        .collect();
    Ok(NullSample::from_rows(Procedure::P1, k, steps, rows, seed))
}

/// Common level: empirical `α`-quantile of `inf_t F̄(F_t)`, capped at `α`.
pub fn table_p1(sample: &NullSample, alpha: f64) -> Result<CalibrationTable> {
    check_alpha(alpha)?;
    let n_mc = sample.n_mc();
    let level = if sample.steps.len() == 1 {
        alpha
    } else {
        let mut inf: Vec<f64> = (0..n_mc)
            .map(|i| {
                sample
                    .steps
                    .iter()
                    .zip(&sample.draws)
                    .map(|(s, d)| fisher_sf(FisherParams::new(s.d, s.n_res), d[i]))
                    .fold(1.0, f64::min)
            })
            .collect();
        inf.sort_unstable_by(f64::total_cmp);
        let idx = ((alpha * n_mc as f64).ceil() as usize).clamp(1, n_mc);
        inf[idx - 1].min(alpha)
    };
    if !(level > 0.0) {
        return Err(Error::InvalidInput("calibrated level is zero; increase n_mc".into()));
    }
    let steps = sample
        .steps
        .iter()
        .map(|s| CalibratedStep {
            step: *s,
            alpha_kt: level,
            threshold: fisher_quantile(FisherParams::new(s.d, s.n_res), level),
        })
        .collect();
    Ok(CalibrationTable { k: sample.k, procedure: Procedure::P1, alpha, steps, n_mc, seed: sample.seed })
}

pub fn calibrate_p1(plan: &StepPlan, k: usize, alpha: f64, n_mc: usize, seed: u64) -> Result<CalibrationTable> {
    table_p1(&null_sample_p1(plan, k, n_mc, seed)?, alpha)
}

/// Bonferroni levels `α/|T_k|` with exact Fisher thresholds.
pub fn calibrate_p2(plan: &StepPlan, k: usize, alpha: f64) -> Result<CalibrationTable> {
    check_alpha(alpha)?;
    let steps = plan.steps(k)?;
    let level = alpha / steps.len() as f64;
    let steps = steps
        .into_iter()
        .map(|s| CalibratedStep {
            step: s,
            alpha_kt: level,
            threshold: fisher_quantile(FisherParams::new(s.d, s.n_res), level),
        })
        .collect();
    Ok(CalibrationTable { k, procedure: Procedure::P2, alpha, steps, n_mc: 0, seed: 0 })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

/// Plug-in calibration shared by P3, P4, P5 and the orthonormal ratio bound.
///
/// With `c_{t,i} = #{j : v_{t,j} ≥ v_{t,i}}` the plug-in survival counts, the
/// common level is `a/n_mc` for the largest `a` such that
/// `#{i : min_t c_{t,i} ≤ a} ≤ ⌊α·n_mc⌋`; the threshold for `t` is the order
/// statistic at `⌈(1−a/n_mc)·n_mc⌉`, and a statistic is rejected when it
/// strictly exceeds it.
pub fn table_from_sample(sample: &NullSample, alpha: f64) -> Result<CalibrationTable> {
    check_alpha(alpha)?;
    let n_mc = sample.n_mc();
    let budget = (alpha * n_mc as f64 + 1e-9).floor() as usize;
    if budget == 0 {
        return Err(Error::InvalidInput(format!("n_mc={n_mc} too small for alpha={alpha}")));
    }
    let sorted: Vec<Vec<f64>> = sample
        .draws
        .iter()
        .map(|d| {
            let mut s = d.clone();
            s.sort_unstable_by(f64::total_cmp);
            s
        })
        .collect();
    let mut counts: Vec<usize> = (0..n_mc)
        .map(|i| {
            sample
                .draws
                .iter()
                .zip(&sorted)
                .map(|(d, s)| n_mc - s.partition_point(|&v| v < d[i]))
                .min()
                .unwrap_or(n_mc)
        })
        .collect();
    counts.sort_unstable();
    let a = if budget >= n_mc { n_mc } else { counts[budget] - 1 };
    if a == 0 {
        return Err(Error::InvalidInput("calibrated level is zero; increase n_mc".into()));
    }
    let level = a as f64 / n_mc as f64;
    let steps = sample
        .steps
        .iter()
        .zip(&sorted)
        .map(|(s, v)| CalibratedStep {
            step: *s,
            alpha_kt: level,
            threshold: v[(n_mc - a).saturating_sub(1).min(n_mc - 1)],
        })
        .collect();
    Ok(CalibrationTable {
        k: sample.k,
        procedure: sample.procedure,
        alpha,
        steps,
        n_mc,
        seed: sample.seed,
    })
}

/// Draws of `Z_{D,p−k}/n` for every tested `D`.
pub fn null_sample_p4(plan: &StepPlan, k: usize, n_mc: usize, seed: u64) -> Result<NullSample> {
    let steps = plan.steps(k)?;
    let n = plan.n() as f64;
    let pool = plan.p() - k;
    let rows = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut r = draw_stream(seed, Procedure::P4, k, i);
            let w = sorted_squares_desc(pool, &mut r);
            cumulative_at(&w, &steps).into_iter().map(|z| z / n).collect()
        })
        .collect();
    Ok(NullSample::from_rows(Procedure::P4, k, steps, rows, seed))
}

pub fn calibrate_p4(plan: &StepPlan, k: usize, alpha: f64, n_mc: usize, seed: u64) -> Result<CalibrationTable> {
    table_from_sample(&null_sample_p4(plan, k, n_mc, seed)?, alpha)
}

fn cumulative_at(w: &[f64], steps: &[TStep]) -> Vec<f64> {
    let mut out = Vec::with_capacity(steps.len());
    let mut cum = 0.0;
    let mut used = 0;
    for s in steps {
        while used < s.d {
            cum += w[used];
            used += 1;
        }
        out.push(cum);
    }
    out
}

/// One draw of `(N/D)·Z_{D,p−k}/(L_{k,D}+K_{n−p})` for each requested `D`.
///
/// `Z` sums the `D` largest of `p` ordered squared normals, `L` the squares at
/// positions `k+D+1..p` of the same ordered draw, and `K` is an independent
/// `χ²_{n−p}`.
pub fn sample_ortho_ratio<R: rand::Rng + ?Sized>(
    k: usize,
    steps: &[TStep],
    p: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if p >= n {
        return Err(Error::RequiresPltN { p, n });
    }
    let w = sorted_squares_desc(p, rng);
    let kk = sample_chisq(n - p, rng);
    let mut suffix = vec![0.0; p + 1];
    for j in (0..p).rev() {
        suffix[j] = suffix[j + 1] + w[j];
    }
    let z = cumulative_at(&w, steps);
    Ok(steps
        .iter()
        .zip(z)
        .map(|(s, z)| {
            let l = suffix[(k + s.d).min(p)];
            (s.n_res as f64 / s.d as f64) * z / (l + kk)
        })
        .collect())
}

pub fn null_sample_p5_ortho(plan: &StepPlan, k: usize, n_mc: usize, seed: u64) -> Result<NullSample> {
    let steps = plan.steps(k)?;
    let (n, p) = (plan.n(), plan.p());
    if p >= n {
        return Err(Error::RequiresPltN { p, n });
    }
    let rows = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut r = draw_stream(seed, Procedure::P5Ortho, k, i);
            sample_ortho_ratio(k, &steps, p, n, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NullSample::from_rows(Procedure::P5Ortho, k, steps, rows, seed))
}

/// The greedy permutation engine behind `σ₁ᵏ`, working on the Gram matrix.
///
/// For a prefix spanning `V_(k)`, each step picks the candidate column whose
/// residual on the current span best explains the residual noise
/// (`argmax ⟨X_i,r⟩²/‖X_i^res‖²`, smallest index on ties).
pub struct GreedyEngine<'a> {
    design: &'a DesignMatrix,
    prefix: Vec<&'a [f64]>,
    w_pre: Vec<f64>,
    g_res: Vec<f64>,
    s0: Vec<f64>,
    blocked: Vec<bool>,
}

/// One greedy run on a fresh noise draw.
#[derive(Debug, Clone)]
pub struct GreedyDraw {
    /// Columns chosen after the prefix, in order.
    pub chosen: Vec<usize>,
    /// `⟨ε′, ẽ_j⟩_n²` for each chosen column's new basis direction.
    pub gains: Vec<f64>,
    /// `‖ε′ − Π_{V_(k)} ε′‖_n²`.
    pub residual0: f64,
}

pub struct GreedyScratch {
    eps: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    taken: Vec<bool>,
    w_new: Vec<f64>,
}

impl<'a> GreedyEngine<'a> {
    /// `prefix_basis` holds the orthonormal basis of `V_(k)` (its first `k`
    /// vectors are used); `blocked` lists the ordered columns already in `V_(k)`.
    pub fn new(design: &'a DesignMatrix, prefix_basis: &'a OrthoState, k: usize, blocked: &[usize]) -> Self {
        let p = design.p();
        let prefix: Vec<&[f64]> = (0..k).map(|m| prefix_basis.basis_vec(m)).collect();
        let mut w_pre = vec![0.0; k * p];
        for (m, e) in prefix.iter().enumerate() {
            for i in 0..p {
                w_pre[m * p + i] = dot_n(design.col(i), e);
            }
        }
        let mut g_res = design.gram_n();
        for m in 0..k {
            let w = &w_pre[m * p..(m + 1) * p];
            for b in 0..p {
                let wb = w[b];
                if wb != 0.0 {
                    let col = &mut g_res[b * p..(b + 1) * p];
                    for a in 0..p {
                        col[a] -= w[a] * wb;
                    }
                }
            }
        }
        let s0 = (0..p).map(|i| g_res[i * p + i]).collect();
        let mut bl = vec![false; p];
        for &j in blocked {
            bl[j] = true;
        }
        GreedyEngine { design, prefix, w_pre, g_res, s0, blocked: bl }
    }

    pub fn scratch(&self, steps: usize) -> GreedyScratch {
        let p = self.design.p();
        GreedyScratch {
            eps: vec![0.0; self.design.n()],
            c: vec![0.0; p],
            s: vec![0.0; p],
            taken: vec![false; p],
            w_new: vec![0.0; steps * p],
        }
    }

    /// Runs up to `steps` greedy steps on a standard-normal noise draw from `rng`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R, steps: usize, scr: &mut GreedyScratch) -> GreedyDraw {
        fill_normal(rng, &mut scr.eps);
        self.run(steps, scr)
    }

    /// Runs the greedy selection for the noise already stored in `scr`.
    fn run(&self, steps: usize, scr: &mut GreedyScratch) -> GreedyDraw {
        let p = self.design.p();
        let eps = &scr.eps;
        let pe: Vec<f64> = self.prefix.iter().map(|e| dot_n(eps, e)).collect();
        let residual0 = sq_norm_n(eps) - pe.iter().map(|v| v * v).sum::<f64>();
        for i in 0..p {
            let mut c = dot_n(self.design.col(i), eps);
            for (m, &pm) in pe.iter().enumerate() {
                c -= self.w_pre[m * p + i] * pm;
            }
            scr.c[i] = c;
        }
        scr.s.copy_from_slice(&self.s0);
        scr.taken.copy_from_slice(&self.blocked);
        if scr.w_new.len() < steps * p {
            scr.w_new.resize(steps * p, 0.0);
        }
        let mut chosen = Vec::with_capacity(steps);
        let mut gains = Vec::with_capacity(steps);
        for step in 0..steps {
            let best = argmax_by(p, |i| {
                if scr.taken[i] || scr.s[i] <= GREEDY_DEPENDENCE {
                    None
                } else {
                    Some(scr.c[i] * scr.c[i] / scr.s[i])
                }
            });
            let Some(b) = best else { break };
            let rs = scr.s[b].sqrt();
            let (done, rest) = scr.w_new.split_at_mut(step * p);
            let w = &mut rest[..p];
            w.copy_from_slice(&self.g_res[b * p..(b + 1) * p]);
            for l in 0..step {
                let prev = &done[l * p..(l + 1) * p];
                let f = prev[b];
                if f != 0.0 {
                    for (wi, pi) in w.iter_mut().zip(prev) {
                        *wi -= f * pi;
                    }
                }
            }
            let inv = 1.0 / rs;
            w.iter_mut().for_each(|v| *v *= inv);
            let gamma = scr.c[b] / rs;
            for i in 0..p {
                scr.c[i] -= gamma * w[i];
                scr.s[i] -= w[i] * w[i];
            }
            scr.taken[b] = true;
            chosen.push(b);
            gains.push(gamma * gamma);
        }
        GreedyDraw { chosen, gains, residual0 }
    }
}

/// The permutation `σ₁ᵏ`: the prefix, then greedy choices on one noise draw,
/// then any columns left (dependent on the chosen span) in index order.
pub fn sigma1_permutation<R: rand::Rng + ?Sized>(
    design: &DesignMatrix,
    prefix: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let st = OrthoState::from_design(design, prefix);
    let k = st.dim();
    let engine = GreedyEngine::new(design, &st, k, prefix);
    let free = design.p() - prefix.len();
    let mut scr = engine.scratch(free);
    let draw = engine.draw(rng, free, &mut scr);
    let mut perm = prefix.to_vec();
    perm.extend_from_slice(&draw.chosen);
    let mut used = vec![false; design.p()];
    for &j in &perm {
        used[j] = true;
    }
    perm.extend((0..design.p()).filter(|&j| !used[j]));
    perm
}

/// Draws of `U¹_{k,t}` (P3) or `Υ_{k,t}` (P5) for the ordered prefix.
///
/// `ordered` is the full ordered family as design indices and `ortho` its
/// Gram–Schmidt state; `V_(k)` is spanned by the first `k` basis vectors and
/// the first `s_k` ordered columns are excluded from the greedy choice.
pub fn null_sample_greedy(
    procedure: Procedure,
    design: &DesignMatrix,
    ordered: &[usize],
    ortho: &OrthoState,
    plan: &StepPlan,
    k: usize,
    n_mc: usize,
    seed: u64,
) -> Result<NullSample> {
    if !matches!(procedure, Procedure::P3 | Procedure::P5) {
        return Err(Error::InvalidInput(format!("{} is not a greedy procedure", procedure.tag())));
    }
    let steps = plan.steps(k)?;
    let need = steps.last().map_or(0, |s| s.d);
    let engine = GreedyEngine::new(design, ortho, k, &ordered[..plan.s(k)]);
    let rows = (0..n_mc)
        .into_par_iter()
        .map_init(
            || engine.scratch(need),
            |scr, i| {
                let mut r = draw_stream(seed, procedure, k, i);
                let draw = engine.draw(&mut r, need, scr);
                if draw.gains.len() < need {
                    return Err(Error::DegenerateStep { k });
                }
                let mut cum = 0.0;
                let mut used = 0;
                Ok(steps
                    .iter()
                    .map(|s| {
                        while used < s.d {
                            cum += draw.gains[used];
                            used += 1;
                        }
                        match procedure {
                            Procedure::P3 => cum,
                            _ => fisher_stat(cum, (draw.residual0 - cum).max(f64::MIN_POSITIVE), s),
                        }
                    })
                    .collect::<Vec<f64>>())
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(NullSample::from_rows(procedure, k, steps, rows, seed))
}

pub fn calibrate_p3(
    design: &DesignMatrix,
    ordered: &[usize],
    ortho: &OrthoState,
    plan: &StepPlan,
    k: usize,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<CalibrationTable> {
    let s = null_sample_greedy(Procedure::P3, design, ordered, ortho, plan, k, n_mc, seed)?;
    table_from_sample(&s, alpha)
}

pub fn calibrate_p5(
    design: &DesignMatrix,
    ordered: &[usize],
    ortho: &OrthoState,
    plan: &StepPlan,
    k: usize,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<CalibrationTable> {
    let s = null_sample_greedy(Procedure::P5, design, ordered, ortho, plan, k, n_mc, seed)?;
    table_from_sample(&s, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct CacheKey {
    procedure: Procedure,
    k: usize,
    n: usize,
    p: usize,
    rank: usize,
    seed: u64,
    n_mc: usize,
}

/// Shared store of design-free null samples (P1, P4 and the orthonormal ratio).
#[derive(Debug, Default)]
pub struct CalibrationCache {
    samples: Mutex<HashMap<CacheKey, Arc<NullSample>>>,
}

impl CalibrationCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.samples.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached sample or computes and stores it.
    pub fn design_free(
        &self,
        procedure: Procedure,
        plan: &StepPlan,
        k: usize,
        n_mc: usize,
        seed: u64,
    ) -> Result<Arc<NullSample>> {
        let key = CacheKey { procedure, k, n: plan.n(), p: plan.p(), rank: plan.rank(), seed, n_mc };
        if let Some(s) = self.samples.lock().expect("cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let sample = Arc::new(match procedure {
            Procedure::P1 => null_sample_p1(plan, k, n_mc, seed)?,
            Procedure::P4 => null_sample_p4(plan, k, n_mc, seed)?,
            Procedure::P5Ortho => null_sample_p5_ortho(plan, k, n_mc, seed)?,
            other => {
                return Err(Error::InvalidInput(format!("{} depends on the design", other.tag())))
            }
        });
        let mut guard = self.samples.lock().expect("cache poisoned");
        Ok(Arc::clone(guard.entry(key).or_insert(sample)))
    }

    pub fn table(
        &self,
        procedure: Procedure,
        plan: &StepPlan,
        k: usize,
        alpha: f64,
        n_mc: usize,
        seed: u64,
    ) -> Result<CalibrationTable> {
        match procedure {
            Procedure::P2 => calibrate_p2(plan, k, alpha),
            Procedure::P1 => table_p1(&*self.design_free(procedure, plan, k, n_mc, seed)?, alpha),
            _ => table_from_sample(&*self.design_free(procedure, plan, k, n_mc, seed)?, alpha),
        }
    }
}

pub const TABLE_CSV_VERSION: u32 = 1;

/// Writes tables as CSV with a `# varsel calibration v1` first line.
pub fn write_tables_csv<W: Write>(tables: &[CalibrationTable], mut out: W) -> Result<()> {
    writeln!(out, "# varsel calibration v{TABLE_CSV_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "alpha_kt", "threshold", "n_mc", "seed", "tag"])?;
    for tab in tables {
        for s in &tab.steps {
            w.write_record([
                tab.k.to_string(),
                s.step.t.to_string(),
                format!("{:e}", s.alpha_kt),
                format!("{:e}", s.threshold),
                tab.n_mc.to_string(),
                tab.seed.to_string(),
                tab.procedure.tag().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `(k, t, alpha_kt, threshold, n_mc, seed, tag)` rows written by [`write_tables_csv`].
pub fn read_tables_csv<P: AsRef<Path>>(path: P) -> Result<Vec<(usize, u32, f64, f64, usize, u64, Procedure)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let head = lines.next().unwrap_or_default();
    if head.trim() != format!("# varsel calibration v{TABLE_CSV_VERSION}") {
        return Err(Error::InvalidInput(format!("unsupported calibration header {head:?}")));
    }
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::InvalidInput(format!("malformed calibration row {rec:?}"));
        rows.push((
            rec[0].parse().map_err(|_| bad())?,
            rec[1].parse().map_err(|_| bad())?,
            rec[2].parse().map_err(|_| bad())?,
            rec[3].parse().map_err(|_| bad())?,
            rec[4].parse().map_err(|_| bad())?,
            rec[5].parse().map_err(|_| bad())?,
            Procedure::from_tag(&rec[6]).ok_or_else(bad)?,
        ));
    }
    Ok(rows)
}
