//! Sequential sup-Fisher tests of `H_k : μ ∈ V_k` along a fixed column order.

use std::io::Write;

use crate::calibrate::{CalibrationCache, CalibrationTable, Procedure};
use crate::design::{DesignMatrix, OrthoState};
use crate::error::{Error, Result};
use crate::plan::{PlanMode, StepPlan};

/// Residual norms below this are treated as `Y ∈ V_{k,t}`.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub t: u32,
    pub d: usize,
    pub n_res: usize,
    pub stat: f64,
    pub threshold: f64,
    pub alpha_kt: f64,
}

impl TraceRow {
    pub fn excess(&self) -> f64 {
        self.stat - self.threshold
    }

    pub fn rejects(&self) -> bool {
        self.stat > self.threshold
    }
}

/// Writes `k,t,D,N,stat,threshold,decision` rows.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "D", "N", "stat", "threshold", "decision"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.t.to_string(),
            r.d.to_string(),
            r.n_res.to_string(),
            format!("{:e}", r.stat),
            format!("{:e}", r.threshold),
            if r.rejects() { "reject" } else { "accept" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Which statistic is compared to the calibrated thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    /// `N‖Π_S Y‖²/(D‖Y − Π_{V_{k,t}} Y‖²)`.
    Fisher,
    /// `‖Π_S Y‖²/σ²`.
    KnownSigma(f64),
}

/// Coordinates of `Y` in an ordered orthonormal basis with its residual profile.
#[derive(Debug, Clone)]
pub struct Projections {
    pub coef: Vec<f64>,
    /// `res[m] = ‖Y − Π_{span(ẽ_1..ẽ_m)} Y‖_n²`.
    pub res: Vec<f64>,
}

impl Projections {
    pub fn new(ortho: &OrthoState, y: &[f64]) -> Self {
        let (coef, res) = ortho.residual_profile(y);
        Projections { coef, res }
    }

    pub fn range_sq(&self, range: std::ops::Range<usize>) -> f64 {
        self.coef[range].iter().map(|c| c * c).sum()
    }
}

/// Evaluates the step-`k` statistics against `table`; returns the sup excess and the rows.
pub fn t_statistic(
    proj: &Projections,
    k: usize,
    table: &CalibrationTable,
    stat: Statistic,
) -> Result<(f64, Vec<TraceRow>)> {
    let mut rows = Vec::with_capacity(table.steps.len());
    let mut sup = f64::NEG_INFINITY;
    for cs in &table.steps {
        let s = cs.step;
        let num = proj.range_sq(k..k + s.d);
        let value = match stat {
            Statistic::Fisher => {
                let den = proj.res[k + s.d];
                if den < RESIDUAL_FLOOR {
                    return Err(Error::DegenerateResidual { k, t: s.t as usize });
                }
                s.n_res as f64 * num / (s.d as f64 * den)
            }
            Statistic::KnownSigma(sigma) => num / (sigma * sigma),
        };
        let row = TraceRow {
            k,
            t: s.t,
            d: s.d,
            n_res: s.n_res,
            stat: value,
            threshold: cs.threshold,
            alpha_kt: cs.alpha_kt,
        };
        sup = sup.max(row.excess());
        rows.push(row);
    }
    Ok((sup, rows))
}

/// Outcome of a sequential run: the first accepted `k`, or `plan.k_end()` when exhausted.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub k_stop: usize,
    pub trace: Vec<TraceRow>,
    pub exhausted: bool,
}

/// Tests `k = 1, 2, …` until the sup excess is nonpositive.
pub fn run_sequence<F>(proj: &Projections, plan: &StepPlan, stat: Statistic, mut table_for: F) -> Result<Sequence>
where
    F: FnMut(usize) -> Result<CalibrationTable>,
{
    let mut trace = Vec::new();
    for k in plan.ks() {
        let table = table_for(k)?;
        let (sup, rows) = t_statistic(proj, k, &table, stat)?;
        trace.extend(rows);
        if sup <= 0.0 {
            return Ok(Sequence { k_stop: k, trace, exhausted: false });
        }
    }
    Ok(Sequence { k_stop: plan.k_end().max(1), trace, exhausted: true })
}

/// Selected columns for stopping index `k` among `ordered`.
pub fn selected(ordered: &[usize], plan: &StepPlan, seq: &Sequence) -> Vec<usize> {
    if seq.exhausted {
        let mut all = ordered.to_vec();
        all.sort_unstable();
        all
    } else {
        ordered[..plan.s(seq.k_stop)].to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedResult {
    pub k_hat: usize,
    pub j_hat: Vec<usize>,
    pub trace: Vec<TraceRow>,
    pub exhausted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderedConfig {
    pub alpha: f64,
    /// `P1` or `P2`.
    pub procedure: Procedure,
    pub mode: PlanMode,
    pub n_mc: usize,
    pub seed: u64,
}

/// Builds the plan for the natural column order in the requested mode.
pub fn natural_plan(design: &DesignMatrix, ortho: &OrthoState, mode: PlanMode) -> Result<StepPlan> {
    let (n, p) = (design.n(), design.p());
    match mode {
        PlanMode::LowDim => {
            if ortho.dim() < p {
                return Err(Error::RankDeficient);
            }
            Ok(StepPlan::lowdim(n, p))
        }
        PlanMode::HighDim => Ok(StepPlan::highdim(n, p, &ortho.rank_indices())),
    }
}

pub fn run_ordered(
    y: &[f64],
    design: &DesignMatrix,
    cfg: &OrderedConfig,
    cache: &CalibrationCache,
) -> Result<OrderedResult> {
    if y.len() != design.n() {
        return Err(Error::Dimension(format!("y has {} rows, design has {}", y.len(), design.n())));
    }
    if !matches!(cfg.procedure, Procedure::P1 | Procedure::P2) {
        return Err(Error::InvalidInput(format!("ordered selection uses P1 or P2, not {}", cfg.procedure.tag())));
    }
    let ortho = OrthoState::from_design_natural(design);
    let plan = natural_plan(design, &ortho, cfg.mode)?;
    let proj = Projections::new(&ortho, y);
    let seq = run_sequence(&proj, &plan, Statistic::Fisher, |k| {
        cache.table(cfg.procedure, &plan, k, cfg.alpha, cfg.n_mc, cfg.seed)
    })?;
    let order: Vec<usize> = (0..design.p()).collect();
    let j_hat = selected(&order, &plan, &seq);
    let k_hat = if seq.exhausted { design.p() } else { seq.k_stop };
    Ok(OrderedResult { k_hat, j_hat, trace: seq.trace, exhausted: seq.exhausted })
}
