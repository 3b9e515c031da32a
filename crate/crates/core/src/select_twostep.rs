//! Second step of the two-step procedures: sequential tests along a
//! data-driven order, calibrated by the greedy or orthonormal null bounds.

use std::collections::HashMap;

use crate::calibrate::{null_sample_greedy, table_from_sample, CalibrationCache, NullSample, Procedure};
use crate::design::{DesignMatrix, OrthoState};
use crate::error::{Error, Result};
use crate::ordering::VariableOrder;
use crate::plan::{PlanMode, StepPlan};
use crate::select_ordered::{run_sequence, selected, Projections, Statistic, TraceRow};

pub const ORTHONORMAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TwoStepMode {
    /// Known variance, greedy bound `U¹`.
    A,
    /// Known variance, orthonormal bound `Z_{D,p−k}/n`.
    AOrtho,
    /// Unknown variance, greedy bound `Υ`.
    B,
    /// Unknown variance, orthonormal ratio bound.
    BOrtho,
}

impl TwoStepMode {
    pub fn tag(self) -> &'static str {
        match self {
            TwoStepMode::A => "A",
            TwoStepMode::AOrtho => "A_ortho",
            TwoStepMode::B => "B",
            TwoStepMode::BOrtho => "B_ortho",
        }
    }

    pub fn procedure(self) -> Procedure {
        match self {
            TwoStepMode::A => Procedure::P3,
            TwoStepMode::AOrtho => Procedure::P4,
            TwoStepMode::B => Procedure::P5,
            TwoStepMode::BOrtho => Procedure::P5Ortho,
        }
    }

    fn is_ortho(self) -> bool {
        matches!(self, TwoStepMode::AOrtho | TwoStepMode::BOrtho)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepResult {
    pub k_ring: usize,
    pub j_hat: Vec<usize>,
    pub trace: Vec<TraceRow>,
    pub mode: TwoStepMode,
    pub highdim: bool,
    pub exhausted: bool,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoStepConfig {
    pub mode: TwoStepMode,
    /// Noise standard deviation, used by the known-variance modes.
    pub sigma: Option<f64>,
    pub n_mc: usize,
    pub seed: u64,
}

/// Step plan for the ordered family: low-dimensional when the ordered columns
/// are independent and `p < n`, otherwise built from their rank profile.
pub fn highdim_adapt(design: &DesignMatrix, ordered_ortho: &OrthoState) -> StepPlan {
    StepPlan::for_family(design.n(), design.p(), &ordered_ortho.rank_indices())
}

/// Runs the two-step selection at several levels, sharing the null samples.
pub fn run_twostep_multi(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    cfg: &TwoStepConfig,
    alphas: &[f64],
    cache: &CalibrationCache,
) -> Result<Vec<TwoStepResult>> {
    if y.len() != design.n() {
        return Err(Error::Dimension(format!("y has {} rows, design has {}", y.len(), design.n())));
    }
    if order.order.len() != design.p() {
        return Err(Error::Dimension("order length differs from p".into()));
    }
    let stat = match cfg.mode {
        TwoStepMode::A | TwoStepMode::AOrtho => match cfg.sigma {
            Some(s) if s > 0.0 => Statistic::KnownSigma(s),
            _ => return Err(Error::InvalidInput("known-variance mode needs sigma > 0".into())),
        },
        _ => Statistic::Fisher,
    };
    if cfg.mode.is_ortho() && !design.is_orthonormal_tail(ORTHONORMAL_TOL) {
        return Err(Error::NotOrthonormal);
    }
    if cfg.mode == TwoStepMode::BOrtho && design.p() >= design.n() {
        return Err(Error::RequiresPltN { p: design.p(), n: design.n() });
    }
    let ortho = OrthoState::from_design(design, &order.order);
    let plan = highdim_adapt(design, &ortho);
    let proj = Projections::new(&ortho, y);
    let procedure = cfg.mode.procedure();
    let mut samples: HashMap<usize, NullSample> = HashMap::new();
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let seq = run_sequence(&proj, &plan, stat, |k| {
            if cfg.mode.is_ortho() {
                return cache.table(procedure, &plan, k, alpha, cfg.n_mc, cfg.seed);
            }
            if !samples.contains_key(&k) {
                let s = null_sample_greedy(procedure, design, &order.order, &ortho, &plan, k, cfg.n_mc, cfg.seed)?;
                samples.insert(k, s);
            }
            table_from_sample(&samples[&k], alpha)
        })?;
        let j_hat = selected(&order.order, &plan, &seq);
        out.push(TwoStepResult {
            k_ring: if seq.exhausted { design.p() } else { seq.k_stop },
            j_hat,
            trace: seq.trace,
            mode: cfg.mode,
            highdim: plan.mode() == PlanMode::HighDim,
            exhausted: seq.exhausted,
            alpha,
        });
    }
    Ok(out)
}

pub fn run_twostep(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    cfg: &TwoStepConfig,
    alpha: f64,
    cache: &CalibrationCache,
) -> Result<TwoStepResult> {
    Ok(run_twostep_multi(y, design, order, cfg, &[alpha], cache)?.remove(0))
}

pub fn run_proc_a(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    sigma: f64,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TwoStepResult> {
    let cfg = TwoStepConfig { mode: TwoStepMode::A, sigma: Some(sigma), n_mc, seed };
    run_twostep(y, design, order, &cfg, alpha, &CalibrationCache::new())
}

pub fn run_proc_a_ortho(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    sigma: f64,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TwoStepResult> {
    let cfg = TwoStepConfig { mode: TwoStepMode::AOrtho, sigma: Some(sigma), n_mc, seed };
    run_twostep(y, design, order, &cfg, alpha, &CalibrationCache::new())
}

pub fn run_proc_b(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TwoStepResult> {
    let cfg = TwoStepConfig { mode: TwoStepMode::B, sigma: None, n_mc, seed };
    run_twostep(y, design, order, &cfg, alpha, &CalibrationCache::new())
}

pub fn run_proc_b_ortho(
    y: &[f64],
    design: &DesignMatrix,
    order: &VariableOrder,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<TwoStepResult> {
    let cfg = TwoStepConfig { mode: TwoStepMode::BOrtho, sigma: None, n_mc, seed };
    run_twostep(y, design, order, &cfg, alpha, &CalibrationCache::new())
}
