//! One-call selection by method tag.

use crate::baselines::{select_bolasso_cv, select_fdr, select_lasso_cv};
use crate::calibrate::{CalibrationCache, Procedure};
use crate::design::DesignMatrix;
use crate::ordering::{order_by_bolasso, order_by_pvalues, BolassoConfig, PvalMode, VariableOrder};
use crate::plan::PlanMode;
use crate::select_ordered::{run_ordered, OrderedConfig, TraceRow};
use crate::select_twostep::{run_twostep, TwoStepConfig, TwoStepMode};
use crate::{Error, Result};

/// Tags accepted by [`select_by_tag`].
pub const METHOD_TAGS: &[&str] = &[
    "proc_ordered",
    "proc_ordered_p2",
    "procpval",
    "proc_b",
    "procbol",
    "proc_b_ortho",
    "proc_a",
    "proc_a_ortho",
    "fdr",
    "fdr2",
    "lasso",
    "bolasso",
];

#[derive(Debug, Clone)]
pub struct SelectOptions {
    pub method: String,
    /// Test level, or the FDR level `q` for the BH selectors.
    pub alpha: f64,
    /// Known noise level; required by the known-variance two-step modes.
    pub sigma: Option<f64>,
    pub n_mc: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for SelectOptions {
    fn default() -> Self {
        SelectOptions { method: "procpval".into(), alpha: 0.05, sigma: None, n_mc: 1000, n_boot: 100, seed: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct Selection {
    /// Selected columns, ascending, intercept included.
    pub j_hat: Vec<usize>,
    /// Per-step decisions; empty for the baseline selectors.
    pub trace: Vec<TraceRow>,
}

pub fn plan_mode(design: &DesignMatrix) -> PlanMode {
    if design.p() < design.n() {
        PlanMode::LowDim
    } else {
        PlanMode::HighDim
    }
}

/// Full-model p-values when `p < n`, marginal ones otherwise.
pub fn pvalue_order(design: &DesignMatrix, y: &[f64]) -> Result<VariableOrder> {
    let mode = if design.p() < design.n() { PvalMode::Full } else { PvalMode::Marginal };
    order_by_pvalues(design, y, mode)
}

pub fn select_by_tag(design: &DesignMatrix, y: &[f64], o: &SelectOptions) -> Result<Selection> {
    if y.len() != design.n() {
        return Err(Error::Dimension(format!("response has {} rows, design has {}", y.len(), design.n())));
    }
    let cache = CalibrationCache::new();
    let ordered = |procedure| {
        let cfg = OrderedConfig { alpha: o.alpha, procedure, mode: plan_mode(design), n_mc: o.n_mc, seed: o.seed };
        run_ordered(y, design, &cfg, &cache).map(|r| Selection { j_hat: r.j_hat, trace: r.trace })
    };
    let two_step = |order: VariableOrder, mode| {
        let cfg = TwoStepConfig { mode, sigma: o.sigma, n_mc: o.n_mc, seed: o.seed };
        run_twostep(y, design, &order, &cfg, o.alpha, &cache).map(|r| Selection { j_hat: r.j_hat, trace: r.trace })
    };
    let plain = |j_hat: Vec<usize>| Ok(Selection { j_hat, trace: Vec::new() });
    let bolasso =
        || order_by_bolasso(design, y, &BolassoConfig { n_boot: o.n_boot, seed: o.seed, ..Default::default() });
    match o.method.as_str() {
        "proc_ordered" => ordered(Procedure::P1),
        "proc_ordered_p2" => ordered(Procedure::P2),
        "procpval" | "proc_b" => two_step(pvalue_order(design, y)?, TwoStepMode::B),
        "procbol" => two_step(bolasso()?, TwoStepMode::B),
        "proc_b_ortho" => two_step(pvalue_order(design, y)?, TwoStepMode::BOrtho),
        "proc_a" => two_step(pvalue_order(design, y)?, TwoStepMode::A),
        "proc_a_ortho" => two_step(pvalue_order(design, y)?, TwoStepMode::AOrtho),
        "fdr" => plain(select_fdr(design, y, o.alpha, false)?.j_hat),
        "fdr2" => plain(select_fdr(design, y, o.alpha, true)?.j_hat),
        "lasso" => plain(select_lasso_cv(design, y, None, o.seed)?.j_hat),
        "bolasso" => plain(select_bolasso_cv(design, y, o.n_boot, None, o.seed)?.j_hat),
        other => Err(Error::Config(format!("unknown method {other:?}; expected one of {}", METHOD_TAGS.join(", ")))),
    }
}
