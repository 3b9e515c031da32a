//! Data-driven orders of the variables, intercept first.

use std::cmp::Ordering;
use std::io::Write;

use crate::design::DesignMatrix;
use crate::error::{Error, Result};
use crate::lasso::{lambda_grid, Bootstrap, GramProblem, LassoFit};
use crate::ols::{full_model_tests, marginal_tests, TTest};

pub const DEFAULT_MAX_ORDERED: usize = 60;
pub const DEFAULT_PENALTY_TOL: f64 = 1e-3;
pub const MAX_RESTARTS: usize = 3;
const TIE_TOL: f64 = 1e-9;
const FALLBACK_GRID: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderMethod {
    PvalFull,
    PvalMarginal,
    Bolasso,
}

impl OrderMethod {
    pub fn tag(self) -> &'static str {
        match self {
            OrderMethod::PvalFull => "pval_full",
            OrderMethod::PvalMarginal => "pval_marginal",
            OrderMethod::Bolasso => "bolasso",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableOrder {
    /// Design indices, `order[0] = 0`.
    pub order: Vec<usize>,
    pub method: OrderMethod,
    /// Score of `order[r]`: its p-value, or the penalty at which it reached frequency 1.
    pub aux: Vec<f64>,
    /// Number of variables placed by the method itself, the rest by marginal p-values.
    pub ranked: usize,
    pub restarts: usize,
    /// The dichotomy was abandoned for a grid scan.
    pub fallback: bool,
}

impl VariableOrder {
    /// Natural order, as if the columns were given already sorted.
    pub fn identity(p: usize) -> Self {
        VariableOrder {
            order: (0..p).collect(),
            method: OrderMethod::PvalFull,
            aux: vec![0.0; p],
            ranked: p,
            restarts: 0,
            fallback: false,
        }
    }

    /// Whether the first `k0` ordered variables are exactly `support`.
    pub fn prefix_matches(&self, support: &[usize]) -> bool {
        let mut head = self.order[..support.len().min(self.order.len())].to_vec();
        let mut s = support.to_vec();
        head.sort_unstable();
        s.sort_unstable();
        head == s
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "variable", "score"])?;
        for (r, (&v, s)) in self.order.iter().zip(&self.aux).enumerate() {
            w.write_record([(r + 1).to_string(), v.to_string(), format!("{s:e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn by_tests(tests: &[TTest]) -> Vec<usize> {
    let mut rest: Vec<usize> = (1..tests.len()).collect();
    rest.sort_by(|&a, &b| {
        tests[a]
            .p_value
            .total_cmp(&tests[b].p_value)
            .then_with(|| tests[b].t_sq.partial_cmp(&tests[a].t_sq).unwrap_or(Ordering::Equal))
            .then(a.cmp(&b))
    });
    let mut order = vec![0];
    order.extend(rest);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvalMode {
    Full,
    Marginal,
}

/// Orders by increasing p-value of the coefficient tests.
pub fn order_by_pvalues(design: &DesignMatrix, y: &[f64], mode: PvalMode) -> Result<VariableOrder> {
    let (tests, method) = match mode {
        PvalMode::Full => (full_model_tests(design, y)?, OrderMethod::PvalFull),
        PvalMode::Marginal => (marginal_tests(design, y), OrderMethod::PvalMarginal),
    };
    let order = by_tests(&tests);
    let aux = order.iter().map(|&j| tests[j].p_value).collect();
    let p = design.p();
    Ok(VariableOrder { order, method, aux, ranked: p, restarts: 0, fallback: false })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BolassoConfig {
    pub n_boot: usize,
    pub max_ordered: usize,
    pub penalty_tol: f64,
    pub seed: u64,
}

impl Default for BolassoConfig {
    fn default() -> Self {
        BolassoConfig { n_boot: 100, max_ordered: DEFAULT_MAX_ORDERED, penalty_tol: DEFAULT_PENALTY_TOL, seed: 0 }
    }
}

struct Level {
    lambda: f64,
    fits: Vec<LassoFit>,
    full: Vec<bool>,
}

struct Dichotomy<'a> {
    boot: &'a Bootstrap,
    /// Ranked in any segment, plus the intercept.
    ranked: Vec<bool>,
    /// Ranked in the current segment; only these must keep frequency 1.
    segment: Vec<bool>,
}

enum Outcome {
    Done,
    /// A variable of the current segment lost frequency 1 below this penalty.
    Violated { at: f64 },
}

impl Dichotomy<'_> {
    fn level(&self, lambda: f64, warm: &Level) -> Level {
        let fits = self.boot.fit_all(lambda, Some(&warm.fits));
        let full = full_frequency(&fits);
        Level { lambda, fits, full }
    }

    fn violated(&self, lvl: &Level) -> bool {
        self.segment.iter().zip(&lvl.full).any(|(&r, &f)| r && !f)
    }

    fn entrants(&self, lvl: &Level) -> Vec<usize> {
        (0..lvl.full.len()).filter(|&j| lvl.full[j] && !self.ranked[j]).collect()
    }

    fn rank(&mut self, lvl: &Level, cap: usize, out: &mut Vec<(usize, f64)>) {
        for j in self.entrants(lvl) {
            if out.len() >= cap {
                break;
            }
            self.ranked[j] = true;
            self.segment[j] = true;
            out.push((j, lvl.lambda));
        }
    }

    /// Shrinks `(hi, lo]` around the first entry, down to relative width `tol`.
    fn bisect(&self, mut hi: Level, mut lo: Level, tol: f64, until_single: bool) -> Option<(Level, Level)> {
        while hi.lambda / lo.lambda > 1.0 + tol {
            if until_single && self.entrants(&lo).len() <= 1 {
                break;
            }
            let mid = self.level((hi.lambda * lo.lambda).sqrt(), &hi);
            if self.violated(&mid) {
                return None;
            }
            if self.entrants(&mid).is_empty() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some((hi, lo))
    }

    /// Descends from `start` until `cap` variables are ranked or `floor` is reached.
    fn run(&mut self, start: f64, floor: f64, cap: usize, tol: f64, out: &mut Vec<(usize, f64)>) -> Outcome {
        let fits = self.boot.fit_all(start, None);
        let mut hi = Level { lambda: start, full: full_frequency(&fits), fits };
        self.rank(&hi, cap, out);
        while out.len() < cap && hi.lambda > floor {
            let at = hi.lambda;
            let lo = self.level((hi.lambda / 2.0).max(floor), &hi);
            if self.violated(&lo) {
                return Outcome::Violated { at };
            }
            if self.entrants(&lo).is_empty() {
                hi = lo;
                continue;
            }
            let Some((h, l)) = self.bisect(hi, lo, tol, false) else { return Outcome::Violated { at } };
            let Some((_, l)) = self.bisect(h, l, TIE_TOL, true) else { return Outcome::Violated { at } };
            self.rank(&l, cap, out);
            hi = l;
        }
        Outcome::Done
    }
}

fn full_frequency(fits: &[LassoFit]) -> Vec<bool> {
    let p = fits.first().map_or(0, |f| f.coefficients.len());
    (0..p).map(|j| fits.iter().all(|f| f.is_active(j))).collect()
}

/// First-reach ranks on a descending log grid from `start`, ignoring later drops.
fn grid_scan(boot: &Bootstrap, start: f64, floor: f64, cap: usize, ranked: &mut [bool], out: &mut Vec<(usize, f64)>) {
    let grid = lambda_grid(start, FALLBACK_GRID, (floor / start).min(1.0));
    let mut warm: Option<Vec<LassoFit>> = None;
    for &l in &grid {
        if out.len() >= cap {
            break;
        }
        let fits = boot.fit_all(l, warm.as_deref());
        for (j, f) in full_frequency(&fits).into_iter().enumerate() {
            if f && !ranked[j] && out.len() < cap {
                ranked[j] = true;
                out.push((j, l));
            }
        }
        warm = Some(fits);
    }
}

/// Ranks variables by the penalty at which their bootstrap Lasso selection
/// frequency first reaches 1 as the penalty decreases.
///
/// When a ranked variable loses frequency 1 further down, the ranks found so
/// far are kept and the descent resumes from the last consistent penalty on
/// fresh bootstrap draws; after [`MAX_RESTARTS`] such restarts the remainder
/// is ranked by a grid scan.
pub fn order_by_bolasso(design: &DesignMatrix, y: &[f64], cfg: &BolassoConfig) -> Result<VariableOrder> {
    if cfg.n_boot == 0 {
        return Err(Error::InvalidInput("n_boot must be at least 1".into()));
    }
    let p = design.p();
    let lmax = GramProblem::from_design(design, y).lambda_max() * (1.0 + 1e-9);
    let floor = lmax * cfg.penalty_tol;
    let cap = cfg.max_ordered.min(p - 1);
    let mut restarts = 0;
    let mut fallback = false;
    let mut ranked_set = vec![false; p];
    ranked_set[0] = true;
    let mut ranked = Vec::new();
    let mut start = lmax;
    while lmax > 0.0 {
        let seed = crate::rng::derive_seed(cfg.seed, &[restarts as u64]);
        let boot = Bootstrap::new(design, y, cfg.n_boot, seed);
        let mut dich = Dichotomy { boot: &boot, ranked: ranked_set, segment: vec![false; p] };
        let outcome = dich.run(start, floor, cap, cfg.penalty_tol, &mut ranked);
        ranked_set = dich.ranked;
        match outcome {
            Outcome::Done => break,
            Outcome::Violated { at } if restarts < MAX_RESTARTS => {
                restarts += 1;
                start = at;
            }
            Outcome::Violated { at } => {
                fallback = true;
                grid_scan(&boot, at, floor, cap, &mut ranked_set, &mut ranked);
                break;
            }
        }
    }
    let marginal = marginal_tests(design, y);
    let mut order = vec![0];
    let mut aux = vec![lmax];
    for &(j, l) in &ranked {
        order.push(j);
        aux.push(l);
    }
    let n_ranked = order.len();
    for j in by_tests(&marginal) {
        if !ranked_set[j] {
            order.push(j);
            aux.push(marginal[j].p_value);
        }
    }
    Ok(VariableOrder { order, method: OrderMethod::Bolasso, aux, ranked: n_ranked, restarts, fallback })
}
