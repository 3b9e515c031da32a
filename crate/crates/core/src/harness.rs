//! Simulation scenarios: data generation, method runs, metrics and reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{select_bolasso_cv, select_fdr, select_lasso_cv};
use crate::calibrate::{calibrate_p2, CalibrationCache, Procedure};
use crate::design::{DesignMatrix, Model, OrthoState};
use crate::error::{Error, Result};
use crate::ols::refit;
use crate::ordering::{order_by_bolasso, order_by_pvalues, BolassoConfig, PvalMode, VariableOrder};
use crate::plan::{PlanMode, StepPlan};
use crate::rng;
use crate::select_ordered::{run_ordered, OrderedConfig, Projections};
use crate::select_twostep::{run_twostep_multi, TwoStepConfig, TwoStepMode};
use crate::theory::{self, BoundReport, RkTerm, TwoStepInputs};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaValue {
    SqrtN,
    Fixed(f64),
}

/// Column norm the coefficient value refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BetaScale {
    /// Value multiplies a column with `‖X_j‖_n = 1`.
    NNorm,
    /// Value multiplies a unit-Euclidean column, so the stored coefficient is value/√n.
    Euclidean,
}

impl BetaValue {
    pub fn value(self, n: usize) -> f64 {
        match self {
            BetaValue::SqrtN => (n as f64).sqrt(),
            BetaValue::Fixed(v) => v,
        }
    }

    /// Coefficient on the unit-`‖·‖_n` columns of the generated design.
    pub fn on_n_norm(self, n: usize, scale: BetaScale) -> f64 {
        match scale {
            BetaScale::NNorm => self.value(n),
            BetaScale::Euclidean => self.value(n) / (n as f64).sqrt(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "sqrt_n" | "sqrt(n)" | "sqrtn" => Ok(BetaValue::SqrtN),
            v => v.parse().map(BetaValue::Fixed).map_err(|_| Error::Config(format!("bad beta_value {v:?}"))),
        }
    }

    fn label(self) -> String {
        match self {
            BetaValue::SqrtN => "sqrt_n".into(),
            BetaValue::Fixed(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignFamily {
    GaussianNormalized,
    Orthonormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    ProcOrdered,
    ProcPval,
    ProcBol,
    Fdr,
    Fdr2,
    Lasso,
    Bolasso,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::ProcOrdered,
        Method::ProcPval,
        Method::ProcBol,
        Method::Fdr,
        Method::Fdr2,
        Method::Lasso,
        Method::Bolasso,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::ProcOrdered => "proc_ordered",
            Method::ProcPval => "procpval",
            Method::ProcBol => "procbol",
            Method::Fdr => "fdr",
            Method::Fdr2 => "fdr2",
            Method::Lasso => "lasso",
            Method::Bolasso => "bolasso",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.tag() == s)
    }

    fn level_name(self) -> Option<&'static str> {
        match self {
            Method::ProcOrdered | Method::ProcPval | Method::ProcBol => Some("alpha"),
            Method::Fdr | Method::Fdr2 => Some("q"),
            Method::Lasso | Method::Bolasso => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub name: String,
    pub n: usize,
    pub p: usize,
    pub k0_nonintercept: usize,
    pub beta_value: BetaValue,
    pub beta_scale: BetaScale,
    pub design_family: DesignFamily,
    pub methods: Vec<Method>,
    pub alpha_levels: Vec<f64>,
    pub q_levels: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
    pub intercept_in_truth: bool,
    pub mse_as_printed: bool,
    pub sigma: f64,
    pub n_mc: usize,
    pub n_boot: usize,
    pub max_ordered: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            name: "scenario".into(),
            n: 100,
            p: 80,
            k0_nonintercept: 10,
            beta_value: BetaValue::SqrtN,
            beta_scale: BetaScale::NNorm,
            design_family: DesignFamily::GaussianNormalized,
            methods: Method::ALL.to_vec(),
            alpha_levels: vec![0.1, 0.05],
            q_levels: vec![0.1, 0.05],
            replications: 500,
            seed: 1,
            intercept_in_truth: true,
            mse_as_printed: false,
            sigma: 1.0,
            n_mc: 1000,
            n_boot: 100,
            max_ordered: crate::ordering::DEFAULT_MAX_ORDERED,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split([',', ';', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {s:?}"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl SimConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "name" => self.name = v.to_string(),
            "n" => self.n = parse_one(key, v)?,
            "p" => self.p = parse_one(key, v)?,
            "k0_nonintercept" | "k0" => self.k0_nonintercept = parse_one(key, v)?,
            "beta_value" | "beta" => self.beta_value = BetaValue::parse(v)?,
            "beta_scale" => {
                self.beta_scale = match v {
                    "n_norm" => BetaScale::NNorm,
                    "euclidean" => BetaScale::Euclidean,
                    other => return Err(Error::Config(format!("unknown beta_scale {other:?}"))),
                }
            }
            "design_family" | "design" => {
                self.design_family = match v {
                    "gaussian_normalized" | "gaussian" => DesignFamily::GaussianNormalized,
                    "orthonormalized" | "orthonormal" => DesignFamily::Orthonormalized,
                    other => return Err(Error::Config(format!("unknown design_family {other:?}"))),
                }
            }
            "methods" => {
                self.methods = v
                    .split([',', ';', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| Method::from_tag(s).ok_or_else(|| Error::Config(format!("unknown method {s:?}"))))
                    .collect::<Result<_>>()?
            }
            "alpha_levels" | "alpha" => self.alpha_levels = parse_list(key, v)?,
            "q_levels" | "q" => self.q_levels = parse_list(key, v)?,
            "replications" => self.replications = parse_one(key, v)?,
            "seed" => self.seed = parse_one(key, v)?,
            "intercept_in_truth" => self.intercept_in_truth = parse_one(key, v)?,
            "mse_as_printed" => self.mse_as_printed = parse_one(key, v)?,
            "sigma" => self.sigma = parse_one(key, v)?,
            "n_mc" => self.n_mc = parse_one(key, v)?,
            "n_boot" => self.n_boot = parse_one(key, v)?,
            "max_ordered" => self.max_ordered = parse_one(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Flat `key = value` text; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// CSV grid: a header of keys and one scenario per row.
    pub fn parse_grid(text: &str) -> Result<Vec<Self>> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut cfg = SimConfig { name: format!("scenario{}", i + 1), ..SimConfig::default() };
            for (k, v) in header.iter().zip(rec.iter()) {
                if !v.is_empty() {
                    cfg.set(k, v)?;
                }
            }
            cfg.validate()?;
            out.push(cfg);
        }
        if out.is_empty() {
            return Err(Error::Config("scenario grid has no rows".into()));
        }
        Ok(out)
    }

    /// Reads a `.csv` grid or a key=value file.
    pub fn load(path: &Path) -> Result<Vec<Self>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::parse_grid(&text)
        } else {
            Ok(vec![Self::parse_kv(&text)?])
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 3 || self.p < 2 {
            return bad(format!("need n ≥ 3 and p ≥ 2 (n={}, p={})", self.n, self.p));
        }
        if self.k0_nonintercept + 1 > self.p {
            return bad(format!("k0_nonintercept + 1 = {} exceeds p = {}", self.k0_nonintercept + 1, self.p));
        }
        if self.replications == 0 {
            return bad("replications must be ≥ 1".into());
        }
        if self.design_family == DesignFamily::Orthonormalized && self.p > self.n {
            return bad("an orthonormal family needs p ≤ n".into());
        }
        let in_unit = |v: &f64| *v > 0.0 && *v < 1.0;
        if !self.alpha_levels.iter().all(in_unit) || !self.q_levels.iter().all(in_unit) {
            return bad("levels must lie in (0, 1)".into());
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if !(self.sigma > 0.0) || self.n_mc == 0 || self.n_boot == 0 {
            return bad("sigma, n_mc and n_boot must be positive".into());
        }
        Ok(())
    }

    /// Methods actually run: `fdr` needs `p < n` and is replaced by `fdr2` otherwise.
    pub fn effective_methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self
            .methods
            .iter()
            .map(|&m| if m == Method::Fdr && self.p >= self.n { Method::Fdr2 } else { m })
            .collect();
        m.sort();
        m.dedup();
        m
    }

    fn levels(&self, m: Method) -> Vec<Option<f64>> {
        match m.level_name() {
            Some("alpha") => self.alpha_levels.iter().map(|&a| Some(a)).collect(),
            Some(_) => self.q_levels.iter().map(|&q| Some(q)).collect(),
            None => vec![None],
        }
    }

    pub fn replicate_seed(&self, r: usize) -> u64 {
        rng::derive_seed(self.seed, &[rng::label("replicate"), r as u64])
    }

    fn calibration_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[rng::label("calibration")])
    }
}

/// One simulated data set.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: DesignMatrix,
    pub y: Vec<f64>,
    pub model: Model,
}

/// Draws the design, support and response of replicate `r`.
pub fn generate_dataset(cfg: &SimConfig, r: usize) -> Result<Dataset> {
    let (n, p) = (cfg.n, cfg.p);
    let seed = cfg.replicate_seed(r);
    let mut raw = vec![1.0; n];
    raw.extend(rng::normal_vec(&mut rng::stream(seed, &[rng::label("design")]), n * (p - 1)));
    let mut design = DesignMatrix::normalize_columns(n, p, &raw)?;
    if cfg.design_family == DesignFamily::Orthonormalized {
        let st = OrthoState::from_design_natural(&design);
        if st.dim() < p {
            return Err(Error::RankDeficient);
        }
        let mut data = vec![1.0; n];
        for j in 1..p {
            data.extend_from_slice(st.basis_vec(j));
        }
        design = DesignMatrix::from_columns(n, p, data, true)?;
    }
    let mut picks =
        rand::seq::index::sample(&mut rng::stream(seed, &[rng::label("support")]), p - 1, cfg.k0_nonintercept)
            .into_vec();
    picks.sort_unstable();
    let b = cfg.beta_value.on_n_norm(n, cfg.beta_scale);
    let mut beta = vec![0.0; p];
    for &j in &picks {
        beta[j + 1] = b;
    }
    let forced: &[usize] = if cfg.intercept_in_truth { &[0] } else { &[] };
    let model = Model::new(&design, beta, cfg.sigma, forced);
    let noise = rng::normal_vec(&mut rng::stream(seed, &[rng::label("noise")]), n);
    let y = model.mu.iter().zip(&noise).map(|(m, e)| m + cfg.sigma * e).collect();
    Ok(Dataset { design, y, model })
}

/// `max diag((XᵀX)⁻¹)/n` for unit-Euclidean columns; `None` when `XᵀX` is singular.
pub fn conditioning(design: &DesignMatrix) -> Option<f64> {
    let p = design.p();
    if p >= design.n() {
        return None;
    }
    let g = nalgebra::DMatrix::from_column_slice(p, p, &design.gram_n());
    let inv = g.cholesky()?.inverse();
    Some(inv.diagonal().max() / design.n() as f64)
}

/// Per-replication quality of one selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub truth: bool,
    pub inclusions: usize,
    pub correct: usize,
    pub mse: f64,
}

/// Compares `j_hat` with the model and measures the refit error.
pub fn evaluate(ds: &Dataset, j_hat: &[usize], beta_hat: &[f64], cfg: &SimConfig) -> Evaluation {
    let keep = |j: &&usize| cfg.intercept_in_truth || **j != 0;
    let mut sel: Vec<usize> = j_hat.iter().filter(keep).copied().collect();
    sel.sort_unstable();
    sel.dedup();
    let support: Vec<usize> = ds.model.support.iter().filter(keep).copied().collect();
    let correct = sel.iter().filter(|j| support.contains(j)).count();
    let fit = ds.design.mul_vec(beta_hat);
    let n = ds.design.n() as f64;
    let mse = if cfg.mse_as_printed {
        fit.iter().zip(&ds.model.mu).map(|(a, b)| a - b).sum::<f64>() / n
    } else {
        fit.iter().zip(&ds.model.mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n
    };
    Evaluation { truth: sel == support, inclusions: sel.len(), correct, mse }
}

/// One method at one level on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: &'static str,
    pub level: Option<f64>,
    pub j_hat: Vec<usize>,
    #[serde(flatten)]
    pub eval: Option<Evaluation>,
    /// The first `|J|` ordered variables differ from `J`.
    pub order_miss: Option<bool>,
    pub m: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub method: Method,
    pub level: Option<f64>,
    pub replications: usize,
    pub errors: usize,
    pub truth_rate: f64,
    pub mean_inclusions: f64,
    pub mean_correct_inclusions: f64,
    pub mse: f64,
    pub delta_hat: Option<f64>,
    pub m_conditioning: Option<f64>,
}

/// Averages the successful records of one method and level.
pub fn compute_metrics(method: Method, level: Option<f64>, records: &[&RepRecord]) -> SimMetrics {
    let ok: Vec<&Evaluation> = records.iter().filter_map(|r| r.eval.as_ref()).collect();
    let cnt = ok.len().max(1) as f64;
    let mean = |f: &dyn Fn(&Evaluation) -> f64| ok.iter().map(|e| f(e)).sum::<f64>() / cnt;
    let misses: Vec<bool> = records.iter().filter(|r| r.eval.is_some()).filter_map(|r| r.order_miss).collect();
    let ms: Vec<f64> = records.iter().filter_map(|r| r.m).collect();
    SimMetrics {
        method,
        level,
        replications: ok.len(),
        errors: records.len() - ok.len(),
        truth_rate: mean(&|e| e.truth as u8 as f64),
        mean_inclusions: mean(&|e| e.inclusions as f64),
        mean_correct_inclusions: mean(&|e| e.correct as f64),
        mse: mean(&|e| e.mse),
        delta_hat: (!misses.is_empty()).then(|| misses.iter().filter(|&&b| b).count() as f64 / misses.len() as f64),
        m_conditioning: (!ms.is_empty()).then(|| ms.iter().sum::<f64>() / ms.len() as f64),
    }
}

struct Selection {
    level: Option<f64>,
    outcome: Result<Vec<usize>>,
}

fn ordered_for_truth(ds: &Dataset) -> Vec<usize> {
    let mut order = vec![0];
    order.extend(ds.model.support.iter().copied().filter(|&j| j != 0));
    order.extend((1..ds.design.p()).filter(|j| !ds.model.support.contains(j)));
    order
}

fn two_step_mode(cfg: &SimConfig) -> TwoStepMode {
    if cfg.design_family == DesignFamily::Orthonormalized && cfg.p < cfg.n {
        TwoStepMode::BOrtho
    } else {
        TwoStepMode::B
    }
}

fn full_support(ds: &Dataset) -> Vec<usize> {
    let mut s = ds.model.support.clone();
    if !s.contains(&0) {
        s.insert(0, 0);
    }
    s
}

fn run_method(
    cfg: &SimConfig,
    ds: &Dataset,
    method: Method,
    rep_seed: u64,
    cache: &CalibrationCache,
) -> (Vec<Selection>, Option<bool>) {
    let levels = cfg.levels(method);
    let seed = rng::derive_seed(rep_seed, &[rng::label(method.tag())]);
    let all_fail = |e: Error| {
        let msg = e.to_string();
        levels.iter().map(|&level| Selection { level, outcome: Err(Error::InvalidInput(msg.clone())) }).collect()
    };
    let (design, y) = (&ds.design, ds.y.as_slice());
    match method {
        Method::ProcOrdered => {
            let order = ordered_for_truth(ds);
            let sub = design.select_columns(&order);
            let mode = if cfg.p < cfg.n { PlanMode::LowDim } else { PlanMode::HighDim };
            let sel = levels
                .iter()
                .map(|&level| {
                    let oc = OrderedConfig {
                        alpha: level.expect("ordered levels"),
                        procedure: Procedure::P1,
                        mode,
                        n_mc: cfg.n_mc,
                        seed: cfg.calibration_seed(),
                    };
                    let outcome = run_ordered(y, &sub, &oc, cache).map(|r| r.j_hat.iter().map(|&i| order[i]).collect());
                    Selection { level, outcome }
                })
                .collect();
            (sel, None)
        }
        Method::ProcPval | Method::ProcBol => {
            let order = if method == Method::ProcPval {
                let mode = if cfg.p < cfg.n { PvalMode::Full } else { PvalMode::Marginal };
                order_by_pvalues(design, y, mode)
            } else {
                let bc = BolassoConfig { n_boot: cfg.n_boot, max_ordered: cfg.max_ordered, seed, ..BolassoConfig::default() };
                order_by_bolasso(design, y, &bc)
            };
            let order = match order {
                Ok(o) => o,
                Err(e) => return (all_fail(e), None),
            };
            let miss = !order.prefix_matches(&full_support(ds));
            let mode = two_step_mode(cfg);
            let tc = TwoStepConfig {
                mode,
                sigma: None,
                n_mc: cfg.n_mc,
                seed: if mode == TwoStepMode::BOrtho { cfg.calibration_seed() } else { seed },
            };
            let alphas: Vec<f64> = levels.iter().map(|l| l.expect("two-step levels")).collect();
            match run_twostep_multi(y, design, &order, &tc, &alphas, cache) {
                Ok(rs) => (
                    rs.into_iter().map(|r| Selection { level: Some(r.alpha), outcome: Ok(r.j_hat) }).collect(),
                    Some(miss),
                ),
                Err(e) => (all_fail(e), Some(miss)),
            }
        }
        Method::Fdr | Method::Fdr2 => {
            let marginal = method == Method::Fdr2;
            let miss = order_by_pvalues(design, y, if marginal { PvalMode::Marginal } else { PvalMode::Full })
                .ok()
                .map(|o: VariableOrder| !o.prefix_matches(&full_support(ds)));
            let sel = levels
                .iter()
                .map(|&level| Selection {
                    level,
                    outcome: select_fdr(design, y, level.expect("fdr levels"), marginal).map(|r| r.j_hat),
                })
                .collect();
            (sel, miss)
        }
        Method::Lasso => {
            (vec![Selection { level: None, outcome: select_lasso_cv(design, y, None, seed).map(|r| r.j_hat) }], None)
        }
        Method::Bolasso => (
            vec![Selection {
                level: None,
                outcome: select_bolasso_cv(design, y, cfg.n_boot, None, seed).map(|r| r.j_hat),
            }],
            None,
        ),
    }
}

fn run_replicate(cfg: &SimConfig, r: usize, cache: &CalibrationCache) -> (Vec<RepRecord>, Vec<(Method, Duration)>) {
    let methods = cfg.effective_methods();
    let ds = match generate_dataset(cfg, r) {
        Ok(d) => d,
        Err(e) => {
            let recs = methods
                .iter()
                .flat_map(|&m| cfg.levels(m).into_iter().map(move |level| (m, level)))
                .map(|(m, level)| RepRecord {
                    rep: r,
                    method: m.tag(),
                    level,
                    j_hat: Vec::new(),
                    eval: None,
                    order_miss: None,
                    m: None,
                    error: Some(e.to_string()),
                })
                .collect();
            return (recs, Vec::new());
        }
    };
    let m = conditioning(&ds.design);
    let rep_seed = cfg.replicate_seed(r);
    let mut recs = Vec::new();
    let mut times = Vec::new();
    for method in methods {
        let start = Instant::now();
        let (sels, miss) = run_method(cfg, &ds, method, rep_seed, cache);
        times.push((method, start.elapsed()));
        for s in sels {
            let (j_hat, eval, error) = match s.outcome {
                Ok(j) => {
                    let beta_hat = refit(&ds.design, &j, &ds.y);
                    let e = evaluate(&ds, &j, &beta_hat, cfg);
                    (j, Some(e), None)
                }
                Err(e) => (Vec::new(), None, Some(e.to_string())),
            };
            recs.push(RepRecord { rep: r, method: method.tag(), level: s.level, j_hat, eval, order_miss: miss, m, error });
        }
    }
    (recs, times)
}

/// Everything produced by one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioOutput {
    pub metrics: Vec<SimMetrics>,
    pub records: Vec<RepRecord>,
    /// Total wall time per method over all replications.
    pub timings: Vec<(Method, Duration)>,
}

/// Runs every replication on a pool of `workers` threads.
pub fn run_scenario(cfg: &SimConfig, workers: usize) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cache = CalibrationCache::new();
    let per_rep: Vec<(Vec<RepRecord>, Vec<(Method, Duration)>)> =
        pool.install(|| (0..cfg.replications).into_par_iter().map(|r| run_replicate(cfg, r, &cache)).collect());
    let mut timings: BTreeMap<Method, Duration> = BTreeMap::new();
    let mut records = Vec::new();
    for (recs, times) in per_rep {
        records.extend(recs);
        for (m, d) in times {
            *timings.entry(m).or_default() += d;
        }
    }
    let mut metrics = Vec::new();
    for m in cfg.effective_methods() {
        for level in cfg.levels(m) {
            let rs: Vec<&RepRecord> = records.iter().filter(|r| r.method == m.tag() && r.level == level).collect();
            metrics.push(compute_metrics(m, level, &rs));
        }
    }
    Ok(ScenarioOutput { metrics, records, timings: timings.into_iter().collect() })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

fn column_label(m: &SimMetrics) -> String {
    match (m.method.level_name(), m.level) {
        (Some(name), Some(l)) => format!("{} {name}={l}", m.method.tag()),
        _ => m.method.tag().to_string(),
    }
}

pub fn write_metrics_csv<W: Write>(cfg: &SimConfig, metrics: &[SimMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "n",
        "p",
        "k0",
        "k0_nonintercept",
        "beta",
        "method",
        "level",
        "replications",
        "errors",
        "truth",
        "inclusions",
        "correct_inclusions",
        "mse",
        "delta_hat",
        "m",
    ])?;
    let k0 = cfg.k0_nonintercept + cfg.intercept_in_truth as usize;
    for m in metrics {
        w.write_record([
            cfg.name.clone(),
            cfg.n.to_string(),
            cfg.p.to_string(),
            k0.to_string(),
            cfg.k0_nonintercept.to_string(),
            cfg.beta_value.label(),
            m.method.tag().to_string(),
            m.level.map_or_else(String::new, |l| l.to_string()),
            m.replications.to_string(),
            m.errors.to_string(),
            format!("{:.6}", m.truth_rate),
            format!("{:.6}", m.mean_inclusions),
            format!("{:.6}", m.mean_correct_inclusions),
            format!("{:.6}", m.mse),
            fmt_opt(m.delta_hat),
            fmt_opt(m.m_conditioning),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Paper-style layout: one column per method and level, one row per metric.
pub fn write_table_csv<W: Write>(metrics: &[SimMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Results".to_string()];
    header.extend(metrics.iter().map(column_label));
    w.write_record(&header)?;
    type Getter = fn(&SimMetrics) -> String;
    let rows: [(&str, Getter); 6] = [
        ("delta_hat", |m| m.delta_hat.map_or_else(String::new, |v| format!("{v:.2}"))),
        ("Truth", |m| format!("{:.2}", m.truth_rate)),
        ("Inclusions", |m| format!("{:.2}", m.mean_inclusions)),
        ("Correct incl.", |m| format!("{:.2}", m.mean_correct_inclusions)),
        ("MSE", |m| format!("{:.2}", m.mse)),
        ("m", |m| m.m_conditioning.map_or_else(String::new, |v| format!("{v:.3}"))),
    ];
    for (name, get) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(metrics.iter().map(get));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_raw_jsonl<W: Write>(records: &[RepRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Io(e.into()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_timings_csv<W: Write>(timings: &[(Method, Duration)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "seconds"])?;
    for (m, d) in timings {
        w.write_record([m.tag().to_string(), format!("{:.3}", d.as_secs_f64())])?;
    }
    w.flush()?;
    Ok(())
}

/// Paths written by [`write_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioFiles {
    pub metrics: PathBuf,
    pub table: PathBuf,
    pub raw: PathBuf,
    pub timings: PathBuf,
}

/// Writes `<name>_metrics.csv`, `<name>_table.csv`, `<name>_raw.jsonl` and `<name>_timings.csv`.
pub fn write_scenario(cfg: &SimConfig, out: &ScenarioOutput, dir: &Path) -> Result<ScenarioFiles> {
    std::fs::create_dir_all(dir)?;
    let path = |suffix: &str| dir.join(format!("{}_{suffix}", cfg.name));
    let files = ScenarioFiles {
        metrics: path("metrics.csv"),
        table: path("table.csv"),
        raw: path("raw.jsonl"),
        timings: path("timings.csv"),
    };
    write_metrics_csv(cfg, &out.metrics, std::fs::File::create(&files.metrics)?)?;
    write_table_csv(&out.metrics, std::fs::File::create(&files.table)?)?;
    write_raw_jsonl(&out.records, std::io::BufWriter::new(std::fs::File::create(&files.raw)?))?;
    write_timings_csv(&out.timings, std::fs::File::create(&files.timings)?)?;
    Ok(files)
}

/// Signal conditions on replicate 0 of a scenario, for every `k < k₀`.
///
/// The ordered condition uses the truth-first ordering and the levels
/// `α/|T_k|`; the two-step conditions use the first level of `alpha_levels`.
pub fn scenario_bounds(cfg: &SimConfig, gamma: f64) -> Result<Vec<BoundReport>> {
    cfg.validate()?;
    let ds = generate_dataset(cfg, 0)?;
    let alpha = *cfg.alpha_levels.first().ok_or_else(|| Error::Config("no alpha level".into()))?;
    let support = full_support(&ds);
    let k0 = support.len();
    let (n, p) = (cfg.n, cfg.p);
    let order = ordered_for_truth(&ds);
    let sub = ds.design.select_columns(&order);
    let st = OrthoState::from_design_natural(&sub);
    let plan = if p < n { StepPlan::lowdim(n, p) } else { StepPlan::highdim(n, p, &st.rank_indices()) };
    let proj = Projections::new(&st, &ds.model.mu);
    let mu_sq = crate::linalg::sq_norm_n(&ds.model.mu);
    let support_beta: Vec<f64> = support.iter().map(|&j| ds.model.beta[j]).collect();
    let ortho = cfg.design_family == DesignFamily::Orthonormalized;
    let mut out = Vec::new();
    for k in 1..k0 {
        let steps = plan.steps(k)?;
        let levels = calibrate_p2(&plan, k, alpha)?.levels();
        let s = plan.s(k);
        let terms: Vec<RkTerm> = steps
            .iter()
            .zip(levels)
            .map(|(step, a)| RkTerm {
                t: step.t,
                n_res: step.n_res,
                alpha_kt: a,
                proj_s: proj.range_sq(s..s + step.d),
                proj_perp: proj.res[s + step.d],
            })
            .collect();
        out.push(theory::check_rk(k, k0, n, cfg.sigma, gamma, &terms));
        let inp = TwoStepInputs { k, k0, n, p, alpha, gamma, sigma: cfg.sigma };
        let ts = theory::t_range(k, k0);
        let mut approximate = false;
        let infs: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let (v, exact) = theory::inf_projection(&ds.design, &support, &ds.model.beta, 1 << t);
                approximate |= !exact;
                v
            })
            .collect();
        out.push(theory::check_r2(&inp, &infs, approximate)?);
        if k + (1usize << ts.last().copied().unwrap_or(0)) < n {
            out.push(theory::check_r3(&inp, &infs, mu_sq, approximate)?);
        }
        if ortho {
            out.push(theory::check_r2bis(&inp, &support_beta)?);
            out.push(theory::check_r3bis(&inp, &support_beta)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            name: "t".into(),
            n: 40,
            p: 12,
            k0_nonintercept: 3,
            replications: 2,
            n_mc: 200,
            n_boot: 8,
            ..SimConfig::default()
        }
    }

    #[test]
    fn parses_kv_and_grid() {
        let c = SimConfig::parse_kv(
            "# scenario\nn = 50\np=20\nk0_nonintercept=4\nbeta_value=6\ndesign_family=orthonormalized\n\
             methods=proc_ordered,fdr\nalpha_levels=0.1,0.05\nreplications=3\nseed=9\n",
        )
        .unwrap();
        assert_eq!((c.n, c.p, c.k0_nonintercept, c.replications, c.seed), (50, 20, 4, 3, 9));
        assert_eq!(c.beta_value, BetaValue::Fixed(6.0));
        assert_eq!(c.methods, vec![Method::ProcOrdered, Method::Fdr]);
        let g = SimConfig::parse_grid("name,n,p,k0,methods\na,50,20,4,fdr;lasso\nb,60,30,5,procbol\n").unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].methods, vec![Method::Fdr, Method::Lasso]);
        assert_eq!(g[1].name, "b");
        assert!(SimConfig::parse_kv("n=5\np=4\nk0=4\n").is_err());
        assert!(SimConfig::parse_kv("bogus=1").unwrap_err().is_config());
        assert!(SimConfig::parse_kv("replications=0").is_err());
    }

    #[test]
    fn fdr_becomes_fdr2_in_high_dimension() {
        let c = SimConfig { n: 30, p: 40, methods: vec![Method::Fdr, Method::Lasso], ..small() };
        assert_eq!(c.effective_methods(), vec![Method::Fdr2, Method::Lasso]);
    }

    #[test]
    fn dataset_properties() {
        let c = small();
        let a = generate_dataset(&c, 0).unwrap();
        for j in 0..c.p {
            assert!((crate::linalg::sq_norm_n(a.design.col(j)) - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.model.support.len(), 4);
        assert_eq!(a.model.support[0], 0);
        assert_eq!(a.model.beta[0], 0.0);
        assert_eq!(a, generate_dataset(&c, 0).unwrap());
        assert_ne!(a.y, generate_dataset(&c, 1).unwrap().y);
        let o = generate_dataset(&SimConfig { design_family: DesignFamily::Orthonormalized, ..c }, 0).unwrap();
        let g = o.design.gram_n();
        for a in 0..12 {
            for b in 0..12 {
                assert!((g[a * 12 + b] - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!((conditioning(&o.design).unwrap() - 1.0 / 40.0).abs() < 1e-10);
    }

    fn tiny_dataset() -> Dataset {
        let n = 4;
        let raw = vec![1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0];
        let design = DesignMatrix::normalize_columns(n, 3, &raw).unwrap();
        let model = Model::new(&design, vec![0.0, 2.0, 0.0], 1.0, &[0]);
        Dataset { design, y: vec![2.5, -1.5, 1.0, -2.0], model }
    }

    #[test]
    fn hand_mse_on_four_observations() {
        let ds = tiny_dataset();
        let cfg = SimConfig::default();
        let beta_hat = vec![0.0, 1.5, 0.5];
        let e = evaluate(&ds, &[0, 1, 2], &beta_hat, &cfg);
        // fit = (2, -1, 1, -2), mu = (2, -2, 2, -2): residuals (0, 1, -1, 0)
        assert!((e.mse - 0.5).abs() < 1e-14);
        assert_eq!((e.truth, e.inclusions, e.correct), (false, 3, 2));
        let printed = evaluate(&ds, &[0, 1, 2], &beta_hat, &SimConfig { mse_as_printed: true, ..cfg.clone() });
        assert!(printed.mse.abs() < 1e-14);
        let exact = evaluate(&ds, &[0, 1], &[0.0, 2.0, 0.0], &cfg);
        assert!(exact.truth && exact.mse == 0.0);
        let no_icpt = evaluate(&ds, &[0, 1], &[0.0, 2.0, 0.0], &SimConfig { intercept_in_truth: false, ..cfg });
        assert_eq!((no_icpt.truth, no_icpt.inclusions), (true, 1));
    }

    fn record(truth: bool, inclusions: usize, correct: usize) -> RepRecord {
        RepRecord {
            rep: 0,
            method: "x",
            level: None,
            j_hat: Vec::new(),
            eval: Some(Evaluation { truth, inclusions, correct, mse: 1.0 }),
            order_miss: Some(!truth),
            m: Some(0.5),
            error: None,
        }
    }

    #[test]
    fn metric_aggregation() {
        let a = record(true, 4, 4);
        let b = record(true, 4, 4);
        let m = compute_metrics(Method::Lasso, None, &[&a, &b]);
        assert_eq!((m.truth_rate, m.mean_correct_inclusions, m.delta_hat), (1.0, 4.0, Some(0.0)));
        let all = record(false, 12, 4);
        let mut failed = record(false, 0, 0);
        failed.eval = None;
        failed.error = Some("boom".into());
        let m = compute_metrics(Method::Lasso, None, &[&all, &failed]);
        assert_eq!((m.replications, m.errors, m.mean_inclusions, m.truth_rate), (1, 1, 12.0, 0.0));
        assert!(m.mean_correct_inclusions <= m.mean_inclusions);
    }

    #[test]
    fn smoke_run_is_worker_invariant() {
        let c = small();
        let a = run_scenario(&c, 1).unwrap();
        let b = run_scenario(&c, 3).unwrap();
        let expected: usize = c.effective_methods().iter().map(|&m| c.levels(m).len()).sum();
        assert_eq!(a.metrics.len(), expected);
        let csv = |o: &ScenarioOutput| {
            let mut buf = Vec::new();
            write_metrics_csv(&c, &o.metrics, &mut buf).unwrap();
            write_raw_jsonl(&o.records, &mut buf).unwrap();
            buf
        };
        assert_eq!(csv(&a), csv(&b));
        for m in &a.metrics {
            assert_eq!(m.errors, 0, "{:?}", m.method);
            assert!(m.truth_rate >= 0.0 && m.truth_rate <= 1.0);
        }
    }

    #[test]
    fn bounds_report_for_scenario() {
        let c = SimConfig { design_family: DesignFamily::Orthonormalized, ..small() };
        let reps = scenario_bounds(&c, 0.05).unwrap();
        assert!(reps.iter().any(|r| r.condition == "R") && reps.iter().any(|r| r.condition == "R3bis"));
        let rk = reps.iter().find(|r| r.condition == "R").unwrap();
        assert_eq!(rk.rows[0].k, 1);
    }
}
