use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use varsel::api::{pvalue_order, select_by_tag, SelectOptions, Selection};
use varsel::calibrate::{
    calibrate_p2, calibrate_p3, calibrate_p5, write_tables_csv, CalibrationCache, CalibrationTable, Procedure,
};
use varsel::design::{DesignMatrix, OrthoState};
use varsel::harness::{run_scenario, scenario_bounds, write_scenario, SimConfig};
use varsel::plan::StepPlan;
use varsel::select_ordered::write_trace_csv;
use varsel::{Error, Result};

#[derive(Parser)]
#[command(name = "varsel", version, about = "Variable selection by sequential multiple testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulation scenarios and write metric tables.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the seed of every scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Use the unsquared residual mean instead of the squared one.
        #[arg(long)]
        mse_as_printed: bool,
    },
    /// Select variables on a CSV data set.
    Select {
        #[arg(long)]
        data: PathBuf,
        /// proc_ordered, proc_ordered_p2, procpval, procbol, proc_a, proc_a_ortho,
        /// proc_b, proc_b_ortho, fdr, fdr2, lasso or bolasso.
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Known noise standard deviation.
        #[arg(long)]
        sigma: Option<f64>,
        /// Name of the response column.
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long, default_value_t = 1000)]
        n_mc: usize,
        #[arg(long, default_value_t = 100)]
        n_boot: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the per-step test trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Emit a calibration table.
    Calibrate {
        /// P1, P2, P3, P4, P5 or P5O.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        /// Steps to calibrate; all admissible steps when omitted.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1000)]
        n_mc: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Data set for the design-dependent procedures P3 and P5.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "y")]
        response: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the signal conditions on replicate 0 of each scenario.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

/// Predictors with an intercept column in front, and the response.
fn load_data(path: &PathBuf, response: &str) -> Result<(DesignMatrix, Vec<f64>)> {
    let (header, cols) = DesignMatrix::read_csv(path)?;
    let yi = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::Config(format!("no column named {response:?}")))?;
    let n = cols[yi].len();
    let mut names = vec!["(intercept)".to_string()];
    let mut raw = vec![1.0; n];
    for (j, c) in cols.iter().enumerate() {
        if j == yi {
            continue;
        }
        if c.iter().all(|&v| v == c[0]) {
            continue;
        }
        names.push(header[j].clone());
        raw.extend_from_slice(c);
    }
    let p = names.len();
    let design = DesignMatrix::normalize_columns(n, p, &raw)?.with_names(names)?;
    Ok((design, cols[yi].clone()))
}

fn simulate(config: PathBuf, out: PathBuf, seed: Option<u64>, workers: usize, mse_as_printed: bool) -> Result<()> {
    for mut cfg in SimConfig::load(&config)? {
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.mse_as_printed |= mse_as_printed;
        let res = run_scenario(&cfg, workers)?;
        let files = write_scenario(&cfg, &res, &out)?;
        eprintln!("{}: {}", cfg.name, files.metrics.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn calibrate(
    mode: &str,
    n: Option<usize>,
    p: Option<usize>,
    ks: Vec<usize>,
    alpha: f64,
    n_mc: usize,
    seed: u64,
    data: Option<(DesignMatrix, Vec<f64>)>,
) -> Result<Vec<CalibrationTable>> {
    let procedure = Procedure::from_tag(mode).ok_or_else(|| Error::Config(format!("unknown mode {mode:?}")))?;
    let cache = CalibrationCache::new();
    match procedure {
        Procedure::P3 | Procedure::P5 => {
            let (design, y) = data.ok_or_else(|| Error::Config(format!("{mode} needs --data")))?;
            let order = pvalue_order(&design, &y)?;
            let ortho = OrthoState::from_design(&design, &order.order);
            let plan = StepPlan::for_family(design.n(), design.p(), &ortho.rank_indices());
            let ks = if ks.is_empty() { plan.ks().collect() } else { ks };
            ks.into_iter()
                .map(|k| {
                    let f = if procedure == Procedure::P3 { calibrate_p3 } else { calibrate_p5 };
                    f(&design, &order.order, &ortho, &plan, k, alpha, n_mc, seed)
                })
                .collect()
        }
        _ => {
            let (n, p) = match (n, p, &data) {
                (Some(n), Some(p), _) => (n, p),
                (_, _, Some((d, _))) => (d.n(), d.p()),
                _ => return Err(Error::Config("--n and --p (or --data) are required".into())),
            };
            if n < 2 || p < 2 {
                return Err(Error::Config("need n ≥ 2 and p ≥ 2".into()));
            }
            let plan = if p < n {
                StepPlan::lowdim(n, p)
            } else {
                let profile: Vec<usize> = (1..=p).map(|s| s.min(n)).collect();
                StepPlan::highdim(n, p, &varsel::design::RankIndex::from_profile(profile))
            };
            let ks = if ks.is_empty() { plan.ks().collect() } else { ks };
            ks.into_iter()
                .map(|k| match procedure {
                    Procedure::P2 => calibrate_p2(&plan, k, alpha),
                    _ => cache.table(procedure, &plan, k, alpha, n_mc, seed),
                })
                .collect()
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed, workers, mse_as_printed } => {
            simulate(config, out, seed, workers, mse_as_printed)
        }
        Command::Select { data, method, alpha, sigma, response, n_mc, n_boot, seed, trace } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config("alpha must lie in (0, 1)".into()));
            }
            let (design, y) = load_data(&data, &response)?;
            let opts = SelectOptions { method, alpha, sigma, n_mc, n_boot, seed };
            let Selection { j_hat, trace: rows } = select_by_tag(&design, &y, &opts)?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "index,variable")?;
            for j in j_hat {
                writeln!(out, "{j},{}", design.names()[j])?;
            }
            if let Some(path) = trace {
                write_trace_csv(&rows, std::fs::File::create(path)?)?;
            }
            Ok(())
        }
        Command::Calibrate { mode, n, p, k, alpha, n_mc, seed, data, response, out } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::Config("alpha must lie in (0, 1)".into()));
            }
            let data = data.map(|d| load_data(&d, &response)).transpose()?;
            let tables = calibrate(&mode, n, p, k, alpha, n_mc, seed, data)?;
            write_tables_csv(&tables, output(&out)?)
        }
        Command::Bounds { config, gamma, out } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::Config("gamma must lie in (0, 1)".into()));
            }
            let mut w = output(&out)?;
            writeln!(w, "scenario,condition,k,t,left,right,margin,approximate")?;
            for cfg in SimConfig::load(&config)? {
                for rep in scenario_bounds(&cfg, gamma)? {
                    let mut buf = Vec::new();
                    rep.write_csv(&mut buf)?;
                    let text = String::from_utf8_lossy(&buf);
                    for (i, line) in text.lines().enumerate() {
                        if i == 0 {
                            continue;
                        }
                        writeln!(w, "{},{line}", cfg.name)?;
                    }
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
