//! Certainty-equivalent grid, figure datasets and Monte Carlo checks of the
//! closed forms.

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    conditional_moments, FactorSimulator, FuturesTable, Measure, SimulationGrid, WealthIncrements,
};
use crate::error::{MctouError, Result};
use crate::io::{fmt_f64, Dataset};
use crate::model::{build_model, FactorState, ModelMatrices, ModelParams};
use crate::strategy::{
    certainty_equivalent, integrated_lambda_sq, lambda_squared, strategy_on_grid, PortfolioSpec,
};
use crate::term_structure::{ContractSpec, DAYS_PER_MONTH, TRADING_DAYS};

/// Indices into [`ContractSpec::monthly`] for each column of the grid.
pub const COMBINATIONS: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];

pub const COMBINATION_LABELS: [&str; 7] = ["T1", "T2", "T3", "T1+T2", "T1+T3", "T2+T3", "T1+T2+T3"];

/// Published certainty equivalents (x1e-4), rows in [`correlation_overrides`] order.
pub const PUBLISHED_CE: [[f64; 7]; 9] = [
    [0.563, 1.58, 3.25, 5.36, 4.65, 4.41, 419.0],
    [0.502, 1.09, 1.74, 3.09, 2.62, 2.41, 417.0],
    [0.456, 0.837, 1.19, 2.88, 2.35, 2.01, 417.0],
    [0.561, 1.56, 3.23, 5.34, 4.64, 4.40, 543.0],
    [0.500, 1.08, 1.73, 3.08, 2.62, 2.40, 542.0],
    [0.454, 0.833, 1.18, 2.87, 2.34, 2.01, 541.0],
    [0.565, 1.59, 3.27, 5.39, 4.66, 4.42, 571.0],
    [0.504, 1.10, 1.75, 3.11, 2.63, 2.41, 569.0],
    [0.457, 0.842, 1.20, 2.90, 2.36, 2.02, 569.0],
];

/// Relative tolerance per column when comparing against [`PUBLISHED_CE`].
pub fn published_tolerance(column: usize) -> f64 {
    if COMBINATIONS[column].len() == 3 {
        0.05
    } else {
        0.01
    }
}

/// Display scale of the published grid.
pub const CE_SCALE: f64 = 1e4;

pub const DEFAULT_SEED: u64 = 42;

/// Contracts of one grid column.
pub fn combination(column: usize) -> Vec<ContractSpec> {
    let all = ContractSpec::monthly();
    COMBINATIONS[column]
        .iter()
        .map(|&i| all[i].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOverride {
    pub rho12: f64,
    pub rho13: f64,
}

/// `rho12 in {0, 0.5, -0.5}` x `rho13 in {-0.5, 0, 0.5}`, in published order.
pub fn correlation_overrides() -> Vec<CorrelationOverride> {
    let mut v = Vec::with_capacity(9);
    for rho12 in [0.0, 0.5, -0.5] {
        for rho13 in [-0.5, 0.0, 0.5] {
            v.push(CorrelationOverride { rho12, rho13 });
        }
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CECell {
    /// Certainty equivalent in absolute units.
    pub ce: f64,
    /// Largest condition number of `Sigma_F Sigma_F'` at the horizon ends.
    pub cond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CEGridRow {
    pub rho12: f64,
    pub rho13: f64,
    /// `Err` carries the reason a row or cell was skipped.
    pub cells: std::result::Result<Vec<std::result::Result<CECell, String>>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CEGridResult {
    pub horizon: f64,
    pub gamma: f64,
    pub rows: Vec<CEGridRow>,
}

impl CEGridResult {
    /// Value in 1e-4 units, if the cell was computed.
    pub fn value_e4(&self, row: usize, column: usize) -> Option<f64> {
        match &self.rows[row].cells {
            Ok(cells) => cells[column].as_ref().ok().map(|c| c.ce * CE_SCALE),
            Err(_) => None,
        }
    }

    /// Wide layout, values in 1e-4 units; skipped cells are written as `NA`.
    pub fn to_dataset(&self) -> Dataset {
        let mut header = vec!["rho12".to_string(), "rho13".to_string()];
        header.extend(COMBINATION_LABELS.iter().map(|s| s.to_string()));
        let mut d = Dataset::new(header);
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = vec![fmt_f64(r.rho12), fmt_f64(r.rho13)];
            for j in 0..COMBINATIONS.len() {
                row.push(self.value_e4(i, j).map_or_else(|| "NA".into(), fmt_f64));
            }
            d.push(row);
        }
        d
    }

    /// Long layout against the published values. Rows whose correlations are
    /// not in the published grid carry empty reference columns.
    pub fn comparison(&self) -> (Dataset, bool) {
        let reference = correlation_overrides();
        let mut d = Dataset::new([
            "rho12",
            "rho13",
            "combination",
            "ce_1e4",
            "cond_number",
            "published_1e4",
            "rel_err",
            "tolerance",
            "pass",
        ]);
        let mut all = true;
        for (i, r) in self.rows.iter().enumerate() {
            let published_row = reference
                .iter()
                .position(|o| o.rho12 == r.rho12 && o.rho13 == r.rho13);
            for j in 0..COMBINATIONS.len() {
                let cell = r.cells.as_ref().ok().and_then(|c| c[j].as_ref().ok());
                let v = self.value_e4(i, j);
                let mut row = vec![
                    fmt_f64(r.rho12),
                    fmt_f64(r.rho13),
                    COMBINATION_LABELS[j].to_string(),
                    v.map_or_else(|| "NA".into(), fmt_f64),
                    cell.map_or_else(|| "NA".into(), |c| fmt_f64(c.cond)),
                ];
                match (published_row, v) {
                    (Some(pr), Some(v)) => {
                        let p = PUBLISHED_CE[pr][j];
                        let rel = (v - p).abs() / p;
                        let tol = published_tolerance(j);
                        let ok = rel <= tol;
                        all &= ok;
                        row.extend([fmt_f64(p), fmt_f64(rel), fmt_f64(tol), ok.to_string()]);
                    }
                    (Some(pr), None) => {
                        all = false;
                        row.extend([
                            fmt_f64(PUBLISHED_CE[pr][j]),
                            String::new(),
                            fmt_f64(published_tolerance(j)),
                            "false".into(),
                        ]);
                    }
                    (None, _) => {
                        row.extend([String::new(), String::new(), String::new(), String::new()])
                    }
                }
                d.push(row);
            }
        }
        (d, all)
    }
}

fn ce_cell(m: &ModelMatrices, column: usize, horizon: f64, gamma: f64) -> Result<CECell> {
    let contracts = combination(column);
    let spec = PortfolioSpec::new(contracts.clone(), gamma, horizon, 0.0)?;
    let ce = certainty_equivalent(m, &spec, 0.0, 0.0)?;
    let cond = lambda_squared(m, &contracts, 0.0)?
        .cond
        .max(lambda_squared(m, &contracts, horizon)?.cond);
    Ok(CECell { ce, cond })
}

/// Certainty equivalents at `t = 0`, `w = 0` for every override and column.
///
/// Invalid overrides are skipped and marked; cells that fail numerically are
/// marked individually.
pub fn run_ce_grid(
    params: &ModelParams,
    overrides: &[CorrelationOverride],
    horizon: f64,
    gamma: f64,
) -> CEGridResult {
    let rows = overrides
        .par_iter()
        .map(|o| {
            let p = params.with_correlations(o.rho12, o.rho13, params.rho23);
            let cells = build_model(p).map_err(|e| e.to_string()).map(|m| {
                (0..COMBINATIONS.len())
                    .into_par_iter()
                    .map(|j| ce_cell(&m, j, horizon, gamma).map_err(|e| e.to_string()))
                    .collect()
            });
            CEGridRow {
                rho12: o.rho12,
                rho13: o.rho13,
                cells,
            }
        })
        .collect();
    CEGridResult {
        horizon,
        gamma,
        rows,
    }
}

/// Which figure dataset to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Figure {
    /// Factor and futures paths with analytic 95% bands.
    Fig1,
    /// Optimal positions on the daily grid for every contract combination.
    Fig2,
    /// One wealth path of the three-contract portfolio.
    Fig3,
    /// Certainty equivalent over horizon and risk aversion.
    Fig4,
}

impl std::str::FromStr for Figure {
    type Err = MctouError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fig1" => Ok(Figure::Fig1),
            "fig2" => Ok(Figure::Fig2),
            "fig3" => Ok(Figure::Fig3),
            "fig4" => Ok(Figure::Fig4),
            _ => Err(MctouError::UnknownFigure(s.to_string())),
        }
    }
}

impl Figure {
    pub const ALL: [Figure; 4] = [Figure::Fig1, Figure::Fig2, Figure::Fig3, Figure::Fig4];

    pub fn tag(&self) -> &'static str {
        match self {
            Figure::Fig1 => "fig1",
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FigureConfig {
    pub seed: u64,
    pub gamma: f64,
    pub w0: f64,
    pub horizon: f64,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            seed: DEFAULT_SEED,
            gamma: 1.0,
            w0: 0.0,
            horizon: DAYS_PER_MONTH as f64 / TRADING_DAYS,
        }
    }
}

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Horizons (in trading days) and risk aversions of the certainty-equivalent surface.
pub const FIG4_DAYS: std::ops::RangeInclusive<usize> = 0..=DAYS_PER_MONTH;
pub const FIG4_GAMMAS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

pub fn run_figure_data(
    params: &ModelParams,
    x0: &FactorState,
    which: Figure,
    cfg: &FigureConfig,
) -> Result<Dataset> {
    let m = build_model(*params)?;
    match which {
        Figure::Fig1 => fig1(&m, x0, cfg),
        Figure::Fig2 => fig2(&m, cfg),
        Figure::Fig3 => fig3(&m, x0, cfg),
        Figure::Fig4 => fig4(&m, cfg),
    }
}

fn fig1(m: &ModelMatrices, x0: &FactorState, cfg: &FigureConfig) -> Result<Dataset> {
    let contracts = ContractSpec::monthly();
    let grid = SimulationGrid::daily(cfg.horizon, Measure::P, cfg.seed)?;
    let sim = FactorSimulator::new(m, x0, grid)?;
    let path = sim.path(0);
    let table = FuturesTable::new(m, &path.times, &contracts)?;
    let mut d = Dataset::new([
        "day", "t", "x1", "x2", "x3", "x1_lo", "x1_hi", "x2_lo", "x2_hi", "x3_lo", "x3_hi", "spot",
        "F1", "F2", "F3",
    ]);
    for (i, &t) in path.times.iter().enumerate() {
        let x = path.factors[i];
        let (mean, cov) = conditional_moments(m, &x0.x, t - x0.t, Measure::P);
        let mut row = vec![i.to_string(), fmt_f64(t)];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        for k in 0..3 {
            let sd = cov[(k, k)].max(0.0).sqrt();
            row.push(fmt_f64(mean[k] - Z95 * sd));
            row.push(fmt_f64(mean[k] + Z95 * sd));
        }
        row.push(fmt_f64(x[0].exp()));
        for k in 0..contracts.len() {
            row.push(fmt_f64(table.price(i, k, &x)));
        }
        d.push(row);
    }
    Ok(d)
}

fn fig2(m: &ModelMatrices, cfg: &FigureConfig) -> Result<Dataset> {
    let grid = SimulationGrid::daily(cfg.horizon, Measure::P, cfg.seed)?;
    let times = grid.times();
    let mut d = Dataset::new([
        "combination",
        "day",
        "t",
        "pi_T1",
        "pi_T2",
        "pi_T3",
        "lambda_sq",
        "cond_number",
    ]);
    for (j, label) in COMBINATION_LABELS.iter().enumerate() {
        let spec = PortfolioSpec::new(combination(j), cfg.gamma, cfg.horizon, cfg.w0)?;
        let points = strategy_on_grid(m, &spec, &times)?;
        for (i, p) in points.iter().enumerate() {
            let mut pis = vec![String::new(); 3];
            for (k, &c) in COMBINATIONS[j].iter().enumerate() {
                pis[c] = fmt_f64(p.pi[k]);
            }
            let mut row = vec![label.to_string(), i.to_string(), fmt_f64(p.t)];
            row.extend(pis);
            row.push(fmt_f64(p.lambda_sq));
            row.push(fmt_f64(p.cond));
            d.push(row);
        }
    }
    Ok(d)
}

fn fig3(m: &ModelMatrices, x0: &FactorState, cfg: &FigureConfig) -> Result<Dataset> {
    let contracts = ContractSpec::monthly();
    let spec = PortfolioSpec::new(contracts.clone(), cfg.gamma, cfg.horizon, cfg.w0)?;
    let grid = SimulationGrid::daily(cfg.horizon, Measure::P, cfg.seed)?;
    let sim = FactorSimulator::new(m, x0, grid)?;
    let path = sim.path(0);
    let table = FuturesTable::new(m, &path.times, &contracts)?;
    let pis: Vec<DVector<f64>> = strategy_on_grid(m, &spec, &path.times)?
        .into_iter()
        .map(|p| p.pi)
        .collect();
    let inc = WealthIncrements::new(m, &path.times, Measure::P, &contracts, &pis)?;
    let wealth = inc.path(cfg.w0, &path.shocks);

    let mut d = Dataset::new([
        "day", "t", "x1", "x2", "x3", "F1", "F2", "F3", "pi1", "pi2", "pi3", "units1", "units2",
        "units3", "wealth",
    ]);
    for (i, &t) in path.times.iter().enumerate() {
        let x = path.factors[i];
        let prices: Vec<f64> = (0..3).map(|k| table.price(i, k, &x)).collect();
        let mut row = vec![i.to_string(), fmt_f64(t)];
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        row.extend(prices.iter().map(|v| fmt_f64(*v)));
        row.extend(pis[i].iter().map(|v| fmt_f64(*v)));
        row.extend((0..3).map(|k| fmt_f64(pis[i][k] / prices[k])));
        row.push(fmt_f64(wealth[i]));
        d.push(row);
    }
    Ok(d)
}

fn fig4(m: &ModelMatrices, cfg: &FigureConfig) -> Result<Dataset> {
    let contracts = ContractSpec::monthly();
    let mut d = Dataset::new(["horizon_days", "horizon", "gamma", "ce"]);
    let cells: Vec<(usize, f64)> = FIG4_DAYS
        .flat_map(|day| FIG4_GAMMAS.iter().map(move |&g| (day, g)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(day, gamma)| {
            let horizon = day as f64 / TRADING_DAYS;
            let ce = if day == 0 {
                cfg.w0
            } else {
                let spec = PortfolioSpec::new(contracts.clone(), gamma, horizon, cfg.w0)?;
                certainty_equivalent(m, &spec, 0.0, cfg.w0)?
            };
            Ok((day, horizon, gamma, ce))
        })
        .collect::<Result<Vec<_>>>()?;
    for (day, horizon, gamma, ce) in values {
        d.push(vec![
            day.to_string(),
            fmt_f64(horizon),
            fmt_f64(gamma),
            fmt_f64(ce),
        ]);
    }
    Ok(d)
}

/// Sample mean and its standard error, summed in index order. A constant sample
/// returns its value exactly.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    if let Some(&first) = xs.first() {
        if xs.iter().all(|&x| x == first) {
            return (first, 0.0);
        }
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const MIN_MC_PATHS: usize = 1000;
pub const PERTURBATION: f64 = 1.5;
/// Acceptance band in standard errors.
pub const SE_BAND: f64 = 3.0;
/// Relative slack for summation rounding when the sample is degenerate.
const ROUNDING_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McUtilityReport {
    pub n_paths: usize,
    pub seed: u64,
    pub n_steps: usize,
    pub gamma: f64,
    pub horizon: f64,
    pub w0: f64,
    pub contracts: Vec<String>,
    pub closed_form: f64,
    pub integrated_lambda_sq: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub z_score: f64,
    pub pass: bool,
    pub perturbed_scale: f64,
    pub perturbed_mean: f64,
    pub perturbed_se: f64,
    /// `(mc_mean - perturbed_mean) / sqrt(se^2 + se_perturbed^2)`.
    pub separation_se: f64,
    /// `None` when the optimal strategy is identically zero.
    pub perturbed_pass: Option<bool>,
}

fn terminal_utilities(
    inc: &WealthIncrements,
    sim: &FactorSimulator,
    n_paths: usize,
    gamma: f64,
    w0: f64,
) -> Vec<f64> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|id| {
            let path = sim.path(id);
            -(-gamma * inc.terminal(w0, &path.shocks)).exp()
        })
        .collect()
}

/// Monte Carlo estimate of `E[-exp(-gamma W_T)]` under `pi*` against the closed form,
/// plus an optimality spot-check with `1.5 pi*` on the same paths.
pub fn verify_mc_utility(
    m: &ModelMatrices,
    spec: &PortfolioSpec,
    x0: &FactorState,
    n_paths: usize,
    seed: u64,
) -> Result<McUtilityReport> {
    if n_paths < MIN_MC_PATHS {
        return Err(MctouError::InvalidGrid(format!(
            "need at least {MIN_MC_PATHS} paths, got {n_paths}"
        )));
    }
    let grid = SimulationGrid::daily(spec.horizon, Measure::P, seed)?;
    let sim = FactorSimulator::new(m, x0, grid)?;
    let times = grid.times();
    let pis: Vec<DVector<f64>> = strategy_on_grid(m, spec, &times[..grid.n_steps])?
        .into_iter()
        .map(|p| p.pi)
        .collect();
    let scaled: Vec<DVector<f64>> = pis.iter().map(|p| p * PERTURBATION).collect();

    let inc = WealthIncrements::new(m, &times, Measure::P, &spec.contracts, &pis)?;
    let inc_scaled = WealthIncrements::new(m, &times, Measure::P, &spec.contracts, &scaled)?;
    let (mean, se) = mean_and_se(&terminal_utilities(
        &inc, &sim, n_paths, spec.gamma, spec.w0,
    ));
    let (pmean, pse) = mean_and_se(&terminal_utilities(
        &inc_scaled,
        &sim,
        n_paths,
        spec.gamma,
        spec.w0,
    ));

    let int = integrated_lambda_sq(m, &spec.contracts, 0.0, spec.horizon)?;
    let closed = -(-spec.gamma * spec.w0 - 0.5 * int).exp();
    let diff = mean - closed;
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let pass = diff.abs() <= SE_BAND * se + ROUNDING_SLACK * closed.abs();
    let pooled = (se * se + pse * pse).sqrt();
    let separation = if pooled > 0.0 {
        (mean - pmean) / pooled
    } else {
        0.0
    };
    let trivial = pis.iter().all(|p| p.iter().all(|v| *v == 0.0));

    Ok(McUtilityReport {
        n_paths,
        seed,
        n_steps: grid.n_steps,
        gamma: spec.gamma,
        horizon: spec.horizon,
        w0: spec.w0,
        contracts: spec.contracts.iter().map(|c| c.label.clone()).collect(),
        closed_form: closed,
        integrated_lambda_sq: int,
        mc_mean: mean,
        mc_se: se,
        z_score: z,
        pass,
        perturbed_scale: PERTURBATION,
        perturbed_mean: pmean,
        perturbed_se: pse,
        separation_se: separation,
        perturbed_pass: (!trivial).then_some(separation >= SE_BAND),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleRow {
    pub contract: String,
    pub f0: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    pub pass: bool,
}

/// Under `Q`, the average of `F_k(T, X_T)` over exact-transition paths against `F_k(0, x0)`.
pub fn martingale_check(
    m: &ModelMatrices,
    x0: &FactorState,
    contracts: &[ContractSpec],
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<MartingaleRow>> {
    let grid = SimulationGrid::daily(horizon, Measure::Q, seed)?;
    let sim = FactorSimulator::new(m, x0, grid)?;
    let table = FuturesTable::new(m, &grid.times(), contracts)?;
    let last = grid.n_steps;
    let terminal: Vec<Vector3<f64>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|id| *sim.path(id).factors.last().expect("non-empty path"))
        .collect();
    Ok(contracts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let f0 = table.price(0, k, &x0.x);
            let vals: Vec<f64> = terminal.iter().map(|x| table.price(last, k, x)).collect();
            let (mean, se) = mean_and_se(&vals);
            MartingaleRow {
                contract: c.label.clone(),
                f0,
                mc_mean: mean,
                mc_se: se,
                pass: (mean - f0).abs() <= SE_BAND * se,
            }
        })
        .collect())
}
