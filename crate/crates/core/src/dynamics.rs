//! Path simulation of the factor system, futures prices and wealth.
//!
//! Factors are advanced with the exact Gaussian transition of the linear SDE
//! over each grid step. One draw of three standard normals per step drives
//! the factors and, through `dZ = sqrt(dt) xi`, the Euler wealth update.
//! Each path owns a ChaCha stream selected by its index, so results do not
//! depend on how paths are scheduled across threads.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MctouError, Result};
use crate::linalg::expm;
use crate::model::{FactorState, ModelMatrices};
use crate::strategy::futures_loadings;
use crate::term_structure::{beta_intercept, loading_vector, ContractSpec, TRADING_DAYS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Physical measure, drift `mu - K x`.
    P,
    /// Pricing measure, drift `mu - lambda - K x`.
    Q,
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Measure::P => "P",
            Measure::Q => "Q",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationGrid {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
    pub measure: Measure,
    pub seed: u64,
}

impl SimulationGrid {
    pub fn new(t0: f64, t_end: f64, n_steps: usize, measure: Measure, seed: u64) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(MctouError::InvalidGrid(format!(
                "need t_end > t0, got [{t0}, {t_end}]"
            )));
        }
        if n_steps == 0 {
            return Err(MctouError::InvalidGrid("n_steps must be >= 1".into()));
        }
        Ok(SimulationGrid {
            t0,
            t_end,
            n_steps,
            measure,
            seed,
        })
    }

    /// Trading-day grid on `[0, t_end]` (252 days per year, at least one step).
    pub fn daily(t_end: f64, measure: Measure, seed: u64) -> Result<Self> {
        let n = (t_end * TRADING_DAYS).round().max(1.0) as usize;
        SimulationGrid::new(0.0, t_end, n, measure, seed)
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.n_steps as f64
    }

    /// `n_steps + 1` times; the last one is exactly `t_end`.
    pub fn times(&self) -> Vec<f64> {
        let n = self.n_steps;
        (0..=n)
            .map(|i| {
                if i == n {
                    self.t_end
                } else {
                    self.t0 + (self.t_end - self.t0) * (i as f64 / n as f64)
                }
            })
            .collect()
    }
}

/// Generator for path `path_id`: the seed selects the key, the path index the stream.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

/// A lower factor `L` with `L L' = cov` for a symmetric PSD matrix.
fn psd_factor(cov: &Matrix3<f64>) -> Matrix3<f64> {
    if let Some(ch) = cov.cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(*cov);
    let sq = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    eig.eigenvectors * Matrix3::from_diagonal(&sq)
}

/// Exact one-step transition `x' = Phi x + offset + L xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTransition {
    pub dt: f64,
    /// `exp(-K dt)`
    pub phi: Matrix3<f64>,
    /// `int_0^dt exp(-K s) ds b`, with `b = mu` or `mu - lambda`
    pub offset: Vector3<f64>,
    /// `int_0^dt exp(-K s) B B' exp(-K' s) ds`, `B = Sigma C`
    pub cov: Matrix3<f64>,
    pub chol: Matrix3<f64>,
}

impl ExactTransition {
    pub fn new(m: &ModelMatrices, dt: f64, measure: Measure) -> Self {
        let b = match measure {
            Measure::P => m.mu,
            Measure::Q => m.mu_q(),
        };
        let diff = m.diffusion();
        let bbt = diff * diff.transpose();

        // Van Loan: expm([[K, BB'], [0, -K']] dt) = [[*, G12], [0, Phi']]
        let mut h = DMatrix::<f64>::zeros(6, 6);
        for i in 0..3 {
            for j in 0..3 {
                h[(i, j)] = m.k[(i, j)] * dt;
                h[(i, 3 + j)] = bbt[(i, j)] * dt;
                h[(3 + i, 3 + j)] = -m.k[(j, i)] * dt;
            }
        }
        let g = expm(&h);
        let phi = Matrix3::from_fn(|i, j| g[(3 + j, 3 + i)]);
        let g12 = Matrix3::from_fn(|i, j| g[(i, 3 + j)]);
        let cov = symmetrize(&(phi * g12));

        // offset from expm([[-K, b], [0, 0]] dt)
        let mut a = DMatrix::<f64>::zeros(4, 4);
        for i in 0..3 {
            for j in 0..3 {
                a[(i, j)] = -m.k[(i, j)] * dt;
            }
            a[(i, 3)] = b[i] * dt;
        }
        let ea = expm(&a);
        let offset = Vector3::new(ea[(0, 3)], ea[(1, 3)], ea[(2, 3)]);

        ExactTransition {
            dt,
            phi,
            offset,
            chol: psd_factor(&cov),
            cov,
        }
    }

    pub fn mean(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.phi * x + self.offset
    }

    pub fn step(&self, x: &Vector3<f64>, xi: &Vector3<f64>) -> Vector3<f64> {
        self.mean(x) + self.chol * xi
    }
}

/// Conditional mean and covariance of `X_{t0 + h}` given `X_{t0} = x`.
pub fn conditional_moments(
    m: &ModelMatrices,
    x: &Vector3<f64>,
    horizon: f64,
    measure: Measure,
) -> (Vector3<f64>, Matrix3<f64>) {
    if horizon == 0.0 {
        return (*x, Matrix3::zeros());
    }
    let tr = ExactTransition::new(m, horizon, measure);
    (tr.mean(x), tr.cov)
}

/// One simulated path with whatever layers have been attached to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub path_id: u64,
    pub measure: Measure,
    pub seed: u64,
    pub times: Vec<f64>,
    /// `n_steps + 1` factor vectors.
    pub factors: Vec<Vector3<f64>>,
    /// `n_steps` standard normal draws that drove each step.
    pub shocks: Vec<Vector3<f64>>,
    pub contracts: Vec<ContractSpec>,
    /// `(n_steps + 1) x M` futures prices.
    pub futures: Option<DMatrix<f64>>,
    /// `n_steps` cash positions of length M, held over each step.
    pub strategy: Option<Vec<DVector<f64>>>,
    pub wealth: Option<Vec<f64>>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Reusable factor-path generator for one grid.
#[derive(Debug, Clone)]
pub struct FactorSimulator {
    grid: SimulationGrid,
    times: Vec<f64>,
    transition: ExactTransition,
    x0: Vector3<f64>,
}

impl FactorSimulator {
    pub fn new(m: &ModelMatrices, x0: &FactorState, grid: SimulationGrid) -> Result<Self> {
        if !x0.is_finite() {
            return Err(MctouError::InvalidGrid(
                "initial state must be finite".into(),
            ));
        }
        Ok(FactorSimulator {
            times: grid.times(),
            transition: ExactTransition::new(m, grid.dt(), grid.measure),
            grid,
            x0: x0.x,
        })
    }

    pub fn grid(&self) -> &SimulationGrid {
        &self.grid
    }

    pub fn transition(&self) -> &ExactTransition {
        &self.transition
    }

    pub fn path(&self, path_id: u64) -> PathBundle {
        let n = self.grid.n_steps;
        let mut rng = path_rng(self.grid.seed, path_id);
        let mut factors = Vec::with_capacity(n + 1);
        let mut shocks = Vec::with_capacity(n);
        let mut x = self.x0;
        factors.push(x);
        for _ in 0..n {
            let xi = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
            x = self.transition.step(&x, &xi);
            factors.push(x);
            shocks.push(xi);
        }
        PathBundle {
            path_id,
            measure: self.grid.measure,
            seed: self.grid.seed,
            times: self.times.clone(),
            factors,
            shocks,
            contracts: Vec::new(),
            futures: None,
            strategy: None,
            wealth: None,
        }
    }
}

/// Simulate one factor path (path index 0).
pub fn simulate_factors(
    m: &ModelMatrices,
    x0: &FactorState,
    grid: SimulationGrid,
) -> Result<PathBundle> {
    Ok(FactorSimulator::new(m, x0, grid)?.path(0))
}

/// `(a(t_i), beta(t_i))` for every grid time and contract.
#[derive(Debug, Clone)]
pub struct FuturesTable {
    contracts: Vec<ContractSpec>,
    // [time][contract]
    loadings: Vec<Vec<(Vector3<f64>, f64)>>,
}

impl FuturesTable {
    pub fn new(m: &ModelMatrices, times: &[f64], contracts: &[ContractSpec]) -> Result<Self> {
        if contracts.is_empty() {
            return Err(MctouError::EmptyContracts);
        }
        let loadings = times
            .iter()
            .map(|&t| {
                contracts
                    .iter()
                    .map(|c| {
                        Ok((
                            loading_vector(m, t, c.maturity)?,
                            beta_intercept(m, t, c.maturity)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FuturesTable {
            contracts: contracts.to_vec(),
            loadings,
        })
    }

    pub fn price(&self, step: usize, contract: usize, x: &Vector3<f64>) -> f64 {
        let (a, beta) = &self.loadings[step][contract];
        (a.dot(x) + beta).exp()
    }

    pub fn prices(&self, factors: &[Vector3<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(factors.len(), self.contracts.len(), |i, k| {
            self.price(i, k, &factors[i])
        })
    }
}

/// Attach futures prices `F_k(t_i, X_{t_i})` to a factor path.
pub fn futures_paths(
    m: &ModelMatrices,
    bundle: &PathBundle,
    contracts: &[ContractSpec],
) -> Result<PathBundle> {
    let table = FuturesTable::new(m, &bundle.times, contracts)?;
    let mut out = bundle.clone();
    out.futures = Some(table.prices(&bundle.factors));
    out.contracts = contracts.to_vec();
    Ok(out)
}

/// Per-step Euler increments of wealth for a deterministic strategy:
/// `dW_i = drift_i + vol_i . xi_i`.
#[derive(Debug, Clone)]
pub struct WealthIncrements {
    drift: Vec<f64>,
    vol: Vec<Vector3<f64>>,
}

impl WealthIncrements {
    /// `strategy[i]` is held over `[t_i, t_{i+1})`. Under `Q` futures are martingales,
    /// so the drift vanishes.
    pub fn new(
        m: &ModelMatrices,
        times: &[f64],
        measure: Measure,
        contracts: &[ContractSpec],
        strategy: &[DVector<f64>],
    ) -> Result<Self> {
        let n = times.len() - 1;
        if strategy.len() < n {
            return Err(MctouError::DimensionMismatch {
                expected: n,
                got: strategy.len(),
            });
        }
        let mut drift = Vec::with_capacity(n);
        let mut vol = Vec::with_capacity(n);
        for i in 0..n {
            let pi = &strategy[i];
            if pi.len() != contracts.len() {
                return Err(MctouError::DimensionMismatch {
                    expected: contracts.len(),
                    got: pi.len(),
                });
            }
            let dt = times[i + 1] - times[i];
            if pi.iter().all(|v| *v == 0.0) {
                drift.push(0.0);
                vol.push(Vector3::zeros());
                continue;
            }
            let load = futures_loadings(m, contracts, times[i])?;
            let d = match measure {
                Measure::P => pi.dot(&load.mu_f) * dt,
                Measure::Q => 0.0,
            };
            let row = load.sigma_f.tr_mul(pi) * dt.sqrt();
            drift.push(d);
            vol.push(Vector3::new(row[0], row[1], row[2]));
        }
        Ok(WealthIncrements { drift, vol })
    }

    pub fn path(&self, w0: f64, shocks: &[Vector3<f64>]) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.drift.len() + 1);
        let mut acc = w0;
        w.push(acc);
        for ((d, v), xi) in self.drift.iter().zip(&self.vol).zip(shocks) {
            acc += d + v.dot(xi);
            w.push(acc);
        }
        w
    }

    pub fn terminal(&self, w0: f64, shocks: &[Vector3<f64>]) -> f64 {
        self.drift
            .iter()
            .zip(&self.vol)
            .zip(shocks)
            .fold(w0, |acc, ((d, v), xi)| acc + d + v.dot(xi))
    }
}

/// Accumulate wealth along the bundle's own shocks.
pub fn simulate_wealth(
    m: &ModelMatrices,
    bundle: &PathBundle,
    contracts: &[ContractSpec],
    strategy: &[DVector<f64>],
    w0: f64,
) -> Result<PathBundle> {
    let inc = WealthIncrements::new(m, &bundle.times, bundle.measure, contracts, strategy)?;
    let mut out = bundle.clone();
    out.wealth = Some(inc.path(w0, &bundle.shocks));
    out.strategy = Some(strategy[..bundle.n_steps()].to_vec());
    if out.contracts.is_empty() {
        out.contracts = contracts.to_vec();
    }
    Ok(out)
}
