//! Optimal dynamic futures portfolio under exponential utility.
//!
//! For cash positions `pi` in `M` futures, wealth follows
//! `dW = pi' mu_F dt + pi' Sigma_F dZ`. The value function is
//! `u(t, w) = -exp(-gamma w - 1/2 int_t^T Lambda^2(s) ds)` with
//! `Lambda^2 = mu_F' (Sigma_F Sigma_F')^-1 mu_F`, attained by
//! `pi* = (1/gamma) (Sigma_F Sigma_F')^-1 mu_F`. Neither depends on wealth
//! or on the factor state.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{MctouError, Result};
use crate::model::ModelMatrices;
use crate::quadrature::integrate_adaptive;
use crate::term_structure::{loading_vector, time_to_maturity, ContractSpec, TIME_SLACK};

/// Largest admissible condition number of `Sigma_F Sigma_F'`.
pub const MAX_CONDITION: f64 = 1e14;

/// Relative residual below which a loading row counts as linearly dependent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Absolute tolerance for `int Lambda^2`.
pub const LAMBDA_SQ_TOLERANCE: f64 = 1e-10;

pub const MAX_CONTRACTS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    pub contracts: Vec<ContractSpec>,
    pub gamma: f64,
    pub horizon: f64,
    pub w0: f64,
}

impl PortfolioSpec {
    pub fn new(contracts: Vec<ContractSpec>, gamma: f64, horizon: f64, w0: f64) -> Result<Self> {
        check_contracts(&contracts)?;
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(MctouError::InvalidPortfolio(format!(
                "risk aversion must be > 0, got {gamma}"
            )));
        }
        if !w0.is_finite() {
            return Err(MctouError::InvalidPortfolio(format!(
                "initial wealth must be finite, got {w0}"
            )));
        }
        let earliest = min_maturity(&contracts);
        if !(horizon > 0.0 && horizon <= earliest + TIME_SLACK * earliest.max(1.0)) {
            return Err(MctouError::InvalidPortfolio(format!(
                "horizon must lie in (0, {earliest}] (earliest maturity), got {horizon}"
            )));
        }
        Ok(PortfolioSpec {
            contracts,
            gamma,
            horizon,
            w0,
        })
    }

    pub fn len(&self) -> usize {
        self.contracts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contracts.is_empty()
    }
}

fn min_maturity(contracts: &[ContractSpec]) -> f64 {
    contracts
        .iter()
        .map(|c| c.maturity)
        .fold(f64::INFINITY, f64::min)
}

fn check_contracts(contracts: &[ContractSpec]) -> Result<()> {
    if contracts.is_empty() {
        return Err(MctouError::EmptyContracts);
    }
    if contracts.len() > MAX_CONTRACTS {
        return Err(MctouError::InvalidPortfolio(format!(
            "at most {MAX_CONTRACTS} contracts can be non-redundant, got {}",
            contracts.len()
        )));
    }
    for (i, a) in contracts.iter().enumerate() {
        for b in &contracts[i + 1..] {
            if a.maturity == b.maturity {
                return Err(MctouError::DuplicateMaturity {
                    maturity: a.maturity,
                    first: a.label.clone(),
                    second: b.label.clone(),
                });
            }
        }
    }
    Ok(())
}

/// Drift `mu_F` (length M) and volatility loadings `Sigma_F` (M x 3) of futures returns.
#[derive(Debug, Clone, PartialEq)]
pub struct FuturesLoadings {
    pub mu_f: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
}

impl FuturesLoadings {
    /// `Sigma_F Sigma_F'`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.sigma_f * self.sigma_f.transpose()
    }
}

/// `mu_F[k] = a_k(t)' lambda`, row k of `Sigma_F` is `(C' Sigma' a_k(t))'`.
pub fn futures_loadings(
    m: &ModelMatrices,
    contracts: &[ContractSpec],
    t: f64,
) -> Result<FuturesLoadings> {
    if contracts.is_empty() {
        return Err(MctouError::EmptyContracts);
    }
    let n = contracts.len();
    let mut mu_f = DVector::zeros(n);
    let mut sigma_f = DMatrix::zeros(n, 3);
    let diffusion_t = m.diffusion().transpose();
    for (k, c) in contracts.iter().enumerate() {
        let a = loading_vector(m, t, c.maturity)?;
        mu_f[k] = a.dot(&m.lambda);
        let row = diffusion_t * a;
        for j in 0..3 {
            sigma_f[(k, j)] = row[j];
        }
    }
    check_rank(&sigma_f, contracts)?;
    Ok(FuturesLoadings { mu_f, sigma_f })
}

// Modified Gram-Schmidt over the rows; the first row whose residual vanishes
// relative to its own norm is the redundant contract.
fn check_rank(sigma_f: &DMatrix<f64>, contracts: &[ContractSpec]) -> Result<()> {
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(3);
    for (k, c) in contracts.iter().enumerate() {
        let row: DVector<f64> = sigma_f.row(k).transpose();
        let norm = row.norm();
        let mut r = row.clone();
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let rn = r.norm();
        if norm == 0.0 || rn <= RANK_TOLERANCE * norm {
            return Err(MctouError::RankDeficient {
                contract: c.label.clone(),
            });
        }
        basis.push(r / rn);
    }
    Ok(())
}

/// `Lambda^2(t)` together with the condition number of `Sigma_F Sigma_F'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSquared {
    pub value: f64,
    pub cond: f64,
}

struct Solved {
    lambda_sq: LambdaSquared,
    // (Sigma_F Sigma_F')^-1 mu_F
    direction: DVector<f64>,
}

fn solve(load: &FuturesLoadings) -> Result<Solved> {
    let g = load.gram();
    let eig = g.clone().symmetric_eigenvalues();
    let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().map(|e| e.abs()).fold(0.0, f64::max);
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_CONDITION {
        return Err(MctouError::IllConditioned { cond });
    }
    let chol = g.cholesky().ok_or(MctouError::IllConditioned { cond })?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&load.mu_f)
        .ok_or(MctouError::IllConditioned { cond })?;
    let direction = l
        .transpose()
        .solve_upper_triangular(&y)
        .ok_or(MctouError::IllConditioned { cond })?;
    Ok(Solved {
        lambda_sq: LambdaSquared {
            value: y.norm_squared(),
            cond,
        },
        direction,
    })
}

/// Aggregate squared Sharpe ratio of the tradable set at `t`.
pub fn lambda_squared(
    m: &ModelMatrices,
    contracts: &[ContractSpec],
    t: f64,
) -> Result<LambdaSquared> {
    Ok(solve(&futures_loadings(m, contracts, t)?)?.lambda_sq)
}

/// Everything the optimal portfolio needs at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyPoint {
    pub t: f64,
    pub pi: DVector<f64>,
    pub mu_f: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
    pub lambda_sq: f64,
    pub cond: f64,
}

fn check_horizon(spec: &PortfolioSpec, t: f64) -> Result<()> {
    time_to_maturity(t, spec.horizon).map(|_| ())
}

pub fn strategy_point(m: &ModelMatrices, spec: &PortfolioSpec, t: f64) -> Result<StrategyPoint> {
    check_horizon(spec, t)?;
    let load = futures_loadings(m, &spec.contracts, t)?;
    let solved = solve(&load)?;
    Ok(StrategyPoint {
        t,
        pi: solved.direction / spec.gamma,
        mu_f: load.mu_f,
        sigma_f: load.sigma_f,
        lambda_sq: solved.lambda_sq.value,
        cond: solved.lambda_sq.cond,
    })
}

/// Optimal cash positions `pi*(t)`.
pub fn optimal_strategy(m: &ModelMatrices, spec: &PortfolioSpec, t: f64) -> Result<DVector<f64>> {
    Ok(strategy_point(m, spec, t)?.pi)
}

/// Scalar single-contract form `mu_F / (gamma sigma_F' sigma_F)`.
pub fn single_contract_strategy(
    m: &ModelMatrices,
    contract: &ContractSpec,
    gamma: f64,
    t: f64,
) -> Result<f64> {
    let a = loading_vector(m, t, contract.maturity)?;
    let mu = a.dot(&m.lambda);
    let sig = m.diffusion().transpose() * a;
    Ok(mu / (gamma * sig.dot(&sig)))
}

/// Strategy evaluated exactly at each of `times`; output order follows input order.
pub fn strategy_on_grid(
    m: &ModelMatrices,
    spec: &PortfolioSpec,
    times: &[f64],
) -> Result<Vec<StrategyPoint>> {
    times
        .par_iter()
        .map(|&t| strategy_point(m, spec, t))
        .collect()
}

/// `int_t^horizon Lambda^2(s) ds`.
pub fn integrated_lambda_sq(
    m: &ModelMatrices,
    contracts: &[ContractSpec],
    t: f64,
    horizon: f64,
) -> Result<f64> {
    time_to_maturity(t, horizon)?;
    if t >= horizon {
        return Ok(0.0);
    }
    // surface the first failure from inside the integrand
    let failure: RefCell<Option<MctouError>> = RefCell::new(None);
    let v = integrate_adaptive(
        |s| match lambda_squared(m, contracts, s) {
            Ok(l) => l.value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        t,
        horizon,
        LAMBDA_SQ_TOLERANCE,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// `u(t, w) = -exp(-gamma w - 1/2 int_t^T Lambda^2)`.
pub fn value_function(m: &ModelMatrices, spec: &PortfolioSpec, t: f64, w: f64) -> Result<f64> {
    check_horizon(spec, t)?;
    let int = integrated_lambda_sq(m, &spec.contracts, t, spec.horizon)?;
    Ok(-(-spec.gamma * w - 0.5 * int).exp())
}

/// `C(t, w) = w + 1/(2 gamma) int_t^T Lambda^2`.
pub fn certainty_equivalent(
    m: &ModelMatrices,
    spec: &PortfolioSpec,
    t: f64,
    w: f64,
) -> Result<f64> {
    check_horizon(spec, t)?;
    let int = integrated_lambda_sq(m, &spec.contracts, t, spec.horizon)?;
    Ok(w + int / (2.0 * spec.gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_matrices, ModelParams, SigmaConvention};
    use nalgebra::Vector3;

    const T1: f64 = 1.0 / 12.0;

    fn raw() -> ModelMatrices {
        assemble_matrices(&ModelParams::table1().with_convention(SigmaConvention::Raw))
    }

    fn t1() -> Vec<ContractSpec> {
        vec![ContractSpec::parse("T1").unwrap()]
    }

    #[test]
    fn spec_validation() {
        let all = ContractSpec::monthly();
        assert!(PortfolioSpec::new(all.clone(), 1.0, T1, 0.0).is_ok());
        assert!(PortfolioSpec::new(all.clone(), 1.0, 2.0 * T1, 0.0).is_err());
        assert!(PortfolioSpec::new(all.clone(), 0.0, T1, 0.0).is_err());
        assert!(PortfolioSpec::new(vec![], 1.0, T1, 0.0).is_err());
        let dup = vec![all[0].clone(), all[0].clone()];
        assert!(matches!(
            PortfolioSpec::new(dup, 1.0, T1, 0.0),
            Err(MctouError::DuplicateMaturity { .. })
        ));
        let mut four = all.clone();
        four.push(ContractSpec::new("T4", 4.0 / 12.0).unwrap());
        assert!(PortfolioSpec::new(four, 1.0, T1, 0.0).is_err());
    }

    #[test]
    fn zero_premia_give_zero_drift() {
        let p = ModelParams::table1().with_lambda(Vector3::zeros());
        let m = assemble_matrices(&p);
        let load = futures_loadings(&m, &ContractSpec::monthly(), 0.0).unwrap();
        assert_eq!(load.mu_f, DVector::zeros(3));
        assert_eq!(
            lambda_squared(&m, &ContractSpec::monthly(), 0.0)
                .unwrap()
                .value,
            0.0
        );
        let spec = PortfolioSpec::new(ContractSpec::monthly(), 1.0, T1, 0.0).unwrap();
        assert_eq!(optimal_strategy(&m, &spec, 0.0).unwrap(), DVector::zeros(3));
        assert_eq!(
            value_function(&m, &spec, 0.0, 0.3).unwrap(),
            -(-0.3f64).exp()
        );
    }

    #[test]
    fn single_contract_loadings_at_start_and_maturity() {
        let m = raw();
        let load = futures_loadings(&m, &t1(), 0.0).unwrap();
        assert!((load.mu_f[0] - 0.023133).abs() < 1e-6);
        let ss = load.sigma_f.row(0).norm_squared();
        assert!((ss - 0.27845).abs() < 1e-5);

        let load = futures_loadings(&m, &t1(), T1).unwrap();
        assert!((load.mu_f[0] - 0.02).abs() < 1e-15);
        assert!((load.sigma_f.row(0).norm_squared() - 0.64).abs() < 1e-15);
    }

    #[test]
    fn single_contract_lambda_sq() {
        let m = raw();
        let l0 = lambda_squared(&m, &t1(), 0.0).unwrap();
        assert!((l0.value - 1.9218e-3).abs() < 1e-7);
        assert_eq!(l0.cond, 1.0);
        let lt = lambda_squared(&m, &t1(), T1).unwrap();
        assert!((lt.value - 6.25e-4).abs() < 1e-15);
    }

    #[test]
    fn single_contract_strategy_value() {
        let m = raw();
        let spec = PortfolioSpec::new(t1(), 1.0, T1, 0.0).unwrap();
        let pi = optimal_strategy(&m, &spec, 0.0).unwrap();
        assert!((pi[0] - 0.083078).abs() < 1e-5);
        let scalar = single_contract_strategy(&m, &spec.contracts[0], 1.0, 0.0).unwrap();
        assert!((pi[0] - scalar).abs() < 1e-15);
    }

    #[test]
    fn doubling_gamma_halves_positions() {
        let m = assemble_matrices(&ModelParams::table1());
        let s1 = PortfolioSpec::new(ContractSpec::monthly(), 1.0, T1, 0.0).unwrap();
        let s2 = PortfolioSpec::new(ContractSpec::monthly(), 2.0, T1, 0.0).unwrap();
        for t in [0.0, 0.03, T1] {
            let p1 = optimal_strategy(&m, &s1, t).unwrap();
            let p2 = optimal_strategy(&m, &s2, t).unwrap();
            assert_eq!(p1 * 0.5, p2);
        }
    }

    #[test]
    fn value_function_terminal_and_monotone() {
        let m = assemble_matrices(&ModelParams::table1());
        let spec = PortfolioSpec::new(ContractSpec::monthly(), 1.0, T1, 0.0).unwrap();
        assert_eq!(
            value_function(&m, &spec, T1, 0.7).unwrap(),
            -(-0.7f64).exp()
        );
        let u0 = value_function(&m, &spec, 0.0, 0.0).unwrap();
        let u1 = value_function(&m, &spec, 0.0, 0.1).unwrap();
        assert!(u0 < u1 && u1 < 0.0);
        assert!(value_function(&m, &spec, 2.0 * T1, 0.0).is_err());
    }

    #[test]
    fn certainty_equivalent_short_horizon() {
        let m = assemble_matrices(&ModelParams::table1());
        let spec = PortfolioSpec::new(ContractSpec::monthly(), 1.0, 1e-9, 0.25).unwrap();
        let ce = certainty_equivalent(&m, &spec, 0.0, 0.25).unwrap();
        assert!((ce - 0.25).abs() < 1e-9);
    }

    #[test]
    fn redundant_rows_detected() {
        let m = raw();
        let c = t1();
        let mut sigma_f = DMatrix::zeros(2, 3);
        sigma_f.set_row(0, &nalgebra::RowVector3::new(1.0, 2.0, 3.0));
        sigma_f.set_row(1, &nalgebra::RowVector3::new(2.0, 4.0, 6.0));
        let contracts = vec![c[0].clone(), ContractSpec::new("dup", 0.2).unwrap()];
        match check_rank(&sigma_f, &contracts) {
            Err(MctouError::RankDeficient { contract }) => assert_eq!(contract, "dup"),
            other => panic!("unexpected {other:?}"),
        }
        let _ = m;
    }

    #[test]
    fn near_duplicate_maturities_fail_the_gate() {
        let m = raw();
        let contracts = vec![
            ContractSpec::new("a", 0.1).unwrap(),
            ContractSpec::new("b", 0.1 + 1e-12).unwrap(),
        ];
        let err = lambda_squared(&m, &contracts, 0.0).unwrap_err();
        assert!(err.is_numerical(), "{err}");
    }
}
