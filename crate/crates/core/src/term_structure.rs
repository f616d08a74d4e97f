//! Closed-form futures prices.
//!
//! `F(t, x) = exp(a(t)'x + beta(t))` with `a(t) = exp(-(T-t) K') e1` and
//! `beta(t) = int_t^T (mu - lambda)'a(s) + 1/2 a(s)' Sigma Omega Sigma a(s) ds`.

use nalgebra::Vector3;

use crate::error::{MctouError, Result};
use crate::linalg::expm3;
use crate::model::{FactorState, ModelMatrices};
use crate::quadrature::integrate_adaptive;

/// Below this gap between mean-reversion rates the componentwise closed form
/// is replaced by a full matrix exponential.
pub const DEGENERATE_RATE_GAP: f64 = 1e-8;

/// Absolute tolerance for the intercept integral.
pub const BETA_TOLERANCE: f64 = 1e-10;

/// Slack allowed when comparing grid times against maturities.
pub const TIME_SLACK: f64 = 1e-12;

/// Trading days per year.
pub const TRADING_DAYS: f64 = 252.0;
/// Trading days per month.
pub const DAYS_PER_MONTH: usize = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractSpec {
    pub maturity: f64,
    pub label: String,
}

impl ContractSpec {
    pub fn new(label: impl Into<String>, maturity: f64) -> Result<Self> {
        let label = label.into();
        if !(maturity.is_finite() && maturity > 0.0) {
            return Err(MctouError::InvalidContract(format!(
                "{label}: maturity must be positive, got {maturity}"
            )));
        }
        Ok(ContractSpec { maturity, label })
    }

    /// `T1`, `T2`, `T3` map to 1/12, 2/12, 3/12 years; anything else is read as
    /// a year fraction.
    pub fn parse(token: &str) -> Result<Self> {
        let token = token.trim();
        let months = match token.to_ascii_uppercase().as_str() {
            "T1" => Some(1.0),
            "T2" => Some(2.0),
            "T3" => Some(3.0),
            _ => None,
        };
        match months {
            Some(k) => ContractSpec::new(token.to_ascii_uppercase(), k / 12.0),
            None => {
                let maturity: f64 = token.parse().map_err(|_| {
                    MctouError::InvalidContract(format!(
                        "{token:?} is neither T1/T2/T3 nor a year fraction"
                    ))
                })?;
                ContractSpec::new(token, maturity)
            }
        }
    }

    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        let v = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(ContractSpec::parse)
            .collect::<Result<Vec<_>>>()?;
        if v.is_empty() {
            return Err(MctouError::EmptyContracts);
        }
        Ok(v)
    }

    /// The three monthly contracts of the published example.
    pub fn monthly() -> Vec<Self> {
        ["T1", "T2", "T3"]
            .iter()
            .map(|s| ContractSpec::parse(s).expect("static label"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuturesCurvePoint {
    pub t: f64,
    pub maturity: f64,
    pub label: String,
    pub a: Vector3<f64>,
    pub beta: f64,
    pub price: f64,
}

pub(crate) fn time_to_maturity(t: f64, maturity: f64) -> Result<f64> {
    let tau = maturity - t;
    if tau < -TIME_SLACK * maturity.abs().max(1.0) || !tau.is_finite() {
        return Err(MctouError::TimeAfterMaturity { t, maturity });
    }
    Ok(tau.max(0.0))
}

/// `(exp(-r1 tau) - exp(-r2 tau)) / (r2 - r1)`, symmetric in the two rates.
fn exp_divided_difference(r1: f64, r2: f64, tau: f64) -> f64 {
    let (slow, fast) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
    let gap = fast - slow;
    if gap == 0.0 {
        return tau * (-slow * tau).exp();
    }
    (-slow * tau).exp() * -(-gap * tau).exp_m1() / gap
}

/// Loading vector for time to maturity `tau`.
pub fn loading_for_tau(m: &ModelMatrices, tau: f64) -> Vector3<f64> {
    if tau == 0.0 {
        return Vector3::x();
    }
    let k = m.kappa;
    if (m.fast_rate - k).abs() <= DEGENERATE_RATE_GAP
        || (m.slow_rate - k).abs() <= DEGENERATE_RATE_GAP
    {
        let e = expm3(&(m.k.transpose() * -tau));
        return e.column(0).into_owned();
    }
    Vector3::new(
        (-k * tau).exp(),
        k * exp_divided_difference(k, m.fast_rate, tau),
        k * exp_divided_difference(k, m.slow_rate, tau),
    )
}

/// `a(t) = exp(-(T - t) K') e1`.
pub fn loading_vector(m: &ModelMatrices, t: f64, maturity: f64) -> Result<Vector3<f64>> {
    Ok(loading_for_tau(m, time_to_maturity(t, maturity)?))
}

fn beta_for_tau(m: &ModelMatrices, tau: f64) -> f64 {
    if tau == 0.0 {
        return 0.0;
    }
    let drift = m.mu_q();
    let cov = m.covariance();
    integrate_adaptive(
        |s| {
            let a = loading_for_tau(m, s);
            drift.dot(&a) + 0.5 * a.dot(&(cov * a))
        },
        0.0,
        tau,
        BETA_TOLERANCE,
    )
}

/// Intercept `beta(t)` of the log futures price.
pub fn beta_intercept(m: &ModelMatrices, t: f64, maturity: f64) -> Result<f64> {
    Ok(beta_for_tau(m, time_to_maturity(t, maturity)?))
}

pub fn curve_point(
    m: &ModelMatrices,
    s: &FactorState,
    contract: &ContractSpec,
) -> Result<FuturesCurvePoint> {
    let tau = time_to_maturity(s.t, contract.maturity)?;
    let a = loading_for_tau(m, tau);
    let beta = beta_for_tau(m, tau);
    Ok(FuturesCurvePoint {
        t: s.t,
        maturity: contract.maturity,
        label: contract.label.clone(),
        a,
        beta,
        price: (a.dot(&s.x) + beta).exp(),
    })
}

/// `F(t, x) = exp(a(t)'x + beta(t))`.
pub fn futures_price(m: &ModelMatrices, s: &FactorState, maturity: f64) -> Result<f64> {
    let tau = time_to_maturity(s.t, maturity)?;
    if tau == 0.0 {
        return Ok(s.x[0].exp());
    }
    Ok((loading_for_tau(m, tau).dot(&s.x) + beta_for_tau(m, tau)).exp())
}

/// One point per contract, sorted by maturity.
pub fn curve(
    m: &ModelMatrices,
    s: &FactorState,
    contracts: &[ContractSpec],
) -> Result<Vec<FuturesCurvePoint>> {
    if contracts.is_empty() {
        return Err(MctouError::EmptyContracts);
    }
    let mut pts = contracts
        .iter()
        .map(|c| curve_point(m, s, c))
        .collect::<Result<Vec<_>>>()?;
    pts.sort_by(|a, b| a.maturity.total_cmp(&b.maturity));
    Ok(pts)
}
