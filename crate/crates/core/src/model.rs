//! Model parameters and the matrix form of the three-factor system.
//!
//! The log spot `x1` mean-reverts at rate `kappa` towards `x2 + x3`, where
//! `x2` is a fast OU factor (rate `1/epsilon`) and `x3` a slow one (rate
//! `delta`). In matrix form
//!
//! ```text
//! dX = (mu - K X) dt + Sigma C dZ^P
//! dX = (mu - lambda - K X) dt + Sigma C dZ^Q
//! ```

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{MctouError, ParamViolation, Result};

/// How `sigma2` and `sigma3` map onto the diagonal of `Sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaConvention {
    /// Coefficients of the factor SDEs: `Sigma = diag(s1, s2/sqrt(eps), sqrt(delta) s3)`.
    #[default]
    Raw,
    /// Values are the diagonal of `Sigma` as given: `Sigma = diag(s1, s2, s3)`.
    ///
    /// This is the reading under which the published certainty-equivalent
    /// table is reproduced from the published parameter table.
    Effective,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kappa: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub rho12: f64,
    pub rho13: f64,
    pub rho23: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Raw market prices of risk. When present, `lambda` must be their image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<[f64; 3]>,
    #[serde(default)]
    pub sigma_convention: SigmaConvention,
}

/// Tolerance for `lambda` versus the image of `zeta`.
pub const ZETA_TOLERANCE: f64 = 1e-12;

impl ModelParams {
    /// The published parameter set, with volatilities read as the diagonal of `Sigma`.
    pub fn table1() -> Self {
        ModelParams {
            kappa: 5.0,
            epsilon: 0.05,
            delta: 0.01,
            alpha2: 0.5,
            alpha3: 0.5,
            sigma1: 0.8,
            sigma2: 0.02,
            sigma3: 0.3,
            rho12: 0.0,
            rho13: 0.0,
            rho23: 0.0,
            lambda1: 0.02,
            lambda2: 0.02,
            lambda3: 0.02,
            zeta: None,
            sigma_convention: SigmaConvention::Effective,
        }
    }

    /// Initial factor state of the published example, `x0 = (1, 0.5, 0.5)`.
    pub fn table1_x0() -> Vector3<f64> {
        Vector3::new(1.0, 0.5, 0.5)
    }

    pub fn lambda(&self) -> Vector3<f64> {
        Vector3::new(self.lambda1, self.lambda2, self.lambda3)
    }

    pub fn with_lambda(mut self, lambda: Vector3<f64>) -> Self {
        self.lambda1 = lambda[0];
        self.lambda2 = lambda[1];
        self.lambda3 = lambda[2];
        self
    }

    pub fn with_correlations(mut self, rho12: f64, rho13: f64, rho23: f64) -> Self {
        self.rho12 = rho12;
        self.rho13 = rho13;
        self.rho23 = rho23;
        self
    }

    pub fn with_convention(mut self, convention: SigmaConvention) -> Self {
        self.sigma_convention = convention;
        self
    }

    /// Diagonal of `Sigma` under the configured convention.
    pub fn sigma_diagonal(&self) -> Vector3<f64> {
        match self.sigma_convention {
            SigmaConvention::Raw => Vector3::new(
                self.sigma1,
                self.sigma2 / self.epsilon.sqrt(),
                self.delta.sqrt() * self.sigma3,
            ),
            SigmaConvention::Effective => Vector3::new(self.sigma1, self.sigma2, self.sigma3),
        }
    }

    /// Lower-triangular correlation loading `C`.
    pub fn correlation_factor(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0,
            0.0,
            0.0,
            self.rho12,
            (1.0 - self.rho12 * self.rho12).sqrt(),
            0.0,
            self.rho13,
            self.rho23,
            (1.0 - self.rho13 * self.rho13 - self.rho23 * self.rho23).sqrt(),
        )
    }
}

fn push(errs: &mut Vec<ParamViolation>, field: &'static str, message: String) {
    errs.push(ParamViolation { field, message });
}

/// Check every constraint and report all violations at once.
pub fn validate_params(p: ModelParams) -> std::result::Result<ModelParams, Vec<ParamViolation>> {
    let mut errs = Vec::new();

    let all = [
        ("kappa", p.kappa),
        ("epsilon", p.epsilon),
        ("delta", p.delta),
        ("alpha2", p.alpha2),
        ("alpha3", p.alpha3),
        ("sigma1", p.sigma1),
        ("sigma2", p.sigma2),
        ("sigma3", p.sigma3),
        ("rho12", p.rho12),
        ("rho13", p.rho13),
        ("rho23", p.rho23),
        ("lambda1", p.lambda1),
        ("lambda2", p.lambda2),
        ("lambda3", p.lambda3),
    ];
    for (name, v) in all {
        if !v.is_finite() {
            push(&mut errs, name, format!("must be finite, got {v}"));
        }
    }
    for (name, v) in [
        ("kappa", p.kappa),
        ("epsilon", p.epsilon),
        ("delta", p.delta),
        ("sigma1", p.sigma1),
        ("sigma2", p.sigma2),
        ("sigma3", p.sigma3),
    ] {
        if v.is_finite() && v <= 0.0 {
            push(&mut errs, name, format!("must be > 0, got {v}"));
        }
    }
    let corr_ok_12 = p.rho12.abs() < 1.0;
    if p.rho12.is_finite() && !corr_ok_12 {
        push(
            &mut errs,
            "rho12",
            format!("rho12 out of open interval (-1, 1), got {}", p.rho12),
        );
    }
    let joint = p.rho13 * p.rho13 + p.rho23 * p.rho23;
    let corr_ok_3 = joint < 1.0;
    if joint.is_finite() && !corr_ok_3 {
        push(
            &mut errs,
            "rho13,rho23",
            format!("rho13^2 + rho23^2 must be < 1, got {joint}"),
        );
    }
    if let Some(zeta) = p.zeta {
        if zeta.iter().any(|z| !z.is_finite()) {
            push(&mut errs, "zeta", "must be finite".to_string());
        } else if corr_ok_12 && corr_ok_3 && errs.is_empty() {
            let implied = lambda_from_zeta(&p, Vector3::from(zeta));
            let given = p.lambda();
            for (i, field) in ["lambda1", "lambda2", "lambda3"].into_iter().enumerate() {
                if (implied[i] - given[i]).abs() > ZETA_TOLERANCE {
                    push(
                        &mut errs,
                        field,
                        format!(
                            "inconsistent with zeta: expected {}, got {}",
                            implied[i], given[i]
                        ),
                    );
                }
            }
        }
    }

    if errs.is_empty() {
        Ok(p)
    } else {
        Err(errs)
    }
}

/// Combined market prices of risk, `lambda = Sigma C zeta`.
///
/// Under [`SigmaConvention::Raw`] this is
/// `(z1 s1, s2/sqrt(eps) (z1 r12 + z2 sqrt(1-r12^2)), sqrt(delta) s3 (z1 r13 + z2 r23 + z3 sqrt(1-r13^2-r23^2)))`.
pub fn lambda_from_zeta(p: &ModelParams, zeta: Vector3<f64>) -> Vector3<f64> {
    let s = p.sigma_diagonal();
    let cz = p.correlation_factor() * zeta;
    s.component_mul(&cz)
}

/// Matrix-form coefficients of the factor system.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMatrices {
    pub k: Matrix3<f64>,
    pub sigma: Matrix3<f64>,
    pub c: Matrix3<f64>,
    pub mu: Vector3<f64>,
    pub lambda: Vector3<f64>,
    /// Instantaneous correlation of the Brownian drivers, `C C'`.
    pub omega: Matrix3<f64>,
    pub kappa: f64,
    pub fast_rate: f64,
    pub slow_rate: f64,
}

impl ModelMatrices {
    /// Diffusion loading `Sigma C`.
    pub fn diffusion(&self) -> Matrix3<f64> {
        self.sigma * self.c
    }

    /// Instantaneous covariance `Sigma Omega Sigma`.
    pub fn covariance(&self) -> Matrix3<f64> {
        self.sigma * self.omega * self.sigma
    }

    /// Drift intercept under the pricing measure, `mu - lambda`.
    pub fn mu_q(&self) -> Vector3<f64> {
        self.mu - self.lambda
    }
}

/// Assemble `K`, `Sigma`, `C`, `mu`, `lambda` and `Omega`. Assumes validated input.
pub fn assemble_matrices(p: &ModelParams) -> ModelMatrices {
    let fast = 1.0 / p.epsilon;
    let k = Matrix3::new(
        p.kappa, -p.kappa, -p.kappa, //
        0.0, fast, 0.0, //
        0.0, 0.0, p.delta,
    );
    let sigma = Matrix3::from_diagonal(&p.sigma_diagonal());
    let c = p.correlation_factor();
    let omega = c * c.transpose();
    ModelMatrices {
        k,
        sigma,
        c,
        mu: Vector3::new(0.0, p.alpha2 / p.epsilon, p.delta * p.alpha3),
        lambda: p.lambda(),
        omega,
        kappa: p.kappa,
        fast_rate: fast,
        slow_rate: p.delta,
    }
}

/// Validate then assemble.
pub fn build_model(p: ModelParams) -> Result<ModelMatrices> {
    let p = validate_params(p).map_err(MctouError::InvalidParams)?;
    Ok(assemble_matrices(&p))
}

/// Factor vector `(log spot, fast factor, slow factor)` at time `t` (years).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorState {
    pub x: Vector3<f64>,
    pub t: f64,
}

impl FactorState {
    pub fn new(t: f64, x: Vector3<f64>) -> Self {
        FactorState { x, t }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}
