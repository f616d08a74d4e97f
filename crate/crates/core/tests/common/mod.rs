#![allow(dead_code)]

use mctou::{validate_params, ModelMatrices, ModelParams, SigmaConvention};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const RK4_STEP: f64 = 1e-5;

/// RK4 on the backward loading ODE, written in time-to-maturity:
/// `a' = -K' a`, `beta' = (mu - lambda)' a + 1/2 a' Sigma Omega Sigma a`, from `(e1, 0)`.
pub fn rk4_loading_and_beta(m: &ModelMatrices, tau: f64) -> (Vector3<f64>, f64) {
    let kt = m.k.transpose();
    let drift = m.mu_q();
    let cov = m.covariance();
    let f = |a: &Vector3<f64>| -> (Vector3<f64>, f64) {
        (-(kt * a), drift.dot(a) + 0.5 * a.dot(&(cov * a)))
    };
    let n = (tau / RK4_STEP).ceil().max(1.0) as usize;
    let h = tau / n as f64;
    let mut a = Vector3::x();
    let mut b = 0.0;
    for _ in 0..n {
        let (k1, l1) = f(&a);
        let (k2, l2) = f(&(a + k1 * (h / 2.0)));
        let (k3, l3) = f(&(a + k2 * (h / 2.0)));
        let (k4, l4) = f(&(a + k3 * h));
        a += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        b += (l1 + 2.0 * l2 + 2.0 * l3 + l4) * (h / 6.0);
    }
    (a, b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A valid parameter set over a broad range; `near_degenerate` puts `1/epsilon`
/// within 1e-6 of `kappa`.
pub fn random_params(r: &mut ChaCha8Rng, near_degenerate: bool) -> ModelParams {
    loop {
        let kappa = r.random_range(0.5..10.0);
        let epsilon = if near_degenerate {
            1.0 / (kappa + r.random_range(-1e-6..1e-6))
        } else {
            r.random_range(0.01..1.0)
        };
        let p = ModelParams {
            kappa,
            epsilon,
            delta: r.random_range(0.005..0.5),
            alpha2: r.random_range(-1.0..1.0),
            alpha3: r.random_range(-1.0..1.0),
            sigma1: r.random_range(0.05..1.0),
            sigma2: r.random_range(0.01..0.5),
            sigma3: r.random_range(0.01..0.5),
            rho12: r.random_range(-0.8..0.8),
            rho13: r.random_range(-0.6..0.6),
            rho23: r.random_range(-0.6..0.6),
            lambda1: r.random_range(-0.3..0.3),
            lambda2: r.random_range(-0.3..0.3),
            lambda3: r.random_range(-0.3..0.3),
            zeta: None,
            sigma_convention: if r.random_bool(0.5) {
                SigmaConvention::Raw
            } else {
                SigmaConvention::Effective
            },
        };
        if let Ok(p) = validate_params(p) {
            return p;
        }
    }
}

pub fn random_state(r: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        r.random_range(-1.0..2.0),
        r.random_range(-1.0..1.0),
        r.random_range(-1.0..1.0),
    )
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}
