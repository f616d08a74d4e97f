mod common;

use mctou::strategy::{futures_loadings, optimal_strategy, value_function};
use mctou::{assemble_matrices, ContractSpec, ModelParams, PortfolioSpec};
use nalgebra::DVector;
use rand::Rng;

use common::{random_params, rng};

/// `u_t + pi' mu_F u_w + 1/2 pi' G pi u_ww` with `u_w`, `u_ww` analytic and `u_t`
/// by extrapolated central differences.
fn hamiltonian_residual(
    m: &mctou::ModelMatrices,
    spec: &PortfolioSpec,
    t: f64,
    w: f64,
    pi: &DVector<f64>,
    h: f64,
) -> f64 {
    let u = value_function(m, spec, t, w).unwrap();
    let central = |h: f64| {
        (value_function(m, spec, t + h, w).unwrap() - value_function(m, spec, t - h, w).unwrap())
            / (2.0 * h)
    };
    // Richardson step removes the h^2 term
    let ut = (4.0 * central(h / 2.0) - central(h)) / 3.0;
    let uw = -spec.gamma * u;
    let uww = spec.gamma * spec.gamma * u;
    let load = futures_loadings(m, &spec.contracts, t).unwrap();
    let g = load.gram();
    ut + pi.dot(&load.mu_f) * uw + 0.5 * pi.dot(&(&g * pi)) * uww
}

#[test]
fn value_function_solves_hjb_at_optimum() {
    let mut r = rng(11);
    let all = ContractSpec::monthly();
    for i in 0..40 {
        let p = if i < 10 {
            ModelParams::table1()
        } else {
            random_params(&mut r, false)
        };
        let m = assemble_matrices(&p);
        let contracts: Vec<_> = all[..1 + i % 3].to_vec();
        let gamma = r.random_range(0.5..4.0);
        let spec = PortfolioSpec::new(contracts, gamma, 1.0 / 12.0, 0.0).unwrap();
        let t = r.random_range(0.01..0.07);
        let w = r.random_range(-0.5..0.5);
        let pi = optimal_strategy(&m, &spec, t).unwrap();
        let res = hamiltonian_residual(&m, &spec, t, w, &pi, 1e-3);
        assert!(res.abs() <= 1e-6, "draw {i}: residual {res:e}");

        // any other position lowers the Hamiltonian
        for k in 0..pi.len() {
            let mut bumped = pi.clone();
            bumped[k] += 0.1 * pi[k].abs().max(1e-3);
            assert!(hamiltonian_residual(&m, &spec, t, w, &bumped, 1e-3) < res);
        }
    }
}

#[test]
fn strategy_has_no_wealth_or_state_input() {
    // the API takes neither, so repeated calls are identical
    let m = assemble_matrices(&ModelParams::table1());
    let spec = PortfolioSpec::new(ContractSpec::monthly(), 1.0, 1.0 / 12.0, 5.0).unwrap();
    let other = PortfolioSpec {
        w0: -3.0,
        ..spec.clone()
    };
    for t in [0.0, 0.03, 1.0 / 12.0] {
        assert_eq!(
            optimal_strategy(&m, &spec, t).unwrap(),
            optimal_strategy(&m, &other, t).unwrap()
        );
    }
}
