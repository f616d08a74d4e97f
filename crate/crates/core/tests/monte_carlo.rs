mod common;

use mctou::dynamics::{conditional_moments, FactorSimulator, WealthIncrements};
use mctou::experiments::mean_and_se;
use mctou::strategy::strategy_on_grid;
use mctou::{
    assemble_matrices, ContractSpec, FactorState, Measure, ModelParams, PortfolioSpec,
    SimulationGrid,
};
use nalgebra::{DVector, Vector3};

const T1: f64 = 1.0 / 12.0;
const Z95: f64 = 1.959_963_984_540_054;

fn x0() -> FactorState {
    FactorState::new(0.0, ModelParams::table1_x0())
}

#[test]
fn terminal_fast_factor_moments() {
    let m = assemble_matrices(&ModelParams::table1());
    let grid = SimulationGrid::daily(T1, Measure::P, 7).unwrap();
    let sim = FactorSimulator::new(&m, &x0(), grid).unwrap();
    let n = 20_000;
    let xs: Vec<f64> = (0..n)
        .map(|i| sim.path(i).factors.last().unwrap()[1])
        .collect();
    let (mean, se) = mean_and_se(&xs);
    let (m_ref, c_ref) = conditional_moments(&m, &x0().x, T1, Measure::P);
    assert!((mean - m_ref[1]).abs() < 4.0 * se, "{mean} vs {}", m_ref[1]);
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    // sd of the sample variance for Gaussian data is var * sqrt(2/(n-1))
    let tol = 4.0 * c_ref[(1, 1)] * (2.0 / (n as f64 - 1.0)).sqrt();
    assert!(
        (var - c_ref[(1, 1)]).abs() < tol,
        "{var} vs {}",
        c_ref[(1, 1)]
    );
}

#[test]
fn analytic_bands_cover_95_percent() {
    let m = assemble_matrices(&ModelParams::table1());
    let grid = SimulationGrid::daily(T1, Measure::P, 42).unwrap();
    let sim = FactorSimulator::new(&m, &x0(), grid).unwrap();
    let times = grid.times();
    let bands: Vec<(Vector3<f64>, Vector3<f64>)> = times[1..]
        .iter()
        .map(|&t| {
            let (mean, cov) = conditional_moments(&m, &x0().x, t, Measure::P);
            (mean, Vector3::from_fn(|i, _| Z95 * cov[(i, i)].sqrt()))
        })
        .collect();
    let (mut inside, mut total) = (0usize, 0usize);
    for id in 0..4000 {
        let path = sim.path(id);
        for (x, (mean, half)) in path.factors[1..].iter().zip(&bands) {
            for k in 0..3 {
                total += 1;
                inside += ((x[k] - mean[k]).abs() <= half[k]) as usize;
            }
        }
    }
    let frac = inside as f64 / total as f64;
    assert!((0.94..=0.96).contains(&frac), "{frac}");
}

#[test]
fn zero_premia_wealth_is_driftless() {
    let p = ModelParams::table1().with_lambda(Vector3::zeros());
    let m = assemble_matrices(&p);
    let contracts = ContractSpec::monthly();
    let grid = SimulationGrid::daily(T1, Measure::P, 3).unwrap();
    let sim = FactorSimulator::new(&m, &x0(), grid).unwrap();
    let strat = vec![DVector::from_vec(vec![1.0, -2.0, 0.5]); grid.n_steps];
    let inc = WealthIncrements::new(&m, &grid.times(), Measure::P, &contracts, &strat).unwrap();
    let w: Vec<f64> = (0..10_000)
        .map(|i| inc.terminal(1.0, &sim.path(i).shocks))
        .collect();
    let (mean, se) = mean_and_se(&w);
    assert!(se > 0.0);
    assert!((mean - 1.0).abs() < 3.0 * se, "{mean} +/- {se}");
}

#[test]
fn halving_the_step_moves_mean_utility_less_than_one_se() {
    let m = assemble_matrices(&ModelParams::table1());
    let contracts = ContractSpec::monthly();
    let spec = PortfolioSpec::new(contracts.clone(), 1.0, T1, 0.0).unwrap();
    let fine = SimulationGrid::new(0.0, T1, 42, Measure::P, 5).unwrap();
    let coarse = SimulationGrid::new(0.0, T1, 21, Measure::P, 5).unwrap();
    let pis = |g: &SimulationGrid| -> Vec<DVector<f64>> {
        strategy_on_grid(&m, &spec, &g.times()[..g.n_steps])
            .unwrap()
            .into_iter()
            .map(|p| p.pi)
            .collect()
    };
    let inc_f =
        WealthIncrements::new(&m, &fine.times(), Measure::P, &contracts, &pis(&fine)).unwrap();
    let inc_c =
        WealthIncrements::new(&m, &coarse.times(), Measure::P, &contracts, &pis(&coarse)).unwrap();
    let sim = FactorSimulator::new(&m, &x0(), fine).unwrap();
    let (mut uf, mut uc) = (Vec::new(), Vec::new());
    for id in 0..20_000 {
        let shocks = sim.path(id).shocks;
        // coarse shocks are the normalised sums of consecutive fine shocks
        let merged: Vec<Vector3<f64>> = shocks
            .chunks(2)
            .map(|c| (c[0] + c[1]) / 2f64.sqrt())
            .collect();
        uf.push(-(-inc_f.terminal(0.0, &shocks)).exp());
        uc.push(-(-inc_c.terminal(0.0, &merged)).exp());
    }
    let (mf, sef) = mean_and_se(&uf);
    let (mc, _) = mean_and_se(&uc);
    assert!((mf - mc).abs() < sef, "{mf} vs {mc}, se {sef}");
}
