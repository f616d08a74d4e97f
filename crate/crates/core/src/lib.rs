//! Multiscale central tendency Ornstein-Uhlenbeck (MCTOU) futures model.
//!
//! * [`model`]: parameters and the matrix form of the factor SDEs.
//! * [`term_structure`]: closed-form futures prices.
//! * [`strategy`]: optimal futures portfolio, value function, certainty equivalent.
//! * [`dynamics`]: exact-transition factor simulation, futures and wealth paths.
//! * [`experiments`]: certainty-equivalent grid, figure datasets, Monte Carlo checks.
//! * [`io`]: parameter documents and CSV datasets.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod strategy;
pub mod term_structure;

pub use dynamics::{Measure, PathBundle, SimulationGrid};
pub use error::{MctouError, ParamViolation, Result};
pub use experiments::{run_ce_grid, run_figure_data, verify_mc_utility, CEGridResult, Figure};
pub use io::{Dataset, ParamsDocument};
pub use model::{
    assemble_matrices, build_model, lambda_from_zeta, validate_params, FactorState, ModelMatrices,
    ModelParams, SigmaConvention,
};
pub use strategy::{
    certainty_equivalent, futures_loadings, lambda_squared, optimal_strategy, value_function,
    PortfolioSpec, StrategyPoint,
};
pub use term_structure::{
    beta_intercept, curve, futures_price, loading_vector, ContractSpec, FuturesCurvePoint,
};
