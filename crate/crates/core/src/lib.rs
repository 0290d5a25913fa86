// Validation predicates are written as negated comparisons (`!(x > 0.0)`)
// so that NaN inputs fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Numerical toolkit for optimal investment in emission-abatement
//! technology under random carbon taxes.
//!
//! Two modelling paradigms are covered. Under *tax risk* the tax rate
//! follows a finite-state Markov chain and the producer solves a stochastic
//! control problem; the solver discretises the associated regime-coupled
//! HJB equation with an implicit upwind scheme. Under *tax uncertainty* the
//! producer plays a zero-sum game against a penalised adversary choosing
//! the tax path; pointwise saddle points reduce the Bellman-Isaacs equation
//! to an HJB form solved by the same machinery. A Monte Carlo engine
//! simulates the resulting feedback policies and produces the quantile
//! tables and figures used to compare random-tax outcomes against
//! deterministic benchmark schedules.

pub mod error;
pub mod game;
pub mod grid;
pub mod hjb;
mod linalg;
pub mod model;
pub mod output;
pub mod plot;
pub mod scenario;
pub mod sim;
pub mod tax;

pub use error::{Error, Result};
pub use grid::{GridSpec, LipschitzBudget, PolicyGrid, ValueGrid};
pub use model::{
    EconomicParams, FilterTech, ModelSpec, OptimalOutput, PriceSpec, RebateSpec, ResidualValueSpec,
    TechnologySpec, TwoTechParams,
};
pub use tax::{BenchmarkKind, BenchmarkSpec, TaxChain};
