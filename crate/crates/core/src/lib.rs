//! Nash equilibria of two-player nonzero-sum impulse games driven by a
//! scaled Brownian motion: closed form for the symmetric linear game,
//! Newton solves of the pasting system for polynomial payoffs, grid
//! certificates for the quasi-variational inequalities, and a Monte Carlo
//! engine for the payoff functionals.

pub mod basis;
pub mod error;
pub mod model;
pub mod poly;
pub mod qvi;
pub mod sim;
pub mod sweep;
pub mod symmetric;

pub use basis::PhiBasis;
pub use error::{SimError, SolveError, SpecError};
pub use model::{
    validate_spec, Costs, Direction, EquilibriumParams, GameSpec, PiecewiseValue, Player, RawGameSpec, Side,
    ThresholdStrategy, ValidationOptions,
};
pub use poly::Polynomial;
pub use qvi::{
    solve_system, system_residual, verify_candidate, GridOptions, InitialGuess, PastingResidual, SolveOptions,
    VerificationReport,
};
pub use sim::{simulate_paths, SimConfig, SimulationEstimate};
pub use sweep::{run_sweep, write_sweep_csv, SweepError, SweepMethod, SweepRequest, SweepRow};
pub use symmetric::{closed_form_equilibrium, DerivedCoefficients};
