//! Equilibrium solver and Monte-Carlo verifier for pure-jump games of
//! mean-field type on a compact box.
//!
//! The crate couples three layers. A deterministic layer discretizes measures
//! on a lattice and solves the forward measure flow together with the backward
//! value sweep, fixed-pointing the pair into an equilibrium feedback law. A
//! stochastic layer simulates the finite n-player jump system under that law,
//! with a tagged player free to deviate. A verification layer compares the two
//! via functional gaps, equilibrium-deviation gaps, and convergence-rate fits,
//! and bounds the smoothing error of lattice projections.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod convergence;
pub mod error;
pub mod grid;
pub mod hjb;
pub mod kinetic;
pub mod matrix;
pub mod measures;
pub mod mfg;
pub mod model;
pub mod mollify;
pub mod particle;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod timegrid;

pub use convergence::{
    default_deviations, functional_gap, functional_gap_scan, nash_gap, nash_gap_scan, rate_fit,
    write_results_csv, GapPoint, RateFit,
};
pub use error::{CoreError, Result};
pub use grid::Lattice;
pub use hjb::{
    duhamel_residual, feedback_regularity_probe, hamiltonian_report, maximize_hamiltonian,
    solve_hjb, FeedbackRegularityReport, HamiltonianReport, ValueGrid,
};
pub use kinetic::{
    initial_sensitivity_probe, kinetic_step, solve_kinetic, Integrator, KineticSolveConfig,
};
pub use measures::{EmpiricalMeasure, GridMeasure, MeasureCurve, TestFunctional};
pub use mfg::{best_response, solve_equilibrium, EquilibriumSolution, FixedPointConfig};
pub use model::{
    apply_adjoint, apply_generator, hypothesis_probe, ControlSet, CostSpec, FeedbackControl,
    HypothesisReport, JumpKernelSpec,
};
pub use mollify::{
    smoothing_bound_report, lipschitz_norm_estimate, mollify, regularization_preset,
    smooth_functional, write_bounds_csv, BoundCheck, LatticeProjection, MollifiedFunction,
    MollifierSpec, RegularizationPreset, SampledFunction, SmoothedFunctional,
};
pub use particle::{
    nearest_node, payoff_estimate, simulate_limit_player, simulate_nplayer, simulate_tagged,
    write_paths_csv, write_payoffs_csv, InitSampler, PathRecord, SimConfig,
};
pub use scenario::{decoupled_scenario, default_scenario, InitialMeasureSpec, ScenarioConfig};
