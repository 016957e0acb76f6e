//! Appointment scheduling under time-dependent patient unpunctuality.
//!
//! The pipeline: model a clinic day as a single-server FIFO queue whose
//! patients arrive off-schedule according to a time-dependent unpunctuality
//! distribution, approximate the day by its fluid limit, discretize the
//! fluid control problem into a convex QP, solve it with an operator
//! splitting method, extract concrete appointment times from the optimal
//! profile, and validate the schedule against closed-form special cases and
//! a stochastic simulator.
//!
//! Modules:
//! - [`stochastic`]: unpunctuality and service-time distributions
//! - [`fluid`]: grid, arrival-curve convolution, Lindley/Skorokhod recursion,
//!   fluid objective
//! - [`closed_form`]: zero-unpunctuality and uniform-block oracles
//! - [`qp`]: QP assembly and control recovery
//! - [`solver`]: the ADMM solver behind [`qp`]
//! - [`schedule`]: quantile extraction of appointment times, day normalization
//! - [`sim`]: stochastic clinic simulator and replication statistics
//! - [`stats`]: data ingestion, empirical models, paired policy comparison
//! - [`scenarios`]: the parametric scenario suite used across tests and docs

pub mod closed_form;
pub mod fluid;
pub mod qp;
pub mod scenarios;
pub mod schedule;
pub mod sim;
pub mod solver;
pub mod stats;
pub mod stochastic;

pub use closed_form::{uniform_block_control, zu_optimal, ZuOptimal};
pub use fluid::{
    convolve, fluid_objective, fluid_objective_with, lindley_path, skorokhod_discrete,
    ControlVector, Costs, FluidError, FluidPath, FluidProblem, Grid, NodeCdfMatrix,
};
pub use qp::{assemble, recover_control, solve_problem, QpError, QpInstance, QpSolution};
pub use schedule::{extract_schedule, extract_schedule_with_count, normalize_day, Schedule};
pub use sim::{fluid_scaled_gap, simulate_many, simulate_once, ReplicationReport, SimOutcome};
pub use stochastic::{
    DriftFamily, LinearCoef, ModelError, ServiceFamily, ServiceModel, UnpunctualityModel,
};
