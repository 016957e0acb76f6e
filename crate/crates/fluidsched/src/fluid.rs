//! Discretized fluid dynamics: the convolution arrival curve, the discrete
//! Skorokhod/Lindley queue recursion, and the fluid objective.
//!
//! The horizon `[0, T]` is split into `K` cells with nodes `t_k = kT/K`.
//! A control places nonnegative appointment mass `a_k` at node `t_k`
//! (`k = 0..K-1`); the induced arrival curve at the nodes is
//! `H(t_k) = sum_i a_i F(t_k - t_i, t_i)`.

use crate::stochastic::{ModelError, UnpunctualityModel};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FluidError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("control has {got} cells, grid expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("arrival curve has {got} nodes, grid expects {expected}")]
    CurveLengthMismatch { expected: usize, got: usize },
    #[error("arrival curve decreases materially at node {index}")]
    DecreasingArrivalCurve { index: usize },
    #[error("no valid block fits: spread {spread} exceeds horizon {horizon}")]
    BlockTooWide { spread: f64, horizon: f64 },
    #[error("zero-unpunctuality problem is unbounded: reward exceeds overtime cost with zero wait cost")]
    UnboundedOverbooking,
}

/// Cost rates of the clinic objective: reward per served patient, waiting
/// cost per patient-hour, idle and overtime cost per hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Costs {
    pub reward: f64,
    pub wait: f64,
    pub idle: f64,
    pub overtime: f64,
}

impl Costs {
    pub fn new(reward: f64, wait: f64, idle: f64, overtime: f64) -> Result<Self, FluidError> {
        let all = [reward, wait, idle, overtime];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(FluidError::InvalidProblem(format!(
                "costs must be finite and nonnegative, got {all:?}"
            )));
        }
        Ok(Self { reward, wait, idle, overtime })
    }
}

/// Fluid problem data: service rate, horizon, costs, and the unpunctuality
/// distribution.
#[derive(Debug, Clone)]
pub struct FluidProblem {
    pub mu: f64,
    pub horizon: f64,
    pub costs: Costs,
    pub unpunctuality: UnpunctualityModel,
}

impl FluidProblem {
    pub fn new(
        mu: f64,
        horizon: f64,
        costs: Costs,
        unpunctuality: UnpunctualityModel,
    ) -> Result<Self, FluidError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(FluidError::InvalidProblem(format!("mu must be positive, got {mu}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(FluidError::InvalidProblem(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { mu, horizon, costs, unpunctuality })
    }

    /// The kappa-scaled problem (kappa*mu, r, c_w, kappa*c_i, kappa*c_o, F):
    /// its optimal control is kappa times the base optimal control and its
    /// optimal value kappa times the base value.
    pub fn scaled(&self, kappa: f64) -> Result<Self, FluidError> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(FluidError::InvalidProblem(format!(
                "scale factor must be positive, got {kappa}"
            )));
        }
        Ok(Self {
            mu: kappa * self.mu,
            horizon: self.horizon,
            costs: Costs {
                reward: self.costs.reward,
                wait: self.costs.wait,
                idle: kappa * self.costs.idle,
                overtime: kappa * self.costs.overtime,
            },
            unpunctuality: self.unpunctuality.clone(),
        })
    }
}

/// Uniform grid `t_k = kT/K`, `k = 0..=K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    resolution: usize,
    horizon: f64,
}

impl Grid {
    pub fn new(resolution: usize, horizon: f64) -> Result<Self, FluidError> {
        if resolution < 2 {
            return Err(FluidError::InvalidGrid(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(FluidError::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        Ok(Self { resolution, horizon })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.resolution as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.resolution as f64
    }
}

/// Nonnegative appointment mass per grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    masses: Vec<f64>,
}

impl ControlVector {
    pub fn new(masses: Vec<f64>) -> Result<Self, FluidError> {
        if masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(FluidError::InvalidProblem(
                "control masses must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { masses })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self { masses: vec![0.0; grid.resolution()] }
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Add mass to one cell (used when placing atoms).
    pub fn add_mass(&mut self, cell: usize, mass: f64) {
        self.masses[cell] += mass;
    }

    /// Cumulative profile at the nodes: `A(t_k) = sum_{i<k} a_i`, so
    /// `A(t_0) = 0` and `A(T)` is the total mass.
    pub fn profile(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.masses.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for &m in &self.masses {
            acc += m;
            out.push(acc);
        }
        out
    }

    pub fn scaled(&self, kappa: f64) -> Self {
        Self { masses: self.masses.iter().map(|m| kappa * m).collect() }
    }
}

/// Discretized fluid state at the grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidPath {
    /// Arrival curve `H(t_k)`.
    pub hhat: Vec<f64>,
    /// Queue level `q(t_k)`.
    pub qhat: Vec<f64>,
    /// Idle time accrued over `(t_{k-1}, t_k]`; entry 0 is always zero.
    pub idle_increments: Vec<f64>,
}

impl FluidPath {
    pub fn total_idle(&self) -> f64 {
        self.idle_increments.iter().sum()
    }

    /// Largest `min(q(k), mu * di(k))` over `k >= 1`; zero for paths produced
    /// by the recursion.
    pub fn max_complementarity_violation(&self, mu: f64) -> f64 {
        self.qhat
            .iter()
            .zip(&self.idle_increments)
            .skip(1)
            .map(|(q, di)| q.min(mu * di))
            .fold(0.0, f64::max)
    }
}

/// CDF values at the nodes: entry `(k, i)` is `F(t_k - t_i, t_i)` for
/// `k = 0..=K`, `i = 0..K`. Built once and shared between fluid evaluation
/// and QP assembly so both see bit-identical coefficients.
#[derive(Debug, Clone)]
pub struct NodeCdfMatrix {
    k: usize,
    rows: Vec<f64>,
}

impl NodeCdfMatrix {
    pub fn build(problem: &FluidProblem, grid: &Grid) -> Result<Self, FluidError> {
        let k = grid.resolution();
        let mut rows = Vec::with_capacity((k + 1) * k);
        for row in 0..=k {
            let t_row = grid.node(row);
            for i in 0..k {
                let t_i = grid.node(i);
                rows.push(problem.unpunctuality.cdf(t_row - t_i, t_i)?);
            }
        }
        Ok(Self { k, rows })
    }

    pub fn resolution(&self) -> usize {
        self.k
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.rows[node * self.k..(node + 1) * self.k]
    }

    pub fn value(&self, node: usize, cell: usize) -> f64 {
        self.rows[node * self.k + cell]
    }

    /// Arrival curve at all nodes for the given control.
    pub fn arrival_nodes(&self, control: &ControlVector) -> Result<Vec<f64>, FluidError> {
        if control.len() != self.k {
            return Err(FluidError::LengthMismatch { expected: self.k, got: control.len() });
        }
        let a = control.masses();
        Ok((0..=self.k)
            .map(|node| self.row(node).iter().zip(a).map(|(f, m)| f * m).sum())
            .collect())
    }
}

/// Discretized convolution `H(t) = sum_k a_k F(t - t_k, t_k)`, evaluable at
/// any real `t` (including `t < 0`).
pub fn convolve(
    problem: &FluidProblem,
    grid: &Grid,
    control: &ControlVector,
    t: f64,
) -> Result<f64, FluidError> {
    if control.len() != grid.resolution() {
        return Err(FluidError::LengthMismatch {
            expected: grid.resolution(),
            got: control.len(),
        });
    }
    let mut acc = 0.0;
    for (i, &mass) in control.masses().iter().enumerate() {
        if mass != 0.0 {
            let t_i = grid.node(i);
            acc += mass * problem.unpunctuality.cdf(t - t_i, t_i)?;
        }
    }
    Ok(acc)
}

fn check_curve(grid: &Grid, hhat: &[f64]) -> Result<(), FluidError> {
    let k = grid.resolution();
    if hhat.len() != k + 1 {
        return Err(FluidError::CurveLengthMismatch { expected: k + 1, got: hhat.len() });
    }
    let scale = 1.0 + hhat.iter().fold(0.0f64, |m, h| m.max(h.abs()));
    for (idx, w) in hhat.windows(2).enumerate() {
        if w[1] < w[0] - 1e-9 * scale {
            return Err(FluidError::DecreasingArrivalCurve { index: idx + 1 });
        }
    }
    Ok(())
}

/// Queue path by the discrete Lindley recursion:
/// `q(k+1) = max(0, q(k) + H(t_{k+1}) - H(t_k) - mu T/K)`, with the idle
/// increment carrying the complementary part.
pub fn lindley_path(grid: &Grid, hhat: &[f64], mu: f64) -> Result<FluidPath, FluidError> {
    check_curve(grid, hhat)?;
    let k = grid.resolution();
    let capacity = mu * grid.horizon() / k as f64;
    let mut qhat = Vec::with_capacity(k + 1);
    let mut idle = Vec::with_capacity(k + 1);
    qhat.push(hhat[0]);
    idle.push(0.0);
    for j in 1..=k {
        let inflow = hhat[j] - hhat[j - 1];
        let net = qhat[j - 1] + inflow - capacity;
        qhat.push(net.max(0.0));
        idle.push((-net).max(0.0) / mu);
    }
    Ok(FluidPath { hhat: hhat.to_vec(), qhat, idle_increments: idle })
}

/// Queue path by direct evaluation of the discrete Skorokhod map:
/// `mu i(k) = max_{j<=k} max(mu t_j - H(t_j), 0)`, `q(k) = H(t_k) - mu t_k + mu i(k)`.
/// Agrees with `lindley_path` (the two are algebraically identical).
pub fn skorokhod_discrete(grid: &Grid, hhat: &[f64], mu: f64) -> Result<FluidPath, FluidError> {
    check_curve(grid, hhat)?;
    let k = grid.resolution();
    let netflow: Vec<f64> = (0..=k).map(|j| hhat[j] - mu * grid.node(j)).collect();
    let (regulated, regulator) = skorokhod_map(&netflow);
    let mut idle = Vec::with_capacity(k + 1);
    idle.push(0.0);
    for j in 1..=k {
        idle.push((regulator[j] - regulator[j - 1]) / mu);
    }
    Ok(FluidPath { hhat: hhat.to_vec(), qhat: regulated, idle_increments: idle })
}

/// One-dimensional Skorokhod map on a node sequence: the regulator is
/// `y(k) = max_{j<=k} max(-x(j), 0)` and the regulated path `z = x + y`.
pub fn skorokhod_map(netflow: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut regulator = Vec::with_capacity(netflow.len());
    let mut regulated = Vec::with_capacity(netflow.len());
    let mut running = 0.0f64;
    for &x in netflow {
        running = running.max(-x);
        regulator.push(running);
        regulated.push(x + running);
    }
    (regulated, regulator)
}

/// Objective of a node arrival curve: reward on arrivals by `T`, left
/// Riemann wait cost plus the exact quadratic drain tail, idle cost on the
/// accumulated regulator, overtime for the terminal queue.
pub fn objective_from_curve(
    problem: &FluidProblem,
    grid: &Grid,
    hhat: &[f64],
) -> Result<f64, FluidError> {
    let path = lindley_path(grid, hhat, problem.mu)?;
    Ok(objective_from_path(problem, grid, &path))
}

/// Objective terms evaluated on an existing fluid path.
pub fn objective_from_path(problem: &FluidProblem, grid: &Grid, path: &FluidPath) -> f64 {
    let k = grid.resolution();
    let c = &problem.costs;
    let q_end = path.qhat[k];
    let reward = c.reward * path.hhat[k];
    let wait_tail = c.wait / (2.0 * problem.mu) * q_end * q_end;
    let overtime = c.overtime / problem.mu * q_end;
    let wait_sum: f64 = path.qhat[..k].iter().sum::<f64>() * grid.step();
    reward - wait_tail - overtime - c.wait * wait_sum - c.idle * path.total_idle()
}

/// Fluid objective of a control, building the node CDF matrix internally.
/// Use [`fluid_objective_with`] to reuse a prebuilt matrix.
pub fn fluid_objective(
    problem: &FluidProblem,
    grid: &Grid,
    control: &ControlVector,
) -> Result<f64, FluidError> {
    let matrix = NodeCdfMatrix::build(problem, grid)?;
    fluid_objective_with(&matrix, problem, grid, control)
}

pub fn fluid_objective_with(
    matrix: &NodeCdfMatrix,
    problem: &FluidProblem,
    grid: &Grid,
    control: &ControlVector,
) -> Result<f64, FluidError> {
    let hhat = matrix.arrival_nodes(control)?;
    objective_from_curve(problem, grid, &hhat)
}
