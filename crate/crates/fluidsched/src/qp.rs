//! Assembly of the discretized fluid control problem as a convex QP, and
//! recovery of a feasible control from the solver output.
//!
//! Decision vector: `x = (a_0..a_{K-1}, q_0..q_K, di_0..di_K)`. The fluid
//! dynamics enter as one balance equality per cell,
//!
//! ```text
//!   q(k) - mu di(k) = q(k-1) + dH(k) - mu T / K,    k = 1..K,
//! ```
//!
//! plus `q(0) = sum_i F(-t_i, t_i) a_i` and `di(0) = 0`, with all variables
//! nonnegative. Because both the queue and the idle increment carry strictly
//! positive costs, the optimum satisfies the complementarity
//! `min(q(k), mu di(k)) = 0` that makes the balance family equivalent to the
//! Lindley recursion.

use crate::fluid::{
    lindley_path, objective_from_path, ControlVector, FluidError, FluidPath, FluidProblem, Grid,
    NodeCdfMatrix,
};
use crate::solver::{self, SolveError, SolverOptions, SparseCol, SplitQp, WarmStart};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("recovered control clamps {amount:.3e} below zero (limit 1e-6)")]
    ClampTooLarge { amount: f64 },
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Assembled QP instance (minimization form) plus the index layout.
#[derive(Debug, Clone)]
pub struct QpInstance {
    pub problem: FluidProblem,
    pub grid: Grid,
    pub(crate) split: SplitQp,
}

impl QpInstance {
    pub fn resolution(&self) -> usize {
        self.grid.resolution()
    }

    pub fn num_vars(&self) -> usize {
        self.split.num_vars()
    }

    pub fn num_eq_rows(&self) -> usize {
        self.split.num_eq()
    }

    fn mass_range(&self) -> std::ops::Range<usize> {
        0..self.resolution()
    }

    /// Dump the instance in a sparse triplet text format: tagged blocks with
    /// one `row col value` line each for the objective (`P`, `q`) and the
    /// constraints (`A`, `b`, `lb`). Zero entries are omitted.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> Result<(), QpError> {
        let s = &self.split;
        let m = s.num_eq();
        writeln!(out, "# qp triplets: {} vars, {} equality rows", s.num_vars(), m)?;
        writeln!(out, "block P")?;
        for (v, p) in s.p_diag.iter().enumerate() {
            if *p != 0.0 {
                writeln!(out, "{v} {v} {p:.17e}")?;
            }
        }
        writeln!(out, "block q")?;
        for (v, q) in s.q.iter().enumerate() {
            if *q != 0.0 {
                writeln!(out, "0 {v} {q:.17e}")?;
            }
        }
        writeln!(out, "block A")?;
        for c in 0..s.dense_width {
            for r in 0..m {
                let v = s.dense_cols[c * m + r];
                if v != 0.0 {
                    writeln!(out, "{r} {c} {v:.17e}")?;
                }
            }
        }
        for (c, col) in s.sparse_cols.iter().enumerate() {
            for &(r, v) in &col.entries {
                if v != 0.0 {
                    writeln!(out, "{r} {} {v:.17e}", s.dense_width + c)?;
                }
            }
        }
        writeln!(out, "block b")?;
        for (r, v) in s.b.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "{r} 0 {v:.17e}")?;
            }
        }
        writeln!(out, "block lb")?;
        for (v, l) in s.lower.iter().enumerate() {
            if *l != 0.0 {
                writeln!(out, "0 {v} {l:.17e}")?;
            }
        }
        Ok(())
    }
}

/// Build the QP for a problem/grid pair. Returns the instance together with
/// the node CDF matrix so fluid evaluation reuses bit-identical coefficients.
pub fn assemble(problem: &FluidProblem, grid: &Grid) -> Result<(QpInstance, NodeCdfMatrix), QpError> {
    let matrix = NodeCdfMatrix::build(problem, grid)?;
    let k = grid.resolution();
    let m = k + 2; // balance rows 1..=K, q(0) definition row 0, di(0) row K+1
    let n = 3 * k + 2;
    let capacity = problem.mu * grid.step();
    let c = &problem.costs;

    // dense block: mass-variable columns of the equality matrix
    let mut dense_cols = vec![0.0; k * m];
    for i in 0..k {
        let col = &mut dense_cols[i * m..(i + 1) * m];
        col[0] = -matrix.value(0, i);
        for row in 1..=k {
            col[row] = -(matrix.value(row, i) - matrix.value(row - 1, i));
        }
    }

    // sparse columns: queue levels then idle increments
    let mut sparse_cols = Vec::with_capacity(2 * k + 2);
    for j in 0..=k {
        let mut entries = Vec::with_capacity(2);
        if j == 0 {
            entries.push((0, 1.0));
        } else {
            entries.push((j, 1.0));
        }
        if j + 1 <= k {
            entries.push((j + 1, -1.0));
        }
        sparse_cols.push(SparseCol { entries });
    }
    for j in 0..=k {
        let entries = if j == 0 {
            vec![(k + 1, 1.0)]
        } else {
            vec![(j, -problem.mu)]
        };
        sparse_cols.push(SparseCol { entries });
    }

    let mut b = vec![0.0; m];
    for row in b.iter_mut().take(k + 1).skip(1) {
        *row = -capacity;
    }

    // objective (negated: the solver minimizes)
    let mut p_diag = vec![0.0; n];
    p_diag[k + k] = c.wait / problem.mu; // q(K) quadratic drain tail
    let mut q_lin = vec![0.0; n];
    for i in 0..k {
        q_lin[i] = -c.reward * matrix.value(k, i);
    }
    for j in 0..k {
        q_lin[k + j] = c.wait * grid.step();
    }
    q_lin[k + k] = c.overtime / problem.mu;
    for j in 1..=k {
        q_lin[2 * k + 1 + j] = c.idle;
    }

    let split = SplitQp {
        p_diag,
        q: q_lin,
        lower: vec![0.0; n],
        upper: vec![f64::INFINITY; n],
        dense_width: k,
        dense_cols,
        sparse_cols,
        b,
    };
    Ok((QpInstance { problem: problem.clone(), grid: *grid, split }, matrix))
}

/// Solver output in fluid terms.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Optimal objective of the discretized fluid problem (maximization value).
    pub value: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
    /// Raw decision vector (mass, queue, idle blocks).
    pub x: Vec<f64>,
    pub(crate) raw: solver::Solution,
}

impl QpSolution {
    /// Warm-start payload for a related instance; the closure maps each
    /// primal entry (masses, queues scale with kappa; idle increments do not).
    pub fn warm_start_scaled(&self, kappa: f64, instance: &QpInstance) -> WarmStart {
        let k = instance.resolution();
        let mut x = self.raw.x.clone();
        for (v, xv) in x.iter_mut().enumerate() {
            if v < 2 * k + 1 {
                *xv *= kappa;
            }
        }
        WarmStart { x, y_eq: self.raw.y_eq.clone(), y_bound: self.raw.y_bound.clone() }
    }

    pub fn plain_warm_start(&self) -> WarmStart {
        WarmStart {
            x: self.raw.x.clone(),
            y_eq: self.raw.y_eq.clone(),
            y_bound: self.raw.y_bound.clone(),
        }
    }
}

/// Solve an assembled instance.
pub fn solve(
    instance: &QpInstance,
    options: &SolverOptions,
    warm: Option<&WarmStart>,
) -> Result<QpSolution, QpError> {
    let raw = solver::solve(&instance.split, options, warm)?;
    Ok(QpSolution {
        value: -raw.objective,
        primal_residual: raw.primal_residual,
        dual_residual: raw.dual_residual,
        iterations: raw.iterations,
        polished: raw.polished,
        x: raw.x.clone(),
        raw,
    })
}

/// Assemble and solve in one step.
pub fn solve_problem(
    problem: &FluidProblem,
    grid: &Grid,
    options: &SolverOptions,
) -> Result<(QpSolution, NodeCdfMatrix), QpError> {
    let (instance, matrix) = assemble(problem, grid)?;
    let solution = solve(&instance, options, None)?;
    Ok((solution, matrix))
}

/// Control recovered from a QP solution: negatives above -1e-6 are clamped
/// to zero, the Lindley recursion is re-run to produce a feasible fluid
/// path, and the re-evaluated objective is compared against the QP value.
#[derive(Debug, Clone)]
pub struct RecoveredControl {
    pub control: ControlVector,
    pub path: FluidPath,
    /// Objective of the recovered control under the exact recursion.
    pub objective: f64,
    /// `|QP value - objective|`.
    pub value_drift: f64,
    /// Largest negativity removed by the clamp.
    pub max_clamp: f64,
}

pub fn recover_control(
    solution: &QpSolution,
    instance: &QpInstance,
    matrix: &NodeCdfMatrix,
) -> Result<RecoveredControl, QpError> {
    let mut max_clamp = 0.0f64;
    let mut masses = Vec::with_capacity(instance.resolution());
    for &v in &solution.x[instance.mass_range()] {
        if v < 0.0 {
            max_clamp = max_clamp.max(-v);
            masses.push(0.0);
        } else {
            masses.push(v);
        }
    }
    if max_clamp > 1e-6 {
        return Err(QpError::ClampTooLarge { amount: max_clamp });
    }
    let control = ControlVector::new(masses)?;
    let hhat = matrix.arrival_nodes(&control)?;
    let path = lindley_path(&instance.grid, &hhat, instance.problem.mu)?;
    let objective = objective_from_path(&instance.problem, &instance.grid, &path);
    Ok(RecoveredControl {
        control,
        path,
        objective,
        value_drift: (solution.value - objective).abs(),
        max_clamp,
    })
}

/// Complementarity quality at the QP optimum: worst `min(q(k), mu di(k))`
/// normalized by `1 + q(0)`.
pub fn optimum_complementarity(solution: &QpSolution, instance: &QpInstance) -> f64 {
    let k = instance.resolution();
    let q0 = solution.x[k];
    let mut worst = 0.0f64;
    for j in 1..=k {
        let q = solution.x[k + j].max(0.0);
        let di = solution.x[2 * k + 1 + j].max(0.0);
        worst = worst.max(q.min(instance.problem.mu * di));
    }
    worst / (1.0 + q0.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{uniform_block_control, zu_optimal};
    use crate::fluid::{fluid_objective_with, Costs};
    use crate::stochastic::UnpunctualityModel;

    fn problem(unp: UnpunctualityModel, reward: f64) -> FluidProblem {
        FluidProblem::new(
            100.0,
            1.0,
            Costs::new(reward, 1.0, 50.0, 75.0).unwrap(),
            unp,
        )
        .unwrap()
    }

    #[test]
    fn dimensions_for_k2() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 0.0);
        let grid = Grid::new(2, 1.0).unwrap();
        let (inst, _) = assemble(&p, &grid).unwrap();
        assert_eq!(inst.num_vars(), 8); // 3K + 2
        assert_eq!(inst.num_eq_rows(), 4); // balance rows + q(0) + di(0)
    }

    #[test]
    fn zero_unpunctuality_coefficients_are_lower_triangular_ones() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 0.0);
        let grid = Grid::new(4, 1.0).unwrap();
        let (_, matrix) = assemble(&p, &grid).unwrap();
        for k in 0..=4 {
            for i in 0..4 {
                let expected = if k >= i { 1.0 } else { 0.0 };
                assert_eq!(matrix.value(k, i), expected, "entry ({k},{i})");
            }
        }
    }

    #[test]
    fn coefficient_rows_stay_in_cdf_range() {
        let p = problem(UnpunctualityModel::normal(-0.1, 0.05).unwrap(), 0.0);
        let grid = Grid::new(200, 1.0).unwrap();
        let (_, matrix) = assemble(&p, &grid).unwrap();
        for k in 0..=200 {
            let row = matrix.row(k);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            let sum: f64 = row.iter().sum();
            assert!((0.0..=200.0).contains(&sum));
        }
    }

    #[test]
    fn feasible_zero_control_has_idle_only() {
        // sanity on the encoding: a = 0, q = 0, di = T/K satisfies every row
        let p = problem(UnpunctualityModel::uniform(-0.1, 0.1).unwrap(), 0.0);
        let grid = Grid::new(10, 1.0).unwrap();
        let (inst, _) = assemble(&p, &grid).unwrap();
        let k = 10;
        let mut x = vec![0.0; inst.num_vars()];
        for j in 1..=k {
            x[2 * k + 1 + j] = 0.1; // T/K
        }
        // residual of A x - b
        let s = &inst.split;
        let mut ax = vec![0.0; s.num_eq()];
        for c in 0..s.dense_width {
            for r in 0..s.num_eq() {
                ax[r] += s.dense_cols[c * s.num_eq() + r] * x[c];
            }
        }
        for (c, col) in s.sparse_cols.iter().enumerate() {
            for &(r, v) in &col.entries {
                ax[r] += v * x[s.dense_width + c];
            }
        }
        for r in 0..s.num_eq() {
            assert!((ax[r] - s.b[r]).abs() < 1e-12, "row {r}: {} vs {}", ax[r], s.b[r]);
        }
    }

    #[test]
    fn solve_zero_unpunctuality_zero_reward() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 0.0);
        let grid = Grid::new(1000, 1.0).unwrap();
        let (solution, matrix) = solve_problem(&p, &grid, &SolverOptions::default()).unwrap();
        assert!(solution.value.abs() < 1e-3, "value {}", solution.value);
        let rec = recover_control(&solution, &assemble(&p, &grid).unwrap().0, &matrix).unwrap();
        // recovered arrival curve tracks capacity
        for k in (0..=1000).step_by(97) {
            assert!(
                (rec.path.hhat[k] - 100.0 * grid.node(k)).abs() < 0.5,
                "node {k}: {}",
                rec.path.hhat[k]
            );
        }
    }

    #[test]
    fn solve_zero_unpunctuality_overbooking_matches_closed_form() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 1.2);
        let grid = Grid::new(1000, 1.0).unwrap();
        let oracle = zu_optimal(&p).unwrap();
        let (inst, matrix) = assemble(&p, &grid).unwrap();
        let solution = solve(&inst, &SolverOptions::default(), None).unwrap();
        assert!(
            (solution.value - oracle.value).abs() < 0.005 * oracle.value.abs(),
            "QP {} vs closed form {}",
            solution.value,
            oracle.value
        );
        let rec = recover_control(&solution, &inst, &matrix).unwrap();
        let last = rec.control.masses()[999];
        assert!(
            (last - oracle.terminal_atom).abs() < 2.0,
            "terminal cell mass {last} vs atom {}",
            oracle.terminal_atom
        );
        assert!(rec.value_drift < 1e-6, "drift {}", rec.value_drift);
    }

    #[test]
    fn solve_uniform_matches_block_construction() {
        let p = problem(UnpunctualityModel::uniform(-0.1, 0.1).unwrap(), 0.0);
        let grid = Grid::new(1000, 1.0).unwrap();
        let (inst, matrix) = assemble(&p, &grid).unwrap();
        let solution = solve(&inst, &SolverOptions::default(), None).unwrap();
        assert!(solution.value.abs() < 1e-2, "value {}", solution.value);
        let block = uniform_block_control(0.1, 0.1, &p, &grid).unwrap();
        let block_value = fluid_objective_with(&matrix, &p, &grid, &block).unwrap();
        assert!(
            (solution.value - block_value).abs() < 1e-2,
            "QP {} vs block {}",
            solution.value,
            block_value
        );
    }

    #[test]
    fn optimum_satisfies_complementarity() {
        let p = problem(UnpunctualityModel::normal(-0.05, 0.1).unwrap(), 0.0);
        let grid = Grid::new(250, 1.0).unwrap();
        let (inst, _) = assemble(&p, &grid).unwrap();
        let solution = solve(&inst, &SolverOptions::default(), None).unwrap();
        assert!(
            optimum_complementarity(&solution, &inst) <= 1e-5,
            "complementarity {}",
            optimum_complementarity(&solution, &inst)
        );
    }

    #[test]
    fn recover_clamps_small_negatives() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 0.0);
        let grid = Grid::new(4, 1.0).unwrap();
        let (inst, matrix) = assemble(&p, &grid).unwrap();
        let mut solution = solve(&inst, &SolverOptions::default(), None).unwrap();
        solution.x[2] = -1e-10;
        let rec = recover_control(&solution, &inst, &matrix).unwrap();
        assert_eq!(rec.control.masses()[2], 0.0);
        assert!(rec.max_clamp <= 1e-10);
        solution.x[2] = -1e-3;
        assert!(matches!(
            recover_control(&solution, &inst, &matrix),
            Err(QpError::ClampTooLarge { .. })
        ));
    }

    #[test]
    fn deterministic_solves() {
        let p = problem(UnpunctualityModel::normal(-0.1, 0.05).unwrap(), 0.0);
        let grid = Grid::new(125, 1.0).unwrap();
        let (inst, _) = assemble(&p, &grid).unwrap();
        let a = solve(&inst, &SolverOptions::default(), None).unwrap();
        let b = solve(&inst, &SolverOptions::default(), None).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn triplet_dump_has_tagged_blocks() {
        let p = problem(UnpunctualityModel::PointMassAtZero, 0.0);
        let grid = Grid::new(2, 1.0).unwrap();
        let (inst, _) = assemble(&p, &grid).unwrap();
        let mut buf = Vec::new();
        inst.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for tag in ["block P", "block q", "block A", "block b", "block lb"] {
            assert!(text.contains(tag), "missing {tag}");
        }
        // the q(K) curvature entry is the only P entry
        let p_lines: Vec<&str> = text
            .lines()
            .skip_while(|l| *l != "block P")
            .skip(1)
            .take_while(|l| !l.starts_with("block"))
            .collect();
        assert_eq!(p_lines.len(), 1);
    }
}
