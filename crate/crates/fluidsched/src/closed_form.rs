//! Closed-form fluid optima for the two analytically solvable cases:
//! zero unpunctuality and uniform unpunctuality with a block construction.
//! Both serve as oracles for the QP solver.

use crate::fluid::{ControlVector, FluidError, FluidProblem, Grid};

/// Zero-unpunctuality optimum: serve at capacity all day, and overbook a
/// terminal block when the per-patient reward exceeds the marginal overtime
/// cost `c_o / mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZuOptimal {
    /// Optimal fluid value.
    pub value: f64,
    /// Mass of the terminal block (zero when `r <= c_o / mu`).
    pub terminal_atom: f64,
}

/// Optimal control and value of the fluid problem with punctual patients.
///
/// The optimal arrival curve is `H*(t) = mu t` plus, when `r > c_o/mu`, an
/// atom of `B = mu (r - c_o/mu) / c_w` at `t = T`. Evaluating the objective
/// on that curve gives
///
/// `J* = r mu T + mu [(r - c_o/mu)^+]^2 / (2 c_w)`:
///
/// reward `r (mu T + B)` minus the drain-tail wait cost `c_w B^2 / (2 mu)`
/// minus the overtime cost `c_o B / mu`. This value is also an upper bound
/// for the fluid problem under any unpunctuality model, since the objective
/// depends on the control only through the induced arrival curve and every
/// nondecreasing curve is reachable in the punctual problem.
pub fn zu_optimal(problem: &FluidProblem) -> Result<ZuOptimal, FluidError> {
    let c = &problem.costs;
    let base = c.reward * problem.mu * problem.horizon;
    let margin = c.reward - c.overtime / problem.mu;
    if margin <= 0.0 {
        return Ok(ZuOptimal { value: base, terminal_atom: 0.0 });
    }
    if c.wait == 0.0 {
        // overbooking pays and nothing penalizes the queue: no finite optimum
        return Err(FluidError::UnboundedOverbooking);
    }
    let atom = problem.mu * margin / c.wait;
    Ok(ZuOptimal {
        value: base + problem.mu * margin * margin / (2.0 * c.wait),
        terminal_atom: atom,
    })
}

impl ZuOptimal {
    /// Materialize the optimal profile on a grid: capacity-rate mass in every
    /// cell plus the terminal atom in the last cell (the discrete stand-in
    /// for an atom at `t = T`).
    pub fn control_on(&self, problem: &FluidProblem, grid: &Grid) -> ControlVector {
        let k = grid.resolution();
        let mut masses = vec![problem.mu * grid.step(); k];
        masses[k - 1] += self.terminal_atom;
        ControlVector::new(masses).expect("capacity masses are nonnegative")
    }
}

/// Block construction for uniform unpunctuality on `[-a, b]`: atoms of mass
/// `mu (a + b)` at the jump points `a, 2a+b, 3a+2b, ...` — each atom's mass
/// spreads uniformly over an `(a+b)`-wide window, so consecutive blocks tile
/// the horizon. When `T = N (a + b)` the induced arrival curve is exactly
/// `mu t`, which is optimal whenever `r <= c_o / mu`.
///
/// `N` is the largest count whose last jump still lies in the horizon:
/// `N = max{n >= 1 : n a + (n-1) b <= T}`. Atoms snap to the nearest grid
/// node; an atom landing on `t = T` goes to the last cell.
pub fn uniform_block_control(
    a_early: f64,
    b_late: f64,
    problem: &FluidProblem,
    grid: &Grid,
) -> Result<ControlVector, FluidError> {
    if !(a_early > 0.0 && b_late > 0.0 && a_early.is_finite() && b_late.is_finite()) {
        return Err(FluidError::InvalidProblem(format!(
            "uniform support must have positive sides, got [-{a_early}, {b_late}]"
        )));
    }
    let spread = a_early + b_late;
    let horizon = grid.horizon();
    if spread > horizon {
        return Err(FluidError::BlockTooWide { spread, horizon });
    }
    let count = ((horizon + b_late) / spread + 1e-12).floor() as usize;
    let count = count.max(1);
    let mut control = ControlVector::zeros(grid);
    let mass = problem.mu * spread;
    for j in 1..=count {
        let jump = j as f64 * a_early + (j as f64 - 1.0) * b_late;
        let cell = ((jump / grid.step()).round() as usize).min(grid.resolution() - 1);
        control.add_mass(cell, mass);
    }
    Ok(control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::Costs;
    use crate::stochastic::UnpunctualityModel;

    fn problem(reward: f64, wait: f64) -> FluidProblem {
        FluidProblem::new(
            100.0,
            1.0,
            Costs::new(reward, wait, 50.0, 75.0).unwrap(),
            UnpunctualityModel::PointMassAtZero,
        )
        .unwrap()
    }

    #[test]
    fn zero_reward_regime_has_no_atom() {
        let z = zu_optimal(&problem(0.0, 1.0)).unwrap();
        assert_eq!(z.value, 0.0);
        assert_eq!(z.terminal_atom, 0.0);
    }

    #[test]
    fn overbooking_regime_matches_hand_arithmetic() {
        // r=1.2, c_o/mu=0.75: atom = 100*0.45 = 45,
        // value = 120 + 100*0.45^2/2 = 130.125
        let z = zu_optimal(&problem(1.2, 1.0)).unwrap();
        assert!((z.terminal_atom - 45.0).abs() < 1e-12);
        assert!((z.value - 130.125).abs() < 1e-12);
    }

    #[test]
    fn boundary_regime_is_continuous() {
        let z = zu_optimal(&problem(0.75, 1.0)).unwrap();
        assert_eq!(z.terminal_atom, 0.0);
        assert!((z.value - 75.0).abs() < 1e-12);
    }

    #[test]
    fn zero_wait_cost_with_positive_margin_is_unbounded() {
        assert!(matches!(
            zu_optimal(&problem(1.2, 0.0)),
            Err(FluidError::UnboundedOverbooking)
        ));
    }

    #[test]
    fn materialized_control_carries_atom_in_last_cell() {
        let p = problem(1.2, 1.0);
        let grid = Grid::new(10, 1.0).unwrap();
        let control = zu_optimal(&p).unwrap().control_on(&p, &grid);
        assert!((control.masses()[9] - (10.0 + 45.0)).abs() < 1e-12);
        assert!((control.total_mass() - 145.0).abs() < 1e-12);
    }

    fn uniform_problem(lo: f64, hi: f64) -> FluidProblem {
        FluidProblem::new(
            100.0,
            1.0,
            Costs::new(0.0, 1.0, 50.0, 75.0).unwrap(),
            UnpunctualityModel::uniform(lo, hi).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn five_blocks_for_symmetric_tenth() {
        let p = uniform_problem(-0.1, 0.1);
        let grid = Grid::new(1000, 1.0).unwrap();
        let control = uniform_block_control(0.1, 0.1, &p, &grid).unwrap();
        let expected_cells = [100, 300, 500, 700, 900];
        for (cell, &mass) in control.masses().iter().enumerate() {
            if expected_cells.contains(&cell) {
                assert!((mass - 20.0).abs() < 1e-12, "cell {cell} mass {mass}");
            } else {
                assert_eq!(mass, 0.0, "unexpected mass in cell {cell}");
            }
        }
    }

    #[test]
    fn two_blocks_for_quarter_spread() {
        let p = uniform_problem(-0.25, 0.25);
        let grid = Grid::new(100, 1.0).unwrap();
        let control = uniform_block_control(0.25, 0.25, &p, &grid).unwrap();
        assert!((control.masses()[25] - 50.0).abs() < 1e-12);
        assert!((control.masses()[75] - 50.0).abs() < 1e-12);
        assert!((control.total_mass() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn single_block_when_spread_fills_horizon() {
        let p = uniform_problem(-0.4, 0.6);
        let grid = Grid::new(100, 1.0).unwrap();
        let control = uniform_block_control(0.4, 0.6, &p, &grid).unwrap();
        assert!((control.masses()[40] - 100.0).abs() < 1e-12);
        assert!((control.total_mass() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn overwide_spread_is_an_error() {
        let p = uniform_problem(-0.7, 0.6);
        let grid = Grid::new(100, 1.0).unwrap();
        assert!(matches!(
            uniform_block_control(0.7, 0.6, &p, &grid),
            Err(FluidError::BlockTooWide { .. })
        ));
    }
}
