use fluidsched::fluid::{Costs, FluidProblem, Grid};
use fluidsched::qp;
use fluidsched::solver::SolverOptions;
use fluidsched::stochastic::UnpunctualityModel;
use std::time::Instant;

fn main() {
    for (name, model, reward, k) in [
        ("normal_K125", UnpunctualityModel::normal(-0.1, 0.05).unwrap(), 0.0, 125usize),
    ] {
        let p = FluidProblem::new(
            100.0,
            1.0,
            Costs::new(reward, 1.0, 50.0, 75.0).unwrap(),
            model,
        )
        .unwrap();
        let grid = Grid::new(k, 1.0).unwrap();
        let t0 = Instant::now();
        let (inst, _m) = qp::assemble(&p, &grid).unwrap();
        let t1 = Instant::now();
        let mut opts = SolverOptions::default();
        opts.max_iter = 30_000;
        match qp::solve(&inst, &opts, None) {
            Ok(sol) => println!(
                "{name}: value {:.6} iters {} polished {} rp {:.2e} rd {:.2e} asm {:?} solve {:?}",
                sol.value,
                sol.iterations,
                sol.polished,
                sol.primal_residual,
                sol.dual_residual,
                t1 - t0,
                t1.elapsed()
            ),
            Err(e) => println!("{name}: ERROR {e}"),
        }
    }
}
