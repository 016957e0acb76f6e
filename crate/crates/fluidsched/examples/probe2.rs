use fluidsched::fluid::{Costs, FluidProblem, Grid};
use fluidsched::qp;
use fluidsched::solver::SolverOptions;
use fluidsched::stochastic::UnpunctualityModel;

fn main() {
    let p = FluidProblem::new(
        100.0,
        1.0,
        Costs::new(0.0, 1.0, 50.0, 75.0).unwrap(),
        UnpunctualityModel::normal(-0.1, 0.05).unwrap(),
    )
    .unwrap();
    let grid = Grid::new(125, 1.0).unwrap();
    let (inst, _m) = qp::assemble(&p, &grid).unwrap();
    for (tag, sigma, rho, eqs, alpha, adapt) in [
        ("noadapt_rho01", 1e-6, 0.1, 1e3, 1.6, false),
        ("noadapt_rho1", 1e-6, 1.0, 1e3, 1.6, false),
        ("noadapt_rho001", 1e-6, 0.01, 1e3, 1.6, false),
        ("adapt_rho01", 1e-6, 0.1, 1e3, 1.6, true),
    ] {
        let mut opts = SolverOptions::default();
        opts.max_iter = 100_000;
        opts.polish = false;
        opts.sigma = sigma;
        opts.rho = rho;
        opts.eq_rho_scale = eqs;
        opts.alpha = alpha;
        if !adapt {
            opts.rho_adapt_every = usize::MAX;
        }
        match qp::solve(&inst, &opts, None) {
            Ok(sol) => println!(
                "{tag}: CONVERGED value {:.6} iters {} rp {:.2e} rd {:.2e}",
                sol.value, sol.iterations, sol.primal_residual, sol.dual_residual
            ),
            Err(fluidsched::qp::QpError::Solve(
                fluidsched::solver::SolveError::MaxIterations {
                    primal_residual,
                    dual_residual,
                    trace,
                    ..
                },
            )) => {
                let every = trace.len() / 12;
                let samples: Vec<String> = trace
                    .iter()
                    .step_by(every.max(1))
                    .map(|(i, rp, rd)| format!("{i}:{rp:.1e}/{rd:.1e}"))
                    .collect();
                println!(
                    "{tag}: STALLED rp {primal_residual:.2e} rd {dual_residual:.2e}\n  {}",
                    samples.join(" ")
                );
            }
            Err(e) => println!("{tag}: ERROR {e}"),
        }
    }
}
