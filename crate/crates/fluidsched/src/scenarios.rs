//! The parametric scenario suite used across tests, docs and the CLI
//! examples: service rate 100 over a unit day with wait/idle/overtime cost
//! rates (1, 50, 75), reward zero unless stated, and six unpunctuality
//! setups — homogeneous normal, uniform and generalized Laplace, a midday
//! split, a parametric drift, and a rewarded overbooking scenario.

use crate::fluid::{Costs, FluidProblem};
use crate::stochastic::{DriftFamily, LinearCoef, UnpunctualityModel};

pub const MU: f64 = 100.0;
pub const HORIZON: f64 = 1.0;

pub fn base_costs() -> Costs {
    Costs::new(0.0, 1.0, 50.0, 75.0).expect("valid costs")
}

pub fn costs_with_reward(reward: f64) -> Costs {
    Costs::new(reward, 1.0, 50.0, 75.0).expect("valid costs")
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    pub problem: FluidProblem,
}

fn scenario(name: &'static str, reward: f64, model: UnpunctualityModel) -> Scenario {
    Scenario {
        name,
        problem: FluidProblem::new(MU, HORIZON, costs_with_reward(reward), model)
            .expect("valid scenario"),
    }
}

/// The three normal models matching the (mean, variance) pairs
/// (-0.1, 0.0025), (-0.05, 0.01), (0, 0.04).
pub fn normal_models() -> [UnpunctualityModel; 3] {
    [
        UnpunctualityModel::normal(-0.1, 0.05).unwrap(),
        UnpunctualityModel::normal(-0.05, 0.1).unwrap(),
        UnpunctualityModel::normal(0.0, 0.2).unwrap(),
    ]
}

/// Uniform models matching the same moment pairs.
pub fn uniform_models() -> [UnpunctualityModel; 3] {
    [
        UnpunctualityModel::uniform(-0.1866, -0.0134).unwrap(),
        UnpunctualityModel::uniform(-0.2232, 0.1232).unwrap(),
        UnpunctualityModel::uniform(-0.3464, 0.3464).unwrap(),
    ]
}

/// Generalized Laplace models matching the same moment pairs, with skew.
pub fn laplace_models() -> [UnpunctualityModel; 3] {
    [
        UnpunctualityModel::generalized_laplace(-0.1211, 0.35, 45.0, 22.5).unwrap(),
        UnpunctualityModel::generalized_laplace(-0.05, 0.5, 14.15, 14.15).unwrap(),
        UnpunctualityModel::generalized_laplace(0.085, 0.65, 5.59, 11.18).unwrap(),
    ]
}

/// The (mean, variance) targets shared by all three families.
pub const MOMENT_TARGETS: [(f64, f64); 3] = [(-0.1, 0.0025), (-0.05, 0.01), (0.0, 0.04)];

pub fn midday_split_normal() -> UnpunctualityModel {
    UnpunctualityModel::midday_split(
        UnpunctualityModel::normal(0.0, 0.2).unwrap(),
        UnpunctualityModel::normal(-0.1, 0.05).unwrap(),
        0.5,
    )
    .unwrap()
}

pub fn midday_split_laplace() -> UnpunctualityModel {
    UnpunctualityModel::midday_split(
        UnpunctualityModel::generalized_laplace(0.085, 0.65, 5.59, 11.18).unwrap(),
        UnpunctualityModel::generalized_laplace(-0.1211, 0.35, 45.0, 22.5).unwrap(),
        0.5,
    )
    .unwrap()
}

/// Normal drift: mean -0.1 t, standard deviation 0.2 - 0.15 t.
pub fn drift_normal() -> UnpunctualityModel {
    UnpunctualityModel::parametric_drift(
        DriftFamily::Normal {
            mean: LinearCoef { intercept: 0.0, slope: -0.1 },
            sd: LinearCoef { intercept: 0.2, slope: -0.15 },
        },
        HORIZON,
    )
    .unwrap()
}

/// Generalized Laplace drift between the two skewed parameter sets.
pub fn drift_laplace() -> UnpunctualityModel {
    UnpunctualityModel::parametric_drift(
        DriftFamily::GeneralizedLaplace {
            mu: LinearCoef { intercept: 0.085, slope: -0.2061 },
            pi: LinearCoef { intercept: 0.65, slope: -0.3 },
            lambda_left: LinearCoef { intercept: 5.59, slope: 39.41 },
            lambda_right: LinearCoef { intercept: 11.18, slope: 11.32 },
        },
        HORIZON,
    )
    .unwrap()
}

/// The six-scenario suite: one representative per family plus the
/// time-heterogeneous and rewarded cases.
pub fn suite() -> Vec<Scenario> {
    vec![
        scenario("normal", 0.0, UnpunctualityModel::normal(-0.1, 0.05).unwrap()),
        scenario("uniform", 0.0, UnpunctualityModel::uniform(-0.2232, 0.1232).unwrap()),
        scenario(
            "gen_laplace",
            0.0,
            UnpunctualityModel::generalized_laplace(-0.1211, 0.35, 45.0, 22.5).unwrap(),
        ),
        scenario("midday_split", 0.0, midday_split_normal()),
        scenario("parametric_drift", 0.0, drift_normal()),
        scenario("reward", 1.2, UnpunctualityModel::normal(-0.05, 0.1).unwrap()),
    ]
}

/// Reward sweep used by the overbooking study.
pub const REWARD_SWEEP: [f64; 4] = [0.0, 1.0, 1.2, 1.5];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_match_their_moment_targets() {
        for models in [normal_models(), uniform_models(), laplace_models()] {
            for (model, (mean, var)) in models.iter().zip(MOMENT_TARGETS) {
                assert!(
                    (model.mean(0.0) - mean).abs() <= 0.02 * mean.abs().max(0.05),
                    "{model:?} mean {} vs {mean}",
                    model.mean(0.0)
                );
                assert!(
                    (model.variance(0.0) - var).abs() <= 0.02 * var,
                    "{model:?} variance {} vs {var}",
                    model.variance(0.0)
                );
            }
        }
    }

    #[test]
    fn suite_has_six_scenarios() {
        let s = suite();
        assert_eq!(s.len(), 6);
        assert_eq!(s.iter().filter(|sc| sc.problem.costs.reward > 0.0).count(), 1);
    }
}
