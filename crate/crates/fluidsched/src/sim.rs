//! Stochastic evaluation of a schedule on the single-server FIFO clinic:
//! unpunctual arrivals, rejection after closing, reward/wait/idle/overtime
//! accounting, replication statistics, and the fluid-scaled gap study.

use crate::fluid::Costs;
use crate::schedule::{extract_schedule, Schedule, ScheduleError};
use crate::stats::t_quantile;
use crate::stochastic::{unit_open, ModelError, ServiceFamily, ServiceModel, UnpunctualityModel};
use crate::{fluid, stochastic};
use rand::Rng;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fluid(#[from] fluid::FluidError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("need at least 2 replications, got {0}")]
    TooFewReplications(usize),
    #[error("write failed: {0}")]
    Io(#[from] std::io::Error),
}

/// One replication's outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOutcome {
    /// Patients who arrived by the horizon and were admitted.
    pub admitted: usize,
    /// Integral of the queue length over `[0, inf)`.
    pub wait_integral: f64,
    /// Server idle time within `[0, T]`.
    pub idle: f64,
    /// Time past `T` needed to empty the system.
    pub overtime: f64,
    /// `r * admitted - c_w * wait - c_i * idle - c_o * overtime`.
    pub objective: f64,
}

/// Simulate one day with uniform draws supplied by the caller. This is the
/// common-random-numbers entry point: `unp_uniforms[i]` belongs to the i-th
/// scheduled patient (quantile-transformed at that patient's scheduled
/// time), `svc_uniforms[j]` to the j-th patient in arrival order.
pub fn simulate_with_uniforms(
    schedule: &Schedule,
    unp: &UnpunctualityModel,
    svc: &ServiceModel,
    horizon: f64,
    costs: &Costs,
    unp_uniforms: &[f64],
    svc_uniforms: &[f64],
) -> Result<SimOutcome, SimError> {
    let m = schedule.len();
    assert!(
        unp_uniforms.len() >= m && svc_uniforms.len() >= m,
        "need one uniform per patient"
    );
    // arrivals with stable tie-breaking on the scheduled index
    let mut arrivals: Vec<(f64, usize)> = Vec::with_capacity(m);
    for (i, &a) in schedule.times().iter().enumerate() {
        let u = unp.quantile(unp_uniforms[i], a)?;
        let t = a + u;
        if t <= horizon {
            arrivals.push((t, i));
        }
    }
    arrivals.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));

    let mut wait_integral = 0.0;
    let mut busy = 0.0;
    let mut last_completion = f64::NEG_INFINITY;
    let mut prev_completion = 0.0f64;
    for (rank, &(arrival, _)) in arrivals.iter().enumerate() {
        let service = svc.quantile(svc_uniforms[rank])?;
        let start = arrival.max(prev_completion).max(0.0);
        let completion = start + service;
        wait_integral += completion - arrival.max(0.0);
        busy += completion.min(horizon) - start.min(horizon);
        prev_completion = completion;
        last_completion = completion;
    }
    let admitted = arrivals.len();
    let idle = horizon - busy;
    let overtime = if admitted == 0 { 0.0 } else { (last_completion - horizon).max(0.0) };
    let objective = costs.reward * admitted as f64
        - costs.wait * wait_integral
        - costs.idle * idle
        - costs.overtime * overtime;
    Ok(SimOutcome { admitted, wait_integral, idle, overtime, objective })
}

/// Simulate one day, drawing everything from `rng`: first one unpunctuality
/// uniform per scheduled patient, then one service uniform per arrival rank.
pub fn simulate_once<R: Rng + ?Sized>(
    schedule: &Schedule,
    unp: &UnpunctualityModel,
    svc: &ServiceModel,
    horizon: f64,
    costs: &Costs,
    rng: &mut R,
) -> Result<SimOutcome, SimError> {
    let m = schedule.len();
    let unp_uniforms: Vec<f64> = (0..m).map(|_| unit_open(rng)).collect();
    let svc_uniforms: Vec<f64> = (0..m).map(|_| unit_open(rng)).collect();
    simulate_with_uniforms(schedule, unp, svc, horizon, costs, &unp_uniforms, &svc_uniforms)
}

/// Replication statistics for the objective, plus the raw outcomes.
#[derive(Debug, Clone)]
pub struct ReplicationReport {
    pub outcomes: Vec<SimOutcome>,
    pub mean_objective: f64,
    pub sd_objective: f64,
    /// Student-t half-width at the configured level.
    pub half_width: f64,
    pub level: f64,
    pub base_seed: u64,
}

impl ReplicationReport {
    /// CSV export: one row per replication.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), SimError> {
        writeln!(out, "rep,admitted,wait_integral,idle,overtime,objective,seed")?;
        for (r, o) in self.outcomes.iter().enumerate() {
            writeln!(
                out,
                "{r},{},{:.12},{:.12},{:.12},{:.12},{}:{r}",
                o.admitted, o.wait_integral, o.idle, o.overtime, o.objective, self.base_seed
            )?;
        }
        Ok(())
    }
}

/// Run independent replications, one ChaCha stream per replication, and
/// aggregate in fixed index order.
pub fn simulate_many(
    schedule: &Schedule,
    unp: &UnpunctualityModel,
    svc: &ServiceModel,
    horizon: f64,
    costs: &Costs,
    replications: usize,
    base_seed: u64,
    level: f64,
) -> Result<ReplicationReport, SimError> {
    if replications < 2 {
        return Err(SimError::TooFewReplications(replications));
    }
    let mut outcomes = Vec::with_capacity(replications);
    for rep in 0..replications {
        let mut rng = stochastic::replication_rng(base_seed, rep as u64);
        outcomes.push(simulate_once(schedule, unp, svc, horizon, costs, &mut rng)?);
    }
    let n = replications as f64;
    let mean = outcomes.iter().map(|o| o.objective).sum::<f64>() / n;
    let var = outcomes
        .iter()
        .map(|o| (o.objective - mean) * (o.objective - mean))
        .sum::<f64>()
        / (n - 1.0);
    let sd = var.sqrt();
    let half_width = t_quantile(replications - 1, 0.5 + level / 2.0) * sd / n.sqrt();
    Ok(ReplicationReport {
        outcomes,
        mean_objective: mean,
        sd_objective: sd,
        half_width,
        level,
        base_seed,
    })
}

/// Result of simulating the `n`-th system against its fluid value.
#[derive(Debug, Clone, Copy)]
pub struct GapEstimate {
    pub scale: f64,
    /// `| mean objective / n - J* |`.
    pub gap: f64,
    pub gap_sqrt_n: f64,
    pub mean_objective: f64,
    pub fluid_value: f64,
    pub patients: usize,
}

/// Fluid-scaled optimality gap: build the `n`-th system (service rate
/// `n mu`, idle/overtime costs scaled by `n`, schedule extracted with scale
/// `n`), simulate it, and compare the fluid-scaled mean objective with the
/// fluid value of the control.
#[allow(clippy::too_many_arguments)]
pub fn fluid_scaled_gap(
    problem: &fluid::FluidProblem,
    grid: &fluid::Grid,
    control: &fluid::ControlVector,
    service: ServiceFamily,
    scale: f64,
    replications: usize,
    base_seed: u64,
) -> Result<GapEstimate, SimError> {
    let fluid_value = fluid::fluid_objective(problem, grid, control)?;
    let schedule = extract_schedule(control, grid, scale)?;
    let scaled_mu = scale * problem.mu;
    let svc = service.for_rate(scaled_mu)?;
    let costs = Costs {
        reward: problem.costs.reward,
        wait: problem.costs.wait,
        idle: scale * problem.costs.idle,
        overtime: scale * problem.costs.overtime,
    };
    let report = simulate_many(
        &schedule,
        &problem.unpunctuality,
        &svc,
        problem.horizon,
        &costs,
        replications,
        base_seed,
        0.95,
    )?;
    let gap = (report.mean_objective / scale - fluid_value).abs();
    Ok(GapEstimate {
        scale,
        gap,
        gap_sqrt_n: gap * scale.sqrt(),
        mean_objective: report.mean_objective,
        fluid_value,
        patients: schedule.len(),
    })
}
