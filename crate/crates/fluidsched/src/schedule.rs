//! Turning fluid profiles into concrete appointment schedules, and
//! normalizing raw clinic days onto the unit horizon.

use crate::fluid::{ControlVector, Grid};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("appointment times must be finite, nonnegative and nondecreasing")]
    InvalidTimes,
    #[error("scheduled and arrival lists differ in length: {scheduled} vs {arrived}")]
    LengthMismatch { scheduled: usize, arrived: usize },
    #[error("degenerate day: all scheduled times are equal")]
    DegenerateDay,
    #[error("day needs at least two appointments, got {0}")]
    TooFewAppointments(usize),
    #[error("patient count mismatch: schedule has {got}, expected {expected}")]
    CountMismatch { expected: usize, got: usize },
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: cannot parse schedule entry")]
    Parse { line: usize },
}

/// A concrete appointment schedule: `m` nondecreasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    times: Vec<f64>,
}

impl Schedule {
    pub fn new(times: Vec<f64>) -> Result<Self, ScheduleError> {
        let ok = times.iter().all(|t| t.is_finite() && *t >= 0.0)
            && times.windows(2).all(|w| w[0] <= w[1]);
        if !ok {
            return Err(ScheduleError::InvalidTimes);
        }
        Ok(Self { times })
    }

    pub fn empty() -> Self {
        Self { times: Vec::new() }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Two-column text format: `index time`, one appointment per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<(), ScheduleError> {
        for (i, t) in self.times.iter().enumerate() {
            writeln!(out, "{}\t{:.12}", i + 1, t)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: R) -> Result<Self, ScheduleError> {
        let mut times = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let _index = parts.next().ok_or(ScheduleError::Parse { line: lineno + 1 })?;
            let time: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(ScheduleError::Parse { line: lineno + 1 })?;
            times.push(time);
        }
        Schedule::new(times)
    }

    /// Empirical step profile of the schedule on a grid: mass 1 in the cell
    /// of each appointment's node.
    pub fn to_control(&self, grid: &Grid) -> ControlVector {
        let mut control = ControlVector::zeros(grid);
        let k = grid.resolution();
        for &t in &self.times {
            let cell = ((t / grid.step()).round() as usize).min(k - 1);
            control.add_mass(cell, 1.0);
        }
        control
    }
}

/// Appointment times from a fluid profile: `m = floor(scale * A(T))` patients
/// at the generalized-inverse quantiles
/// `a_j = inf{ t : A(t)/A(T) >= j/m }`, evaluated on the grid nodes with ties
/// resolved to the leftmost node.
pub fn extract_schedule(
    control: &ControlVector,
    grid: &Grid,
    scale: f64,
) -> Result<Schedule, ScheduleError> {
    let total = control.total_mass();
    let m = (scale * total).floor() as usize;
    extract_schedule_with_count(control, grid, m)
}

/// Same inversion with the patient count forced (used when a schedule must
/// match an externally fixed headcount).
pub fn extract_schedule_with_count(
    control: &ControlVector,
    grid: &Grid,
    m: usize,
) -> Result<Schedule, ScheduleError> {
    let total = control.total_mass();
    if m == 0 || total <= 0.0 {
        return Ok(Schedule::empty());
    }
    // right-continuous cumulative profile: mass at node t_k counts at t_k
    let masses = control.masses();
    let k = grid.resolution();
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &mass in masses {
        acc += mass;
        cumulative.push(acc);
    }
    let mut times = Vec::with_capacity(m);
    let mut node = 0usize;
    for j in 1..=m {
        let threshold = j as f64 / m as f64 * total;
        while node + 1 < k && cumulative[node] < threshold - 1e-12 * total {
            node += 1;
        }
        times.push(grid.node(node));
    }
    Schedule::new(times)
}

/// A clinic day mapped onto the unit horizon: scheduled times affinely to
/// `[0, 1]`, unpunctualities divided by the same day range so the pairing is
/// preserved.
#[derive(Debug, Clone)]
pub struct NormalizedDay {
    /// Normalized scheduled times, in input order.
    pub scheduled: Vec<f64>,
    /// Normalized unpunctuality per patient, paired with `scheduled`.
    pub unpunctuality: Vec<f64>,
}

impl NormalizedDay {
    pub fn len(&self) -> usize {
        self.scheduled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled.is_empty()
    }

    /// The day's actual schedule, sorted.
    pub fn schedule(&self) -> Schedule {
        let mut times = self.scheduled.clone();
        times.sort_by(f64::total_cmp);
        Schedule::new(times).expect("normalized times are in [0, 1]")
    }
}

/// Normalize one day of raw scheduled/arrival times:
/// `a~ = (a - min a) / (max a - min a)`, `u~ = (arrived - scheduled) / (max a - min a)`.
pub fn normalize_day(scheduled: &[f64], arrived: &[f64]) -> Result<NormalizedDay, ScheduleError> {
    if scheduled.len() != arrived.len() {
        return Err(ScheduleError::LengthMismatch {
            scheduled: scheduled.len(),
            arrived: arrived.len(),
        });
    }
    if scheduled.len() < 2 {
        return Err(ScheduleError::TooFewAppointments(scheduled.len()));
    }
    let min = scheduled.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scheduled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return Err(ScheduleError::DegenerateDay);
    }
    let norm_sched: Vec<f64> = scheduled.iter().map(|a| (a - min) / range).collect();
    let norm_unp: Vec<f64> = scheduled
        .iter()
        .zip(arrived)
        .map(|(a, t)| (t - a) / range)
        .collect();
    Ok(NormalizedDay { scheduled: norm_sched, unpunctuality: norm_unp })
}
