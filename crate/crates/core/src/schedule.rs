//! Cosine-annealed growth of the subnet search space across task boundaries.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn cosine_term(t: usize, tasks: usize) -> f64 {
    1.0 + (t as f64 * PI / tasks as f64).cos()
}

/// r = 2G / Σ_{t=0}^{N−1} (1 + cos(tπ/N))
pub fn expansion_constant(tasks: usize, groups: usize) -> Result<f64> {
    if tasks == 0 || groups == 0 {
        return Err(Error::Parameter(format!(
            "task count ({tasks}) and group count ({groups}) must be positive"
        )));
    }
    let denom: f64 = (0..tasks).map(|t| cosine_term(t, tasks)).sum();
    Ok(2.0 * groups as f64 / denom)
}

/// s_t = ½ r (1 + cos((t−1)π/N)) for 1-based `t`, before clamping.
pub fn expansion_size(t: usize, r: f64, tasks: usize) -> Result<f64> {
    if t == 0 || t > tasks {
        return Err(Error::Parameter(format!(
            "task index {t} outside 1..={tasks}"
        )));
    }
    Ok(0.5 * r * cosine_term(t - 1, tasks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub tasks: usize,
    pub groups: usize,
    pub r: f64,
    /// Unclamped s_t, index 0 is task 1.
    pub s_raw: Vec<f64>,
    /// Capped cumulative sum of the clamped sizes.
    pub g_real: Vec<f64>,
    pub g_groups: Vec<usize>,
}

impl ScheduleState {
    /// Search space (in groups) while training the 0-based task `task`.
    pub fn groups_for_task(&self, task: usize) -> usize {
        self.g_groups[task.min(self.g_groups.len() - 1)]
    }

    /// CSV with columns `t,s_raw,g_real,g_groups`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s_raw,g_real,g_groups\n");
        for t in 0..self.tasks {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{}",
                t + 1,
                self.s_raw[t],
                self.g_real[t],
                self.g_groups[t]
            );
        }
        out
    }
}

/// Integer search-space sizes per task.
///
/// Each step is clamped to at least one group, the running total is capped at
/// `G` and rounded half-up, and the final task always sees all `G` groups.
pub fn build_schedule(tasks: usize, groups: usize) -> Result<ScheduleState> {
    let r = expansion_constant(tasks, groups)?;
    if tasks > groups {
        log::warn!(
            "{tasks} tasks exceed {groups} groups; the unit-step clamp dominates the schedule"
        );
    }
    let s_raw = (1..=tasks)
        .map(|t| expansion_size(t, r, tasks))
        .collect::<Result<Vec<_>>>()?;
    let cap = groups as f64;
    let mut cumulative = 0.0;
    let mut g_real = Vec::with_capacity(tasks);
    let mut g_groups = Vec::with_capacity(tasks);
    for &s in &s_raw {
        cumulative += s.max(1.0);
        let g = cumulative.min(cap);
        g_real.push(g);
        g_groups.push(((g + 0.5).floor() as usize).clamp(1, groups));
    }
    g_groups[tasks - 1] = groups;
    Ok(ScheduleState {
        tasks,
        groups,
        r,
        s_raw,
        g_real,
        g_groups,
    })
}
