//! Greedy end/cloud placement.
//!
//! Each task gets a priority `P = C / (comm_seconds + eps)`. Tasks are visited
//! in descending priority (lower id first on ties) and kept on the end device
//! iff `load_end + C <= t_end` and `P >= beta`; everything else goes to the
//! cloud. [`objective`] scores any placement by the weighted sum of execution
//! and transfer time, and [`brute_force_optimal`] finds the best feasible
//! placement by enumeration for small instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Location;

pub type TaskId = u64;

/// Largest instance [`brute_force_optimal`] accepts by default.
pub const BRUTE_FORCE_MAX_TASKS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchedError {
    #[error("scheduler parameter `{field}` is invalid: {value}")]
    Param { field: &'static str, value: f64 },
    #[error("task {id}: {reason}")]
    Task { id: TaskId, reason: &'static str },
    #[error("no tasks to place")]
    Empty,
    #[error("decisions do not cover the tasks: {0}")]
    Coverage(String),
    #[error("{n} tasks exceed the exhaustive-search limit of {max}")]
    TooLarge { n: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    /// FLOPs.
    pub compute_cost: f64,
    /// Bytes sent if the task is offloaded.
    pub comm_cost: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), SchedError> {
        if !(self.compute_cost > 0.0 && self.compute_cost.is_finite()) {
            return Err(SchedError::Task {
                id: self.id,
                reason: "compute_cost must be positive",
            });
        }
        if !(self.comm_cost >= 0.0 && self.comm_cost.is_finite()) {
            return Err(SchedError::Task {
                id: self.id,
                reason: "comm_cost must be non-negative",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerParams {
    /// Weight of execution time against transfer time.
    pub alpha: f64,
    /// Minimum priority for local execution.
    pub beta: f64,
    /// End-device load ceiling in FLOPs.
    pub t_end: f64,
    pub eps_priority: f64,
    pub end_flops_rate: f64,
    pub cloud_flops_rate: f64,
    /// Bits per second.
    pub link_bandwidth: f64,
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            t_end: 1e10,
            eps_priority: 1e-6,
            end_flops_rate: 4e10,
            cloud_flops_rate: 8e11,
            link_bandwidth: 300e6,
        }
    }
}

impl SchedulerParams {
    pub fn validate(&self) -> Result<(), SchedError> {
        let check = |field, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(SchedError::Param { field, value })
            }
        };
        check("alpha", self.alpha, (0.0..=1.0).contains(&self.alpha))?;
        check("beta", self.beta, true)?;
        check("t_end", self.t_end, self.t_end >= 0.0)?;
        check("eps_priority", self.eps_priority, self.eps_priority > 0.0)?;
        check("end_flops_rate", self.end_flops_rate, self.end_flops_rate > 0.0)?;
        check("cloud_flops_rate", self.cloud_flops_rate, self.cloud_flops_rate > 0.0)?;
        check("link_bandwidth", self.link_bandwidth, self.link_bandwidth > 0.0)?;
        Ok(())
    }

    /// Transfer time of `bytes` over the link.
    pub fn comm_seconds(&self, bytes: f64) -> f64 {
        8.0 * bytes / self.link_bandwidth
    }
}

pub fn task_priority(t: &TaskSpec, params: &SchedulerParams) -> f64 {
    t.compute_cost / (params.comm_seconds(t.comm_cost) + params.eps_priority)
}

/// One greedy decision together with the inputs the rule saw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementDecision {
    pub task_id: TaskId,
    pub location: Location,
    pub priority: f64,
    pub compute_cost: f64,
    pub load_end_before: f64,
    pub load_end_after: f64,
    pub load_cloud_after: f64,
}

impl PlacementDecision {
    /// Re-evaluates the placement rule from the recorded inputs.
    pub fn replay(&self, params: &SchedulerParams) -> Location {
        end_rule(self.load_end_before, self.compute_cost, self.priority, params)
    }
}

fn end_rule(load_end: f64, compute: f64, priority: f64, params: &SchedulerParams) -> Location {
    if load_end + compute <= params.t_end && priority >= params.beta {
        Location::End
    } else {
        Location::Cloud
    }
}

/// Greedy placement in descending priority order.
pub fn place_tasks(
    tasks: &[TaskSpec],
    initial_load_end: f64,
    initial_load_cloud: f64,
    params: &SchedulerParams,
) -> Result<Vec<PlacementDecision>, SchedError> {
    if tasks.is_empty() {
        return Err(SchedError::Empty);
    }
    params.validate()?;
    for t in tasks {
        t.validate()?;
    }
    let mut order: Vec<(f64, &TaskSpec)> = tasks.iter().map(|t| (task_priority(t, params), t)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));

    let mut load_end = initial_load_end;
    let mut load_cloud = initial_load_cloud;
    let decisions = order
        .into_iter()
        .map(|(priority, t)| {
            let before = load_end;
            let location = end_rule(load_end, t.compute_cost, priority, params);
            match location {
                Location::End => load_end += t.compute_cost,
                Location::Cloud => load_cloud += t.compute_cost,
            }
            PlacementDecision {
                task_id: t.id,
                location,
                priority,
                compute_cost: t.compute_cost,
                load_end_before: before,
                load_end_after: load_end,
                load_cloud_after: load_cloud,
            }
        })
        .collect();
    Ok(decisions)
}

/// Anything that assigns a task to a location.
pub trait Placed {
    fn task_id(&self) -> TaskId;
    fn location(&self) -> Location;
}

impl Placed for PlacementDecision {
    fn task_id(&self) -> TaskId {
        self.task_id
    }

    fn location(&self) -> Location {
        self.location
    }
}

impl Placed for (TaskId, Location) {
    fn task_id(&self) -> TaskId {
        self.0
    }

    fn location(&self) -> Location {
        self.1
    }
}

/// `sum_i alpha * exec_time + (1 - alpha) * comm_seconds`; end placements
/// pay no transfer.
pub fn objective<P: Placed>(
    decisions: &[P],
    tasks: &[TaskSpec],
    params: &SchedulerParams,
) -> Result<f64, SchedError> {
    let mut by_id: BTreeMap<TaskId, &TaskSpec> = BTreeMap::new();
    for t in tasks {
        if by_id.insert(t.id, t).is_some() {
            return Err(SchedError::Coverage(format!("duplicate task id {}", t.id)));
        }
    }
    if decisions.len() != tasks.len() {
        return Err(SchedError::Coverage(format!(
            "{} decisions for {} tasks",
            decisions.len(),
            tasks.len()
        )));
    }
    let mut placed: BTreeMap<TaskId, Location> = BTreeMap::new();
    for d in decisions {
        if !by_id.contains_key(&d.task_id()) {
            return Err(SchedError::Coverage(format!("unknown task id {}", d.task_id())));
        }
        if placed.insert(d.task_id(), d.location()).is_some() {
            return Err(SchedError::Coverage(format!("task {} placed twice", d.task_id())));
        }
    }
    // Task order, whatever the decision order.
    Ok(tasks
        .iter()
        .fold(0.0, |acc, t| acc + task_cost(t, placed[&t.id], params)))
}

/// One task's term of [`objective`].
pub fn task_cost(t: &TaskSpec, location: Location, params: &SchedulerParams) -> f64 {
    let (exec, comm) = match location {
        Location::End => (t.compute_cost / params.end_flops_rate, 0.0),
        Location::Cloud => (
            t.compute_cost / params.cloud_flops_rate,
            params.comm_seconds(t.comm_cost),
        ),
    };
    params.alpha * exec + (1.0 - params.alpha) * comm
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalPlacement {
    /// One entry per task, in input order.
    pub assignment: Vec<(TaskId, Location)>,
    pub objective: f64,
}

impl OptimalPlacement {
    pub fn end_set(&self) -> Vec<TaskId> {
        let mut ids: Vec<TaskId> = self
            .assignment
            .iter()
            .filter(|(_, l)| *l == Location::End)
            .map(|(id, _)| *id)
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Exhaustive search over all `2^N` placements with total end load within
/// `t_end`. Ties go to the lexicographically smallest sorted end set.
pub fn brute_force_optimal(
    tasks: &[TaskSpec],
    params: &SchedulerParams,
    max_n: usize,
) -> Result<OptimalPlacement, SchedError> {
    if tasks.len() > max_n || tasks.len() >= 63 {
        return Err(SchedError::TooLarge {
            n: tasks.len(),
            max: max_n.min(62),
        });
    }
    if tasks.is_empty() {
        return Err(SchedError::Empty);
    }
    params.validate()?;
    for t in tasks {
        t.validate()?;
    }
    let n = tasks.len();
    let end_cost: Vec<f64> = tasks.iter().map(|t| task_cost(t, Location::End, params)).collect();
    let cloud_cost: Vec<f64> = tasks.iter().map(|t| task_cost(t, Location::Cloud, params)).collect();
    // Slack for summation order.
    let capacity = params.t_end * (1.0 + 1e-12);

    let mut best: Option<(f64, Vec<TaskId>, u64)> = None;
    for mask in 0u64..(1u64 << n) {
        let mut load = 0.0;
        let mut cost = 0.0;
        for i in 0..n {
            if mask >> i & 1 == 1 {
                load += tasks[i].compute_cost;
                cost += end_cost[i];
            } else {
                cost += cloud_cost[i];
            }
        }
        if load > capacity {
            continue;
        }
        let better = match &best {
            None => true,
            Some((c, set, _)) => {
                cost < *c || (cost == *c && end_set_of(tasks, mask) < *set)
            }
        };
        if better {
            best = Some((cost, end_set_of(tasks, mask), mask));
        }
    }
    let (_, _, mask) = best.expect("the all-cloud placement is always feasible");
    let assignment: Vec<(TaskId, Location)> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let loc = if mask >> i & 1 == 1 {
                Location::End
            } else {
                Location::Cloud
            };
            (t.id, loc)
        })
        .collect();
    let objective = objective(&assignment, tasks, params)?;
    Ok(OptimalPlacement {
        assignment,
        objective,
    })
}

fn end_set_of(tasks: &[TaskSpec], mask: u64) -> Vec<TaskId> {
    let mut ids: Vec<TaskId> = tasks
        .iter()
        .enumerate()
        .filter(|(i, _)| mask >> i & 1 == 1)
        .map(|(_, t)| t.id)
        .collect();
    ids.sort_unstable();
    ids
}

/// A schedulable instance as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    #[serde(default)]
    pub initial_load_end: f64,
    #[serde(default)]
    pub initial_load_cloud: f64,
    pub params: SchedulerParams,
    pub tasks: Vec<TaskSpec>,
}

impl Instance {
    pub fn from_toml_str(s: &str) -> Result<Self, String> {
        let inst: Instance = toml::from_str(s).map_err(|e| e.message().to_string())?;
        inst.params.validate().map_err(|e| e.to_string())?;
        for t in &inst.tasks {
            t.validate().map_err(|e| e.to_string())?;
        }
        Ok(inst)
    }

    pub fn place(&self) -> Result<Vec<PlacementDecision>, SchedError> {
        place_tasks(&self.tasks, self.initial_load_end, self.initial_load_cloud, &self.params)
    }
}

/// `id,location,priority,load_end_after` rows with a header line.
pub fn decisions_csv(decisions: &[PlacementDecision]) -> String {
    let mut out = String::from("id,location,priority,load_end_after\n");
    for d in decisions {
        out.push_str(&format!(
            "{},{},{:.9e},{:.9e}\n",
            d.task_id,
            d.location.as_str(),
            d.priority,
            d.load_end_after
        ));
    }
    out
}
