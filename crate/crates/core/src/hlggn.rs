//! Hardware-aware grouped gating.
//!
//! Two pieces live here:
//!
//! * **Local expert selection.** A device profile is mapped to a capability
//!   threshold, and each expert's resource descriptor is compared against
//!   it. Experts that fit within a tolerance form the local set, capped at a
//!   fraction of all experts.
//! * **Grouped gate.** Experts are split into `K` contiguous groups. A global
//!   softmax over groups picks the `G` most likely groups; only those groups
//!   evaluate their own softmax, and an expert's probability is the product
//!   of its group's probability and its in-group probability. Unevaluated
//!   groups report exactly zero.
//!
//! Every multiply-accumulate of a gate forward pass is counted, so the
//! analytic cost in [`gate_flops`] can be checked against what actually ran.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::moe::{GateFunction, MoeError};
use crate::rng::{self, Stream};
use crate::Location;

/// Standard deviation of seeded gate weights.
pub const GATE_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("gate expects input of dimension {expected}, got {got}")]
    InputDim { expected: usize, got: usize },
    #[error("invalid grouping: {0}")]
    Grouping(String),
    #[error("top_groups must be in 1..={groups}, got {top}")]
    TopGroups { top: usize, groups: usize },
    #[error("device profile field `{field}` is invalid: {value}")]
    Profile { field: &'static str, value: f64 },
    #[error("complexity tolerance must be non-negative, got {0}")]
    Tolerance(f64),
    #[error("cap fraction must be in (0, 1], got {0}")]
    CapFraction(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Real-time state of the end device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    /// Fraction of nominal compute currently available.
    pub cpu_available: f64,
    /// Free memory in megabytes.
    pub mem_available: f64,
    /// Battery or power-cap fraction.
    pub power_budget: f64,
    /// Megabits per second.
    pub bandwidth: f64,
    /// Nominal FLOPs per second at full availability.
    pub nominal_flops_rate: f64,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), GateError> {
        let fraction = |field, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(GateError::Profile { field, value: v })
            }
        };
        let non_negative = |field, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GateError::Profile { field, value: v })
            }
        };
        fraction("cpu_available", self.cpu_available)?;
        fraction("power_budget", self.power_budget)?;
        non_negative("mem_available", self.mem_available)?;
        non_negative("bandwidth", self.bandwidth)?;
        non_negative("nominal_flops_rate", self.nominal_flops_rate)?;
        Ok(())
    }

    /// FLOPs per second actually available right now.
    pub fn effective_flops_rate(&self) -> f64 {
        self.nominal_flops_rate * self.cpu_available
    }
}

/// Constants of the capability function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareModel {
    /// Compute budget at full CPU and power availability, in the same unit as
    /// [`ExpertDescriptor::flops_cost`].
    pub base_flops_budget: f64,
    /// Share of free memory that experts may occupy.
    pub mem_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityThreshold {
    pub compute_budget: f64,
    /// Megabytes.
    pub memory_budget: f64,
}

/// `compute = cpu * min(power, 1) * base`, `memory = mem * mem_fraction`.
pub fn capability_threshold(p: &DeviceProfile, h: &HardwareModel) -> CapabilityThreshold {
    CapabilityThreshold {
        compute_budget: p.cpu_available * p.power_budget.min(1.0) * h.base_flops_budget,
        memory_budget: p.mem_available * h.mem_fraction,
    }
}

/// Resource footprint of one expert.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertDescriptor {
    pub index: usize,
    /// FLOPs per token.
    pub flops_cost: f64,
    /// Megabytes resident.
    pub memory_cost: f64,
}

fn utilization(cost: f64, budget: f64) -> f64 {
    if budget > 0.0 {
        cost / budget
    } else {
        f64::INFINITY
    }
}

/// Worst resource utilization minus one; `<= eps` means the expert fits
/// within `(1 + eps)` of the budget on every resource.
pub fn complexity_mismatch(e: &ExpertDescriptor, t: &CapabilityThreshold) -> f64 {
    utilization(e.flops_cost, t.compute_budget).max(utilization(e.memory_cost, t.memory_budget))
        - 1.0
}

/// `ceil(cap * m)`, robust to the product landing a hair above an integer.
pub fn local_expert_cap(m: usize, cap_fraction: f64) -> usize {
    let raw = cap_fraction * m as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

/// Experts that may run on the end device, as ascending ids.
///
/// Keeps the experts whose [`complexity_mismatch`] is at most `eps`, then, if
/// more than `ceil(cap_fraction * M)` qualify, the ones with the lowest
/// mismatch (lower index on ties).
pub fn select_local_experts(
    experts: &[ExpertDescriptor],
    t: &CapabilityThreshold,
    eps: f64,
    cap_fraction: f64,
) -> Result<Vec<usize>, GateError> {
    if !(eps >= 0.0) {
        return Err(GateError::Tolerance(eps));
    }
    if !(cap_fraction > 0.0 && cap_fraction <= 1.0) {
        return Err(GateError::CapFraction(cap_fraction));
    }
    let mut fitting: Vec<(f64, usize)> = experts
        .iter()
        .map(|e| (complexity_mismatch(e, t), e.index))
        .filter(|(f, _)| *f <= eps)
        .collect();
    fitting.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    fitting.truncate(local_expert_cap(experts.len(), cap_fraction));
    let mut ids: Vec<usize> = fitting.into_iter().map(|(_, i)| i).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// `softmax(W x + b)` with counted multiply-accumulates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGate {
    pub weight: Matrix,
    pub bias: Vector,
}

impl LinearGate {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self, GateError> {
        if bias.len() != weight.rows() {
            return Err(GateError::Grouping(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Softmax probabilities; adds the number of multiplies performed to `macs`.
    pub fn probabilities(&self, x: &Vector, macs: &mut u64) -> Result<Vector, GateError> {
        if x.len() != self.input_dim() {
            return Err(GateError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut logits = Vec::with_capacity(self.outputs());
        for i in 0..self.outputs() {
            let mut acc = self.bias[i];
            for (w, xi) in self.weight.row(i).iter().zip(x.iter()) {
                acc += w * xi;
                *macs += 1;
            }
            logits.push(acc);
        }
        Ok(linalg::softmax(&Vector::new(logits))?)
    }
}

/// All gate weights plus the grouping layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GroupGateRepr", into = "GroupGateRepr")]
pub struct GroupGateParams {
    groups: Vec<LinearGate>,
    global: LinearGate,
    top_groups: usize,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct GroupGateRepr {
    groups: Vec<LinearGate>,
    global: LinearGate,
    top_groups: usize,
}

impl TryFrom<GroupGateRepr> for GroupGateParams {
    type Error = GateError;

    fn try_from(r: GroupGateRepr) -> Result<Self, GateError> {
        GroupGateParams::new(r.groups, r.global, r.top_groups)
    }
}

impl From<GroupGateParams> for GroupGateRepr {
    fn from(p: GroupGateParams) -> Self {
        GroupGateRepr {
            groups: p.groups,
            global: p.global,
            top_groups: p.top_groups,
        }
    }
}

/// Sizes of a contiguous near-equal split of `m` items into `k` groups; the
/// first `m % k` groups get one extra item.
pub fn contiguous_group_sizes(m: usize, k: usize) -> Vec<usize> {
    (0..k).map(|g| m / k + usize::from(g < m % k)).collect()
}

impl GroupGateParams {
    pub fn new(
        groups: Vec<LinearGate>,
        global: LinearGate,
        top_groups: usize,
    ) -> Result<Self, GateError> {
        let k = groups.len();
        if k == 0 {
            return Err(GateError::Grouping("no groups".into()));
        }
        if global.outputs() != k {
            return Err(GateError::Grouping(format!(
                "global gate has {} outputs for {k} groups",
                global.outputs()
            )));
        }
        let d = global.input_dim();
        if let Some(g) = groups.iter().position(|g| g.input_dim() != d) {
            return Err(GateError::Grouping(format!(
                "group {g} takes dimension {}, global gate takes {d}",
                groups[g].input_dim()
            )));
        }
        if top_groups == 0 || top_groups > k {
            return Err(GateError::TopGroups {
                top: top_groups,
                groups: k,
            });
        }
        let mut offsets = Vec::with_capacity(k + 1);
        let mut acc = 0;
        offsets.push(0);
        for g in &groups {
            acc += g.outputs();
            offsets.push(acc);
        }
        Ok(Self {
            groups,
            global,
            top_groups,
            offsets,
        })
    }

    /// Gaussian-initialized gate over a contiguous equal partition.
    pub fn seeded(
        seed: u64,
        num_experts: usize,
        num_groups: usize,
        dim: usize,
        top_groups: usize,
    ) -> Result<Self, GateError> {
        if num_groups == 0 || num_groups > num_experts || dim == 0 {
            return Err(GateError::Grouping(format!(
                "cannot split {num_experts} experts into {num_groups} groups of dimension {dim}"
            )));
        }
        let mut rng = rng::stream(seed, Stream::GateWeights);
        let mut linear = |rows: usize| {
            let w = rng::gaussian_vec(&mut rng, rows * dim, GATE_INIT_STD);
            let b = rng::gaussian_vec(&mut rng, rows, GATE_INIT_STD);
            LinearGate::new(Matrix::new(rows, dim, w).expect("sized"), Vector::new(b))
        };
        let global = linear(num_groups)?;
        let groups = contiguous_group_sizes(num_experts, num_groups)
            .into_iter()
            .map(&mut linear)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(groups, global, top_groups)
    }

    /// A single group whose in-group gate is `flat`. The global stage then
    /// has one output and always assigns it probability one.
    pub fn single_group(flat: LinearGate) -> Result<Self, GateError> {
        let d = flat.input_dim();
        let global = LinearGate::new(Matrix::zeros(1, d), Vector::zeros(1))?;
        Self::new(vec![flat], global, 1)
    }

    pub fn with_top_groups(mut self, top_groups: usize) -> Result<Self, GateError> {
        if top_groups == 0 || top_groups > self.num_groups() {
            return Err(GateError::TopGroups {
                top: top_groups,
                groups: self.num_groups(),
            });
        }
        self.top_groups = top_groups;
        Ok(self)
    }

    pub fn num_experts(&self) -> usize {
        *self.offsets.last().expect("at least one group")
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn top_groups(&self) -> usize {
        self.top_groups
    }

    pub fn input_dim(&self) -> usize {
        self.global.input_dim()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(LinearGate::outputs).collect()
    }

    pub fn groups(&self) -> &[LinearGate] {
        &self.groups
    }

    pub fn global(&self) -> &LinearGate {
        &self.global
    }

    /// Expert id range covered by group `k`.
    pub fn group_range(&self, k: usize) -> std::ops::Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    pub fn group_of(&self, expert: usize) -> Option<usize> {
        (0..self.num_groups()).find(|&k| self.group_range(k).contains(&expert))
    }

    /// The per-group gates stacked into one `M x d` gate.
    pub fn flat_gate(&self) -> LinearGate {
        let d = self.input_dim();
        let m = self.num_experts();
        let mut data = Vec::with_capacity(m * d);
        let mut bias = Vec::with_capacity(m);
        for g in &self.groups {
            data.extend_from_slice(g.weight.data());
            bias.extend_from_slice(g.bias.as_slice());
        }
        LinearGate {
            weight: Matrix::new(m, d, data).expect("rows add up to M"),
            bias: Vector::new(bias),
        }
    }
}

impl GateFunction for GroupGateParams {
    fn probabilities(&self, x: &Vector) -> Result<Vector, MoeError> {
        group_gate_forward(x, self)
            .map(|g| g.probs)
            .map_err(|e| match e {
                GateError::InputDim { expected, got } => MoeError::InputDim { expected, got },
                other => MoeError::Gate(other.to_string()),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOutput {
    /// Fused probability per expert; zero for experts in unevaluated groups.
    pub probs: Vector,
    /// Top-1 expert.
    pub selected_expert: usize,
    /// Ascending ids of groups whose in-group gate ran.
    pub evaluated_groups: Vec<usize>,
    /// Multiply-accumulates actually performed.
    pub flops_used: u64,
}

/// Two-stage grouped gate forward pass.
pub fn group_gate_forward(x: &Vector, params: &GroupGateParams) -> Result<GateOutput, GateError> {
    let mut macs = 0u64;
    let p_group = params.global.probabilities(x, &mut macs)?;

    let mut ranked: Vec<usize> = (0..params.num_groups()).collect();
    ranked.sort_by(|&a, &b| p_group[b].total_cmp(&p_group[a]).then(a.cmp(&b)));
    let mut evaluated: Vec<usize> = ranked[..params.top_groups].to_vec();
    evaluated.sort_unstable();

    let mut probs = vec![0.0; params.num_experts()];
    for &k in &evaluated {
        let p_local = params.groups[k].probabilities(x, &mut macs)?;
        for (slot, p) in probs[params.group_range(k)].iter_mut().zip(p_local.iter()) {
            *slot = p_group[k] * p;
        }
    }
    let probs = Vector::new(probs);
    let selected_expert = probs.argmax().expect("at least one expert");
    Ok(GateOutput {
        probs,
        selected_expert,
        evaluated_groups: evaluated,
        flops_used: macs,
    })
}

/// Single softmax over all experts.
pub fn flat_gate_forward(x: &Vector, gate: &LinearGate) -> Result<GateOutput, GateError> {
    let mut macs = 0u64;
    let probs = gate.probabilities(x, &mut macs)?;
    let selected_expert = probs.argmax().expect("at least one expert");
    Ok(GateOutput {
        probs,
        selected_expert,
        evaluated_groups: vec![0],
        flops_used: macs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    Grouped,
    Flat,
}

/// Multiply-accumulates of one gate evaluation.
///
/// Flat is `M d`. Grouped is `K d` for the global stage plus the worst case
/// of the second stage, `G max_k(M_k) d`; with equal groups that is exact.
pub fn gate_flops(params: &GroupGateParams, mode: GateMode) -> u64 {
    let d = params.input_dim() as u64;
    match mode {
        GateMode::Flat => params.num_experts() as u64 * d,
        GateMode::Grouped => {
            let largest = params.group_sizes().into_iter().max().unwrap_or(0) as u64;
            (params.num_groups() as u64 + params.top_groups as u64 * largest) * d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub expert: usize,
    pub location: Location,
}

/// Top-1 routing: run on the end device iff the selected expert is local.
pub fn top1_route(g: &GateOutput, local_set: &[usize]) -> RoutingDecision {
    let location = if local_set.contains(&g.selected_expert) {
        Location::End
    } else {
        Location::Cloud
    };
    RoutingDecision {
        expert: g.selected_expert,
        location,
    }
}

/// Highest-probability expert among `allowed`; lower id wins ties.
pub fn restricted_argmax(probs: &Vector, allowed: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut sorted = allowed.to_vec();
    sorted.sort_unstable();
    for i in sorted {
        match best {
            Some(b) if probs[i] <= probs[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use endcloud_oracle as oracle;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(cpu: f64, mem: f64, power: f64) -> DeviceProfile {
        DeviceProfile {
            cpu_available: cpu,
            mem_available: mem,
            power_budget: power,
            bandwidth: 300.0,
            nominal_flops_rate: 1e9,
        }
    }

    fn random_x(rng: &mut ChaCha8Rng, d: usize) -> Vector {
        Vector::new((0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
    }

    /// Seeded params with weights large enough to make the softmaxes peaked.
    fn random_params(seed: u64, m: usize, k: usize, d: usize, g: usize) -> GroupGateParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut linear = |rows: usize| {
            LinearGate::new(
                Matrix::from_fn(rows, d, |_, _| rng.random_range(-1.0..1.0)),
                Vector::new((0..rows).map(|_| rng.random_range(-1.0..1.0)).collect()),
            )
            .unwrap()
        };
        let global = linear(k);
        let groups = contiguous_group_sizes(m, k).into_iter().map(&mut linear).collect();
        GroupGateParams::new(groups, global, g).unwrap()
    }

    fn oracle_probs(x: &Vector, p: &GroupGateParams) -> Vec<f64> {
        let groups: Vec<(Vec<f64>, Vec<f64>)> = p
            .groups()
            .iter()
            .map(|g| (g.weight.data().to_vec(), g.bias.as_slice().to_vec()))
            .collect();
        oracle::two_stage_gate_probs(
            x.as_slice(),
            p.global().weight.data(),
            p.global().bias.as_slice(),
            &groups,
        )
    }

    #[test]
    fn capability_examples() {
        let h = HardwareModel {
            base_flops_budget: 1e9,
            mem_fraction: 0.5,
        };
        assert_eq!(capability_threshold(&profile(0.0, 100.0, 1.0), &h).compute_budget, 0.0);
        assert_eq!(capability_threshold(&profile(1.0, 100.0, 1.0), &h).compute_budget, 1e9);
        let t = capability_threshold(&profile(0.5, 100.0, 0.8), &h);
        assert!((t.compute_budget - 4e8).abs() < 1e-6);
        assert_eq!(t.memory_budget, 50.0);
    }

    #[test]
    fn profile_validation() {
        assert!(profile(0.5, 10.0, 0.5).validate().is_ok());
        assert!(matches!(
            profile(1.5, 10.0, 0.5).validate(),
            Err(GateError::Profile {
                field: "cpu_available",
                ..
            })
        ));
        assert!(profile(0.5, -1.0, 0.5).validate().is_err());
    }

    fn bank(costs: &[(f64, f64)]) -> Vec<ExpertDescriptor> {
        costs
            .iter()
            .enumerate()
            .map(|(index, &(flops_cost, memory_cost))| ExpertDescriptor {
                index,
                flops_cost,
                memory_cost,
            })
            .collect()
    }

    #[test]
    fn cap_keeps_four_of_eight() {
        let experts = bank(&[(1.0, 1.0); 8]);
        let t = CapabilityThreshold {
            compute_budget: 10.0,
            memory_budget: 10.0,
        };
        let set = select_local_experts(&experts, &t, 0.0, 0.4).unwrap();
        assert_eq!(set, vec![0, 1, 2, 3]);
    }

    #[test]
    fn zero_budget_selects_nothing() {
        let experts = bank(&[(1.0, 1.0); 4]);
        let t = CapabilityThreshold {
            compute_budget: 0.0,
            memory_budget: 0.0,
        };
        assert!(select_local_experts(&experts, &t, 0.0, 1.0).unwrap().is_empty());
    }

    #[test]
    fn ten_expert_fixture_matches_hand_rule() {
        // compute budget 10, memory budget 100: f = flops/10 - 1 when compute bound.
        let flops = [1.0, 5.0, 10.0, 11.0, 3.0, 20.0, 9.0, 2.0, 10.0, 15.0];
        let costs: Vec<(f64, f64)> = flops.iter().map(|&f| (f, 1.0)).collect();
        let experts = bank(&costs);
        let t = CapabilityThreshold {
            compute_budget: 10.0,
            memory_budget: 100.0,
        };
        let got = select_local_experts(&experts, &t, 0.0, 0.4).unwrap();
        // f values: -0.9,-0.5,0,0.1,-0.7,1,-0.1,-0.8,0,0.5; six are <= 0, the
        // four lowest are experts 0 (-0.9), 7 (-0.8), 4 (-0.7), 1 (-0.5).
        assert_eq!(got, vec![0, 1, 4, 7]);
        let hand: Vec<(usize, f64, f64)> = experts
            .iter()
            .map(|e| (e.index, e.flops_cost, e.memory_cost))
            .collect();
        assert_eq!(got, oracle::local_expert_rule(&hand, 10.0, 100.0, 0.0, 0.4));
    }

    #[test]
    fn selection_rejects_bad_arguments() {
        let t = CapabilityThreshold {
            compute_budget: 1.0,
            memory_budget: 1.0,
        };
        assert!(select_local_experts(&[], &t, -0.1, 0.4).is_err());
        assert!(select_local_experts(&[], &t, 0.0, 0.0).is_err());
        assert!(select_local_experts(&[], &t, 0.0, 1.1).is_err());
    }

    #[test]
    fn cap_arithmetic() {
        assert_eq!(local_expert_cap(8, 0.4), 4);
        assert_eq!(local_expert_cap(10, 0.4), 4);
        assert_eq!(local_expert_cap(10, 0.7), 7);
        assert_eq!(local_expert_cap(64, 0.4), 26);
        assert_eq!(local_expert_cap(3, 1.0), 3);
    }

    #[test]
    fn single_group_is_flat_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flat = LinearGate::new(
            Matrix::from_fn(6, 4, |_, _| rng.random_range(-1.0..1.0)),
            Vector::new(vec![0.1; 6]),
        )
        .unwrap();
        let params = GroupGateParams::single_group(flat.clone()).unwrap();
        let x = random_x(&mut rng, 4);
        let grouped = group_gate_forward(&x, &params).unwrap();
        let plain = flat_gate_forward(&x, &flat).unwrap();
        assert!((grouped.probs.sum() - 1.0).abs() < 1e-12);
        for (a, b) in grouped.probs.iter().zip(plain.probs.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let d = 3;
        let zero = |rows| LinearGate::new(Matrix::zeros(rows, d), Vector::zeros(rows)).unwrap();
        let params = GroupGateParams::new(vec![zero(2), zero(2)], zero(2), 2).unwrap();
        let out = group_gate_forward(&Vector::new(vec![1.0, 2.0, 3.0]), &params).unwrap();
        assert!(out.probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
        assert_eq!(out.selected_expert, 0);
    }

    #[test]
    fn full_mode_matches_explicit_product() {
        let params = random_params(5, 12, 3, 7, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_x(&mut rng, 7);
        let out = group_gate_forward(&x, &params).unwrap();
        let want = oracle_probs(&x, &params);
        for (a, b) in out.probs.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((out.probs.sum() - 1.0).abs() < 1e-12);
        assert_eq!(out.selected_expert, oracle::first_argmax(&want));
    }

    #[test]
    fn partial_mode_zeroes_other_groups() {
        let params = random_params(8, 16, 4, 5, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_x(&mut rng, 5);
        let out = group_gate_forward(&x, &params).unwrap();
        assert_eq!(out.evaluated_groups.len(), 1);
        let k = out.evaluated_groups[0];
        for (i, &p) in out.probs.iter().enumerate() {
            assert_eq!(p == 0.0, !params.group_range(k).contains(&i));
        }
        assert_eq!(params.group_of(out.selected_expert), Some(k));
        assert!(out.probs.sum() < 1.0);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let params = random_params(1, 4, 2, 3, 1);
        assert_eq!(
            group_gate_forward(&Vector::zeros(2), &params).unwrap_err(),
            GateError::InputDim {
                expected: 3,
                got: 2
            }
        );
    }

    #[test]
    fn gate_flops_examples() {
        let flat_params = GroupGateParams::seeded(1, 64, 1, 256, 1).unwrap();
        assert_eq!(gate_flops(&flat_params, GateMode::Flat), 16384);
        let params = GroupGateParams::seeded(1, 64, 4, 256, 1).unwrap();
        assert_eq!(gate_flops(&params, GateMode::Grouped), 5120);
        assert_eq!(gate_flops(&params, GateMode::Flat), 16384);
    }

    #[test]
    fn counted_macs_match_gate_flops() {
        let params = GroupGateParams::seeded(3, 64, 4, 256, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_x(&mut rng, 256);
        let grouped = group_gate_forward(&x, &params).unwrap();
        let flat = flat_gate_forward(&x, &params.flat_gate()).unwrap();
        assert_eq!(grouped.flops_used, 5120);
        assert_eq!(flat.flops_used, 16384);
        assert_eq!(flat.flops_used as f64 / grouped.flops_used as f64, 3.2);
    }

    #[test]
    fn routing_examples() {
        let out = GateOutput {
            probs: Vector::new(vec![0.0; 8]),
            selected_expert: 5,
            evaluated_groups: vec![1],
            flops_used: 0,
        };
        assert_eq!(top1_route(&out, &[0, 1, 2]).location, Location::Cloud);
        assert_eq!(top1_route(&out, &[]).location, Location::Cloud);
        assert_eq!(
            top1_route(&out, &[5]),
            RoutingDecision {
                expert: 5,
                location: Location::End
            }
        );
    }

    #[test]
    fn restricted_argmax_prefers_lower_index() {
        let p = Vector::new(vec![0.1, 0.4, 0.4, 0.1]);
        assert_eq!(restricted_argmax(&p, &[3, 2, 1]), Some(1));
        assert_eq!(restricted_argmax(&p, &[0, 3]), Some(0));
        assert_eq!(restricted_argmax(&p, &[]), None);
    }

    #[test]
    fn seeded_params_roundtrip_through_json() {
        let p = GroupGateParams::seeded(42, 10, 3, 4, 2).unwrap();
        assert_eq!(p.group_sizes(), vec![4, 3, 3]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<GroupGateParams>(&s).unwrap(), p);
    }

    #[test]
    fn bad_grouping_rejected() {
        let g = |rows, d| LinearGate::new(Matrix::zeros(rows, d), Vector::zeros(rows)).unwrap();
        assert!(GroupGateParams::new(vec![g(2, 3)], g(2, 3), 1).is_err());
        assert!(GroupGateParams::new(vec![g(2, 3), g(2, 4)], g(2, 3), 1).is_err());
        assert!(matches!(
            GroupGateParams::new(vec![g(2, 3)], g(1, 3), 2),
            Err(GateError::TopGroups { .. })
        ));
    }

    fn arb_profile() -> impl Strategy<Value = DeviceProfile> {
        (0.0f64..=1.0, 0.0f64..4096.0, 0.0f64..=1.0, 0.0f64..1000.0).prop_map(
            |(cpu, mem, power, bw)| DeviceProfile {
                cpu_available: cpu,
                mem_available: mem,
                power_budget: power,
                bandwidth: bw,
                nominal_flops_rate: 1e10,
            },
        )
    }

    fn arb_bank() -> impl Strategy<Value = Vec<ExpertDescriptor>> {
        prop::collection::vec((1e5f64..1e8, 1.0f64..500.0), 1..70).prop_map(|costs| {
            costs
                .into_iter()
                .enumerate()
                .map(|(index, (flops_cost, memory_cost))| ExpertDescriptor {
                    index,
                    flops_cost,
                    memory_cost,
                })
                .collect()
        })
    }

    const HW: HardwareModel = HardwareModel {
        base_flops_budget: 5e7,
        mem_fraction: 0.5,
    };

    proptest! {
        #[test]
        fn full_mode_normalizes(seed in any::<u64>(), k in 1usize..5, per in 1usize..5, d in 1usize..9) {
            let params = random_params(seed, k * per, k, d, k);
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
            let x = random_x(&mut rng, d);
            let out = group_gate_forward(&x, &params).unwrap();
            prop_assert!((out.probs.sum() - 1.0).abs() < 1e-9);
            let want = oracle_probs(&x, &params);
            prop_assert_eq!(out.selected_expert, oracle::first_argmax(&want));
        }

        #[test]
        fn partial_mode_sum_is_evaluated_group_mass(seed in any::<u64>(), k in 2usize..6, g in 1usize..6) {
            let g = g.min(k - 1);
            let params = random_params(seed, 4 * k, k, 6, g);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
            let x = random_x(&mut rng, 6);
            let out = group_gate_forward(&x, &params).unwrap();
            let sum = out.probs.sum();
            prop_assert!(sum > 0.0 && sum <= 1.0 + 1e-12);
            prop_assert!(params.group_of(out.selected_expert).map_or(false, |k| out.evaluated_groups.contains(&k)));
        }

        #[test]
        fn cap_is_enforced(p in arb_profile(), experts in arb_bank(), cap in 0.05f64..=1.0, eps in 0.0f64..1.0) {
            let t = capability_threshold(&p, &HW);
            let set = select_local_experts(&experts, &t, eps, cap).unwrap();
            prop_assert!(set.len() <= local_expert_cap(experts.len(), cap));
        }

        #[test]
        fn larger_profile_never_shrinks_selection(
            p in arb_profile(),
            experts in arb_bank(),
            field in 0usize..4,
            grow in 0.0f64..1.0,
        ) {
            let mut q = p;
            match field {
                0 => q.cpu_available = (p.cpu_available + grow).min(1.0),
                1 => q.mem_available = p.mem_available * (1.0 + grow) + grow,
                2 => q.power_budget = (p.power_budget + grow).min(1.0),
                _ => q.bandwidth = p.bandwidth + grow * 100.0,
            }
            let small = capability_threshold(&p, &HW);
            let large = capability_threshold(&q, &HW);
            let capped_small = select_local_experts(&experts, &small, 0.0, 0.4).unwrap();
            let capped_large = select_local_experts(&experts, &large, 0.0, 0.4).unwrap();
            prop_assert!(capped_large.len() >= capped_small.len());
            let free_small = select_local_experts(&experts, &small, 0.0, 1.0).unwrap();
            let free_large = select_local_experts(&experts, &large, 0.0, 1.0).unwrap();
            prop_assert!(free_small.iter().all(|i| free_large.contains(i)));
        }
    }
}
