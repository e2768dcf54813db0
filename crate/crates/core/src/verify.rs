//! Oracle-backed checks at desk scale.
//!
//! Every check draws its cases from a fixed seed, so repeated runs give the
//! same verdicts and the same detail strings.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use endcloud_oracle as oracle;

use crate::codec::{self, FeatureBlock};
use crate::hlggn::{
    self, flat_gate_forward, gate_flops, group_gate_forward, local_expert_cap, select_local_experts,
    CapabilityThreshold, DeviceProfile, ExpertDescriptor, GateMode, GroupGateParams, HardwareModel,
    LinearGate,
};
use crate::linalg::{self, Matrix, Vector};
use crate::moe::{self, seeded_model};
use crate::sched::{self, SchedulerParams, TaskSpec, BRUTE_FORCE_MAX_TASKS};
use crate::sim::{self, LinkModel, Mode, SimConfig};
use crate::Location;

/// Deliberate defects for negative-control runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    /// Skews the gate probabilities before they are checked.
    GateNormalization,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gate-normalization" => Ok(Fault::GateNormalization),
            other => Err(format!("unknown fault `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: u64,
    pub detail: String,
}

impl CheckResult {
    fn pass(name: &str, cases: u64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: true,
            cases,
            detail: detail.into(),
        }
    }

    fn fail(name: &str, cases: u64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: false,
            cases,
            detail: detail.into(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    let d = Normal::new(0.0, std).expect("positive std");
    (0..n).map(|_| d.sample(rng)).collect()
}

fn random_linear(rng: &mut ChaCha8Rng, rows: usize, d: usize, std: f64) -> LinearGate {
    let w = Matrix::new(rows, d, normal(rng, rows * d, std)).expect("sized");
    LinearGate::new(w, Vector::new(normal(rng, rows, std))).expect("sized")
}

fn random_gate(rng: &mut ChaCha8Rng, m: usize, k: usize, d: usize, std: f64) -> GroupGateParams {
    let global = random_linear(rng, k, d, std);
    let groups = hlggn::contiguous_group_sizes(m, k)
        .into_iter()
        .map(|s| random_linear(rng, s, d, std))
        .collect();
    GroupGateParams::new(groups, global, k).expect("consistent layout")
}

pub fn check_softmax(cases: usize) -> CheckResult {
    const NAME: &str = "softmax";
    let mut rng = ChaCha8Rng::seed_from_u64(0x50f7);
    for i in 0..cases {
        let n = rng.random_range(1..40);
        let scale = 10f64.powf(rng.random_range(-1.0..3.0));
        let z = normal(&mut rng, n, scale);
        let p = linalg::softmax(&Vector::new(z.clone())).expect("non-empty");
        let want = oracle::softmax_pairwise(&z);
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: sum {sum}"));
        }
        if let Some(j) = (0..n).find(|&j| (p[j] - want[j]).abs() > 1e-12) {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: entry {j} off"));
        }
    }
    CheckResult::pass(NAME, cases as u64, "matches pairwise oracle within 1e-12")
}

pub fn check_matmul(cases: usize) -> CheckResult {
    const NAME: &str = "matmul";
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a7);
    for i in 0..cases {
        let (r, k, c) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let a = normal(&mut rng, r * k, 1.0);
        let b = normal(&mut rng, k * c, 1.0);
        let got = Matrix::new(r, k, a.clone())
            .unwrap()
            .matmul(&Matrix::new(k, c, b.clone()).unwrap())
            .unwrap();
        let want = oracle::naive_matmul(&a, r, k, &b, c);
        if got.data().iter().zip(&want).any(|(x, y)| (x - y).abs() >= 1e-12) {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i} differs"));
        }
    }
    CheckResult::pass(NAME, cases as u64, "matches triple-loop oracle within 1e-12")
}

pub fn check_truncated_svd(cases: usize) -> CheckResult {
    const NAME: &str = "truncated_svd";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5fd);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let (rows, cols) = (rng.random_range(2..12), rng.random_range(2..12));
        let r = rng.random_range(1..=rows.min(cols));
        let data = normal(&mut rng, rows * cols, 1.0);
        let a = Matrix::new(rows, cols, data.clone()).unwrap();
        let svd = linalg::truncated_svd(&a, r).unwrap();
        let err = a.sub(&svd.reconstruct()).unwrap().frobenius_norm();
        let want = oracle::eckart_young_residual(&data, rows, cols, r).sqrt();
        let rel = (err - want).abs() / a.frobenius_norm();
        worst = worst.max(rel);
        if rel > 1e-8 || svd.u.gram_deviation() > 1e-8 || svd.v.gram_deviation() > 1e-8 {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: relative gap {rel:e}"));
        }
    }
    CheckResult::pass(NAME, cases as u64, format!("worst relative gap {worst:.1e}"))
}

/// Sum of fused probabilities is 1 when every group is evaluated and in
/// `(0, 1]` otherwise.
pub fn check_gate_normalization(cases: usize, fault: Option<Fault>) -> CheckResult {
    const NAME: &str = "gate_normalization";
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a7e);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let m = sim::GRID_NUM_EXPERTS[i % 4];
        let k = [1, 2, 4, 8][rng.random_range(0..4)];
        let d = rng.random_range(4..=48);
        let std = 10f64.powf(rng.random_range(-2.0..0.5));
        let params = random_gate(&mut rng, m, k, d, std);
        let x_std = 10f64.powf(rng.random_range(-1.0..1.0));
        let x = Vector::new(normal(&mut rng, d, x_std));
        let mut full = group_gate_forward(&x, &params).expect("dimensions agree").probs;
        if fault == Some(Fault::GateNormalization) {
            full.as_mut_slice()[0] *= 1.0 + 1e-6;
        }
        let sum: f64 = full.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        if (sum - 1.0).abs() >= 1e-9 {
            return CheckResult::fail(
                NAME,
                i as u64 + 1,
                format!("case {i} (M={m}, K={k}, G=K): sum {sum:.15}"),
            );
        }
        if k > 1 {
            let g = rng.random_range(1..k);
            let partial = params.clone().with_top_groups(g).expect("g < k");
            let sum: f64 = group_gate_forward(&x, &partial).expect("same x").probs.iter().sum();
            if !(sum > 0.0 && sum <= 1.0 + 1e-12) {
                return CheckResult::fail(
                    NAME,
                    i as u64 + 1,
                    format!("case {i} (M={m}, K={k}, G={g}): sum {sum}"),
                );
            }
        }
    }
    CheckResult::pass(NAME, cases as u64, format!("max |sum - 1| = {worst:.1e} with G=K"))
}

/// A single-group gate reproduces the flat softmax gate.
pub fn check_two_stage_equivalence(cases: usize) -> CheckResult {
    const NAME: &str = "two_stage_equivalence";
    let mut rng = ChaCha8Rng::seed_from_u64(0x2a1);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let m = sim::GRID_NUM_EXPERTS[i % 4];
        let d = rng.random_range(2..=64);
        let w_std = 10f64.powf(rng.random_range(-2.0..0.5));
        let flat = random_linear(&mut rng, m, d, w_std);
        let x = normal(&mut rng, d, 1.0);
        let grouped = GroupGateParams::single_group(flat.clone()).expect("valid gate");
        let g = group_gate_forward(&Vector::new(x.clone()), &grouped).unwrap();
        let f = flat_gate_forward(&Vector::new(x.clone()), &flat).unwrap();
        let logits: Vec<f64> = (0..m)
            .map(|j| flat.bias[j] + flat.weight.row(j).iter().zip(&x).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let want = oracle::softmax_pairwise(&logits);
        for j in 0..m {
            worst = worst.max((g.probs[j] - f.probs[j]).abs()).max((g.probs[j] - want[j]).abs());
        }
        if worst > 1e-12 || g.selected_expert != f.selected_expert {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: deviation {worst:e}"));
        }
    }
    CheckResult::pass(NAME, cases as u64, format!("max deviation {worst:.1e}"))
}

/// Counted multiply-accumulates of both gates against the closed forms.
pub fn check_gate_cost() -> CheckResult {
    const NAME: &str = "gate_cost";
    let mut rng = ChaCha8Rng::seed_from_u64(0xc057);
    let (m, d, k) = (64, 256, 4);
    let params = random_gate(&mut rng, m, k, d, 0.02).with_top_groups(1).unwrap();
    let x = Vector::new(normal(&mut rng, d, 1.0));
    let grouped = group_gate_forward(&x, &params).unwrap().flops_used;
    let flat = flat_gate_forward(&x, &params.flat_gate()).unwrap().flops_used;
    let ok = grouped == 5120
        && flat == 16384
        && gate_flops(&params, GateMode::Grouped) == grouped
        && gate_flops(&params, GateMode::Flat) == flat;
    let detail = format!(
        "grouped {grouped} MACs, flat {flat} MACs, reduction {:.2}x",
        flat as f64 / grouped as f64
    );
    if ok {
        CheckResult::pass(NAME, 1, detail)
    } else {
        CheckResult::fail(NAME, 1, detail)
    }
}

fn random_bank(rng: &mut ChaCha8Rng, m: usize) -> Vec<ExpertDescriptor> {
    (0..m)
        .map(|index| ExpertDescriptor {
            index,
            flops_cost: 10f64.powf(rng.random_range(5.0..8.0)),
            memory_cost: 10f64.powf(rng.random_range(0.0..2.5)),
        })
        .collect()
}

fn random_profile(rng: &mut ChaCha8Rng) -> DeviceProfile {
    DeviceProfile {
        cpu_available: rng.random_range(0.0..=1.0),
        mem_available: rng.random_range(0.0..2048.0),
        power_budget: rng.random_range(0.0..=1.0),
        bandwidth: 300.0,
        nominal_flops_rate: 5e10,
    }
}

/// Cap, agreement with the hand-applied rule, and monotonicity in device
/// resources.
pub fn check_local_expert_cap(pairs: usize) -> CheckResult {
    const NAME: &str = "local_expert_cap";
    let mut rng = ChaCha8Rng::seed_from_u64(0x10ca1);
    let hw = HardwareModel {
        base_flops_budget: 1e7,
        mem_fraction: 0.25,
    };
    for i in 0..pairs {
        let m = sim::GRID_NUM_EXPERTS[rng.random_range(0..4)];
        let bank = random_bank(&mut rng, m);
        let eps = rng.random_range(0.0..0.3);
        let p = random_profile(&mut rng);
        let mut q = p;
        q.cpu_available = rng.random_range(p.cpu_available..=1.0);
        q.power_budget = rng.random_range(p.power_budget..=1.0);
        q.mem_available = p.mem_available + rng.random_range(0.0..512.0);
        let tp = hlggn::capability_threshold(&p, &hw);
        let tq = hlggn::capability_threshold(&q, &hw);

        let lp = select_local_experts(&bank, &tp, eps, 0.4).unwrap();
        let lq = select_local_experts(&bank, &tq, eps, 0.4).unwrap();
        let cap = local_expert_cap(m, 0.4);
        if cap != (0.4 * m as f64).ceil() as usize || lp.len() > cap || lq.len() > cap {
            return CheckResult::fail(NAME, i as u64 + 1, format!("pair {i}: cap {cap} exceeded"));
        }
        let raw: Vec<(usize, f64, f64)> = bank.iter().map(|e| (e.index, e.flops_cost, e.memory_cost)).collect();
        let want = oracle::local_expert_rule(&raw, tp.compute_budget, tp.memory_budget, eps, 0.4);
        if lp != want {
            return CheckResult::fail(NAME, i as u64 + 1, format!("pair {i}: rule mismatch"));
        }
        if lq.len() < lp.len() {
            return CheckResult::fail(
                NAME,
                i as u64 + 1,
                format!("pair {i}: richer device keeps {} < {}", lq.len(), lp.len()),
            );
        }
        let up = select_local_experts(&bank, &tp, eps, 1.0).unwrap();
        let uq = select_local_experts(&bank, &tq, eps, 1.0).unwrap();
        if !up.iter().all(|e| uq.contains(e)) {
            return CheckResult::fail(NAME, i as u64 + 1, format!("pair {i}: uncapped set shrank"));
        }
    }
    let zero = CapabilityThreshold {
        compute_budget: 0.0,
        memory_budget: 0.0,
    };
    if !select_local_experts(&random_bank(&mut rng, 8), &zero, 0.0, 0.4).unwrap().is_empty() {
        return CheckResult::fail(NAME, pairs as u64, "zero budget kept an expert");
    }
    CheckResult::pass(NAME, pairs as u64, "cap ceil(0.4 M) holds; monotone over paired profiles")
}

/// MoE combiner against scalar expert evaluation.
pub fn check_moe_combiner(cases: usize) -> CheckResult {
    const NAME: &str = "moe_combiner";
    let mut rng = ChaCha8Rng::seed_from_u64(0x30e);
    for i in 0..cases {
        let (m, d, h) = (rng.random_range(1..9), rng.random_range(1..10), rng.random_range(1..10));
        let model = seeded_model(rng.random(), m, d, h);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let g = Vector::new(raw.iter().map(|v| v / total).collect());
        let x = normal(&mut rng, d, 1.0);
        let y = match moe::moe_forward(&model, &Vector::new(x.clone()), &g) {
            Ok(y) => y,
            Err(e) => return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: {e}")),
        };
        let outs: Vec<Vec<f64>> = model
            .experts()
            .iter()
            .map(|e| oracle::expert_forward_scalar(e.w1.data(), e.b1.as_slice(), e.w2.data(), e.b2.as_slice(), &x))
            .collect();
        let want = oracle::weighted_sum(g.as_slice(), &outs);
        if y.iter().zip(&want).any(|(a, b)| (a - b).abs() > 1e-12) {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i} differs"));
        }
    }
    CheckResult::pass(NAME, cases as u64, "matches scalar oracle within 1e-12")
}

/// Single-block codec error equals the truncated-SVD optimum.
pub fn check_codec_optimality(cases: usize) -> CheckResult {
    const NAME: &str = "codec_optimality";
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0dec);
    let n = 16;
    let mut worst_opt: f64 = 0.0;
    let mut worst_exact: f64 = 0.0;
    for i in 0..cases {
        let r = rng.random_range(1..n);
        let data = normal(&mut rng, n * n, 1.0);
        let x = Matrix::new(n, n, data.clone()).unwrap();
        let block = FeatureBlock::single(x.clone());
        let c = codec::fit_projections(std::slice::from_ref(&block), r).unwrap();
        let back = c.decode(&c.encode(&block).unwrap()).unwrap();
        let err = x.sub(&back.channels()[0]).unwrap().frobenius_norm().powi(2);
        let want = oracle::eckart_young_residual(&data, n, n, r);
        let rel = (err - want).abs() / want;
        worst_opt = worst_opt.max(rel);
        if rel > 1e-8 {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i} rank {r}: relative gap {rel:e}"));
        }

        let a = Matrix::new(n, r, normal(&mut rng, n * r, 1.0)).unwrap();
        let b = Matrix::new(r, n, normal(&mut rng, r * n, 1.0)).unwrap();
        let low = a.matmul(&b).unwrap();
        let block = FeatureBlock::single(low.clone());
        let c = codec::fit_projections(std::slice::from_ref(&block), r).unwrap();
        let back = c.decode(&c.encode(&block).unwrap()).unwrap();
        let rel = low.sub(&back.channels()[0]).unwrap().frobenius_norm() / low.frobenius_norm();
        worst_exact = worst_exact.max(rel);
        if rel > 1e-10 {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: rank-{r} input error {rel:e}"));
        }
    }
    CheckResult::pass(
        NAME,
        cases as u64,
        format!("optimum gap {worst_opt:.1e}, exact-rank error {worst_exact:.1e}"),
    )
}

/// Random scheduling instance with `t_end` near 30% of total compute.
pub fn random_instance(rng: &mut ChaCha8Rng, max_n: usize) -> (Vec<TaskSpec>, SchedulerParams, f64) {
    let n = rng.random_range(1..=max_n);
    let tasks: Vec<TaskSpec> = (0..n)
        .map(|i| TaskSpec {
            id: i as u64,
            compute_cost: 10f64.powf(rng.random_range(8.0..10.5)),
            comm_cost: if rng.random_bool(0.1) {
                0.0
            } else {
                10f64.powf(rng.random_range(3.0..7.0))
            },
        })
        .collect();
    let total: f64 = tasks.iter().map(|t| t.compute_cost).sum();
    let params = SchedulerParams {
        alpha: rng.random_range(0.0..=1.0),
        beta: 10f64.powf(rng.random_range(8.0..12.0)),
        t_end: total * rng.random_range(0.1..0.5),
        eps_priority: 1e-6,
        end_flops_rate: 4e10,
        cloud_flops_rate: 8e11,
        link_bandwidth: 300e6,
    };
    let init = if rng.random_bool(0.5) {
        0.0
    } else {
        params.t_end * rng.random_range(0.0..0.5)
    };
    (tasks, params, init)
}

/// Every greedy decision replays to the same location and the end load
/// stays within `t_end`.
pub fn check_scheduler_rule_compliance(instances: usize) -> CheckResult {
    const NAME: &str = "scheduler_rule_compliance";
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c4ed);
    let mut decisions = 0u64;
    for i in 0..instances {
        let (tasks, params, init) = random_instance(&mut rng, 50);
        let placed = sched::place_tasks(&tasks, init, 0.0, &params).unwrap();
        decisions += placed.len() as u64;
        if let Some(d) = placed.iter().find(|d| d.replay(&params) != d.location) {
            return CheckResult::fail(NAME, i as u64 + 1, format!("instance {i}: task {} does not replay", d.task_id));
        }
        let raw: Vec<(u64, f64, f64)> = tasks.iter().map(|t| (t.id, t.compute_cost, t.comm_cost)).collect();
        let want = oracle::replay_threshold_placement(
            &raw,
            init,
            params.beta,
            params.t_end,
            params.eps_priority,
            params.link_bandwidth,
        );
        let got: Vec<(u64, bool)> = placed.iter().map(|d| (d.task_id, d.location == Location::End)).collect();
        if got != want {
            return CheckResult::fail(NAME, i as u64 + 1, format!("instance {i}: differs from hand replay"));
        }
        let final_load = placed.last().map_or(init, |d| d.load_end_after);
        if final_load > params.t_end {
            return CheckResult::fail(NAME, i as u64 + 1, format!("instance {i}: load {final_load} over t_end"));
        }
    }
    CheckResult::pass(NAME, instances as u64, format!("{decisions} decisions replayed"))
}

/// Greedy versus exhaustive optimum over random small instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub instances: u64,
    pub max_tasks: usize,
    /// `greedy / optimal - 1` per instance.
    pub gap_mean: f64,
    pub gap_p50: f64,
    pub gap_p95: f64,
    pub gap_max: f64,
    pub optimal_fraction: f64,
    pub violations: u64,
}

pub fn brute_force_gap_report(instances: usize, max_tasks: usize) -> GapReport {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb7f0);
    let mut gaps = Vec::with_capacity(instances);
    let mut violations = 0;
    for _ in 0..instances {
        let (tasks, params, _) = random_instance(&mut rng, max_tasks);
        let greedy = sched::place_tasks(&tasks, 0.0, 0.0, &params).unwrap();
        let greedy_obj = sched::objective(&greedy, &tasks, &params).unwrap();
        let best = sched::brute_force_optimal(&tasks, &params, BRUTE_FORCE_MAX_TASKS).unwrap();
        let load: f64 = greedy.last().map_or(0.0, |d| d.load_end_after);
        if best.objective > greedy_obj || load > params.t_end {
            violations += 1;
        }
        gaps.push(if best.objective > 0.0 {
            greedy_obj / best.objective - 1.0
        } else if greedy_obj == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    let stats = sim::latency_stats(&gaps);
    GapReport {
        instances: instances as u64,
        max_tasks,
        gap_mean: stats.mean,
        gap_p50: stats.p50,
        gap_p95: stats.p95,
        gap_max: gaps.iter().cloned().fold(0.0, f64::max),
        optimal_fraction: gaps.iter().filter(|g| **g == 0.0).count() as f64 / instances.max(1) as f64,
        violations,
    }
}

pub fn check_brute_force_gap(instances: usize) -> CheckResult {
    const NAME: &str = "brute_force_gap";
    let r = brute_force_gap_report(instances, 12);
    let detail = format!(
        "gap mean {:.4}, p95 {:.4}, max {:.4}, optimal in {:.1}%",
        r.gap_mean,
        r.gap_p95,
        r.gap_max,
        100.0 * r.optimal_fraction
    );
    if r.violations == 0 {
        CheckResult::pass(NAME, r.instances, detail)
    } else {
        CheckResult::fail(NAME, r.instances, format!("{} instances beat the optimum; {detail}", r.violations))
    }
}

/// Piecewise link integration against fine stepping.
pub fn check_link_integration(cases: usize) -> CheckResult {
    const NAME: &str = "link_integration";
    let mut rng = ChaCha8Rng::seed_from_u64(0x11e);
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let link = LinkModel {
            seed: rng.random(),
            mean_mbps: 300.0,
            fluctuation: [0.0, 0.1, 0.2, 0.3, 0.4][rng.random_range(0..5)],
            interval: 1.0,
        };
        let bytes = rng.random_range(0.0..8e7);
        let t0 = rng.random_range(0..10_000) as f64 * 1e-3;
        let got = link.comm_time(bytes, t0);
        let want = oracle::integrate_transfer_fine(bytes, t0, 1e-3, |t| link.bandwidth_at(t) * 1e6);
        worst = worst.max((got - want).abs());
        if (got - want).abs() > 1e-6 {
            return CheckResult::fail(NAME, i as u64 + 1, format!("case {i}: {got} vs {want}"));
        }
    }
    CheckResult::pass(NAME, cases as u64, format!("max deviation {worst:.1e} s"))
}

/// Repeat runs agree byte for byte and conserve requests.
pub fn check_sim_determinism() -> CheckResult {
    const NAME: &str = "sim_determinism";
    let mut cases = 0;
    for mode in Mode::ALL {
        let mut cfg = SimConfig::reference(mode, 16);
        cfg.duration = 20.0;
        let a = sim::run_simulation(&cfg).unwrap();
        let b = sim::run_simulation(&cfg).unwrap();
        cases += 1;
        if a.to_csv() != b.to_csv() || a != b {
            return CheckResult::fail(NAME, cases, format!("{} runs differ", mode.as_str()));
        }
        if a.arrivals != a.completed_total + a.in_flight {
            return CheckResult::fail(NAME, cases, format!("{} loses requests", mode.as_str()));
        }
    }
    CheckResult::pass(NAME, cases, "identical reports on repeat runs")
}

pub struct Check {
    pub name: &'static str,
    pub run: fn(Option<Fault>) -> CheckResult,
}

/// The full suite in execution order.
pub fn checks() -> Vec<Check> {
    vec![
        Check { name: "softmax", run: |_| check_softmax(1000) },
        Check { name: "matmul", run: |_| check_matmul(500) },
        Check { name: "truncated_svd", run: |_| check_truncated_svd(300) },
        Check { name: "gate_normalization", run: |f| check_gate_normalization(1000, f) },
        Check { name: "two_stage_equivalence", run: |_| check_two_stage_equivalence(100) },
        Check { name: "gate_cost", run: |_| check_gate_cost() },
        Check { name: "local_expert_cap", run: |_| check_local_expert_cap(1000) },
        Check { name: "moe_combiner", run: |_| check_moe_combiner(300) },
        Check { name: "codec_optimality", run: |_| check_codec_optimality(100) },
        Check { name: "scheduler_rule_compliance", run: |_| check_scheduler_rule_compliance(10_000) },
        Check { name: "brute_force_gap", run: |_| check_brute_force_gap(500) },
        Check { name: "link_integration", run: |_| check_link_integration(200) },
        Check { name: "sim_determinism", run: |_| check_sim_determinism() },
    ]
}

/// Runs every check whose name contains `filter`.
pub fn run_suite(filter: Option<&str>, fault: Option<Fault>) -> Vec<(CheckResult, Duration)> {
    checks()
        .into_iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .map(|c| {
            let start = Instant::now();
            let mut r = (c.run)(fault);
            r.name = c.name.to_string();
            (r, start.elapsed())
        })
        .collect()
}
