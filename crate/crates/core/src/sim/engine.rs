use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::hlggn::{
    self, capability_threshold, flat_gate_forward, gate_flops, group_gate_forward, top1_route,
    CapabilityThreshold, ExpertDescriptor, GateMode, GateOutput, GroupGateParams, LinearGate,
};
use crate::linalg::Vector;
use crate::rng::{self, Stream};
use crate::sched::{place_tasks, SchedulerParams, TaskSpec};
use crate::Location;

use super::link::LinkModel;
use super::report::{latency_stats, MetricsReport, RequestTrace};
use super::{Mode, SimConfig, SimError};

/// Processing order among simultaneous events follows declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Arrival,
    GateDone,
    TransferDone,
    ExecDone,
    EpochClose,
    Depart,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    req: u64,
    seq: u64,
    tag: u64,
}

impl Event {
    fn cmp_key(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.req.cmp(&other.req))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_key(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.cmp_key(self)
    }
}

/// Everything derived from the config before the first event.
#[derive(Debug, Clone)]
pub struct Model {
    pub gate: GroupGateParams,
    pub flat: LinearGate,
    pub experts: Vec<ExpertDescriptor>,
    pub threshold: CapabilityThreshold,
    /// Experts usable on the end device in this mode.
    pub local_set: Vec<usize>,
    /// FLOPs of one request's gate evaluation in this mode.
    pub gate_flops: f64,
}

/// Per-expert costs, a pure function of `(seed, index)`.
pub fn expert_bank(cfg: &SimConfig) -> Vec<ExpertDescriptor> {
    let spread = cfg.experts.cost_spread;
    (0..cfg.num_experts)
        .map(|i| {
            let mut r = rng::indexed_stream(cfg.model_seed(), Stream::ExpertCosts, i as u64);
            let a: f64 = r.random();
            let b: f64 = r.random();
            ExpertDescriptor {
                index: i,
                flops_cost: cfg.experts.flops_per_token * spread.powf(2.0 * a - 1.0),
                memory_cost: cfg.experts.memory_mb * spread.powf(2.0 * b - 1.0),
            }
        })
        .collect()
}

impl Model {
    pub fn build(cfg: &SimConfig) -> Result<Self, SimError> {
        let gate = GroupGateParams::seeded(
            cfg.model_seed(),
            cfg.num_experts,
            cfg.num_groups,
            cfg.feature_dim,
            cfg.top_groups,
        )?;
        let flat = gate.flat_gate();
        let experts = expert_bank(cfg);
        let threshold = capability_threshold(&cfg.device, &cfg.hardware);
        let grouped = cfg.mode == Mode::Collaborative && !cfg.ablation.disable_hlggn;
        let local_set = match cfg.mode {
            Mode::CloudOnly => Vec::new(),
            Mode::Collaborative if cfg.ablation.disable_hlggn => (0..cfg.num_experts).collect(),
            _ => hlggn::select_local_experts(
                &experts,
                &threshold,
                cfg.local.eps_complexity,
                cfg.local.cap_fraction,
            )?,
        };
        let mode = if grouped {
            GateMode::Grouped
        } else {
            GateMode::Flat
        };
        let per_token = 2.0 * gate_flops(&gate, mode) as f64;
        Ok(Self {
            gate,
            flat,
            experts,
            threshold,
            local_set,
            gate_flops: per_token * (cfg.tokens_per_request * cfg.batch_size) as f64,
        })
    }

    pub fn expert_flops(&self, cfg: &SimConfig, expert: usize) -> f64 {
        self.experts[expert].flops_cost * (cfg.tokens_per_request * cfg.batch_size) as f64
    }
}

/// Least-recently-used set of experts resident in device memory.
#[derive(Debug, Clone)]
struct ExpertCache {
    capacity_mb: f64,
    used_mb: f64,
    /// Least recent first.
    order: Vec<(usize, f64)>,
}

impl ExpertCache {
    fn new(capacity_mb: f64) -> Self {
        Self {
            capacity_mb,
            used_mb: 0.0,
            order: Vec::new(),
        }
    }

    /// Touches `id`; returns true on a hit.
    fn access(&mut self, id: usize, size_mb: f64) -> bool {
        if let Some(pos) = self.order.iter().position(|(e, _)| *e == id) {
            let entry = self.order.remove(pos);
            self.order.push(entry);
            return true;
        }
        if size_mb > self.capacity_mb {
            return false;
        }
        while self.used_mb + size_mb > self.capacity_mb {
            let (_, freed) = self.order.remove(0);
            self.used_mb -= freed;
        }
        self.used_mb += size_mb;
        self.order.push((id, size_mb));
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EndWork {
    Gate,
    Expert(usize),
}

#[derive(Debug, Clone, Copy)]
struct EndJob {
    req: u64,
    work: EndWork,
    /// Seconds of service left.
    remaining: f64,
    started: bool,
}

#[derive(Debug, Clone, Copy)]
struct Running {
    job: EndJob,
    since: f64,
    version: u64,
}

/// Accumulates busy time clipped to the measured window.
#[derive(Debug, Clone, Copy)]
struct BusyMeter {
    from: f64,
    to: f64,
    busy: f64,
}

impl BusyMeter {
    fn add(&mut self, start: f64, end: f64) {
        let s = start.max(self.from);
        let e = end.min(self.to);
        if e > s {
            self.busy += e - s;
        }
    }
}

#[derive(Debug, Clone)]
struct Req {
    trace: RequestTrace,
    gate: Option<GateOutput>,
    cloud_flops: f64,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    model: &'a Model,
    link: LinkModel,
    params: SchedulerParams,
    end_rate: f64,
    now: f64,
    seq: u64,
    heap: BinaryHeap<Event>,
    reqs: Vec<Req>,
    arrival_rng: rand_chacha::ChaCha8Rng,
    next_arrival: f64,
    next_id: u64,

    end_running: Option<Running>,
    end_gates: VecDeque<EndJob>,
    end_experts: VecDeque<EndJob>,
    end_version: u64,
    cache: ExpertCache,
    end_busy: BusyMeter,

    lanes: Vec<Option<(u64, f64, f64)>>,
    cloud_queue: VecDeque<u64>,
    cloud_busy: BusyMeter,

    uplink_busy: Option<u64>,
    uplink_queue: VecDeque<u64>,
    bytes_sent: u64,

    pending: Vec<TaskSpec>,
    epoch_armed: bool,
    end_placements: u64,
    cloud_placements: u64,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: EventKind, req: u64, tag: u64) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            kind,
            req,
            seq: self.seq,
            tag,
        });
    }

    fn schedule_next_arrival(&mut self) {
        let id = self.next_id;
        let t = match self.cfg.arrival {
            super::Arrival::Deterministic => id as f64 / self.cfg.request_rate,
            super::Arrival::Poisson => {
                let exp = Exp::new(self.cfg.request_rate).expect("positive rate");
                self.next_arrival += exp.sample(&mut self.arrival_rng);
                self.next_arrival
            }
        };
        if t < self.cfg.duration {
            self.next_id += 1;
            self.push(t, EventKind::Arrival, id, 0);
        }
    }

    fn features(&self, id: u64) -> Vector {
        let mut r = rng::indexed_stream(self.cfg.seed, Stream::RequestFeatures, id);
        Vector::new(rng::gaussian_vec(&mut r, self.cfg.feature_dim, 1.0))
    }

    fn on_arrival(&mut self, id: u64) -> Result<(), SimError> {
        debug_assert_eq!(id as usize, self.reqs.len());
        let x = self.features(id);
        let grouped = self.cfg.mode == Mode::Collaborative && !self.cfg.ablation.disable_hlggn;
        let gate = if grouped {
            group_gate_forward(&x, &self.model.gate)?
        } else {
            flat_gate_forward(&x, &self.model.flat)?
        };
        self.reqs.push(Req {
            trace: RequestTrace {
                id,
                arrival: self.now,
                depart: None,
                expert: gate.selected_expert,
                location: Location::Cloud,
                bytes: 0,
                gate_s: 0.0,
                transfer_s: 0.0,
                exec_s: 0.0,
            },
            gate: Some(gate),
            cloud_flops: 0.0,
        });
        self.schedule_next_arrival();

        match self.cfg.mode {
            Mode::CloudOnly => {
                let expert = self.reqs[id as usize].trace.expert;
                let flops = self.model.gate_flops + self.model.expert_flops(self.cfg, expert);
                self.send_to_cloud(id, expert, self.cfg.raw_bytes(), flops);
            }
            Mode::EdgeOnly | Mode::Collaborative => {
                let remaining = self.model.gate_flops / self.end_rate;
                self.end_submit(EndJob {
                    req: id,
                    work: EndWork::Gate,
                    remaining,
                    started: false,
                });
            }
        }
        Ok(())
    }

    fn send_to_cloud(&mut self, id: u64, expert: usize, bytes: u64, flops: f64) {
        let r = &mut self.reqs[id as usize];
        r.trace.expert = expert;
        r.trace.location = Location::Cloud;
        r.trace.bytes = bytes;
        r.cloud_flops = flops;
        self.uplink_queue.push_back(id);
        self.uplink_dispatch();
    }

    fn run_on_end(&mut self, id: u64, expert: usize) {
        let r = &mut self.reqs[id as usize];
        r.trace.expert = expert;
        r.trace.location = Location::End;
        let remaining = self.model.expert_flops(self.cfg, expert) / self.end_rate;
        self.end_submit(EndJob {
            req: id,
            work: EndWork::Expert(expert),
            remaining,
            started: false,
        });
    }

    fn on_gate_done(&mut self, id: u64) -> Result<(), SimError> {
        let gate = self.reqs[id as usize].gate.take().expect("gate output kept until routing");
        match self.cfg.mode {
            Mode::CloudOnly => unreachable!("cloud-only requests never gate on the end device"),
            Mode::EdgeOnly => {
                let expert = hlggn::restricted_argmax(&gate.probs, &self.model.local_set)
                    .unwrap_or(gate.selected_expert);
                self.run_on_end(id, expert);
            }
            Mode::Collaborative => {
                let expert = gate.selected_expert;
                let flops = self.model.expert_flops(self.cfg, expert);
                if self.cfg.ablation.disable_poecc {
                    self.cloud_placements += 1;
                    self.send_to_cloud(id, expert, self.cfg.raw_bytes(), flops);
                    return Ok(());
                }
                let route = top1_route(&gate, &self.model.local_set);
                match route.location {
                    Location::Cloud => {
                        self.cloud_placements += 1;
                        self.send_to_cloud(id, expert, self.cfg.compressed_bytes(), flops);
                    }
                    Location::End => {
                        self.pending.push(TaskSpec {
                            id,
                            compute_cost: flops,
                            comm_cost: self.cfg.compressed_bytes() as f64,
                        });
                        if self.cfg.scheduling_epoch == 0.0 {
                            self.place_pending()?;
                        } else if !self.epoch_armed {
                            self.epoch_armed = true;
                            let e = self.cfg.scheduling_epoch;
                            let close = ((self.now / e).floor() + 1.0) * e;
                            self.push(close, EventKind::EpochClose, 0, 0);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn place_pending(&mut self) -> Result<(), SimError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let tasks = std::mem::take(&mut self.pending);
        let load_end = self.end_backlog_seconds() * self.end_rate;
        let load_cloud = self.cloud_backlog_flops();
        let decisions = place_tasks(&tasks, load_end, load_cloud, &self.params)?;
        for d in decisions {
            let expert = self.reqs[d.task_id as usize].trace.expert;
            match d.location {
                Location::End => {
                    self.end_placements += 1;
                    self.run_on_end(d.task_id, expert);
                }
                Location::Cloud => {
                    self.cloud_placements += 1;
                    self.send_to_cloud(d.task_id, expert, self.cfg.compressed_bytes(), d.compute_cost);
                }
            }
        }
        Ok(())
    }

    fn end_backlog_seconds(&self) -> f64 {
        let running = self
            .end_running
            .map(|r| (r.since + r.job.remaining - self.now).max(0.0))
            .unwrap_or(0.0);
        running
            + self.end_gates.iter().map(|j| j.remaining).sum::<f64>()
            + self.end_experts.iter().map(|j| j.remaining).sum::<f64>()
    }

    fn cloud_backlog_flops(&self) -> f64 {
        let running: f64 = self
            .lanes
            .iter()
            .flatten()
            .map(|&(_, _, end)| (end - self.now).max(0.0) * self.cfg.cloud_flops_rate)
            .sum();
        running
            + self
                .cloud_queue
                .iter()
                .map(|&id| self.reqs[id as usize].cloud_flops)
                .sum::<f64>()
    }

    fn end_submit(&mut self, job: EndJob) {
        match job.work {
            EndWork::Gate => {
                if let Some(run) = self.end_running {
                    if matches!(run.job.work, EndWork::Expert(_)) {
                        let mut preempted = run.job;
                        preempted.remaining = (preempted.remaining - (self.now - run.since)).max(0.0);
                        self.end_busy.add(run.since, self.now);
                        self.end_experts.push_front(preempted);
                        self.end_running = None;
                    }
                }
                self.end_gates.push_back(job);
            }
            EndWork::Expert(_) => self.end_experts.push_back(job),
        }
        self.end_dispatch();
    }

    fn end_dispatch(&mut self) {
        if self.end_running.is_some() {
            return;
        }
        let Some(mut job) = self.end_gates.pop_front().or_else(|| self.end_experts.pop_front()) else {
            return;
        };
        if !job.started {
            job.started = true;
            if let EndWork::Expert(e) = job.work {
                let size = self.model.experts[e].memory_cost;
                if !self.cache.access(e, size) {
                    job.remaining += size / self.cfg.experts.storage_mb_per_s;
                }
            }
            let t = &mut self.reqs[job.req as usize].trace;
            match job.work {
                EndWork::Gate => t.gate_s = job.remaining,
                EndWork::Expert(_) => t.exec_s = job.remaining,
            }
        }
        self.end_version += 1;
        let kind = match job.work {
            EndWork::Gate => EventKind::GateDone,
            EndWork::Expert(_) => EventKind::ExecDone,
        };
        self.push(self.now + job.remaining, kind, job.req, self.end_version << 1);
        self.end_running = Some(Running {
            job,
            since: self.now,
            version: self.end_version,
        });
    }

    /// Finishes the running end job if `tag` is current.
    fn end_complete(&mut self, tag: u64) -> bool {
        match self.end_running {
            Some(run) if run.version << 1 == tag => {
                self.end_busy.add(run.since, self.now);
                self.end_running = None;
                true
            }
            _ => false,
        }
    }

    fn uplink_dispatch(&mut self) {
        if self.uplink_busy.is_some() {
            return;
        }
        let Some(id) = self.uplink_queue.pop_front() else {
            return;
        };
        let bytes = self.reqs[id as usize].trace.bytes;
        let d = self.link.comm_time(bytes as f64, self.now);
        self.reqs[id as usize].trace.transfer_s = d;
        self.uplink_busy = Some(id);
        self.push(self.now + d, EventKind::TransferDone, id, 0);
    }

    fn cloud_dispatch(&mut self) {
        while let Some(lane) = self.lanes.iter().position(Option::is_none) {
            let Some(id) = self.cloud_queue.pop_front() else {
                return;
            };
            let secs = self.reqs[id as usize].cloud_flops / self.cfg.cloud_flops_rate;
            self.reqs[id as usize].trace.exec_s = secs;
            self.lanes[lane] = Some((id, self.now, self.now + secs));
            self.push(self.now + secs, EventKind::ExecDone, id, ((lane as u64) << 1) | 1);
        }
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        match ev.kind {
            EventKind::Arrival => self.on_arrival(ev.req)?,
            EventKind::GateDone => {
                if self.end_complete(ev.tag) {
                    self.on_gate_done(ev.req)?;
                    self.end_dispatch();
                }
            }
            EventKind::TransferDone => {
                self.uplink_busy = None;
                self.bytes_sent += self.reqs[ev.req as usize].trace.bytes;
                self.cloud_queue.push_back(ev.req);
                self.cloud_dispatch();
                self.uplink_dispatch();
            }
            EventKind::ExecDone => {
                if ev.tag & 1 == 1 {
                    let lane = (ev.tag >> 1) as usize;
                    let (_, start, _) = self.lanes[lane].take().expect("lane busy until done");
                    self.cloud_busy.add(start, self.now);
                    self.push(self.now, EventKind::Depart, ev.req, 0);
                    self.cloud_dispatch();
                } else if self.end_complete(ev.tag) {
                    self.push(self.now, EventKind::Depart, ev.req, 0);
                    self.end_dispatch();
                }
            }
            EventKind::EpochClose => {
                self.epoch_armed = false;
                self.place_pending()?;
            }
            EventKind::Depart => {
                self.reqs[ev.req as usize].trace.depart = Some(self.now);
            }
        }
        Ok(())
    }
}

/// Runs one simulation to its horizon.
pub fn run_simulation(cfg: &SimConfig) -> Result<MetricsReport, SimError> {
    cfg.validate()?;
    let model = Model::build(cfg)?;
    run_with_model(cfg, &model)
}

pub(crate) fn run_with_model(cfg: &SimConfig, model: &Model) -> Result<MetricsReport, SimError> {
    let warmup = cfg.warmup();
    let meter = BusyMeter {
        from: warmup,
        to: cfg.duration,
        busy: 0.0,
    };
    let mut sim = Sim {
        cfg,
        model,
        link: LinkModel::from_config(cfg),
        params: cfg.scheduler_params(),
        end_rate: cfg.end_flops_rate(),
        now: 0.0,
        seq: 0,
        heap: BinaryHeap::new(),
        reqs: Vec::new(),
        arrival_rng: rng::stream(cfg.seed, Stream::Arrivals),
        next_arrival: 0.0,
        next_id: 0,
        end_running: None,
        end_gates: VecDeque::new(),
        end_experts: VecDeque::new(),
        end_version: 0,
        cache: ExpertCache::new(model.threshold.memory_budget),
        end_busy: meter,
        lanes: vec![None; cfg.cloud_lanes],
        cloud_queue: VecDeque::new(),
        cloud_busy: meter,
        uplink_busy: None,
        uplink_queue: VecDeque::new(),
        bytes_sent: 0,
        pending: Vec::new(),
        epoch_armed: false,
        end_placements: 0,
        cloud_placements: 0,
    };
    sim.schedule_next_arrival();
    let mut last = f64::NEG_INFINITY;
    while let Some(ev) = sim.heap.pop() {
        if ev.time > cfg.duration {
            break;
        }
        debug_assert!(ev.time >= last, "event out of order");
        last = ev.time;
        sim.now = ev.time;
        sim.handle(ev)?;
    }

    if let Some(run) = sim.end_running {
        sim.end_busy.add(run.since, cfg.duration);
    }
    for &(_, start, _) in sim.lanes.iter().flatten() {
        sim.cloud_busy.add(start, cfg.duration);
    }

    let window = cfg.duration - warmup;
    let arrivals = sim.reqs.len() as u64;
    let completed_total = sim.reqs.iter().filter(|r| r.trace.depart.is_some()).count() as u64;
    let completed_requests = sim
        .reqs
        .iter()
        .filter(|r| r.trace.depart.is_some_and(|d| d >= warmup))
        .count() as u64;
    let latencies_ms: Vec<f64> = sim
        .reqs
        .iter()
        .filter(|r| r.trace.arrival >= warmup)
        .filter_map(|r| r.trace.latency())
        .map(|l| l * 1e3)
        .collect();
    let stats = latency_stats(&latencies_ms);
    let (end_placements, cloud_placements) = match cfg.mode {
        Mode::CloudOnly => (0, arrivals),
        Mode::EdgeOnly => (arrivals, 0),
        Mode::Collaborative => (sim.end_placements, sim.cloud_placements),
    };

    Ok(MetricsReport {
        mode: cfg.mode,
        num_experts: cfg.num_experts,
        num_groups: cfg.num_groups,
        request_rate: cfg.request_rate,
        link_fluctuation: cfg.link_fluctuation,
        seed: cfg.seed,
        ablation: cfg.ablation,
        arrivals,
        completed_total,
        in_flight: arrivals - completed_total,
        completed_requests,
        window_seconds: window,
        throughput: completed_requests as f64 / window,
        latency_samples: stats.samples,
        latency_mean: stats.mean,
        latency_p50: stats.p50,
        latency_p95: stats.p95,
        latency_std: stats.std,
        bytes_transferred: sim.bytes_sent,
        end_utilization: sim.end_busy.busy / window,
        cloud_utilization: sim.cloud_busy.busy / (window * cfg.cloud_lanes as f64),
        local_experts: model.local_set.len(),
        end_placements,
        cloud_placements,
        trace: cfg
            .record_trace
            .then(|| sim.reqs.into_iter().map(|r| r.trace).collect()),
    })
}
