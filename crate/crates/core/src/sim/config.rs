use serde::{Deserialize, Serialize};

use crate::hlggn::{DeviceProfile, HardwareModel};
use crate::sched::SchedulerParams;

use super::SimError;

pub const GRID_NUM_EXPERTS: [usize; 4] = [8, 16, 32, 64];
pub const GRID_REQUEST_RATES: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];
pub const GRID_FLUCTUATIONS: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];
pub const GRID_LINK_MBPS: f64 = 300.0;
pub const GRID_TOKENS: usize = 256;
pub const GRID_BATCH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Raw features go to the cloud, which gates and runs every expert.
    CloudOnly,
    /// Everything runs on the end device with its local experts only.
    EdgeOnly,
    /// Grouped gate on the end device, route-aware placement, compressed
    /// transfers.
    Collaborative,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::CloudOnly, Mode::EdgeOnly, Mode::Collaborative];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::CloudOnly => "cloud_only",
            Mode::EdgeOnly => "edge_only",
            Mode::Collaborative => "collaborative",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arrival {
    #[default]
    Deterministic,
    Poisson,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Flat gate and no local filtering.
    pub disable_hlggn: bool,
    /// Raw transfers and static all-cloud placement.
    pub disable_poecc: bool,
}

/// Expert bank cost model. Each expert's per-token FLOPs and resident
/// memory are the base values times independent log-uniform factors in
/// `[1/cost_spread, cost_spread]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertBank {
    pub flops_per_token: f64,
    pub memory_mb: f64,
    pub cost_spread: f64,
    /// Rate at which a missing expert is paged into device memory.
    pub storage_mb_per_s: f64,
}

impl Default for ExpertBank {
    fn default() -> Self {
        // Two 768x3072 matrices, 2 FLOPs per MAC; fp32 weights.
        Self {
            flops_per_token: 9_437_184.0,
            memory_mb: 18.874368,
            cost_spread: 2.0,
            storage_mb_per_s: 200.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalSelection {
    pub eps_complexity: f64,
    pub cap_fraction: f64,
}

impl Default for LocalSelection {
    fn default() -> Self {
        Self {
            eps_complexity: 0.0,
            cap_fraction: 0.4,
        }
    }
}

/// Scheduler knobs; rates and link bandwidth come from the rest of the
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerSettings {
    pub alpha: f64,
    pub beta: f64,
    /// FLOPs of end-device backlog beyond which work is offloaded.
    pub t_end: f64,
    pub eps_priority: f64,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            t_end: 1e10,
            eps_priority: 1e-6,
        }
    }
}

fn default_hardware() -> HardwareModel {
    HardwareModel {
        base_flops_budget: 1.2e7,
        mem_fraction: 0.25,
    }
}

fn default_top_groups() -> usize {
    1
}

fn default_warmup() -> f64 {
    0.1
}

fn default_interval() -> f64 {
    1.0
}

fn default_lanes() -> usize {
    8
}

fn default_epoch() -> f64 {
    0.05
}

fn default_tokens() -> usize {
    GRID_TOKENS
}

fn default_batch() -> usize {
    GRID_BATCH
}

fn default_feature_dim() -> usize {
    768
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Seed for gate weights and expert costs; defaults to `seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_seed: Option<u64>,
    pub mode: Mode,
    pub num_experts: usize,
    pub num_groups: usize,
    #[serde(default = "default_top_groups")]
    pub top_groups: usize,
    /// Seconds.
    pub duration: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    /// Requests per second.
    pub request_rate: f64,
    #[serde(default)]
    pub arrival: Arrival,
    pub link_mbps_mean: f64,
    pub link_fluctuation: f64,
    #[serde(default = "default_interval")]
    pub fluctuation_interval: f64,
    pub device: DeviceProfile,
    #[serde(default = "default_hardware")]
    pub hardware: HardwareModel,
    pub cloud_flops_rate: f64,
    #[serde(default = "default_lanes")]
    pub cloud_lanes: usize,
    #[serde(default)]
    pub experts: ExpertBank,
    #[serde(default)]
    pub local: LocalSelection,
    #[serde(default)]
    pub scheduler: SchedulerSettings,
    /// Seconds between placement rounds; 0 places each task on arrival.
    #[serde(default = "default_epoch")]
    pub scheduling_epoch: f64,
    pub codec_rank: usize,
    #[serde(default = "default_tokens")]
    pub tokens_per_request: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub record_trace: bool,
    /// Accept values outside the experiment grid.
    #[serde(default)]
    pub allow_off_grid: bool,
}

fn config_err(field: &str, reason: impl Into<String>) -> SimError {
    SimError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (v - g).abs() < 1e-9)
}

impl SimConfig {
    /// Reference heterogeneous setup: cloud at 20x the end device's
    /// effective rate, 300 Mbps link with 20% fluctuation, 8 req/s.
    pub fn reference(mode: Mode, num_experts: usize) -> Self {
        Self {
            seed: 42,
            model_seed: None,
            mode,
            num_experts,
            num_groups: 4,
            top_groups: 1,
            duration: 60.0,
            warmup_fraction: 0.1,
            request_rate: 8.0,
            arrival: Arrival::Deterministic,
            link_mbps_mean: 300.0,
            link_fluctuation: 0.2,
            fluctuation_interval: 1.0,
            device: DeviceProfile {
                cpu_available: 0.8,
                mem_available: 512.0,
                power_budget: 0.9,
                bandwidth: 300.0,
                nominal_flops_rate: 5e10,
            },
            hardware: default_hardware(),
            cloud_flops_rate: 8e11,
            cloud_lanes: 8,
            experts: ExpertBank::default(),
            local: LocalSelection::default(),
            scheduler: SchedulerSettings::default(),
            scheduling_epoch: default_epoch(),
            codec_rank: 32,
            tokens_per_request: GRID_TOKENS,
            batch_size: GRID_BATCH,
            feature_dim: default_feature_dim(),
            ablation: Ablation::default(),
            record_trace: false,
            allow_off_grid: false,
        }
    }

    pub fn model_seed(&self) -> u64 {
        self.model_seed.unwrap_or(self.seed)
    }

    pub fn end_flops_rate(&self) -> f64 {
        self.device.effective_flops_rate()
    }

    pub fn warmup(&self) -> f64 {
        self.duration * self.warmup_fraction
    }

    pub fn scheduler_params(&self) -> SchedulerParams {
        SchedulerParams {
            alpha: self.scheduler.alpha,
            beta: self.scheduler.beta,
            t_end: self.scheduler.t_end,
            eps_priority: self.scheduler.eps_priority,
            end_flops_rate: self.end_flops_rate(),
            cloud_flops_rate: self.cloud_flops_rate,
            link_bandwidth: self.link_mbps_mean * 1e6,
        }
    }

    /// Bytes of one request's uncompressed feature block.
    pub fn raw_bytes(&self) -> u64 {
        (self.batch_size * self.tokens_per_request * self.feature_dim * 8) as u64
    }

    /// Wire bytes of one request's compressed feature block.
    pub fn compressed_bytes(&self) -> u64 {
        crate::codec::CompressedBlock::wire_size(self.batch_size, self.codec_rank) as u64
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be positive, got {v}")))
            }
        };
        positive("duration", self.duration)?;
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(config_err("warmup_fraction", "must be in [0, 1)"));
        }
        positive("request_rate", self.request_rate)?;
        positive("link_mbps_mean", self.link_mbps_mean)?;
        if !(0.0..1.0).contains(&self.link_fluctuation) {
            return Err(config_err("link_fluctuation", "must be in [0, 1)"));
        }
        positive("fluctuation_interval", self.fluctuation_interval)?;
        positive("cloud_flops_rate", self.cloud_flops_rate)?;
        if self.cloud_lanes == 0 {
            return Err(config_err("cloud_lanes", "must be at least 1"));
        }
        if self.num_experts == 0 {
            return Err(config_err("num_experts", "must be at least 1"));
        }
        if self.num_groups == 0 || self.num_groups > self.num_experts {
            return Err(config_err(
                "num_groups",
                format!("must be in 1..={}", self.num_experts),
            ));
        }
        if self.top_groups == 0 || self.top_groups > self.num_groups {
            return Err(config_err(
                "top_groups",
                format!("must be in 1..={}", self.num_groups),
            ));
        }
        if self.tokens_per_request == 0 {
            return Err(config_err("tokens_per_request", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(config_err("batch_size", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(config_err("feature_dim", "must be at least 1"));
        }
        let max_rank = self.tokens_per_request.min(self.feature_dim);
        if self.codec_rank == 0 || self.codec_rank > max_rank {
            return Err(config_err("codec_rank", format!("must be in 1..={max_rank}")));
        }
        self.device.validate().map_err(|e| match e {
            crate::hlggn::GateError::Profile { field, value } => {
                config_err(&format!("device.{field}"), format!("invalid value {value}"))
            }
            other => config_err("device", other.to_string()),
        })?;
        positive("device.nominal_flops_rate", self.device.nominal_flops_rate)?;
        positive("device.cpu_available", self.device.cpu_available)?;
        if !(self.hardware.base_flops_budget >= 0.0 && self.hardware.base_flops_budget.is_finite()) {
            return Err(config_err("hardware.base_flops_budget", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.hardware.mem_fraction) {
            return Err(config_err("hardware.mem_fraction", "must be in [0, 1]"));
        }
        positive("experts.flops_per_token", self.experts.flops_per_token)?;
        positive("experts.memory_mb", self.experts.memory_mb)?;
        positive("experts.storage_mb_per_s", self.experts.storage_mb_per_s)?;
        if !(self.experts.cost_spread >= 1.0 && self.experts.cost_spread.is_finite()) {
            return Err(config_err("experts.cost_spread", "must be at least 1"));
        }
        if !(self.local.eps_complexity >= 0.0) {
            return Err(config_err("local.eps_complexity", "must be non-negative"));
        }
        if !(self.local.cap_fraction > 0.0 && self.local.cap_fraction <= 1.0) {
            return Err(config_err("local.cap_fraction", "must be in (0, 1]"));
        }
        if !(self.scheduling_epoch >= 0.0 && self.scheduling_epoch.is_finite()) {
            return Err(config_err("scheduling_epoch", "must be non-negative"));
        }
        self.scheduler_params().validate().map_err(|e| match e {
            crate::sched::SchedError::Param { field, value } => {
                config_err(&format!("scheduler.{field}"), format!("invalid value {value}"))
            }
            other => config_err("scheduler", other.to_string()),
        })?;

        if !self.allow_off_grid {
            if !GRID_NUM_EXPERTS.contains(&self.num_experts) {
                return Err(config_err(
                    "num_experts",
                    format!("{} is not one of {GRID_NUM_EXPERTS:?}", self.num_experts),
                ));
            }
            if !on_grid(self.request_rate, &GRID_REQUEST_RATES) {
                return Err(config_err(
                    "request_rate",
                    format!("{} is not one of {GRID_REQUEST_RATES:?}", self.request_rate),
                ));
            }
            if !on_grid(self.link_fluctuation, &GRID_FLUCTUATIONS) {
                return Err(config_err(
                    "link_fluctuation",
                    format!("{} is not one of {GRID_FLUCTUATIONS:?}", self.link_fluctuation),
                ));
            }
            if !on_grid(self.link_mbps_mean, &[GRID_LINK_MBPS]) {
                return Err(config_err("link_mbps_mean", "must be 300"));
            }
            if self.tokens_per_request != GRID_TOKENS {
                return Err(config_err("tokens_per_request", "must be 256"));
            }
            if self.batch_size != GRID_BATCH {
                return Err(config_err("batch_size", "must be 4"));
            }
        }
        Ok(())
    }
}

impl SimConfig {
    /// Parses and validates a TOML config.
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(s).map_err(|e| SimError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }
}
