//! Discrete-event simulator of the end/cloud inference pipeline.
//!
//! One end device (serial, gate jobs preempt expert jobs), one FIFO uplink
//! whose rate follows a piecewise-constant trace, and a cloud with a fixed
//! number of parallel lanes. A run is a pure function of its [`SimConfig`].

mod config;
mod engine;
mod link;
mod report;

use rayon::prelude::*;
use thiserror::Error;

pub use config::{
    Ablation, Arrival, ExpertBank, LocalSelection, Mode, SchedulerSettings, SimConfig,
    GRID_FLUCTUATIONS, GRID_NUM_EXPERTS, GRID_REQUEST_RATES,
};
pub use engine::{expert_bank, run_simulation, EventKind, Model};
pub use link::{bandwidth_at, comm_time, exec_time, LinkModel};
pub use report::{latency_stats, percentile_sorted, LatencyStats, MetricsReport, RequestTrace, CSV_HEADER};

use crate::hlggn::GateError;
use crate::sched::SchedError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Sched(#[from] SchedError),
}

impl SimError {
    pub fn field(&self) -> Option<&str> {
        match self {
            SimError::Config { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    RequestRate,
    Fluctuation,
    NumExperts,
}

impl SweepAxis {
    pub fn apply(self, cfg: &mut SimConfig, value: f64) -> Result<(), SimError> {
        match self {
            SweepAxis::RequestRate => cfg.request_rate = value,
            SweepAxis::Fluctuation => cfg.link_fluctuation = value,
            SweepAxis::NumExperts => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(SimError::Config {
                        field: "num_experts".into(),
                        reason: format!("sweep value {value} is not a positive integer"),
                    });
                }
                cfg.num_experts = value as usize;
            }
        }
        Ok(())
    }
}

/// One run per value. Point `i` uses traffic seed `base.seed ^ i`; the model
/// seed stays that of `base`, so every point sees the same expert bank.
pub fn run_sweep(base: &SimConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<MetricsReport>, SimError> {
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v)?;
            cfg.model_seed = Some(base.model_seed());
            cfg.seed = base.seed ^ i as u64;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    configs.par_iter().map(run_simulation).collect()
}
