use serde::{Deserialize, Serialize};

use crate::Location;

use super::{Ablation, Mode};

/// Stage timings of one request. Durations are service times, excluding
/// queueing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub id: u64,
    pub arrival: f64,
    pub depart: Option<f64>,
    pub expert: usize,
    pub location: Location,
    pub bytes: u64,
    pub gate_s: f64,
    pub transfer_s: f64,
    pub exec_s: f64,
}

impl RequestTrace {
    pub fn latency(&self) -> Option<f64> {
        self.depart.map(|d| d - self.arrival)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub num_experts: usize,
    pub num_groups: usize,
    pub request_rate: f64,
    pub link_fluctuation: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub arrivals: u64,
    /// Departures over the whole run.
    pub completed_total: u64,
    pub in_flight: u64,
    /// Departures inside the measured window.
    pub completed_requests: u64,
    pub window_seconds: f64,
    /// Requests per second.
    pub throughput: f64,
    pub latency_samples: u64,
    /// Milliseconds.
    pub latency_mean: f64,
    pub latency_p50: f64,
    pub latency_p95: f64,
    pub latency_std: f64,
    pub bytes_transferred: u64,
    pub end_utilization: f64,
    pub cloud_utilization: f64,
    pub local_experts: usize,
    pub end_placements: u64,
    pub cloud_placements: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<RequestTrace>>,
}

pub const CSV_HEADER: &str =
    "mode,M,K,rate,fluctuation,throughput,latency_mean,latency_p50,latency_p95,bytes";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.6},{:.6},{:.6},{:.6},{}",
            self.mode_label(),
            self.num_experts,
            self.num_groups,
            self.request_rate,
            self.link_fluctuation,
            self.throughput,
            self.latency_mean,
            self.latency_p50,
            self.latency_p95,
            self.bytes_transferred
        )
    }

    /// Mode name with any ablation suffixes.
    pub fn mode_label(&self) -> String {
        let mut s = self.mode.as_str().to_string();
        if self.ablation.disable_hlggn {
            s.push_str("-no_hlggn");
        }
        if self.ablation.disable_poecc {
            s.push_str("-no_poecc");
        }
        s
    }

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }

    pub fn trace_csv(&self) -> Option<String> {
        let trace = self.trace.as_ref()?;
        let mut out =
            String::from("id,arrival_s,depart_s,expert,location,bytes,gate_s,transfer_s,exec_s,latency_ms\n");
        for r in trace {
            let (depart, latency) = match r.depart {
                Some(d) => (format!("{d:.9}"), format!("{:.6}", (d - r.arrival) * 1e3)),
                None => (String::new(), String::new()),
            };
            out.push_str(&format!(
                "{},{:.9},{},{},{},{},{:.9},{:.9},{:.9},{}\n",
                r.id,
                r.arrival,
                depart,
                r.expert,
                r.location.as_str(),
                r.bytes,
                r.gate_s,
                r.transfer_s,
                r.exec_s,
                latency
            ));
        }
        Some(out)
    }
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatencyStats {
    pub samples: u64,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub std: f64,
}

/// Statistics of a latency sample, in the sample's unit.
pub fn latency_stats(sample: &[f64]) -> LatencyStats {
    if sample.is_empty() {
        return LatencyStats::default();
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    LatencyStats {
        samples: sorted.len() as u64,
        mean,
        p50: percentile_sorted(&sorted, 50.0),
        p95: percentile_sorted(&sorted, 95.0),
        std: var.sqrt(),
    }
}
