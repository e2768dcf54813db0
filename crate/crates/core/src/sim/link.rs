use rand::Rng;

use crate::rng::{self, Stream};

use super::SimConfig;

/// Piecewise-constant uplink rate. Window `k` covers
/// `[k * interval, (k + 1) * interval)` and its rate is drawn uniformly from
/// `mean * [1 - f, 1 + f]`, keyed only by `(seed, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub seed: u64,
    pub mean_mbps: f64,
    pub fluctuation: f64,
    pub interval: f64,
}

impl LinkModel {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Self {
            seed: cfg.seed,
            mean_mbps: cfg.link_mbps_mean,
            fluctuation: cfg.link_fluctuation,
            interval: cfg.fluctuation_interval,
        }
    }

    pub fn window_of(&self, t: f64) -> u64 {
        (t.max(0.0) / self.interval).floor() as u64
    }

    /// Megabits per second during window `k`.
    pub fn window_rate(&self, k: u64) -> f64 {
        if self.fluctuation == 0.0 {
            return self.mean_mbps;
        }
        let u: f64 = rng::indexed_stream(self.seed, Stream::Bandwidth, k).random();
        self.mean_mbps * (1.0 + self.fluctuation * (2.0 * u - 1.0))
    }

    /// Megabits per second at time `t`.
    pub fn bandwidth_at(&self, t: f64) -> f64 {
        self.window_rate(self.window_of(t))
    }

    /// Seconds to push `bytes` through the link starting at `t_start`.
    pub fn comm_time(&self, bytes: f64, t_start: f64) -> f64 {
        integrate_windows(bytes, t_start, self.interval, |k| self.window_rate(k))
    }
}

/// Transfer time over windows of length `interval` whose rates in Mbps are
/// given by `rate_of`.
pub(crate) fn integrate_windows(
    bytes: f64,
    t_start: f64,
    interval: f64,
    rate_of: impl Fn(u64) -> f64,
) -> f64 {
    if bytes <= 0.0 {
        return 0.0;
    }
    let mut remaining_bits = bytes * 8.0;
    let mut k = (t_start.max(0.0) / interval).floor() as u64;
    let mut t = t_start;
    loop {
        let rate = rate_of(k) * 1e6;
        let window_end = (k + 1) as f64 * interval;
        let capacity = rate * (window_end - t).max(0.0);
        if remaining_bits <= capacity {
            return t + remaining_bits / rate - t_start;
        }
        remaining_bits -= capacity;
        t = window_end;
        k += 1;
    }
}

/// Link rate in megabits per second at time `t` under `cfg`.
pub fn bandwidth_at(t: f64, cfg: &SimConfig) -> f64 {
    LinkModel::from_config(cfg).bandwidth_at(t)
}

/// Transfer time in seconds of `bytes` starting at `t_start` under `cfg`.
pub fn comm_time(bytes: f64, t_start: f64, cfg: &SimConfig) -> f64 {
    LinkModel::from_config(cfg).comm_time(bytes, t_start)
}

pub fn exec_time(flops: f64, rate: f64) -> f64 {
    flops / rate
}
