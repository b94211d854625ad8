//! BLE connection-interval baseline.
//!
//! A command raised at a random instant waits for the next connection event,
//! so the wait is uniform over one interval. Only that wait is modeled.

use serde::{Deserialize, Serialize};

use crate::engine::{Purpose, RngStream, StreamId};
use crate::sweep::SummaryStats;

pub use crate::config::{BleConfig, MIN_CONNECTION_INTERVAL_US};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleLatencySample {
    pub wait_us: f64,
    pub transfer_us: f64,
    pub total_us: f64,
}

pub fn sample_latency(config: &BleConfig, rng: &mut RngStream) -> BleLatencySample {
    let wait_us = rng.draw_uniform(0.0, config.connection_interval_us);
    BleLatencySample {
        wait_us,
        transfer_us: config.transfer_us,
        total_us: wait_us + config.transfer_us,
    }
}

/// `n` samples, sample `i` drawn from its own stream.
pub fn sample_series(config: &BleConfig, n: u64, seed: u64) -> Vec<BleLatencySample> {
    (0..n)
        .map(|i| {
            let mut rng = RngStream::new(seed, StreamId::new(0, 0, i, Purpose::Ble));
            sample_latency(config, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("summaries are not comparable: {esb} ESB vs {ble} BLE samples")]
pub struct MismatchError {
    pub esb: u64,
    pub ble: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub n: u64,
    pub mean_us: f64,
    pub median_us: f64,
    pub sd_us: f64,
    pub p99_us: f64,
}

impl From<&SummaryStats> for ComparisonRow {
    fn from(s: &SummaryStats) -> Self {
        ComparisonRow {
            n: s.n,
            mean_us: s.mean_us,
            median_us: s.median_us,
            sd_us: s.sd_us,
            p99_us: s.p99_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub esb: ComparisonRow,
    pub ble: ComparisonRow,
    /// BLE mean over ESB mean.
    pub mean_ratio: f64,
}

pub fn compare(esb: &SummaryStats, ble: &SummaryStats) -> Result<ComparisonReport, MismatchError> {
    if esb.n == 0 || esb.n != ble.n {
        return Err(MismatchError { esb: esb.n, ble: ble.n });
    }
    Ok(ComparisonReport {
        esb: esb.into(),
        ble: ble.into(),
        mean_ratio: ble.mean_us / esb.mean_us,
    })
}

impl ComparisonReport {
    pub fn render(&self) -> String {
        let row = |name: &str, r: &ComparisonRow| {
            format!(
                "{name:<6}{:>8}{:>12.2}{:>12.2}{:>12.2}{:>12.2}\n",
                r.n, r.mean_us, r.median_us, r.sd_us, r.p99_us
            )
        };
        let mut out = format!(
            "{:<6}{:>8}{:>12}{:>12}{:>12}{:>12}\n",
            "", "n", "mean", "median", "SD", "P99"
        );
        out += &row("ESB", &self.esb);
        out += &row("BLE", &self.ble);
        out += &format!("BLE/ESB mean ratio: {:.2}\n", self.mean_ratio);
        out
    }
}
