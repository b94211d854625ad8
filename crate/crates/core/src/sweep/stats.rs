use serde::{Deserialize, Serialize};

use crate::link::{ProbeInterval, TransmissionRecord};

pub const DEFAULT_BIN_WIDTH_US: f64 = 5.0;
/// Candidate peaks lower than this share of the tallest one are ignored.
const MODE_RELATIVE_HEIGHT: f64 = 0.005;
/// Half-width, in bins, of the moving average applied before peak search.
const SMOOTHING_HALF_WIDTH: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no delivered samples to summarize ({lost} lost)")]
pub struct EmptyInputError {
    pub lost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryOptions {
    pub bin_width_us: f64,
    /// Expected distance between modes; mode detection is skipped when absent.
    pub mode_spacing_us: Option<f64>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            bin_width_us: DEFAULT_BIN_WIDTH_US,
            mode_spacing_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of bin 0, a multiple of the bin width.
    pub origin_us: f64,
    pub bin_width_us: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// `sorted` must be ascending and nonempty.
    pub fn from_sorted(sorted: &[f64], bin_width_us: f64) -> Histogram {
        let origin_us = (sorted[0] / bin_width_us).floor() * bin_width_us;
        let mut counts = Vec::new();
        for &x in sorted {
            let i = ((x - origin_us) / bin_width_us).floor().max(0.0) as usize;
            if i >= counts.len() {
                counts.resize(i + 1, 0);
            }
            counts[i] += 1;
        }
        Histogram {
            origin_us,
            bin_width_us,
            counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.origin_us + (i as f64 + 0.5) * self.bin_width_us
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub position_us: f64,
    /// Share of samples closer to this mode than to its neighbours.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    /// Delivered samples.
    pub n: u64,
    pub lost: u64,
    pub mean_us: f64,
    pub median_us: f64,
    /// Sample standard deviation; zero for a single sample.
    pub sd_us: f64,
    pub p99_us: f64,
    pub min_us: f64,
    pub max_us: f64,
    pub histogram: Histogram,
    pub modes: Vec<Mode>,
}

impl SummaryStats {
    /// Placeholder for a series where nothing was delivered.
    pub fn empty(lost: u64) -> Self {
        SummaryStats {
            n: 0,
            lost,
            mean_us: 0.0,
            median_us: 0.0,
            sd_us: 0.0,
            p99_us: 0.0,
            min_us: 0.0,
            max_us: 0.0,
            histogram: Histogram {
                origin_us: 0.0,
                bin_width_us: DEFAULT_BIN_WIDTH_US,
                counts: Vec::new(),
            },
            modes: Vec::new(),
        }
    }
}

/// Linear interpolation between closest ranks.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Shifted by the first sample so identical samples give an exact mean.
fn mean_of(v: &[f64]) -> f64 {
    v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / v.len() as f64
}

/// Statistics of raw samples. Input order does not affect the result.
pub fn summarize_values(values: &[f64], opts: &SummaryOptions) -> Result<SummaryStats, EmptyInputError> {
    summarize_sorted(sorted(values), 0, opts)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn summarize_sorted(v: Vec<f64>, lost: u64, opts: &SummaryOptions) -> Result<SummaryStats, EmptyInputError> {
    if v.is_empty() {
        return Err(EmptyInputError { lost });
    }
    let n = v.len();
    let mean = mean_of(&v);
    let sd = if n > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let histogram = Histogram::from_sorted(&v, opts.bin_width_us);
    let modes = opts
        .mode_spacing_us
        .map(|d| detect_modes_in(&histogram, &v, d))
        .unwrap_or_default();
    Ok(SummaryStats {
        n: n as u64,
        lost,
        mean_us: mean,
        median_us: quantile(&v, 0.5),
        sd_us: sd,
        p99_us: quantile(&v, 0.99),
        min_us: v[0],
        max_us: v[n - 1],
        histogram,
        modes,
    })
}

/// Statistics of `interval` over delivered records; the rest count as lost.
pub fn summarize<'a>(
    records: impl IntoIterator<Item = &'a TransmissionRecord>,
    interval: ProbeInterval,
    opts: &SummaryOptions,
) -> Result<SummaryStats, EmptyInputError> {
    let mut values = Vec::new();
    let mut lost = 0;
    for r in records {
        match r.interval(interval) {
            Some(t) => values.push(t.as_us()),
            None => lost += 1,
        }
    }
    values.sort_by(f64::total_cmp);
    summarize_sorted(values, lost, opts)
}

/// Peaks of the histogram at least `spacing_us / 2` apart, ascending.
/// Positions are refined to the centroid of samples within a quarter
/// spacing of the peak bin.
pub fn detect_modes(histogram: &Histogram, samples: &[f64], spacing_us: f64) -> Vec<Mode> {
    detect_modes_in(histogram, &sorted(samples), spacing_us)
}

fn detect_modes_in(h: &Histogram, sorted: &[f64], spacing_us: f64) -> Vec<Mode> {
    let c = &h.counts;
    if c.is_empty() || sorted.is_empty() {
        return Vec::new();
    }
    let smooth: Vec<f64> = (0..c.len())
        .map(|i| {
            let lo = i.saturating_sub(SMOOTHING_HALF_WIDTH);
            let hi = (i + SMOOTHING_HALF_WIDTH).min(c.len() - 1);
            c[lo..=hi].iter().sum::<u64>() as f64 / (hi - lo + 1) as f64
        })
        .collect();
    let top = smooth.iter().copied().fold(0.0, f64::max);
    let mut candidates: Vec<usize> = (0..c.len())
        .filter(|&i| {
            let s = smooth[i];
            s > 0.0
                && s >= top * MODE_RELATIVE_HEIGHT
                && (i == 0 || s >= smooth[i - 1])
                && (i + 1 == c.len() || s >= smooth[i + 1])
        })
        .collect();
    // Tallest first; ties resolved toward the earlier bin.
    candidates.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));
    let window = spacing_us / 2.0;
    let mut peaks: Vec<usize> = Vec::new();
    for i in candidates {
        let x = h.bin_center(i);
        if peaks.iter().all(|&p| (h.bin_center(p) - x).abs() >= window) {
            peaks.push(i);
        }
    }
    let mut positions: Vec<f64> = peaks
        .into_iter()
        .map(|i| {
            let x = h.bin_center(i);
            let r = spacing_us / 4.0;
            let lo = sorted.partition_point(|&v| v < x - r);
            let hi = sorted.partition_point(|&v| v <= x + r);
            let near = &sorted[lo..hi];
            if near.is_empty() {
                x
            } else {
                mean_of(near)
            }
        })
        .collect();
    positions.sort_by(f64::total_cmp);

    let n = sorted.len() as f64;
    let mut start = 0;
    positions
        .iter()
        .enumerate()
        .map(|(k, &pos)| {
            let end = match positions.get(k + 1) {
                Some(next) => sorted.partition_point(|&v| v < (pos + next) / 2.0),
                None => sorted.len(),
            };
            let mass = (end - start) as f64 / n;
            start = end;
            Mode { position_us: pos, mass }
        })
        .collect()
}
