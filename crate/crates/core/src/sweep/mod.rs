//! The measurement protocol: every round runs each configuration for a
//! fixed number of attempts in a freshly shuffled order. Also statistics,
//! mode detection, result files and the text report.

mod report;
mod results;
mod stats;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::Accounting;
use crate::config::{ChannelModel, CrcMode, ValidatedConfig};
use crate::engine::{Purpose, RngStream, StreamId};
use crate::link::{Link, PipelineModel, SeriesId, TransmissionRecord};
use crate::Error;

pub use report::{render_report, summarize_sweep, ConfigSummary, IntervalSummary, SweepSummary};
pub use results::{read_results, write_results, ResultsFile, RESULTS_COLUMNS};
pub use stats::{
    detect_modes, quantile, summarize, summarize_values, EmptyInputError, Histogram, Mode, SummaryOptions,
    SummaryStats, DEFAULT_BIN_WIDTH_US,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedConfig {
    pub name: String,
    pub config: ValidatedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPlan {
    pub seed: u64,
    pub rounds: u32,
    pub attempts_per_round: u32,
    pub shuffle: bool,
    /// Time between consecutive attempt commands.
    pub spacing_us: f64,
    pub configs: Vec<NamedConfig>,
}

/// One attempt in a sweep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultRow {
    pub config_name: String,
    pub round: u32,
    pub seed: u64,
    pub record: TransmissionRecord,
}

/// A random permutation of `0..n`.
pub fn shuffle_round_order(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng.rng());
    order
}

/// Execution order of the configs in `round`, reproducible from the seed.
pub fn round_order(plan: &SweepPlan, round: u32) -> Vec<usize> {
    let n = plan.configs.len();
    if !plan.shuffle {
        return (0..n).collect();
    }
    let mut rng = RngStream::new(plan.seed, StreamId::new(round, 0, 0, Purpose::Shuffle));
    shuffle_round_order(n, &mut rng)
}

/// Runs every (round, config) series. Each series draws from streams keyed
/// by the config's position in the plan, so results do not depend on the
/// shuffled order or on `workers`; shuffling only changes row order.
pub fn run_sweep(
    plan: &SweepPlan,
    channel: &ChannelModel,
    pipeline: &PipelineModel,
    workers: usize,
) -> Result<Vec<ResultRow>, Error> {
    if plan.configs.is_empty() || plan.configs.len() > usize::from(u16::MAX) {
        return Err(Error::Schema(format!("plan has {} configs", plan.configs.len())));
    }
    let units: Vec<(u32, usize)> = (0..plan.rounds)
        .flat_map(|r| round_order(plan, r).into_iter().map(move |c| (r, c)))
        .collect();
    let run = |&(round, slot): &(u32, usize)| -> Result<Vec<ResultRow>, Error> {
        let nc = &plan.configs[slot];
        let series = SeriesId {
            seed: plan.seed,
            round,
            config_slot: slot as u16,
        };
        let out = Link::new(&nc.config, channel, pipeline).run_series(
            u64::from(plan.attempts_per_round),
            series,
            plan.spacing_us,
            false,
        )?;
        Ok(out
            .records
            .into_iter()
            .map(|record| ResultRow {
                config_name: nc.name.clone(),
                round,
                seed: plan.seed,
                record,
            })
            .collect())
    };
    let chunks: Vec<Vec<ResultRow>> = if workers <= 1 {
        units.iter().map(run).collect::<Result<_, _>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Pool(e.to_string()))?;
        pool.install(|| units.par_iter().map(run).collect::<Result<_, _>>())?
    };
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrcAccountingRow {
    pub crc_mode: CrcMode,
    pub accounting: Accounting,
    pub success_rate: f64,
}

/// Packet accounting per CRC mode, in the order 16, 8, off. Modes without
/// records are omitted.
pub fn crc_accounting_table<'a>(
    records: impl IntoIterator<Item = (CrcMode, &'a TransmissionRecord)>,
) -> Vec<CrcAccountingRow> {
    let mut groups: Vec<(CrcMode, Vec<&TransmissionRecord>)> =
        CrcMode::ALL.iter().map(|&m| (m, Vec::new())).collect();
    for (mode, r) in records {
        if let Some(g) = groups.iter_mut().find(|g| g.0 == mode) {
            g.1.push(r);
        }
    }
    groups
        .into_iter()
        .filter(|g| !g.1.is_empty())
        .map(|(crc_mode, rs)| {
            let accounting = Accounting::from_records(rs);
            CrcAccountingRow {
                crc_mode,
                accounting,
                success_rate: crate::analytics::success_rate(&accounting),
            }
        })
        .collect()
}
