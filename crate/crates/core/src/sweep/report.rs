use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analytics::{success_rate, Accounting};
use crate::config::{CrcMode, Experiment};
use crate::engine::RNG_ALGORITHM;
use crate::link::ProbeInterval;
use crate::sweep::{crc_accounting_table, summarize, CrcAccountingRow, ResultRow, SummaryOptions, SummaryStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub interval: String,
    /// `None` when nothing was delivered.
    pub stats: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub name: String,
    pub config_hash: String,
    pub crc_mode: CrcMode,
    pub accounting: Accounting,
    pub success_rate: f64,
    pub intervals: Vec<IntervalSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rng: String,
    pub seed: u64,
    pub rounds: u32,
    pub attempts_per_round: u32,
    pub p_loss: f64,
    pub p_corrupt: f64,
    pub configs: Vec<ConfigSummary>,
    pub crc_table: Vec<CrcAccountingRow>,
}

/// Per-config statistics over `intervals`, in plan order. Modes are
/// searched at each config's copy spacing.
pub fn summarize_sweep(
    experiment: &Experiment,
    rows: &[ResultRow],
    intervals: &[ProbeInterval],
    bin_width_us: f64,
) -> SweepSummary {
    let configs = experiment
        .plan
        .configs
        .iter()
        .map(|nc| {
            let records: Vec<_> = rows
                .iter()
                .filter(|r| r.config_name == nc.name)
                .map(|r| &r.record)
                .collect();
            let accounting = Accounting::from_records(records.iter().copied());
            let opts = SummaryOptions {
                bin_width_us,
                mode_spacing_us: Some(nc.config.copy_spacing().as_us()),
            };
            ConfigSummary {
                name: nc.name.clone(),
                config_hash: format!("{:016x}", nc.config.config_hash()),
                crc_mode: nc.config.crc_mode,
                accounting,
                success_rate: success_rate(&accounting),
                intervals: intervals
                    .iter()
                    .map(|&iv| IntervalSummary {
                        interval: iv.key(),
                        stats: summarize(records.iter().copied(), iv, &opts).ok(),
                    })
                    .collect(),
            }
        })
        .collect();
    let crc_table = crc_accounting_table(rows.iter().filter_map(|r| {
        experiment
            .config(&r.config_name)
            .map(|nc| (nc.config.crc_mode, &r.record))
    }));
    SweepSummary {
        rng: RNG_ALGORITHM.to_string(),
        seed: experiment.plan.seed,
        rounds: experiment.plan.rounds,
        attempts_per_round: experiment.plan.attempts_per_round,
        p_loss: experiment.channel.p_loss,
        p_corrupt: experiment.channel.p_corrupt,
        configs,
        crc_table,
    }
}

fn crc_label(m: CrcMode) -> &'static str {
    match m {
        CrcMode::Crc16 => "16 bit",
        CrcMode::Crc8 => "8 bit",
        CrcMode::CrcOff => "disabled",
    }
}

/// Plain-text tables: packet accounting per CRC mode, median latency per
/// config, and interval statistics per config.
pub fn render_report(s: &SweepSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "esbsim sweep: rng {} seed {}, {} rounds x {} attempts, p_loss {}, p_corrupt {}\n",
        s.rng, s.seed, s.rounds, s.attempts_per_round, s.p_loss, s.p_corrupt
    );

    out += "Packets per CRC mode\n";
    let _ = writeln!(
        out,
        "{:<10}{:>8}{:>10}{:>8}{:>8}{:>11}{:>12}{:>10}",
        "CRC", "Sent", "Received", "Unique", "Valid", "Corrupted", "Duplicates", "Success"
    );
    for row in &s.crc_table {
        let a = &row.accounting;
        let _ = writeln!(
            out,
            "{:<10}{:>8}{:>10}{:>8}{:>8}{:>11}{:>12}{:>9.2}%",
            crc_label(row.crc_mode),
            a.sent,
            a.received,
            a.unique,
            a.valid,
            a.corrupted,
            a.duplicates,
            row.success_rate * 100.0
        );
    }

    if let Some(first) = s.configs.first().and_then(|c| c.intervals.first()) {
        let _ = writeln!(out, "\nMedian {} latency per config", first.interval);
        let _ = writeln!(out, "{:<16}{:>12}{:>8}", "Config", "Median µs", "n");
        for c in &s.configs {
            match c.intervals.first().and_then(|i| i.stats.as_ref()) {
                Some(st) => {
                    let _ = writeln!(out, "{:<16}{:>12.2}{:>8}", c.name, st.median_us, st.n);
                }
                None => {
                    let _ = writeln!(out, "{:<16}{:>12}{:>8}", c.name, "-", 0);
                }
            }
        }
    }

    for c in &s.configs {
        let _ = writeln!(
            out,
            "\n[{}] crc {}, hash {}, {} sent, {} lost, success {:.2}%",
            c.name,
            c.crc_mode,
            c.config_hash,
            c.accounting.sent,
            c.accounting.lost(),
            c.success_rate * 100.0
        );
        let _ = writeln!(
            out,
            "{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
            "Interval", "Mean", "Median", "SD", "P99", "Min", "Max"
        );
        for iv in &c.intervals {
            let label = iv
                .interval
                .parse::<ProbeInterval>()
                .map_or_else(|_| iv.interval.clone(), |p| p.label());
            match &iv.stats {
                Some(st) => {
                    let _ = writeln!(
                        out,
                        "{:<10}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}{:>10.2}",
                        label, st.mean_us, st.median_us, st.sd_us, st.p99_us, st.min_us, st.max_us
                    );
                }
                None => {
                    let _ = writeln!(out, "{label:<10}  no delivered samples");
                }
            }
        }
        if let Some(st) = c.intervals.first().and_then(|i| i.stats.as_ref()) {
            let modes: Vec<String> = st
                .modes
                .iter()
                .map(|m| format!("{:.1} µs ({:.1}%)", m.position_us, m.mass * 100.0))
                .collect();
            let _ = writeln!(out, "modes: {}", modes.join(", "));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_experiment_file;
    use crate::sweep::run_sweep;

    #[test]
    fn olcfg_report_has_three_interval_rows() {
        let e = parse_experiment_file("[sweep]\nrounds=1 attempts=50\n[channel]\np_loss=0\n[config olcfg]\n[pipeline]\njitter=none\n")
            .unwrap();
        let rows = run_sweep(&e.plan, &e.channel, &e.pipeline, 1).unwrap();
        let s = summarize_sweep(&e, &rows, &ProbeInterval::STANDARD, 5.0);
        let text = render_report(&s);
        for (label, median) in [("D0-D7", "486.30"), ("D2-D5", "293.07"), ("D3-D4", "185.86")] {
            let line = text.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("{text}"));
            let cols: Vec<&str> = line.split_whitespace().collect();
            // ticks round the last digit
            assert!((cols[2].parse::<f64>().unwrap() - median.parse::<f64>().unwrap()).abs() <= 0.1, "{line}");
        }
        assert!(text.contains("disabled"));
        let st = s.configs[0].intervals[0].stats.as_ref().unwrap();
        assert_eq!(st.modes.len(), 1);
        assert_eq!(st.sd_us, 0.0);
        let json = serde_json::to_string(&s).unwrap();
        let back: SweepSummary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
