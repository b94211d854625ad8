use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use esbsim::analytics::{calibrate_pipeline_with, CalibrationTargets};
use esbsim::ble::{compare, sample_series};
use esbsim::config::{render_pipeline, render_targets, Document, Experiment, FileError};
use esbsim::link::{ProbeInterval, Stage};
use esbsim::sweep::{
    read_results, render_report, run_sweep, summarize_sweep, summarize_values, write_results, ResultRow,
    SummaryOptions, SweepSummary, DEFAULT_BIN_WIDTH_US,
};
use esbsim::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "esbsim", version, about = "Latency simulator for ESB command broadcasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one configuration as a single series.
    Simulate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Config section to run; defaults to the first one.
        #[arg(long)]
        config: Option<String>,
        /// Number of attempts; defaults to rounds x attempts of the plan.
        #[arg(long)]
        attempts: Option<u64>,
    },
    /// Run the full rounds x configs protocol.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        workers: u16,
    },
    /// Solve stage base delays from median interval targets.
    Calibrate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        config: Option<String>,
        /// Median targets in µs: d0d7,d2d5,d3d4.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<f64>>,
    },
    /// Compare ESB latency against the BLE connection-interval baseline.
    CompareBle {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        config: Option<String>,
        #[arg(long)]
        attempts: Option<u64>,
    },
    /// Recompute the summary and report from a results CSV.
    Report {
        /// A results.csv written by `simulate` or `sweep`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value = "d0d7")]
        interval: ProbeInterval,
    },
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment file; without it a single OLCfg config is used.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Pipeline file written by `calibrate`, layered over the experiment.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    /// Overrides the seed in the experiment file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// section.key=value; config keys as config.<name>.<key> or config.*.<key>.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "d0d7")]
    interval: ProbeInterval,
}

const DEFAULT_EXPERIMENT: &str = "[config olcfg]\n";

impl ExperimentArgs {
    fn load(&self) -> Result<Experiment, Error> {
        let text = match &self.file {
            Some(p) => read(p)?,
            None => DEFAULT_EXPERIMENT.to_string(),
        };
        let mut doc = Document::parse(&text)?;
        if let Some(p) = &self.pipeline {
            doc.merge(Document::parse(&read(p)?)?);
        }
        for o in &self.overrides {
            doc.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            doc.apply_override(&format!("sweep.seed={seed}"))?;
        }
        Ok(doc.resolve()?)
    }
}

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| with_path(path, e))
}

fn invalid(msg: String) -> Error {
    Error::File(FileError::Invalid(msg))
}

/// Keeps only the named config (or the first) in a single round of `attempts`.
fn single_config(mut e: Experiment, name: Option<&str>, attempts: Option<u64>) -> Result<Experiment, Error> {
    let idx = match name {
        Some(n) => e
            .plan
            .configs
            .iter()
            .position(|c| c.name == n)
            .ok_or_else(|| invalid(format!("no config named {n:?}")))?,
        None => 0,
    };
    let total = attempts.unwrap_or(u64::from(e.plan.rounds) * u64::from(e.plan.attempts_per_round));
    let total = u32::try_from(total)
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| invalid(format!("attempts = {total} must be in 1..=4294967295")))?;
    let nc = e.plan.configs.swap_remove(idx);
    e.plan.configs = vec![nc];
    e.plan.rounds = 1;
    e.plan.attempts_per_round = total;
    Ok(e)
}

fn intervals(chosen: ProbeInterval) -> Vec<ProbeInterval> {
    let mut v = ProbeInterval::STANDARD.to_vec();
    if !v.contains(&chosen) {
        v.push(chosen);
    }
    v
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| with_path(dir, e))?;
    Ok(())
}

fn write_outputs(out: &Path, e: &Experiment, rows: &[ResultRow], summary: &SweepSummary) -> Result<(), Error> {
    prepare_out(out)?;
    let file = io::BufWriter::new(fs::File::create(out.join("results.csv"))?);
    write_results(file, e, rows)?;
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(summary)? + "\n")?;
    fs::write(out.join("report.txt"), render_report(summary))?;
    Ok(())
}

fn print_interval(summary: &SweepSummary, interval: ProbeInterval) {
    let key = interval.key();
    for c in &summary.configs {
        match c.intervals.iter().find(|i| i.interval == key).and_then(|i| i.stats.as_ref()) {
            Some(s) => println!(
                "{} {}: n {} lost {} mean {:.2} median {:.2} sd {:.2} p99 {:.2} µs, {} modes",
                c.name,
                interval.label(),
                s.n,
                s.lost,
                s.mean_us,
                s.median_us,
                s.sd_us,
                s.p99_us,
                s.modes.len()
            ),
            None => println!("{} {}: nothing delivered", c.name, interval.label()),
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { exp, config, attempts } => {
            let e = single_config(exp.load()?, config.as_deref(), attempts)?;
            let rows = run_sweep(&e.plan, &e.channel, &e.pipeline, 1)?;
            let summary = summarize_sweep(&e, &rows, &intervals(exp.interval), DEFAULT_BIN_WIDTH_US);
            write_outputs(&exp.out, &e, &rows, &summary)?;
            print_interval(&summary, exp.interval);
        }
        Command::Sweep { exp, workers } => {
            let e = exp.load()?;
            let rows = run_sweep(&e.plan, &e.channel, &e.pipeline, usize::from(workers))?;
            let summary = summarize_sweep(&e, &rows, &intervals(exp.interval), DEFAULT_BIN_WIDTH_US);
            write_outputs(&exp.out, &e, &rows, &summary)?;
            print_interval(&summary, exp.interval);
        }
        Command::Calibrate { exp, config, targets } => {
            let e = exp.load()?;
            let targets = match targets.as_deref() {
                Some(&[d0d7, d2d5, d3d4]) => CalibrationTargets { d0d7, d2d5, d3d4 },
                Some(other) => return Err(invalid(format!("--targets needs 3 values, got {}", other.len()))),
                None => e.targets.unwrap_or_else(CalibrationTargets::reference),
            };
            let nc = match config.as_deref() {
                Some(n) => e.config(n).ok_or_else(|| invalid(format!("no config named {n:?}")))?,
                None => &e.plan.configs[0],
            };
            let pipeline = calibrate_pipeline_with(&targets, &nc.config, &e.pipeline)?;
            prepare_out(&exp.out)?;
            let text = format!(
                "# calibrated for [config {}]\n{}{}",
                nc.name,
                render_pipeline(&pipeline),
                render_targets(&targets)
            );
            fs::write(exp.out.join("pipeline.cfg"), text)?;
            for stage in Stage::ALL {
                println!("{:<16} {:>8.2} µs", stage.key(), pipeline.base(stage));
            }
        }
        Command::CompareBle { exp, config, attempts } => {
            let e = single_config(exp.load()?, config.as_deref(), attempts)?;
            let rows = run_sweep(&e.plan, &e.channel, &e.pipeline, 1)?;
            let opts = SummaryOptions::default();
            let esb_values: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.record.interval(exp.interval))
                .map(|t| t.as_us())
                .collect();
            let esb = summarize_values(&esb_values, &opts)?;
            let ble_values: Vec<f64> = sample_series(&e.ble_config(), esb.n, e.plan.seed)
                .iter()
                .map(|s| s.total_us)
                .collect();
            let ble = summarize_values(&ble_values, &opts)?;
            let report = compare(&esb, &ble)?;
            prepare_out(&exp.out)?;
            let text = format!(
                "ESB [config {}] {} vs BLE connection interval {} µs\n{}",
                e.plan.configs[0].name,
                exp.interval.label(),
                e.ble_config().connection_interval_us,
                report.render()
            );
            fs::write(exp.out.join("compare.txt"), &text)?;
            fs::write(exp.out.join("compare.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            print!("{text}");
        }
        Command::Report { results, out, interval } => {
            let file = fs::File::open(&results).map_err(|e| with_path(&results, e))?;
            let file = read_results(io::BufReader::new(file))?;
            let summary = summarize_sweep(&file.experiment, &file.rows, &intervals(interval), DEFAULT_BIN_WIDTH_US);
            prepare_out(&out)?;
            fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
            let text = render_report(&summary);
            fs::write(out.join("report.txt"), &text)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Validation => ExitCode::from(1),
                ErrorKind::Io => ExitCode::from(2),
            }
        }
    }
}
