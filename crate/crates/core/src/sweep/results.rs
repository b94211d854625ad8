//! Result CSV: a `#` provenance header carrying the full experiment, then
//! one row per attempt.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::config::{parse_experiment_file, Experiment};
use crate::engine::RNG_ALGORITHM;
use crate::link::{Outcome, TransmissionRecord};
use crate::sweep::ResultRow;
use crate::time::Ticks;
use crate::Error;

pub const RESULTS_COLUMNS: [&str; 16] = [
    "config_name",
    "round",
    "attempt",
    "seed",
    "d0",
    "d1",
    "d2",
    "d3",
    "d4",
    "d5",
    "d6",
    "d7",
    "delivered_copy",
    "outcome",
    "duplicates_suppressed",
    "duplicates_delivered",
];

const EXPERIMENT_MARKER: &str = "--- experiment ---";

/// Parsed result file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsFile {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
}

pub fn write_results<W: Write>(mut w: W, experiment: &Experiment, rows: &[ResultRow]) -> Result<(), Error> {
    writeln!(w, "# esbsim results")?;
    writeln!(w, "# rng: {RNG_ALGORITHM}, seed: {}", experiment.plan.seed)?;
    writeln!(w, "# {EXPERIMENT_MARKER}")?;
    for line in experiment.render().lines() {
        if line.is_empty() {
            writeln!(w, "#")?;
        } else {
            writeln!(w, "# {line}")?;
        }
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(RESULTS_COLUMNS)?;
    for row in rows {
        let r = &row.record;
        let mut fields = vec![
            row.config_name.clone(),
            row.round.to_string(),
            r.attempt_id.to_string(),
            row.seed.to_string(),
        ];
        fields.extend(r.probes.iter().map(|p| p.map(|t| t.to_string()).unwrap_or_default()));
        fields.push(r.delivered_copy.map(|c| c.to_string()).unwrap_or_default());
        fields.push(r.outcome.key().to_string());
        fields.push(r.duplicates_suppressed.to_string());
        fields.push(r.duplicates_delivered.to_string());
        csv.write_record(&fields)?;
    }
    csv.flush()?;
    Ok(())
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

pub fn read_results<R: Read>(mut r: R) -> Result<ResultsFile, Error> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let header: Vec<&str> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").unwrap_or(l.trim_start_matches('#')))
        .collect();
    let marker = header
        .iter()
        .position(|l| *l == EXPERIMENT_MARKER)
        .ok_or_else(|| schema("missing experiment provenance header"))?;
    let experiment = parse_experiment_file(&header[marker + 1..].join("\n"))
        .map_err(|e| schema(format!("provenance experiment: {e}")))?;
    let hashes: HashMap<&str, u64> = experiment
        .plan
        .configs
        .iter()
        .map(|c| (c.name.as_str(), c.config.config_hash()))
        .collect();

    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let columns = csv.headers()?.clone();
    if columns.iter().ne(RESULTS_COLUMNS) {
        return Err(schema(format!("unexpected columns {:?}", columns.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let at = |msg: String| schema(format!("row {}: {msg}", i + 1));
        let num = |k: usize| -> Result<u64, Error> {
            rec[k]
                .parse()
                .map_err(|_| at(format!("{} = {:?} is not an integer", RESULTS_COLUMNS[k], &rec[k])))
        };
        let config_name = rec[0].to_string();
        let config_hash = *hashes
            .get(config_name.as_str())
            .ok_or_else(|| at(format!("unknown config {config_name:?}")))?;
        let mut probes = [None; 8];
        for (k, p) in probes.iter_mut().enumerate() {
            let s = &rec[4 + k];
            if !s.is_empty() {
                *p = Some(s.parse::<Ticks>().map_err(|e| at(format!("d{k}: {e}")))?);
            }
        }
        let delivered_copy = match &rec[12] {
            "" => None,
            s => Some(s.parse().map_err(|_| at(format!("delivered_copy = {s:?}")))?),
        };
        let outcome: Outcome = rec[13].parse().map_err(|e: String| at(e))?;
        let small = |k: usize| -> Result<u32, Error> {
            u32::try_from(num(k)?).map_err(|_| at(format!("{} out of range", RESULTS_COLUMNS[k])))
        };
        let record = TransmissionRecord {
            attempt_id: num(2)?,
            config_hash,
            probes,
            delivered_copy,
            outcome,
            duplicates_suppressed: small(14)?,
            duplicates_delivered: small(15)?,
        };
        if !record.is_consistent() {
            return Err(at("inconsistent probes and outcome".into()));
        }
        rows.push(ResultRow {
            config_name,
            round: u32::try_from(num(1)?).map_err(|_| at("round out of range".into()))?,
            seed: num(3)?,
            record,
        });
    }
    Ok(ResultsFile { experiment, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sweep::run_sweep;

    fn sample() -> (Experiment, Vec<ResultRow>) {
        let e = parse_experiment_file(
            "[sweep]\nseed=5 rounds=2 attempts=30\n[channel]\np_loss=0.3 p_corrupt=0.05\n[config a]\n[config b]\ncrc=8\n",
        )
        .unwrap();
        let rows = run_sweep(&e.plan, &e.channel, &e.pipeline, 1).unwrap();
        (e, rows)
    }

    #[test]
    fn round_trip() {
        let (e, rows) = sample();
        let mut buf = Vec::new();
        write_results(&mut buf, &e, &rows).unwrap();
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back.experiment, e);
        assert_eq!(back.rows, rows);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# rng: chacha8, seed: 5\n"));
        assert!(text.lines().any(|l| l == RESULTS_COLUMNS.join(",")));
    }

    #[test]
    fn empty_set_is_header_only() {
        let (e, _) = sample();
        let mut buf = Vec::new();
        write_results(&mut buf, &e, &[]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
        assert!(read_results(buf.as_slice()).unwrap().rows.is_empty());
    }

    #[test]
    fn malformed_files_are_schema_errors() {
        let (e, rows) = sample();
        let mut buf = Vec::new();
        write_results(&mut buf, &e, &rows[..3]).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let no_header: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_results(no_header.as_bytes()), Err(Error::Schema(_))));

        let bad_col = text.replace("duplicates_delivered", "dups");
        assert!(matches!(read_results(bad_col.as_bytes()), Err(Error::Schema(_))));

        let bad_name = text.replace("\na,", "\nzz,").replace("\nb,", "\nzz,");
        assert!(matches!(read_results(bad_name.as_bytes()), Err(Error::Schema(_))));

        let bad_tick = text.replacen(",0.0,", ",0.05,", 1);
        assert!(matches!(read_results(bad_tick.as_bytes()), Err(Error::Schema(_))));
    }
}
