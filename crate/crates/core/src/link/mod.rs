//! ESB link layer: TX and RX node state machines that reproduce the eight
//! GPIO probe points of a broadcast command.
//!
//! ```text
//!  TX app ──IPC──> TX net ──ESB──> radio ~~air~~> RX net ──ESB──> RX net ──IPC──> RX app
//!   D0              D1      D2      D3             D4             D5      D6      D7
//! ```
//!
//! Acknowledgements are disabled, so every copy (`retransmit_count + 1` of
//! them) is sent unconditionally, one copy spacing apart. The receiver
//! delivers the first acceptable copy and runs every later one through the
//! deduplicator.

mod pipeline;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ChannelModel, ConfigError, CrcMode, PayloadMode, ValidatedConfig};
use crate::engine::{Engine, Event, NodeId, Purpose, RngStream, StreamId};
use crate::time::Ticks;

pub use pipeline::{
    JitterFamily, JitterModel, ModifierTable, Param, PipelineError, PipelineModel, Stage,
    DEFAULT_STAGE_SIGMA_US, MIN_STAGE_US,
};

/// Default spacing between consecutive commands of a series.
pub const DEFAULT_ATTEMPT_SPACING_US: f64 = 6000.0;
/// ESB TX FIFO depth.
pub const TX_FIFO_CAPACITY: usize = 8;

const TX_NODE: NodeId = NodeId(0);
const RX_NODE: NodeId = NodeId(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Probe {
    D0,
    D1,
    D2,
    D3,
    D4,
    D5,
    D6,
    D7,
}

impl Probe {
    pub const ALL: [Probe; 8] = [
        Probe::D0,
        Probe::D1,
        Probe::D2,
        Probe::D3,
        Probe::D4,
        Probe::D5,
        Probe::D6,
        Probe::D7,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Probe> {
        Probe::ALL.get(i).copied()
    }
}

/// A pair of probes whose difference is a latency, e.g. `d0d7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProbeInterval {
    pub from: Probe,
    pub to: Probe,
}

impl ProbeInterval {
    pub const END_TO_END: ProbeInterval = ProbeInterval { from: Probe::D0, to: Probe::D7 };
    pub const NET_TO_NET: ProbeInterval = ProbeInterval { from: Probe::D2, to: Probe::D5 };
    pub const AIR: ProbeInterval = ProbeInterval { from: Probe::D3, to: Probe::D4 };
    pub const STANDARD: [ProbeInterval; 3] = [Self::END_TO_END, Self::NET_TO_NET, Self::AIR];

    pub fn new(from: Probe, to: Probe) -> Option<Self> {
        (from < to).then_some(ProbeInterval { from, to })
    }

    pub fn key(&self) -> String {
        format!("d{}d{}", self.from.index(), self.to.index())
    }

    pub fn label(&self) -> String {
        format!("D{}-D{}", self.from.index(), self.to.index())
    }
}

impl fmt::Display for ProbeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

impl FromStr for ProbeInterval {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("interval {s:?} must look like d0d7 with increasing probes");
        let b = s.to_ascii_lowercase().into_bytes();
        if b.len() != 4 || b[0] != b'd' || b[2] != b'd' {
            return Err(bad());
        }
        let probe = |c: u8| {
            c.is_ascii_digit()
                .then(|| Probe::from_index(usize::from(c - b'0')))
                .flatten()
        };
        let (from, to) = (probe(b[1]).ok_or_else(bad)?, probe(b[3]).ok_or_else(bad)?);
        ProbeInterval::new(from, to).ok_or_else(bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Delivered,
    DeliveredCorrupted,
    Lost,
}

impl Outcome {
    pub fn key(self) -> &'static str {
        match self {
            Outcome::Delivered => "delivered",
            Outcome::DeliveredCorrupted => "delivered_corrupted",
            Outcome::Lost => "lost",
        }
    }

    pub fn is_delivered(self) -> bool {
        self != Outcome::Lost
    }
}

impl FromStr for Outcome {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delivered" => Ok(Outcome::Delivered),
            "delivered_corrupted" => Ok(Outcome::DeliveredCorrupted),
            "lost" => Ok(Outcome::Lost),
            _ => Err(format!("unknown outcome {s:?}")),
        }
    }
}

/// One broadcast attempt as seen by the probes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmissionRecord {
    pub attempt_id: u64,
    pub config_hash: u64,
    /// Absolute times within the series; `None` where the probe never fired.
    pub probes: [Option<Ticks>; 8],
    pub delivered_copy: Option<u8>,
    pub outcome: Outcome,
    pub duplicates_suppressed: u32,
    pub duplicates_delivered: u32,
}

impl TransmissionRecord {
    pub fn probe(&self, p: Probe) -> Option<Ticks> {
        self.probes[p.index()]
    }

    pub fn interval(&self, iv: ProbeInterval) -> Option<Ticks> {
        Some(self.probe(iv.to)? - self.probe(iv.from)?)
    }

    /// Strictly increasing probes, and delivery, outcome and D4..D7 agree.
    pub fn is_consistent(&self) -> bool {
        let present: Vec<Ticks> = self.probes.iter().flatten().copied().collect();
        let increasing = present.windows(2).all(|w| w[0] < w[1]);
        let rx_missing = self.probes[4..].iter().all(Option::is_none);
        let rx_present = self.probes[4..].iter().all(Option::is_some);
        let lost = self.outcome == Outcome::Lost;
        increasing
            && self.probes[..4].iter().all(Option::is_some)
            && (self.delivered_copy.is_none() == lost)
            && if lost { rx_missing } else { rx_present }
    }
}

/// Start times of every copy of one frame.
pub fn schedule_copies(config: &ValidatedConfig, t_d3: Ticks) -> Vec<Ticks> {
    let spacing = config.copy_spacing();
    (0..i64::from(config.copies()))
        .map(|k| t_d3 + Ticks(k * spacing.raw()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Payload {
    pub attempt: u64,
    pub len: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("TX FIFO full ({0} entries)")]
pub struct FifoFull(pub usize);

#[derive(Debug, Clone)]
pub struct TxFifo {
    items: VecDeque<Payload>,
    capacity: usize,
}

impl TxFifo {
    pub fn new(capacity: usize) -> Self {
        TxFifo {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, p: Payload) -> Result<(), FifoFull> {
        if self.items.len() >= self.capacity {
            return Err(FifoFull(self.capacity));
        }
        self.items.push_back(p);
        Ok(())
    }

    pub fn pop(&mut self) -> Option<Payload> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivedCopy {
    pub copy: u8,
    pub corrupted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// First acceptable copy: surfaces to the application.
    Deliver,
    /// Recognized duplicate.
    Suppress,
    /// Duplicate that slipped through (CRC off only).
    Escape,
    /// Failed the CRC check.
    Discard,
}

/// Receiver-side duplicate filter for the copies of one attempt.
#[derive(Debug, Clone)]
pub struct Deduplicator {
    crc: CrcMode,
    escape_p: f64,
    kept: Option<ArrivedCopy>,
    suppressed: u32,
    escaped: u32,
}

impl Deduplicator {
    pub fn new(crc: CrcMode, escape_p: f64) -> Self {
        Deduplicator {
            crc,
            escape_p,
            kept: None,
            suppressed: 0,
            escaped: 0,
        }
    }

    pub fn offer(&mut self, copy: ArrivedCopy, rng: &mut RngStream) -> Verdict {
        if self.crc.enabled() && copy.corrupted {
            return Verdict::Discard;
        }
        if self.kept.is_none() {
            self.kept = Some(copy);
            return Verdict::Deliver;
        }
        // With CRC on the PID/CRC pair identifies repeats reliably.
        if !self.crc.enabled() && rng.draw_bernoulli(self.escape_p) {
            self.escaped += 1;
            Verdict::Escape
        } else {
            self.suppressed += 1;
            Verdict::Suppress
        }
    }

    pub fn finish(self) -> DedupOutcome {
        DedupOutcome {
            kept: self.kept,
            suppressed: self.suppressed,
            escaped: self.escaped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DedupOutcome {
    pub kept: Option<ArrivedCopy>,
    pub suppressed: u32,
    pub escaped: u32,
}

/// Runs the copies of one attempt, in arrival order, through a fresh
/// [`Deduplicator`].
pub fn dedup(copies: &[ArrivedCopy], crc: CrcMode, escape_p: f64, rng: &mut RngStream) -> DedupOutcome {
    let mut d = Deduplicator::new(crc, escape_p);
    for c in copies {
        d.offer(*c, rng);
    }
    d.finish()
}

/// The random streams owned by one attempt.
#[derive(Debug, Clone)]
pub struct AttemptStreams {
    pub attempt: u64,
    loss: RngStream,
    corruption: RngStream,
    jitter: RngStream,
    dedup: RngStream,
}

impl AttemptStreams {
    pub fn new(seed: u64, round: u32, config_slot: u16, attempt: u64) -> Self {
        let s = |purpose| RngStream::new(seed, StreamId::new(round, config_slot, attempt, purpose));
        AttemptStreams {
            attempt,
            loss: s(Purpose::Loss),
            corruption: s(Purpose::Corruption),
            jitter: s(Purpose::Jitter),
            dedup: s(Purpose::Dedup),
        }
    }
}

/// Addresses the random streams of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeriesId {
    pub seed: u64,
    pub round: u32,
    pub config_slot: u16,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinkError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("attempt spacing {spacing_us} µs is shorter than the worst-case attempt span of {span_us:.1} µs")]
    Overlap { spacing_us: f64, span_us: f64 },
    #[error("series needs at least one attempt")]
    EmptySeries,
}

/// Everything one attempt needs besides randomness.
#[derive(Debug, Clone, Copy)]
pub struct Link<'a> {
    pub config: &'a ValidatedConfig,
    pub channel: &'a ChannelModel,
    pub pipeline: &'a PipelineModel,
}

#[derive(Debug, Clone)]
enum Step {
    Command,
    IpcReceived,
    PayloadQueued,
    RadioStart,
    CopyStart { copy: u8 },
    CopyArrived { copy: u8, corrupted: bool, rel_us: f64 },
    RxHandled,
    RxIpcStart,
    RxAppNotified,
}

#[derive(Debug)]
struct Msg {
    attempt: usize,
    step: Step,
}

struct AttemptState {
    origin: Ticks,
    streams: AttemptStreams,
    probes: [Option<Ticks>; 8],
    /// Exact time since D0 along the TX chain.
    tx_rel_us: f64,
    /// Exact time since D0 along the RX chain, excluding the copy offset.
    rx_rel_us: f64,
    copy_offset: Ticks,
    burst_lost: Option<bool>,
    dedup: Deduplicator,
}

impl AttemptState {
    fn at(&self, rel_us: f64) -> Ticks {
        self.origin + Ticks::from_us(rel_us)
    }

    fn rx_at(&self, rel_us: f64) -> Ticks {
        self.origin + self.copy_offset + Ticks::from_us(rel_us)
    }
}

/// Output of a simulated series.
#[derive(Debug, Clone)]
pub struct SeriesOutput {
    pub records: Vec<TransmissionRecord>,
    pub final_clock: Ticks,
    pub trace: Option<Vec<String>>,
}

struct Simulation<'a> {
    link: Link<'a>,
    fifo: TxFifo,
    attempts: Vec<AttemptState>,
}

impl Simulation<'_> {
    fn stage(&mut self, i: usize, stage: Stage) -> f64 {
        let cfg = self.link.config.config();
        self.link.pipeline.draw_stage(cfg, stage, &mut self.attempts[i].streams.jitter)
    }

    fn handle(&mut self, engine: &mut Engine<Msg>, ev: Event<Msg>) {
        let now = ev.time;
        let i = ev.kind.attempt;
        let cfg = self.link.config;
        let schedule = |engine: &mut Engine<Msg>, at: Ticks, node, step| {
            engine
                .schedule(at, node, Msg { attempt: i, step })
                .expect("stage delays are at least one tick");
        };
        match ev.kind.step {
            Step::Command => {
                let st = &mut self.attempts[i];
                st.probes[0] = Some(now);
                st.tx_rel_us = 0.0;
                if cfg.payload_mode == PayloadMode::Optimized {
                    // Pre-built on the network core, nothing to format.
                    self.push_payload(i);
                }
                let d = self.stage(i, Stage::TxAppToIpc);
                let st = &mut self.attempts[i];
                st.tx_rel_us += d;
                schedule(engine, st.at(st.tx_rel_us), TX_NODE, Step::IpcReceived);
            }
            Step::IpcReceived => {
                self.attempts[i].probes[1] = Some(now);
                let d = self.stage(i, Stage::TxIpcToEsb);
                let st = &mut self.attempts[i];
                st.tx_rel_us += d;
                schedule(engine, st.at(st.tx_rel_us), TX_NODE, Step::PayloadQueued);
            }
            Step::PayloadQueued => {
                self.attempts[i].probes[2] = Some(now);
                if cfg.payload_mode == PayloadMode::Standard {
                    self.push_payload(i);
                }
                let d = self.stage(i, Stage::TxEsbStack);
                let st = &mut self.attempts[i];
                st.tx_rel_us += d;
                schedule(engine, st.at(st.tx_rel_us), TX_NODE, Step::RadioStart);
            }
            Step::RadioStart => {
                self.attempts[i].probes[3] = Some(now);
                let popped = self.fifo.pop();
                debug_assert_eq!(popped.map(|p| p.attempt), Some(self.attempts[i].streams.attempt));
                for (k, start) in schedule_copies(cfg, now).into_iter().enumerate() {
                    schedule(engine, start, TX_NODE, Step::CopyStart { copy: k as u8 });
                }
            }
            Step::CopyStart { copy } => {
                let channel = self.link.channel;
                let st = &mut self.attempts[i];
                let lost = match (channel.independent, st.burst_lost) {
                    (false, Some(l)) => l,
                    _ => {
                        let l = st.streams.loss.draw_bernoulli(channel.p_loss);
                        st.burst_lost = Some(l);
                        l
                    }
                };
                if lost {
                    return;
                }
                let corrupted = st.streams.corruption.draw_bernoulli(channel.p_corrupt);
                let overhead = self.stage(i, Stage::RadioOverhead);
                let st = &self.attempts[i];
                let rel_us = st.tx_rel_us + cfg.on_air().as_us() + overhead;
                let offset = Ticks(i64::from(copy) * cfg.copy_spacing().raw());
                let at = st.origin + offset + Ticks::from_us(rel_us);
                schedule(engine, at, RX_NODE, Step::CopyArrived { copy, corrupted, rel_us });
            }
            Step::CopyArrived { copy, corrupted, rel_us } => {
                let st = &mut self.attempts[i];
                let verdict = st.dedup.offer(ArrivedCopy { copy, corrupted }, &mut st.streams.dedup);
                if verdict != Verdict::Deliver {
                    return;
                }
                st.probes[4] = Some(now);
                st.copy_offset = Ticks(i64::from(copy) * cfg.copy_spacing().raw());
                st.rx_rel_us = rel_us;
                let d = self.stage(i, Stage::RxEsbStack);
                let st = &mut self.attempts[i];
                st.rx_rel_us += d;
                schedule(engine, st.rx_at(st.rx_rel_us), RX_NODE, Step::RxHandled);
            }
            Step::RxHandled => {
                self.attempts[i].probes[5] = Some(now);
                let d = self.stage(i, Stage::RxToIpc);
                let st = &mut self.attempts[i];
                st.rx_rel_us += d;
                schedule(engine, st.rx_at(st.rx_rel_us), RX_NODE, Step::RxIpcStart);
            }
            Step::RxIpcStart => {
                self.attempts[i].probes[6] = Some(now);
                let d = self.stage(i, Stage::RxIpcToApp);
                let st = &mut self.attempts[i];
                st.rx_rel_us += d;
                schedule(engine, st.rx_at(st.rx_rel_us), RX_NODE, Step::RxAppNotified);
            }
            Step::RxAppNotified => {
                self.attempts[i].probes[7] = Some(now);
            }
        }
    }

    fn push_payload(&mut self, i: usize) {
        let payload = Payload {
            attempt: self.attempts[i].streams.attempt,
            len: self.link.config.payload_len_bytes,
        };
        // Attempts never overlap, so at most one payload is queued.
        self.fifo.push(payload).expect("one payload in flight");
    }
}

impl<'a> Link<'a> {
    pub fn new(config: &'a ValidatedConfig, channel: &'a ChannelModel, pipeline: &'a PipelineModel) -> Self {
        Link { config, channel, pipeline }
    }

    fn check(&self) -> Result<(), LinkError> {
        self.channel.validate()?;
        self.pipeline.validate()?;
        Ok(())
    }

    /// Upper bound on D0→D7 of one attempt including every copy; jitter is
    /// budgeted at six sigma per stage.
    pub fn worst_case_span_us(&self) -> f64 {
        let cfg = self.config.config();
        let stages: f64 = Stage::ALL
            .iter()
            .map(|&s| {
                self.pipeline.effective_base(cfg, s).max(MIN_STAGE_US)
                    + 6.0 * self.pipeline.jitter.sigma_us[s.index()]
            })
            .sum();
        let retx = f64::from(self.config.retransmit_count) * self.config.copy_spacing().as_us();
        stages + retx + self.config.on_air().as_us()
    }

    /// Simulates the given attempts (origin time and streams each) on one
    /// engine.
    pub fn simulate(&self, attempts: Vec<(Ticks, AttemptStreams)>, trace: bool) -> SeriesOutput {
        let mut engine = if trace { Engine::with_trace() } else { Engine::new() };
        let crc = self.config.crc_mode;
        let mut sim = Simulation {
            link: *self,
            fifo: TxFifo::new(TX_FIFO_CAPACITY),
            attempts: attempts
                .into_iter()
                .map(|(origin, streams)| AttemptState {
                    origin,
                    streams,
                    probes: [None; 8],
                    tx_rel_us: 0.0,
                    rx_rel_us: 0.0,
                    copy_offset: Ticks::ZERO,
                    burst_lost: None,
                    dedup: Deduplicator::new(crc, self.channel.dup_escape),
                })
                .collect(),
        };
        for (i, st) in sim.attempts.iter().enumerate() {
            engine
                .schedule(st.origin, TX_NODE, Msg { attempt: i, step: Step::Command })
                .expect("engine starts at zero");
        }
        let final_clock = engine.run_until_idle(|eng, ev| sim.handle(eng, ev));
        let config_hash = self.config.config_hash();
        let records = sim
            .attempts
            .into_iter()
            .map(|st| {
                let out = st.dedup.finish();
                let outcome = match out.kept {
                    None => Outcome::Lost,
                    Some(c) if c.corrupted => Outcome::DeliveredCorrupted,
                    Some(_) => Outcome::Delivered,
                };
                TransmissionRecord {
                    attempt_id: st.streams.attempt,
                    config_hash,
                    probes: st.probes,
                    delivered_copy: out.kept.map(|c| c.copy),
                    outcome,
                    duplicates_suppressed: out.suppressed,
                    duplicates_delivered: out.escaped,
                }
            })
            .collect();
        SeriesOutput {
            records,
            final_clock,
            trace: engine.trace().map(<[String]>::to_vec),
        }
    }

    /// One attempt issued at time zero.
    pub fn transmit(&self, streams: AttemptStreams) -> TransmissionRecord {
        self.simulate(vec![(Ticks::ZERO, streams)], false)
            .records
            .pop()
            .expect("one attempt in, one record out")
    }

    /// `n` attempts spaced `spacing_us` apart, attempt `i` drawing from the
    /// streams `(series, i)`.
    pub fn run_series(&self, n: u64, series: SeriesId, spacing_us: f64, trace: bool) -> Result<SeriesOutput, LinkError> {
        self.check()?;
        if n == 0 {
            return Err(LinkError::EmptySeries);
        }
        let span_us = self.worst_case_span_us();
        if !(spacing_us > span_us) {
            return Err(LinkError::Overlap { spacing_us, span_us });
        }
        let spacing = Ticks::from_us(spacing_us);
        let attempts = (0..n)
            .map(|a| {
                let origin = Ticks(spacing.raw() * a as i64);
                (origin, AttemptStreams::new(series.seed, series.round, series.config_slot, a))
            })
            .collect();
        Ok(self.simulate(attempts, trace))
    }
}

/// Single attempt with the given streams.
pub fn transmit(
    config: &ValidatedConfig,
    channel: &ChannelModel,
    pipeline: &PipelineModel,
    streams: AttemptStreams,
) -> TransmissionRecord {
    Link::new(config, channel, pipeline).transmit(streams)
}

/// `n` attempts at the default 6 ms spacing.
pub fn run_attempt_series(
    config: &ValidatedConfig,
    channel: &ChannelModel,
    pipeline: &PipelineModel,
    n: u64,
    series: SeriesId,
) -> Result<Vec<TransmissionRecord>, LinkError> {
    Link::new(config, channel, pipeline)
        .run_series(n, series, DEFAULT_ATTEMPT_SPACING_US, false)
        .map(|o| o.records)
}
