//! Deterministic discrete-event core.
//!
//! Events pop in `(time, seq)` order where `seq` is a per-engine insertion
//! counter, so events sharing a timestamp run FIFO. Randomness comes from
//! [`RngStream`]s addressed by `(seed, round, config slot, attempt, purpose)`,
//! which makes every draw independent of execution order and worker count.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Debug;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::time::Ticks;

/// Name recorded in result files next to the seed.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub time: Ticks,
    pub seq: u64,
    pub node: NodeId,
    pub kind: K,
}

struct Queued<K>(Event<K>);

impl<K> PartialEq for Queued<K> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.time, self.0.seq) == (other.0.time, other.0.seq)
    }
}

impl<K> Eq for Queued<K> {}

impl<K> PartialOrd for Queued<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; invert so the earliest (time, seq) is on top.
impl<K> Ord for Queued<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.time, other.0.seq).cmp(&(self.0.time, self.0.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot schedule at {requested} µs, clock is already at {clock} µs")]
pub struct TimeTravelError {
    pub requested: Ticks,
    pub clock: Ticks,
}

pub struct Engine<K> {
    clock: Ticks,
    next_seq: u64,
    queue: BinaryHeap<Queued<K>>,
    trace: Option<Vec<String>>,
}

impl<K> Default for Engine<K> {
    fn default() -> Self {
        Engine {
            clock: Ticks::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            trace: None,
        }
    }
}

impl<K: Debug> Engine<K> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one line per processed event, see [`Engine::trace`].
    pub fn with_trace() -> Self {
        Engine {
            trace: Some(Vec::new()),
            ..Self::default()
        }
    }

    pub fn clock(&self) -> Ticks {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, time: Ticks, node: NodeId, kind: K) -> Result<u64, TimeTravelError> {
        if time < self.clock {
            return Err(TimeTravelError {
                requested: time,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(Event { time, seq, node, kind }));
        Ok(seq)
    }

    /// Pops the next event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event<K>> {
        let Queued(ev) = self.queue.pop()?;
        self.clock = ev.time;
        if let Some(trace) = &mut self.trace {
            trace.push(format!("{} #{} n{} {:?}", ev.time, ev.seq, ev.node.0, ev.kind));
        }
        Some(ev)
    }

    /// Drains the queue, handing each event to `handler` which may schedule
    /// more. Returns the timestamp of the last processed event (zero if none).
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Ticks
    where
        F: FnMut(&mut Self, Event<K>),
    {
        let mut last = Ticks::ZERO;
        while let Some(ev) = self.pop() {
            last = ev.time;
            handler(self, ev);
        }
        last
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }
}

/// What a random stream is used for. Each purpose gets its own stream so
/// adding draws for one purpose never shifts another.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Loss = 1,
    Corruption = 2,
    Jitter = 3,
    Dedup = 4,
    Shuffle = 5,
    Ble = 6,
    Bootstrap = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub round: u32,
    pub config_slot: u16,
    /// Must fit in 40 bits.
    pub attempt: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub const MAX_ATTEMPT: u64 = (1 << 40) - 1;

    pub fn new(round: u32, config_slot: u16, attempt: u64, purpose: Purpose) -> Self {
        assert!(attempt <= Self::MAX_ATTEMPT, "attempt index {attempt} exceeds 40 bits");
        StreamId {
            round,
            config_slot,
            attempt,
            purpose,
        }
    }

    fn chacha_stream(&self) -> u64 {
        (u64::from(self.config_slot) << 48) | (self.attempt << 8) | self.purpose as u64
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A reproducible random stream. The ChaCha key is derived from
/// `(seed, round)` and the ChaCha stream number packs the remaining ids, so
/// distinct ids never share a keystream.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key[..24].chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        key[24..].copy_from_slice(&u64::from(id.round).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(id.chacha_stream());
        RngStream { rng }
    }

    /// Uniform over `[lo, hi)`; returns `lo` when the range is empty.
    pub fn draw_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        if hi <= lo {
            return lo;
        }
        let u: f64 = self.rng.random();
        let v = lo + (hi - lo) * u;
        // Guard against rounding up to `hi`.
        if v >= hi { lo } else { v }
    }

    pub fn draw_bernoulli(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.rng.random::<f64>() < p
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(attempt: u64, purpose: Purpose) -> StreamId {
        StreamId::new(0, 0, attempt, purpose)
    }

    #[test]
    fn empty_queue_returns_zero() {
        let mut e: Engine<()> = Engine::new();
        assert_eq!(e.run_until_idle(|_, _| {}), Ticks::ZERO);
    }

    #[test]
    fn equal_timestamps_run_in_insertion_order() {
        let mut e = Engine::new();
        e.schedule(Ticks(5), NodeId(0), "b").unwrap();
        e.schedule(Ticks(3), NodeId(0), "a").unwrap();
        e.schedule(Ticks(5), NodeId(1), "c").unwrap();
        let mut seen = Vec::new();
        let last = e.run_until_idle(|_, ev| seen.push(ev.kind));
        assert_eq!(seen, ["a", "b", "c"]);
        assert_eq!(last, Ticks(5));
    }

    #[test]
    fn schedule_at_clock_runs_next_in_its_class() {
        let mut e = Engine::new();
        e.schedule(Ticks(10), NodeId(0), 1).unwrap();
        e.schedule(Ticks(10), NodeId(0), 2).unwrap();
        let mut seen = Vec::new();
        e.run_until_idle(|eng, ev| {
            if ev.kind == 1 {
                eng.schedule(eng.clock(), NodeId(0), 3).unwrap();
            }
            seen.push(ev.kind);
        });
        assert_eq!(seen, [1, 2, 3]);
    }

    #[test]
    fn time_travel_is_rejected() {
        let mut e = Engine::new();
        e.schedule(Ticks(10), NodeId(0), ()).unwrap();
        e.pop();
        let err = e.schedule(Ticks(9), NodeId(0), ()).unwrap_err();
        assert_eq!(err.clock, Ticks(10));
        assert!(e.schedule(Ticks(10), NodeId(0), ()).is_ok());
    }

    #[test]
    fn trace_lists_events() {
        let mut e = Engine::with_trace();
        e.schedule(Ticks(15), NodeId(2), "x").unwrap();
        e.run_until_idle(|_, _| {});
        assert_eq!(e.trace().unwrap(), ["1.5 #0 n2 \"x\""]);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draws = |seed, sid| {
            let mut s = RngStream::new(seed, sid);
            (0..8).map(|_| s.draw_uniform(0.0, 1.0)).collect::<Vec<_>>()
        };
        assert_eq!(draws(7, id(3, Purpose::Loss)), draws(7, id(3, Purpose::Loss)));
        assert_ne!(draws(7, id(3, Purpose::Loss)), draws(7, id(3, Purpose::Jitter)));
        assert_ne!(draws(7, id(3, Purpose::Loss)), draws(7, id(4, Purpose::Loss)));
        assert_ne!(draws(7, id(3, Purpose::Loss)), draws(8, id(3, Purpose::Loss)));
        assert_ne!(
            draws(7, StreamId::new(1, 0, 3, Purpose::Loss)),
            draws(7, StreamId::new(2, 0, 3, Purpose::Loss))
        );
    }

    #[test]
    fn bernoulli_degenerate_cases() {
        let mut s = RngStream::new(1, id(0, Purpose::Loss));
        assert!((0..1000).all(|_| !s.draw_bernoulli(0.0)));
        assert!((0..1000).all(|_| s.draw_bernoulli(1.0)));
    }

    #[test]
    fn bernoulli_mean_within_three_sigma() {
        let p = 0.266;
        let n = 100_000;
        let mut s = RngStream::new(2024, id(0, Purpose::Loss));
        let hits = (0..n).filter(|_| s.draw_bernoulli(p)).count();
        let mean = hits as f64 / n as f64;
        let three_sigma = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((mean - p).abs() <= three_sigma.max(0.01), "mean {mean}");
        assert!((mean - p).abs() <= 0.01);
    }

    #[test]
    fn uniform_stays_in_half_open_range() {
        let mut s = RngStream::new(9, id(0, Purpose::Ble));
        for _ in 0..10_000 {
            let v = s.draw_uniform(2.0, 3.0);
            assert!((2.0..3.0).contains(&v));
        }
        assert_eq!(s.draw_uniform(4.0, 4.0), 4.0);
    }
}
