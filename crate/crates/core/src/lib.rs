//! Latency model for low-latency command broadcasting over Enhanced
//! ShockBurst (ESB) between body-worn nodes.
//!
//! The crate is organized bottom-up:
//!
//! - [`time`]: integer clock ticks at 0.1 µs resolution.
//! - [`config`]: the ESB parameter space, presets and the experiment file format.
//! - [`airtime`]: frame bit counts and on-air durations.
//! - [`engine`]: a deterministic discrete-event core and seeded random streams.
//! - [`link`]: TX/RX node state machines that produce probe timestamps D0..D7.
//! - [`ble`]: the BLE connection-interval baseline.
//! - [`analytics`]: closed-form retransmission math and pipeline calibration.
//! - [`sweep`]: the measurement protocol, statistics, mode detection and result files.

pub mod airtime;
pub mod analytics;
pub mod ble;
pub mod config;
pub mod engine;
mod error;
pub mod link;
pub mod sweep;
pub mod time;

pub use error::{Error, ErrorKind};
