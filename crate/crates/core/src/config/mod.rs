//! The ESB parameter space, validation, presets and the experiment file.

mod file;

use std::fmt;
use std::hash::Hasher;
use std::ops::Deref;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::airtime::{self, LayoutConstants};
use crate::time::Ticks;

pub use file::{parse_experiment_file, render_pipeline, render_targets, BleSettings, Document, Experiment, FileError};

/// Largest payload accepted by the ESB stack.
pub const MAX_PAYLOAD_BYTES: u16 = 252;
/// ESB supports up to 15 automatic retransmissions.
pub const MAX_RETRANSMITS: u8 = 15;
pub const MIN_TX_POWER_DBM: i32 = -70;
pub const MAX_TX_POWER_DBM: i32 = 10;
/// Spacing between copies used throughout the measurements.
pub const DEFAULT_RETRANSMIT_DELAY_US: f64 = 435.0;

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $key:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn key(self) -> &'static str {
                match self {
                    $($name::$variant => $key),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.key())
            }
        }

        impl FromStr for $name {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($key => Ok($name::$variant),)+
                    _ => Err(format!(
                        "expected one of {}",
                        [$($key),+].join("|")
                    )),
                }
            }
        }
    };
}

keyword_enum!(
    CrcMode { Crc16 => "16", Crc8 => "8", CrcOff => "off" }
);
keyword_enum!(
    ProtocolMode { DynamicLength => "dynamic", StaticLength => "static" }
);
keyword_enum!(
    /// `Mbps2Ble` is the 2 Mbit/s mode with BLE radio parameters.
    BitrateMode { Mbps2Ble => "2M-ble", Mbps2 => "2M", Mbps1 => "1M" }
);
keyword_enum!(
    /// How payloads are dequeued from the TX FIFO.
    TxMode { Automatic => "auto", Manual => "manual", ManualStart => "manual-start" }
);
keyword_enum!(
    /// `Standard` builds the payload on the app core and ships it over IPC;
    /// `Optimized` keeps a pre-built payload on the network core.
    PayloadMode { Standard => "standard", Optimized => "optimized" }
);
keyword_enum!(
    /// Reference points of the retransmission delay.
    SpacingReference { StartToStart => "start", EndToStart => "end" }
);

impl CrcMode {
    pub fn bits(self) -> u32 {
        match self {
            CrcMode::Crc16 => 16,
            CrcMode::Crc8 => 8,
            CrcMode::CrcOff => 0,
        }
    }

    pub fn enabled(self) -> bool {
        self != CrcMode::CrcOff
    }
}

impl BitrateMode {
    pub fn bits_per_us(self) -> u32 {
        match self {
            BitrateMode::Mbps2Ble | BitrateMode::Mbps2 => 2,
            BitrateMode::Mbps1 => 1,
        }
    }
}

/// One point in the ESB protocol parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsbConfig {
    pub crc_mode: CrcMode,
    pub protocol_mode: ProtocolMode,
    pub bitrate_mode: BitrateMode,
    pub tx_mode: TxMode,
    pub tx_power_dbm: i32,
    pub payload_mode: PayloadMode,
    pub payload_len_bytes: u16,
    /// Number of extra copies; `retransmit_count + 1` copies go on air.
    pub retransmit_count: u8,
    pub retransmit_delay_us: f64,
    pub retransmit_spacing: SpacingReference,
}

/// The optimal-latency configuration: CRC off, dynamic length, 2 Mbit/s
/// (BLE), manual TX, 0 dBm, optimized one-byte payload, two retransmissions
/// 435 µs apart.
pub fn olcfg_preset() -> EsbConfig {
    EsbConfig {
        crc_mode: CrcMode::CrcOff,
        protocol_mode: ProtocolMode::DynamicLength,
        bitrate_mode: BitrateMode::Mbps2Ble,
        tx_mode: TxMode::Manual,
        tx_power_dbm: 0,
        payload_mode: PayloadMode::Optimized,
        payload_len_bytes: 1,
        retransmit_count: 2,
        retransmit_delay_us: DEFAULT_RETRANSMIT_DELAY_US,
        retransmit_spacing: SpacingReference::StartToStart,
    }
}

impl Default for EsbConfig {
    fn default() -> Self {
        olcfg_preset()
    }
}

impl EsbConfig {
    pub fn copies(&self) -> u32 {
        u32::from(self.retransmit_count) + 1
    }

    /// Stable 64-bit FNV-1a hash of the canonical key/value rendering.
    pub fn config_hash(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write(file::render_config_body(self).as_bytes());
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{field} out of range: {value} (allowed {allowed})")]
    Range {
        field: &'static str,
        value: String,
        allowed: &'static str,
    },
    #[error("retransmit_delay_us = {delay_us} is shorter than the {on_air_us} µs frame on-air time")]
    Schedule { delay_us: f64, on_air_us: f64 },
}

/// A configuration that satisfied every invariant. Carries its on-air time
/// for the layout it was validated against.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedConfig {
    config: EsbConfig,
    on_air: Ticks,
}

impl ValidatedConfig {
    pub fn on_air(&self) -> Ticks {
        self.on_air
    }

    pub fn config(&self) -> &EsbConfig {
        &self.config
    }

    pub fn into_inner(self) -> EsbConfig {
        self.config
    }

    /// Copy-to-copy start spacing, quantized to the clock.
    pub fn copy_spacing(&self) -> Ticks {
        let delay = Ticks::from_us(self.config.retransmit_delay_us);
        match self.config.retransmit_spacing {
            SpacingReference::StartToStart => delay,
            SpacingReference::EndToStart => delay + self.on_air,
        }
    }
}

impl Deref for ValidatedConfig {
    type Target = EsbConfig;
    fn deref(&self) -> &EsbConfig {
        &self.config
    }
}

/// Validates against the default frame layout.
pub fn validate(config: EsbConfig) -> Result<ValidatedConfig, ConfigError> {
    validate_with(config, &LayoutConstants::default())
}

pub fn validate_with(config: EsbConfig, layout: &LayoutConstants) -> Result<ValidatedConfig, ConfigError> {
    if !(MIN_TX_POWER_DBM..=MAX_TX_POWER_DBM).contains(&config.tx_power_dbm) {
        return Err(ConfigError::Range {
            field: "tx_power_dbm",
            value: config.tx_power_dbm.to_string(),
            allowed: "-70..=10",
        });
    }
    if !(1..=MAX_PAYLOAD_BYTES).contains(&config.payload_len_bytes) {
        return Err(ConfigError::Range {
            field: "payload_len_bytes",
            value: config.payload_len_bytes.to_string(),
            allowed: "1..=252",
        });
    }
    if config.retransmit_count > MAX_RETRANSMITS {
        return Err(ConfigError::Range {
            field: "retransmit_count",
            value: config.retransmit_count.to_string(),
            allowed: "0..=15",
        });
    }
    if !config.retransmit_delay_us.is_finite() || config.retransmit_delay_us < 0.0 {
        return Err(ConfigError::Range {
            field: "retransmit_delay_us",
            value: config.retransmit_delay_us.to_string(),
            allowed: ">= 0",
        });
    }
    let on_air = airtime::on_air_ticks_with(&config, layout);
    if config.retransmit_spacing == SpacingReference::StartToStart
        && Ticks::from_us(config.retransmit_delay_us) < on_air
    {
        return Err(ConfigError::Schedule {
            delay_us: config.retransmit_delay_us,
            on_air_us: on_air.as_us(),
        });
    }
    Ok(ValidatedConfig { config, on_air })
}

/// Per-copy channel behavior. Loss and corruption are drawn per copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub p_loss: f64,
    /// Probability that a copy which survived the channel arrives corrupted.
    pub p_corrupt: f64,
    /// When false, one loss draw per attempt applies to every copy.
    pub independent: bool,
    /// With CRC off, probability that a duplicate copy slips past the
    /// receiver's deduplication.
    pub dup_escape: f64,
}

/// Per-copy loss that reproduces the mean-median gap of the OLCfg
/// measurements through `p · δ`.
pub const DEFAULT_P_LOSS: f64 = 0.043;
/// One duplicate escaped out of 735 received packets with CRC off.
pub const DEFAULT_DUP_ESCAPE: f64 = 1.0 / 735.0;

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            p_loss: DEFAULT_P_LOSS,
            p_corrupt: 0.0,
            independent: true,
            dup_escape: DEFAULT_DUP_ESCAPE,
        }
    }
}

impl ChannelModel {
    pub fn lossless() -> Self {
        ChannelModel {
            p_loss: 0.0,
            ..ChannelModel::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, p) in [
            ("p_loss", self.p_loss),
            ("p_corrupt", self.p_corrupt),
            ("dup_escape", self.dup_escape),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Range {
                    field,
                    value: p.to_string(),
                    allowed: "0..=1",
                });
            }
        }
        Ok(())
    }
}

/// BLE's minimum connection interval.
pub const MIN_CONNECTION_INTERVAL_US: f64 = 7500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleConfig {
    pub connection_interval_us: f64,
    pub transfer_us: f64,
}

impl BleConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.connection_interval_us >= MIN_CONNECTION_INTERVAL_US) {
            return Err(ConfigError::Range {
                field: "connection_interval_us",
                value: self.connection_interval_us.to_string(),
                allowed: ">= 7500",
            });
        }
        if !(self.transfer_us >= 0.0) {
            return Err(ConfigError::Range {
                field: "transfer_us",
                value: self.transfer_us.to_string(),
                allowed: ">= 0",
            });
        }
        Ok(())
    }
}

#[derive(Default)]
struct Fnv1a(u64);

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        if self.0 == 0 {
            self.0 = 0xcbf2_9ce4_8422_2325;
        }
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn olcfg_matches_selected_parameters() {
        let c = olcfg_preset();
        assert_eq!(c.crc_mode, CrcMode::CrcOff);
        assert_eq!(c.protocol_mode, ProtocolMode::DynamicLength);
        assert_eq!(c.bitrate_mode, BitrateMode::Mbps2Ble);
        assert_eq!(c.tx_mode, TxMode::Manual);
        assert_eq!(c.tx_power_dbm, 0);
        assert_eq!(c.payload_mode, PayloadMode::Optimized);
        assert_eq!(c.payload_len_bytes, 1);
        assert_eq!(c.retransmit_count, 2);
        assert_eq!(c.retransmit_delay_us, 435.0);
        assert!(validate(c).is_ok());
    }

    #[test]
    fn power_boundary() {
        let mut c = olcfg_preset();
        c.tx_power_dbm = 10;
        assert!(validate(c.clone()).is_ok());
        c.tx_power_dbm = 11;
        match validate(c.clone()) {
            Err(ConfigError::Range { field, .. }) => assert_eq!(field, "tx_power_dbm"),
            other => panic!("unexpected {other:?}"),
        }
        c.tx_power_dbm = -71;
        assert!(validate(c).is_err());
    }

    #[test]
    fn payload_bounds() {
        let mut c = olcfg_preset();
        c.payload_len_bytes = 0;
        assert!(matches!(validate(c.clone()), Err(ConfigError::Range { field: "payload_len_bytes", .. })));
        c.payload_len_bytes = 252;
        // a full frame outlasts the default spacing
        assert!(matches!(validate(c.clone()), Err(ConfigError::Schedule { .. })));
        c.retransmit_delay_us = 2000.0;
        assert!(validate(c.clone()).is_ok());
        c.payload_len_bytes = 253;
        assert!(validate(c).is_err());
    }

    #[test]
    fn delay_shorter_than_frame_is_a_schedule_error() {
        // 8 + 40 + 9 + 64 + 8 = 129 bits at 1 bit/µs
        let c = EsbConfig {
            crc_mode: CrcMode::Crc8,
            bitrate_mode: BitrateMode::Mbps1,
            payload_len_bytes: 8,
            retransmit_delay_us: 10.0,
            ..olcfg_preset()
        };
        match validate(c.clone()) {
            Err(ConfigError::Schedule { on_air_us, .. }) => assert_eq!(on_air_us, 129.0),
            other => panic!("unexpected {other:?}"),
        }
        let end_ref = EsbConfig {
            retransmit_spacing: SpacingReference::EndToStart,
            ..c
        };
        assert!(validate(end_ref).is_ok());
    }

    #[test]
    fn keyword_round_trip() {
        for m in CrcMode::ALL {
            assert_eq!(m.key().parse::<CrcMode>().unwrap(), *m);
        }
        for m in BitrateMode::ALL {
            assert_eq!(m.to_string().parse::<BitrateMode>().unwrap(), *m);
        }
        assert!("32".parse::<CrcMode>().is_err());
    }

    #[test]
    fn end_to_start_spacing_adds_frame() {
        let c = EsbConfig {
            retransmit_spacing: SpacingReference::EndToStart,
            ..olcfg_preset()
        };
        let v = validate(c).unwrap();
        assert_eq!(v.copy_spacing(), Ticks(4350 + 365));
    }

    #[test]
    fn ble_interval_floor() {
        let ok = BleConfig { connection_interval_us: 7500.0, transfer_us: 0.0 };
        assert!(ok.validate().is_ok());
        let bad = BleConfig { connection_interval_us: 7499.9, ..ok };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn channel_probabilities_checked() {
        let c = ChannelModel { p_loss: 1.2, ..ChannelModel::default() };
        assert!(c.validate().is_err());
        assert!(ChannelModel::default().validate().is_ok());
    }

    #[test]
    fn hash_is_stable_and_discriminates() {
        let a = olcfg_preset();
        let b = EsbConfig { crc_mode: CrcMode::Crc16, ..olcfg_preset() };
        assert_eq!(a.config_hash(), olcfg_preset().config_hash());
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
