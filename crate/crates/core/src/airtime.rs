//! Frame sizes and on-air durations.
//!
//! Frame layout constants (preamble, address, packet control field) are not
//! hard-coded: they come from a small key/value file so they can be corrected
//! without touching the arithmetic. The bundled defaults live in
//! `data/layout.cfg`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{BitrateMode, EsbConfig, ProtocolMode};
use crate::time::{Ticks, TICKS_PER_US};

const DEFAULT_LAYOUT: &str = include_str!("../data/layout.cfg");

/// Bit counts for the fixed parts of an ESB frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutConstants {
    pub preamble_1m: u32,
    pub preamble_2m: u32,
    pub preamble_2m_ble: u32,
    pub address: u32,
    pub pcf_dynamic: u32,
    pub pcf_static: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayoutError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown layout key {0:?}")]
    UnknownKey(String),
    #[error("missing layout key {0:?}")]
    MissingKey(&'static str),
}

pub(crate) const LAYOUT_KEYS: [&str; 6] = [
    "preamble_1m",
    "preamble_2m",
    "preamble_2m_ble",
    "address",
    "pcf_dynamic",
    "pcf_static",
];

impl LayoutConstants {
    /// Parses `key = value` lines; `#` starts a comment. Every key is required.
    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or_else(|| LayoutError::Parse {
                line,
                reason: "expected key = value".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let bits: u32 = v.parse().map_err(|_| LayoutError::Parse {
                line,
                reason: format!("{v:?} is not a bit count"),
            })?;
            if values.insert(k.to_string(), bits).is_some() {
                return Err(LayoutError::Parse {
                    line,
                    reason: format!("duplicate key {k:?}"),
                });
            }
        }
        Self::from_map(&values)
    }

    pub(crate) fn from_map(values: &BTreeMap<String, u32>) -> Result<Self, LayoutError> {
        if let Some(k) = values.keys().find(|k| !LAYOUT_KEYS.contains(&k.as_str())) {
            return Err(LayoutError::UnknownKey(k.clone()));
        }
        let get = |k: &'static str| values.get(k).copied().ok_or(LayoutError::MissingKey(k));
        Ok(LayoutConstants {
            preamble_1m: get("preamble_1m")?,
            preamble_2m: get("preamble_2m")?,
            preamble_2m_ble: get("preamble_2m_ble")?,
            address: get("address")?,
            pcf_dynamic: get("pcf_dynamic")?,
            pcf_static: get("pcf_static")?,
        })
    }

    pub(crate) fn entries(&self) -> [(&'static str, u32); 6] {
        [
            ("preamble_1m", self.preamble_1m),
            ("preamble_2m", self.preamble_2m),
            ("preamble_2m_ble", self.preamble_2m_ble),
            ("address", self.address),
            ("pcf_dynamic", self.pcf_dynamic),
            ("pcf_static", self.pcf_static),
        ]
    }

    pub fn render(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl Default for LayoutConstants {
    fn default() -> Self {
        LayoutConstants::parse(DEFAULT_LAYOUT).expect("bundled layout constants are valid")
    }
}

/// Resolved bit counts of one frame for a given configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FrameLayout {
    pub preamble_bits: u32,
    pub address_bits: u32,
    pub pcf_bits: u32,
    pub payload_bits: u32,
    pub crc_bits: u32,
}

impl FrameLayout {
    pub fn for_config(config: &EsbConfig, layout: &LayoutConstants) -> Self {
        FrameLayout {
            preamble_bits: match config.bitrate_mode {
                BitrateMode::Mbps1 => layout.preamble_1m,
                BitrateMode::Mbps2 => layout.preamble_2m,
                BitrateMode::Mbps2Ble => layout.preamble_2m_ble,
            },
            address_bits: layout.address,
            pcf_bits: match config.protocol_mode {
                ProtocolMode::DynamicLength => layout.pcf_dynamic,
                ProtocolMode::StaticLength => layout.pcf_static,
            },
            payload_bits: 8 * u32::from(config.payload_len_bytes),
            crc_bits: config.crc_mode.bits(),
        }
    }

    pub fn total_bits(&self) -> u32 {
        self.preamble_bits + self.address_bits + self.pcf_bits + self.payload_bits + self.crc_bits
    }
}

/// Total bits on air for one copy, using the default layout.
pub fn frame_bits(config: &EsbConfig) -> u32 {
    frame_bits_with(config, &LayoutConstants::default())
}

pub fn frame_bits_with(config: &EsbConfig, layout: &LayoutConstants) -> u32 {
    FrameLayout::for_config(config, layout).total_bits()
}

/// On-air duration in microseconds.
pub fn on_air_time_us(config: &EsbConfig) -> f64 {
    on_air_ticks_with(config, &LayoutConstants::default()).as_us()
}

/// On-air duration in clock ticks. Exact: at 1 or 2 bit/µs every frame ends
/// on a 0.5 µs boundary.
pub fn on_air_ticks_with(config: &EsbConfig, layout: &LayoutConstants) -> Ticks {
    let bits = i64::from(frame_bits_with(config, layout));
    let rate = i64::from(config.bitrate_mode.bits_per_us());
    debug_assert_eq!((bits * TICKS_PER_US) % rate, 0);
    Ticks(bits * TICKS_PER_US / rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{olcfg_preset, CrcMode, PayloadMode, TxMode};
    use proptest::prelude::*;

    #[test]
    fn default_layout_constants() {
        let l = LayoutConstants::default();
        assert_eq!((l.preamble_1m, l.preamble_2m, l.preamble_2m_ble), (8, 16, 16));
        assert_eq!(l.address, 40);
        assert_eq!((l.pcf_dynamic, l.pcf_static), (9, 0));
        assert_eq!(LayoutConstants::parse(&l.render()).unwrap(), l);
    }

    #[test]
    fn olcfg_frame() {
        let c = olcfg_preset();
        assert_eq!(frame_bits(&c), 16 + 40 + 9 + 8);
        assert_eq!(on_air_time_us(&c), 36.5);
        let crc16 = EsbConfig { crc_mode: CrcMode::Crc16, ..c };
        assert_eq!(frame_bits(&crc16), 89);
    }

    #[test]
    fn eight_byte_crc16_at_1m() {
        let c = EsbConfig {
            crc_mode: CrcMode::Crc16,
            bitrate_mode: BitrateMode::Mbps1,
            payload_len_bytes: 8,
            ..olcfg_preset()
        };
        assert_eq!(frame_bits(&c), 137);
        assert_eq!(on_air_time_us(&c), 137.0);
    }

    #[test]
    fn zero_payload_is_header_only() {
        let c = EsbConfig { payload_len_bytes: 0, ..olcfg_preset() };
        assert_eq!(frame_bits(&c), 16 + 40 + 9);
    }

    #[test]
    fn static_mode_drops_pcf() {
        let c = EsbConfig { protocol_mode: ProtocolMode::StaticLength, ..olcfg_preset() };
        assert_eq!(frame_bits(&c), 16 + 40 + 8);
    }

    #[test]
    fn layout_file_errors() {
        assert!(matches!(
            LayoutConstants::parse("address = 40\nbogus = 1"),
            Err(LayoutError::UnknownKey(_))
        ));
        assert!(matches!(LayoutConstants::parse("address = 40"), Err(LayoutError::MissingKey(_))));
        assert!(matches!(
            LayoutConstants::parse("address = forty"),
            Err(LayoutError::Parse { line: 1, .. })
        ));
    }

    fn any_config() -> impl Strategy<Value = EsbConfig> {
        (
            prop::sample::select(CrcMode::ALL),
            prop::sample::select(ProtocolMode::ALL),
            prop::sample::select(BitrateMode::ALL),
            prop::sample::select(TxMode::ALL),
            prop::sample::select(PayloadMode::ALL),
            1u16..=252,
        )
            .prop_map(|(crc, proto, rate, tx, payload, len)| EsbConfig {
                crc_mode: crc,
                protocol_mode: proto,
                bitrate_mode: rate,
                tx_mode: tx,
                payload_mode: payload,
                payload_len_bytes: len,
                ..olcfg_preset()
            })
    }

    proptest! {
        #[test]
        fn duration_times_rate_is_bit_count(c in any_config()) {
            let t = on_air_ticks_with(&c, &LayoutConstants::default());
            prop_assert_eq!(t.raw() * i64::from(c.bitrate_mode.bits_per_us()), i64::from(frame_bits(&c)) * 10);
        }

        #[test]
        fn monotone_in_payload_and_crc(c in any_config()) {
            let base = on_air_time_us(&c);
            if c.payload_len_bytes < 252 {
                let bigger = EsbConfig { payload_len_bytes: c.payload_len_bytes + 1, ..c.clone() };
                prop_assert!(on_air_time_us(&bigger) > base);
            }
            let off = on_air_time_us(&EsbConfig { crc_mode: CrcMode::CrcOff, ..c.clone() });
            let c8 = on_air_time_us(&EsbConfig { crc_mode: CrcMode::Crc8, ..c.clone() });
            let c16 = on_air_time_us(&EsbConfig { crc_mode: CrcMode::Crc16, ..c.clone() });
            prop_assert!(off < c8 && c8 < c16);
        }

        #[test]
        fn doubling_bitrate_halves_duration(c in any_config()) {
            // Same preamble in both modes so the frame is identical.
            let layout = LayoutConstants { preamble_1m: 16, ..LayoutConstants::default() };
            let slow = on_air_ticks_with(&EsbConfig { bitrate_mode: BitrateMode::Mbps1, ..c.clone() }, &layout);
            let fast = on_air_ticks_with(&EsbConfig { bitrate_mode: BitrateMode::Mbps2, ..c }, &layout);
            prop_assert_eq!(slow.raw(), 2 * fast.raw());
        }
    }
}
