//! Stage delays between the probe points D0..D7.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::config::{BitrateMode, CrcMode, EsbConfig, PayloadMode, ProtocolMode, TxMode};
use crate::engine::RngStream;

/// Realized stage delays never drop below one clock tick, which keeps probe
/// timestamps strictly increasing.
pub const MIN_STAGE_US: f64 = 0.1;

/// Per-stage jitter sigma giving a total of about 25 µs over seven stages.
pub const DEFAULT_STAGE_SIGMA_US: f64 = 9.449_111_825_230_68;

const TRUNCATION_RETRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    /// D0 → D1
    TxAppToIpc,
    /// D1 → D2
    TxIpcToEsb,
    /// D2 → D3
    TxEsbStack,
    /// D3 → D4, excluding on-air time and retransmission offset
    RadioOverhead,
    /// D4 → D5
    RxEsbStack,
    /// D5 → D6
    RxToIpc,
    /// D6 → D7
    RxIpcToApp,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::TxAppToIpc,
        Stage::TxIpcToEsb,
        Stage::TxEsbStack,
        Stage::RadioOverhead,
        Stage::RxEsbStack,
        Stage::RxToIpc,
        Stage::RxIpcToApp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Stage::TxAppToIpc => "tx_app_to_ipc",
            Stage::TxIpcToEsb => "tx_ipc_to_esb",
            Stage::TxEsbStack => "tx_esb_stack",
            Stage::RadioOverhead => "radio_overhead",
            Stage::RxEsbStack => "rx_esb_stack",
            Stage::RxToIpc => "rx_to_ipc",
            Stage::RxIpcToApp => "rx_ipc_to_app",
        }
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.key() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JitterFamily {
    None,
    /// Normal truncated so the stage stays at or above [`MIN_STAGE_US`].
    TruncatedNormal,
    /// Zero-mean uniform with the given standard deviation.
    Uniform,
}

impl JitterFamily {
    pub fn key(self) -> &'static str {
        match self {
            JitterFamily::None => "none",
            JitterFamily::TruncatedNormal => "normal",
            JitterFamily::Uniform => "uniform",
        }
    }
}

impl FromStr for JitterFamily {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(JitterFamily::None),
            "normal" => Ok(JitterFamily::TruncatedNormal),
            "uniform" => Ok(JitterFamily::Uniform),
            _ => Err("expected none|normal|uniform".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterModel {
    pub family: JitterFamily,
    pub sigma_us: [f64; 7],
}

impl JitterModel {
    pub fn none() -> Self {
        JitterModel {
            family: JitterFamily::None,
            sigma_us: [0.0; 7],
        }
    }

    pub fn uniform_sigma(family: JitterFamily, sigma_us: f64) -> Self {
        JitterModel {
            family,
            sigma_us: [sigma_us; 7],
        }
    }

    pub fn total_sigma_us(&self) -> f64 {
        if self.family == JitterFamily::None {
            return 0.0;
        }
        self.sigma_us.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel::uniform_sigma(JitterFamily::TruncatedNormal, DEFAULT_STAGE_SIGMA_US)
    }
}

/// One value of one configuration parameter, the unit a latency modifier
/// attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    Crc(CrcMode),
    Protocol(ProtocolMode),
    Bitrate(BitrateMode),
    TxMode(TxMode),
    Power(i32),
    Payload(PayloadMode),
}

impl Param {
    /// Stage whose delay the modifier shifts.
    pub fn stage(self) -> Stage {
        match self {
            Param::Crc(_) => Stage::RxEsbStack,
            Param::Protocol(_) | Param::TxMode(_) => Stage::TxEsbStack,
            Param::Bitrate(_) | Param::Power(_) => Stage::RadioOverhead,
            Param::Payload(_) => Stage::TxIpcToEsb,
        }
    }

    pub fn of_config(config: &EsbConfig) -> [Param; 6] {
        [
            Param::Crc(config.crc_mode),
            Param::Protocol(config.protocol_mode),
            Param::Bitrate(config.bitrate_mode),
            Param::TxMode(config.tx_mode),
            Param::Power(config.tx_power_dbm),
            Param::Payload(config.payload_mode),
        ]
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Crc(v) => write!(f, "crc.{v}"),
            Param::Protocol(v) => write!(f, "protocol.{v}"),
            Param::Bitrate(v) => write!(f, "bitrate.{v}"),
            Param::TxMode(v) => write!(f, "txmode.{v}"),
            Param::Power(v) => write!(f, "power.{v}"),
            Param::Payload(v) => write!(f, "payload.{v}"),
        }
    }
}

impl FromStr for Param {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (group, value) = s
            .split_once('.')
            .ok_or_else(|| format!("modifier key {s:?} must look like group.value"))?;
        Ok(match group {
            "crc" => Param::Crc(value.parse()?),
            "protocol" => Param::Protocol(value.parse()?),
            "bitrate" => Param::Bitrate(value.parse()?),
            "txmode" => Param::TxMode(value.parse()?),
            "power" => Param::Power(value.parse().map_err(|_| format!("bad power {value:?}"))?),
            "payload" => Param::Payload(value.parse()?),
            _ => return Err(format!("unknown modifier group {group:?}")),
        })
    }
}

/// Additive per-parameter stage delays in µs. Missing entries count as zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModifierTable {
    pub entries: BTreeMap<Param, f64>,
}

impl ModifierTable {
    pub fn empty() -> Self {
        ModifierTable::default()
    }

    /// Modifiers derived from the reference per-parameter medians. TX power
    /// is left out: it showed no latency trend.
    pub fn reference() -> Self {
        analytics::modifier_table_from_medians(&analytics::reference_medians_without_power())
    }

    pub fn get(&self, p: Param) -> f64 {
        self.entries.get(&p).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, p: Param, us: f64) {
        self.entries.insert(p, us);
    }

    pub fn extend(&mut self, other: &ModifierTable) {
        self.entries.extend(other.entries.iter().map(|(k, v)| (*k, *v)));
    }

    /// Sum of modifiers of `config` that land on `stage`.
    pub fn for_stage(&self, config: &EsbConfig, stage: Stage) -> f64 {
        Param::of_config(config)
            .into_iter()
            .filter(|p| p.stage() == stage)
            .map(|p| self.get(p))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("pipeline {field} = {value} is invalid ({reason})")]
pub struct PipelineError {
    pub field: String,
    pub value: f64,
    pub reason: &'static str,
}

/// Stage base delays plus jitter and modifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineModel {
    /// Indexed by [`Stage::index`].
    pub bases_us: [f64; 7],
    pub jitter: JitterModel,
    pub modifiers: ModifierTable,
}

impl PipelineModel {
    /// Bases calibrated to the reference OLCfg medians, default jitter and
    /// the reference modifier table.
    pub fn reference() -> Self {
        let template = PipelineModel {
            bases_us: [0.0; 7],
            jitter: JitterModel::default(),
            modifiers: ModifierTable::reference(),
        };
        analytics::calibrate_pipeline_with(
            &analytics::CalibrationTargets::reference(),
            &crate::config::validate(crate::config::olcfg_preset()).expect("preset is valid"),
            &template,
        )
        .expect("reference targets are feasible")
    }

    pub fn without_jitter(mut self) -> Self {
        self.jitter = JitterModel::none();
        self
    }

    pub fn base(&self, stage: Stage) -> f64 {
        self.bases_us[stage.index()]
    }

    pub fn effective_base(&self, config: &EsbConfig, stage: Stage) -> f64 {
        self.base(stage) + self.modifiers.for_stage(config, stage)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for stage in Stage::ALL {
            let b = self.base(stage);
            if !b.is_finite() || b < 0.0 {
                return Err(PipelineError {
                    field: stage.key().into(),
                    value: b,
                    reason: "base delays must be finite and >= 0",
                });
            }
            let s = self.jitter.sigma_us[stage.index()];
            if !s.is_finite() || s < 0.0 {
                return Err(PipelineError {
                    field: format!("jitter_sigma_us.{}", stage.key()),
                    value: s,
                    reason: "sigma must be finite and >= 0",
                });
            }
        }
        for (p, v) in &self.modifiers.entries {
            if !v.is_finite() {
                return Err(PipelineError {
                    field: p.to_string(),
                    value: *v,
                    reason: "modifier must be finite",
                });
            }
        }
        Ok(())
    }

    /// One realized stage delay in µs.
    pub fn draw_stage(&self, config: &EsbConfig, stage: Stage, rng: &mut RngStream) -> f64 {
        let base = self.effective_base(config, stage);
        let sigma = self.jitter.sigma_us[stage.index()];
        let value = match self.jitter.family {
            _ if sigma == 0.0 => base,
            JitterFamily::None => base,
            JitterFamily::Uniform => {
                let half = sigma * 3f64.sqrt();
                base + rng.draw_uniform(-half, half)
            }
            JitterFamily::TruncatedNormal => {
                let normal = Normal::new(0.0, sigma).expect("sigma validated");
                let mut v = base + normal.sample(rng.rng());
                for _ in 0..TRUNCATION_RETRIES {
                    if v >= MIN_STAGE_US {
                        break;
                    }
                    v = base + normal.sample(rng.rng());
                }
                v
            }
        };
        value.max(MIN_STAGE_US)
    }
}

impl Default for PipelineModel {
    fn default() -> Self {
        PipelineModel::reference()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::olcfg_preset;
    use crate::engine::{Purpose, StreamId};

    #[test]
    fn param_keys_round_trip() {
        for p in [
            Param::Crc(CrcMode::Crc8),
            Param::Protocol(ProtocolMode::StaticLength),
            Param::Bitrate(BitrateMode::Mbps2Ble),
            Param::TxMode(TxMode::ManualStart),
            Param::Power(-12),
            Param::Payload(PayloadMode::Standard),
        ] {
            assert_eq!(p.to_string().parse::<Param>().unwrap(), p);
        }
        assert!("crc.32".parse::<Param>().is_err());
        assert!("speed.fast".parse::<Param>().is_err());
    }

    #[test]
    fn default_sigma_sums_to_25us() {
        assert!((JitterModel::default().total_sigma_us() - 25.0).abs() < 1e-9);
        assert_eq!(JitterModel::none().total_sigma_us(), 0.0);
    }

    #[test]
    fn modifiers_land_on_their_stage() {
        let mut t = ModifierTable::empty();
        t.set(Param::Crc(CrcMode::CrcOff), 2.0);
        t.set(Param::TxMode(TxMode::Manual), 1.5);
        t.set(Param::Protocol(ProtocolMode::DynamicLength), 0.5);
        let c = olcfg_preset();
        assert_eq!(t.for_stage(&c, Stage::RxEsbStack), 2.0);
        assert_eq!(t.for_stage(&c, Stage::TxEsbStack), 2.0);
        assert_eq!(t.for_stage(&c, Stage::RadioOverhead), 0.0);
    }

    #[test]
    fn draws_never_go_below_one_tick() {
        let p = PipelineModel {
            bases_us: [0.0; 7],
            jitter: JitterModel::uniform_sigma(JitterFamily::TruncatedNormal, 50.0),
            modifiers: ModifierTable::empty(),
        };
        let u = PipelineModel {
            jitter: JitterModel::uniform_sigma(JitterFamily::Uniform, 50.0),
            ..p.clone()
        };
        let mut rng = RngStream::new(3, StreamId::new(0, 0, 0, Purpose::Jitter));
        let c = olcfg_preset();
        for _ in 0..5000 {
            assert!(p.draw_stage(&c, Stage::TxAppToIpc, &mut rng) >= MIN_STAGE_US);
            assert!(u.draw_stage(&c, Stage::TxAppToIpc, &mut rng) >= MIN_STAGE_US);
        }
    }

    #[test]
    fn zero_jitter_returns_effective_base() {
        let p = PipelineModel::reference().without_jitter();
        let c = olcfg_preset();
        let mut rng = RngStream::new(3, StreamId::new(0, 0, 0, Purpose::Jitter));
        for st in Stage::ALL {
            assert_eq!(p.draw_stage(&c, st, &mut rng), p.effective_base(&c, st));
        }
    }

    #[test]
    fn uniform_jitter_has_requested_sd() {
        let p = PipelineModel {
            bases_us: [100.0; 7],
            jitter: JitterModel::uniform_sigma(JitterFamily::Uniform, 10.0),
            modifiers: ModifierTable::empty(),
        };
        let mut rng = RngStream::new(5, StreamId::new(0, 0, 0, Purpose::Jitter));
        let c = olcfg_preset();
        let xs: Vec<f64> = (0..50_000).map(|_| p.draw_stage(&c, Stage::RxToIpc, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((mean - 100.0).abs() < 0.2, "{mean}");
        assert!((var.sqrt() - 10.0).abs() < 0.2, "{}", var.sqrt());
    }

    #[test]
    fn negative_base_is_rejected() {
        let mut p = PipelineModel::reference();
        p.bases_us[Stage::RxToIpc.index()] = -1.0;
        assert!(p.validate().is_err());
    }
}
