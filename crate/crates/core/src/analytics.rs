//! Closed-form retransmission math, loss estimation, accounting and the
//! pipeline calibration solver.

use serde::{Deserialize, Serialize};

use crate::config::{
    BitrateMode, CrcMode, EsbConfig, PayloadMode, ProtocolMode, TxMode, ValidatedConfig,
};
use crate::link::{ModifierTable, Outcome, Param, PipelineModel, Stage, TransmissionRecord, MIN_STAGE_US};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration infeasible: {0}")]
    Infeasible(String),
}

/// Retransmission statistics: a packet pays `delta_r` extra with
/// probability `p_r`, observed over `n` packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetransStats {
    pub p_r: f64,
    pub delta_r: f64,
    pub n: u64,
}

impl RetransStats {
    pub fn new(p_r: f64, delta_r: f64, n: u64) -> Result<Self, AnalyticsError> {
        if !(0.0..=1.0).contains(&p_r) {
            return Err(AnalyticsError::Domain(format!("p_r = {p_r} outside [0, 1]")));
        }
        if !(delta_r > 0.0) || !delta_r.is_finite() {
            return Err(AnalyticsError::Domain(format!("delta_r = {delta_r} must be > 0")));
        }
        if n == 0 {
            return Err(AnalyticsError::Domain("n must be >= 1".into()));
        }
        Ok(RetransStats { p_r, delta_r, n })
    }
}

/// `p_r · δ_r`
pub fn expected_additional_delay(s: &RetransStats) -> f64 {
    s.p_r * s.delta_r
}

/// `p_r (1 − p_r) δ_r² / n`, the variance of the mean additional delay.
pub fn additional_delay_variance(s: &RetransStats) -> f64 {
    s.p_r * (1.0 - s.p_r) * s.delta_r * s.delta_r / s.n as f64
}

pub fn additional_delay_sd(s: &RetransStats) -> f64 {
    additional_delay_variance(s).sqrt()
}

/// Which copy gets through first under independent per-copy loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CopyDistribution {
    /// `first[k]` = P(copy k is the first to survive) = `p^k (1 − p)`.
    pub first: Vec<f64>,
    /// P(every copy lost) = `p^copies`.
    pub lost: f64,
}

impl CopyDistribution {
    /// Masses conditional on delivery.
    pub fn conditional(&self) -> Vec<f64> {
        let delivered = 1.0 - self.lost;
        self.first.iter().map(|m| m / delivered).collect()
    }

    pub fn total(&self) -> f64 {
        self.first.iter().sum::<f64>() + self.lost
    }
}

pub fn delivered_copy_distribution(p_loss: f64, copies: u32) -> CopyDistribution {
    let mut first = Vec::with_capacity(copies as usize);
    let mut reach = 1.0; // p^k
    for _ in 0..copies {
        first.push(reach * (1.0 - p_loss));
        reach *= p_loss;
    }
    CopyDistribution { first, lost: reach }
}

/// Mean and SD of the retransmission offset `k · δ` among delivered
/// attempts, with no stage jitter.
pub fn delivered_offset_moments(p_loss: f64, copies: u32, delta_us: f64) -> (f64, f64) {
    let masses = delivered_copy_distribution(p_loss, copies).conditional();
    let (m1, m2) = masses.iter().enumerate().fold((0.0, 0.0), |(a, b), (k, w)| {
        let x = k as f64 * delta_us;
        (a + w * x, b + w * x * x)
    });
    (m1, (m2 - m1 * m1).max(0.0).sqrt())
}

/// Inverts `P(all copies lost) = p^copies` for the per-copy loss rate.
pub fn estimate_loss_prob(sent: u64, never_received: u64, copies: u32) -> Result<f64, AnalyticsError> {
    if sent == 0 {
        return Err(AnalyticsError::Domain("sent must be > 0".into()));
    }
    if never_received > sent {
        return Err(AnalyticsError::Domain(format!(
            "never_received {never_received} exceeds sent {sent}"
        )));
    }
    if copies == 0 {
        return Err(AnalyticsError::Domain("copies must be >= 1".into()));
    }
    Ok((never_received as f64 / sent as f64).powf(1.0 / f64::from(copies)))
}

/// Packet counts of one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Accounting {
    pub sent: u64,
    /// Every packet surfaced to the application, duplicates included.
    pub received: u64,
    /// Distinct attempts that reached the application.
    pub unique: u64,
    /// Unique packets with an intact payload.
    pub valid: u64,
    pub corrupted: u64,
    pub duplicates: u64,
}

impl Accounting {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a TransmissionRecord>) -> Self {
        let mut a = Accounting::default();
        for r in records {
            a.sent += 1;
            match r.outcome {
                Outcome::Lost => {}
                Outcome::Delivered => {
                    a.unique += 1;
                    a.valid += 1;
                }
                Outcome::DeliveredCorrupted => {
                    a.unique += 1;
                    a.corrupted += 1;
                }
            }
            a.duplicates += u64::from(r.duplicates_delivered);
        }
        a.received = a.unique + a.duplicates;
        a
    }

    pub fn lost(&self) -> u64 {
        self.sent - self.unique
    }

    /// `received = unique + duplicates` and `unique = valid + corrupted`.
    pub fn is_consistent(&self) -> bool {
        self.received == self.unique + self.duplicates
            && self.unique == self.valid + self.corrupted
            && self.unique <= self.sent
    }
}

/// `(received − corrupted − duplicates) / sent`; zero when nothing was sent.
pub fn success_rate(a: &Accounting) -> f64 {
    if a.sent == 0 {
        return 0.0;
    }
    (a.received as f64 - a.corrupted as f64 - a.duplicates as f64) / a.sent as f64
}

/// Extra delay charged to an attempt whose first copy did not make it:
/// `δ` when a retransmission was needed, zero otherwise.
pub fn retransmission_penalty_us(record: &TransmissionRecord, delta_us: f64) -> f64 {
    if record.delivered_copy == Some(0) {
        0.0
    } else {
        delta_us
    }
}

/// Median interval targets in µs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub d0d7: f64,
    pub d2d5: f64,
    pub d3d4: f64,
}

impl CalibrationTargets {
    /// Medians measured for the optimal-latency configuration.
    pub fn reference() -> Self {
        CalibrationTargets {
            d0d7: 486.30,
            d2d5: 293.07,
            d3d4: 185.86,
        }
    }

    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if self.d0d7 > self.d2d5 && self.d2d5 > self.d3d4 && self.d3d4 > 0.0 {
            Ok(())
        } else {
            Err(AnalyticsError::Domain(format!(
                "targets must satisfy d0d7 > d2d5 > d3d4 > 0, got {} / {} / {}",
                self.d0d7, self.d2d5, self.d3d4
            )))
        }
    }
}

/// Calibrates with the reference modifiers and default jitter.
pub fn calibrate_pipeline(
    targets: &CalibrationTargets,
    config: &ValidatedConfig,
) -> Result<PipelineModel, AnalyticsError> {
    let template = PipelineModel {
        bases_us: [0.0; 7],
        jitter: Default::default(),
        modifiers: ModifierTable::reference(),
    };
    calibrate_pipeline_with(targets, config, &template)
}

/// Solves stage bases so that, without jitter or loss, `config` hits the
/// three target medians. Jitter and modifiers are taken from `template`.
///
/// Only sums are observable, so pairs are split evenly: D0→D2 = D5→D7 and
/// D2→D3 = D4→D5, with D0→D2 and D5→D7 further halved across their two
/// stages. The config's own modifiers are subtracted from the bases.
pub fn calibrate_pipeline_with(
    targets: &CalibrationTargets,
    config: &ValidatedConfig,
    template: &PipelineModel,
) -> Result<PipelineModel, AnalyticsError> {
    targets.validate()?;
    let on_air = config.on_air().as_us();
    if on_air >= targets.d3d4 {
        return Err(AnalyticsError::Infeasible(format!(
            "on-air time {on_air} µs does not fit in the D3-D4 target {} µs",
            targets.d3d4
        )));
    }
    let net_pair = (targets.d2d5 - targets.d3d4) / 2.0;
    let app_quarter = (targets.d0d7 - targets.d2d5) / 4.0;
    let effective = |stage: Stage| match stage {
        Stage::TxAppToIpc | Stage::TxIpcToEsb | Stage::RxToIpc | Stage::RxIpcToApp => app_quarter,
        Stage::TxEsbStack | Stage::RxEsbStack => net_pair,
        Stage::RadioOverhead => targets.d3d4 - on_air,
    };
    let mut bases_us = [0.0; 7];
    for stage in Stage::ALL {
        let eff = effective(stage);
        let base = eff - template.modifiers.for_stage(config.config(), stage);
        if eff < MIN_STAGE_US || base < 0.0 {
            return Err(AnalyticsError::Infeasible(format!(
                "stage {} would need base {base:.3} µs (effective {eff:.3} µs)",
                stage.key()
            )));
        }
        bases_us[stage.index()] = base;
    }
    Ok(PipelineModel {
        bases_us,
        jitter: template.jitter.clone(),
        modifiers: template.modifiers.clone(),
    })
}

/// Medians of one parameter group, one entry per parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianGroup {
    pub name: String,
    pub medians: Vec<(Param, f64)>,
}

/// Each value's modifier is its median minus the smallest median of its
/// group.
pub fn modifier_table_from_medians(groups: &[MedianGroup]) -> ModifierTable {
    let mut table = ModifierTable::empty();
    for g in groups {
        let min = g.medians.iter().map(|(_, m)| *m).fold(f64::INFINITY, f64::min);
        for (p, m) in &g.medians {
            table.set(*p, round_to_hundredths(m - min));
        }
    }
    table
}

// The medians carry two decimals; keep modifiers on that grid.
fn round_to_hundredths(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Per-parameter D0-D7 medians (µs) from the parameter sweep.
pub fn reference_medians() -> Vec<MedianGroup> {
    let group = |name: &str, medians: Vec<(Param, f64)>| MedianGroup {
        name: name.into(),
        medians,
    };
    vec![
        group(
            "crc",
            vec![
                (Param::Crc(CrcMode::Crc16), 562.39),
                (Param::Crc(CrcMode::Crc8), 558.39),
                (Param::Crc(CrcMode::CrcOff), 554.30),
            ],
        ),
        group(
            "protocol",
            vec![
                (Param::Protocol(ProtocolMode::DynamicLength), 562.39),
                (Param::Protocol(ProtocolMode::StaticLength), 563.10),
            ],
        ),
        group(
            "bitrate",
            vec![
                (Param::Bitrate(BitrateMode::Mbps2Ble), 559.32),
                (Param::Bitrate(BitrateMode::Mbps2), 562.39),
            ],
        ),
        group(
            "txmode",
            vec![
                (Param::TxMode(TxMode::Automatic), 532.49),
                (Param::TxMode(TxMode::Manual), 534.23),
                (Param::TxMode(TxMode::ManualStart), 534.23),
            ],
        ),
        group(
            "power",
            vec![
                (Param::Power(10), 548.67),
                (Param::Power(5), 549.79),
                (Param::Power(0), 552.25),
                (Param::Power(-12), 548.87),
                (Param::Power(-30), 550.66),
                (Param::Power(-70), 550.00),
            ],
        ),
        group(
            "payload",
            vec![
                (Param::Payload(PayloadMode::Standard), 625.16),
                (Param::Payload(PayloadMode::Optimized), 617.89),
            ],
        ),
    ]
}

pub fn reference_medians_without_power() -> Vec<MedianGroup> {
    reference_medians().into_iter().filter(|g| g.name != "power").collect()
}

/// Zero-jitter, zero-loss D0-D7 latency predicted for `config`.
pub fn nominal_latency_us(pipeline: &PipelineModel, config: &ValidatedConfig) -> f64 {
    let cfg: &EsbConfig = config.config();
    Stage::ALL.iter().map(|&s| pipeline.effective_base(cfg, s)).sum::<f64>() + config.on_air().as_us()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{olcfg_preset, validate};
    use proptest::prelude::*;

    fn olcfg() -> ValidatedConfig {
        validate(olcfg_preset()).unwrap()
    }

    #[test]
    fn additional_delay() {
        let s = RetransStats::new(0.0, 435.0, 1).unwrap();
        assert_eq!(expected_additional_delay(&s), 0.0);
        let s = RetransStats::new(0.043, 435.0, 1).unwrap();
        assert!((expected_additional_delay(&s) - 18.705).abs() < 1e-9);
        // close to the 504.99 - 486.30 gap
        assert!((expected_additional_delay(&s) - 18.69).abs() < 0.02);
    }

    #[test]
    fn additional_delay_spread() {
        for p in [0.0, 1.0] {
            assert_eq!(additional_delay_variance(&RetransStats::new(p, 435.0, 10).unwrap()), 0.0);
        }
        let s = RetransStats::new(0.5, 435.0, 1).unwrap();
        assert!((additional_delay_sd(&s) - 217.5).abs() < 1e-12);
        let one = additional_delay_variance(&RetransStats::new(0.3, 300.0, 100).unwrap());
        let four = additional_delay_variance(&RetransStats::new(0.3, 300.0, 400).unwrap());
        assert!((one / four - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stats_domain() {
        assert!(RetransStats::new(1.1, 435.0, 1).is_err());
        assert!(RetransStats::new(0.1, 0.0, 1).is_err());
        assert!(RetransStats::new(0.1, 435.0, 0).is_err());
    }

    #[test]
    fn copy_distribution_values() {
        let d = delivered_copy_distribution(0.0, 3);
        assert_eq!(d.first, vec![1.0, 0.0, 0.0]);
        assert_eq!(d.lost, 0.0);

        let d = delivered_copy_distribution(0.2655, 3);
        let expect = [0.7345, 0.1950, 0.0518];
        for (got, want) in d.first.iter().zip(expect) {
            assert!((got - want).abs() < 5e-5, "{got} vs {want}");
        }
        assert!((d.lost - 0.01872).abs() < 5e-6);
    }

    /// Enumerates all 2^copies loss patterns with dyadic p, where every
    /// product is exact in binary floating point.
    #[test]
    fn copy_distribution_matches_enumeration() {
        for p in [0.0, 0.125, 0.25, 0.5, 0.75, 1.0] {
            for copies in 1..=4u32 {
                let mut first = vec![0.0; copies as usize];
                let mut lost = 0.0;
                for pattern in 0..(1u32 << copies) {
                    let prob: f64 = (0..copies)
                        .map(|k| if pattern >> k & 1 == 1 { p } else { 1.0 - p })
                        .product();
                    match (0..copies).find(|k| pattern >> k & 1 == 0) {
                        Some(k) => first[k as usize] += prob,
                        None => lost += prob,
                    }
                }
                let d = delivered_copy_distribution(p, copies);
                assert_eq!(d.first, first, "p={p} copies={copies}");
                assert_eq!(d.lost, lost);
            }
        }
    }

    #[test]
    fn mixture_sd_near_94us() {
        let (mean, sd) = delivered_offset_moments(0.043, 3, 435.0);
        assert!((mean - 19.44).abs() < 0.05, "{mean}");
        assert!((sd - 93.5).abs() < 0.5, "{sd}");
    }

    #[test]
    fn loss_estimate() {
        // Independent root-finding oracle: bisection on p^3 = 14/750.
        let target = 14.0 / 750.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid * mid < target { lo = mid } else { hi = mid }
        }
        let p = estimate_loss_prob(750, 14, 3).unwrap();
        assert!((p - lo).abs() < 1e-12);
        assert!((p - 0.2655).abs() < 5e-4);
        assert_eq!(estimate_loss_prob(100, 0, 3).unwrap(), 0.0);
        assert_eq!(estimate_loss_prob(100, 100, 3).unwrap(), 1.0);
        assert!(estimate_loss_prob(0, 0, 3).is_err());
        assert!(estimate_loss_prob(10, 11, 3).is_err());
    }

    #[test]
    fn success_rate_matches_crc_off_counts() {
        let a = Accounting {
            sent: 750,
            received: 735,
            unique: 734,
            valid: 719,
            corrupted: 15,
            duplicates: 1,
        };
        assert!(a.is_consistent());
        assert!((success_rate(&a) - 0.9587).abs() < 5e-5);
        let perfect = Accounting {
            sent: 10,
            received: 10,
            unique: 10,
            valid: 10,
            ..Default::default()
        };
        assert_eq!(success_rate(&perfect), 1.0);
        assert_eq!(success_rate(&Accounting::default()), 0.0);
    }

    #[test]
    fn calibration_arithmetic() {
        let p = calibrate_pipeline(&CalibrationTargets::reference(), &olcfg()).unwrap();
        let c = olcfg_preset();
        let eff = |s| p.effective_base(&c, s);
        assert!((eff(Stage::RadioOverhead) - 149.36).abs() < 1e-9);
        assert!((eff(Stage::TxEsbStack) + eff(Stage::RxEsbStack) - 107.21).abs() < 1e-9);
        let app = eff(Stage::TxAppToIpc) + eff(Stage::TxIpcToEsb) + eff(Stage::RxToIpc) + eff(Stage::RxIpcToApp);
        assert!((app - 193.23).abs() < 1e-9);
        assert!((nominal_latency_us(&p, &olcfg()) - 486.30).abs() < 1e-9);
        // manual TX mode carries +1.74 µs on the TX ESB stage
        assert!((p.base(Stage::TxEsbStack) - (53.605 - 1.74)).abs() < 1e-9);
    }

    #[test]
    fn calibration_rejects_infeasible_targets() {
        let t = CalibrationTargets {
            d0d7: 100.0,
            d2d5: 50.0,
            d3d4: 30.0,
        };
        assert!(matches!(calibrate_pipeline(&t, &olcfg()), Err(AnalyticsError::Infeasible(_))));
        let unordered = CalibrationTargets {
            d0d7: 100.0,
            d2d5: 200.0,
            d3d4: 50.0,
        };
        assert!(matches!(calibrate_pipeline(&unordered, &olcfg()), Err(AnalyticsError::Domain(_))));
    }

    #[test]
    fn modifier_tables() {
        let t = modifier_table_from_medians(&reference_medians());
        assert_eq!(t.get(Param::Crc(CrcMode::Crc16)), 8.09);
        assert_eq!(t.get(Param::Crc(CrcMode::Crc8)), 4.09);
        assert_eq!(t.get(Param::Crc(CrcMode::CrcOff)), 0.0);
        assert_eq!(t.get(Param::Protocol(ProtocolMode::DynamicLength)), 0.0);
        assert_eq!(t.get(Param::Protocol(ProtocolMode::StaticLength)), 0.71);
        assert_eq!(t.get(Param::TxMode(TxMode::Manual)), 1.74);
        assert_eq!(t.get(Param::Payload(PayloadMode::Standard)), 7.27);
        let single = MedianGroup {
            name: "x".into(),
            medians: vec![(Param::Power(3), 500.0)],
        };
        assert_eq!(modifier_table_from_medians(&[single]).get(Param::Power(3)), 0.0);
        assert!(ModifierTable::reference().entries.keys().all(|p| !matches!(p, Param::Power(_))));
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one(p in 0.0f64..=1.0, copies in 1u32..=16) {
            let d = delivered_copy_distribution(p, copies);
            prop_assert!((d.total() - 1.0).abs() < 1e-12);
            prop_assert!(d.first.iter().all(|m| *m >= 0.0));
        }

        #[test]
        fn estimate_inverts_lost_mass(p in 0.01f64..0.99, copies in 1u32..=4) {
            let lost = p.powi(copies as i32);
            let sent = 1_000_000_000u64;
            let never = (lost * sent as f64).round() as u64;
            let est = estimate_loss_prob(sent, never, copies).unwrap();
            prop_assert!((est - p).abs() < 1e-3);
        }
    }
}
