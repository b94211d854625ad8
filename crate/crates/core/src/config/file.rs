//! Experiment files: flat `key = value` lines grouped under section headers.
//!
//! ```text
//! # comments start with '#'
//! [sweep]
//! seed = 42
//! rounds = 5
//! attempts = 150
//! shuffle = true
//!
//! [channel]
//! p_loss = 0.043
//! p_corrupt = 0
//!
//! [config olcfg]
//! crc = off
//! bitrate = 2M-ble
//! retransmits = 2
//! retransmit_delay_us = 435
//! ```
//!
//! Several `key=value` pairs may share a line. Sections: `sweep`, `channel`,
//! `layout`, `config <name>` (repeatable, starts from the OLCfg preset),
//! `pipeline`, `modifiers`, `targets`, `ble`. Duplicate keys within a
//! section and unknown keys are errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use crate::airtime::{LayoutConstants, LAYOUT_KEYS};
use crate::analytics::CalibrationTargets;
use crate::config::{
    olcfg_preset, validate_with, BleConfig, ChannelModel, ConfigError, EsbConfig,
    MIN_CONNECTION_INTERVAL_US,
};
use crate::link::{JitterFamily, ModifierTable, Param, PipelineModel, Stage, DEFAULT_ATTEMPT_SPACING_US};
use crate::sweep::{NamedConfig, SweepPlan};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FileError {
    #[error("{}{reason}", location(*line))]
    Parse { line: usize, reason: String },
    #[error("{}unknown key {name:?} in [{section}]", location(*line))]
    UnknownKey {
        line: usize,
        section: String,
        name: String,
    },
    #[error("[config {name}]: {source}")]
    Config { name: String, source: ConfigError },
    #[error("{0}")]
    Invalid(String),
}

/// Line 0 marks command-line overrides.
fn location(line: usize) -> String {
    if line == 0 {
        "override: ".into()
    } else {
        format!("line {line}: ")
    }
}

fn parse_err(line: usize, reason: impl Into<String>) -> FileError {
    FileError::Parse {
        line,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum SectionKind {
    Sweep,
    Channel,
    Layout,
    Config(String),
    Pipeline,
    Modifiers,
    Targets,
    Ble,
}

impl SectionKind {
    fn parse(header: &str) -> Option<SectionKind> {
        let mut words = header.split_whitespace();
        let kind = match (words.next()?, words.next()) {
            ("config", Some(name)) => SectionKind::Config(name.to_string()),
            ("sweep", None) => SectionKind::Sweep,
            ("channel", None) => SectionKind::Channel,
            ("layout", None) => SectionKind::Layout,
            ("pipeline", None) => SectionKind::Pipeline,
            ("modifiers", None) => SectionKind::Modifiers,
            ("targets", None) => SectionKind::Targets,
            ("ble", None) => SectionKind::Ble,
            _ => return None,
        };
        words.next().is_none().then_some(kind)
    }

    fn label(&self) -> String {
        match self {
            SectionKind::Sweep => "sweep".into(),
            SectionKind::Channel => "channel".into(),
            SectionKind::Layout => "layout".into(),
            SectionKind::Config(n) => format!("config {n}"),
            SectionKind::Pipeline => "pipeline".into(),
            SectionKind::Modifiers => "modifiers".into(),
            SectionKind::Targets => "targets".into(),
            SectionKind::Ble => "ble".into(),
        }
    }

    fn accepts(&self, key: &str) -> bool {
        const SWEEP: &[&str] = &["seed", "rounds", "attempts", "shuffle", "spacing_us"];
        const CHANNEL: &[&str] = &["p_loss", "p_corrupt", "independent", "dup_escape"];
        const TARGETS: &[&str] = &["d0d7", "d2d5", "d3d4"];
        const BLE: &[&str] = &["connection_interval_us", "transfer_us"];
        match self {
            SectionKind::Sweep => SWEEP.contains(&key),
            SectionKind::Channel => CHANNEL.contains(&key),
            SectionKind::Layout => LAYOUT_KEYS.contains(&key),
            SectionKind::Config(_) => CONFIG_KEYS.contains(&key),
            SectionKind::Pipeline => {
                key == "jitter"
                    || key == "jitter_sigma_us"
                    || key.parse::<Stage>().is_ok()
                    || key
                        .strip_prefix("jitter_sigma_us.")
                        .is_some_and(|s| s.parse::<Stage>().is_ok())
            }
            SectionKind::Modifiers => key.parse::<Param>().is_ok(),
            SectionKind::Targets => TARGETS.contains(&key),
            SectionKind::Ble => BLE.contains(&key),
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "crc",
    "protocol",
    "bitrate",
    "txmode",
    "power",
    "payload",
    "payload_len",
    "retransmits",
    "retransmit_delay_us",
    "retransmit_spacing",
];

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Section {
    kind: SectionKind,
    line: usize,
    entries: Vec<Entry>,
}

impl Section {
    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    fn set(&mut self, key: &str, value: &str) {
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value.to_string(),
            None => self.entries.push(Entry {
                key: key.to_string(),
                value: value.to_string(),
                line: 0,
            }),
        }
    }
}

/// The raw, syntactically valid contents of an experiment file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    sections: Vec<Section>,
}

/// Splits a line body into `key=value` pairs, allowing blanks around `=`.
fn split_pairs(body: &str, line: usize) -> Result<Vec<(String, String)>, FileError> {
    let tokens: Vec<&str> = body.split_whitespace().collect();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        let (key, value, used) = if let Some((k, v)) = t.split_once('=') {
            if v.is_empty() {
                (k, tokens.get(i + 1).copied(), 2)
            } else {
                (k, Some(v), 1)
            }
        } else {
            match tokens.get(i + 1) {
                Some(&"=") => (t, tokens.get(i + 2).copied(), 3),
                Some(next) if next.starts_with('=') => (t, Some(&next[1..]), 2),
                _ => (t, None, 1),
            }
        };
        let value = value.filter(|v| !v.is_empty() && !v.contains('='));
        match value {
            Some(v) if !key.is_empty() => pairs.push((key.to_string(), v.to_string())),
            _ => return Err(parse_err(line, format!("expected key = value near {t:?}"))),
        }
        i += used;
    }
    Ok(pairs)
}

impl Document {
    pub fn parse(text: &str) -> Result<Document, FileError> {
        let mut doc = Document::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let header = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, "unterminated section header"))?;
                let kind = SectionKind::parse(header)
                    .ok_or_else(|| parse_err(line, format!("unknown section [{}]", header.trim())))?;
                if !seen.insert(kind.clone()) {
                    return Err(parse_err(line, format!("duplicate section [{}]", kind.label())));
                }
                doc.sections.push(Section {
                    kind,
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| parse_err(line, "key outside of any section"))?;
            for (key, value) in split_pairs(body, line)? {
                if section.get(&key).is_some() {
                    return Err(parse_err(line, format!("duplicate key {key:?}")));
                }
                if !section.kind.accepts(&key) {
                    return Err(FileError::UnknownKey {
                        line,
                        section: section.kind.label(),
                        name: key,
                    });
                }
                section.entries.push(Entry { key, value, line });
            }
        }
        if doc.sections.is_empty() {
            return Err(parse_err(1, "empty experiment file"));
        }
        Ok(doc)
    }

    /// Applies a `section.key=value` override. Config keys are addressed as
    /// `config.<name>.<key>`, or `config.*.<key>` for every config.
    pub fn apply_override(&mut self, text: &str) -> Result<(), FileError> {
        let (path, value) = text
            .split_once('=')
            .filter(|(p, v)| !p.is_empty() && !v.is_empty())
            .ok_or_else(|| parse_err(0, format!("override {text:?} must look like section.key=value")))?;
        let (section, rest) = path
            .split_once('.')
            .ok_or_else(|| parse_err(0, format!("override {path:?} lacks a section")))?;
        let unknown = |name: &str| FileError::UnknownKey {
            line: 0,
            section: section.to_string(),
            name: name.to_string(),
        };
        if section == "config" {
            let (name, key) = rest
                .split_once('.')
                .ok_or_else(|| parse_err(0, format!("override {path:?} must be config.<name>.<key>")))?;
            if !CONFIG_KEYS.contains(&key) {
                return Err(unknown(key));
            }
            let mut hit = false;
            for s in &mut self.sections {
                if let SectionKind::Config(n) = &s.kind {
                    if name == "*" || n == name {
                        s.set(key, value);
                        hit = true;
                    }
                }
            }
            return if hit { Ok(()) } else { Err(unknown(&format!("config {name}"))) };
        }
        let kind = SectionKind::parse(section)
            .filter(|k| !matches!(k, SectionKind::Config(_)))
            .ok_or_else(|| unknown(section))?;
        if !kind.accepts(rest) {
            return Err(unknown(rest));
        }
        match self.sections.iter_mut().find(|s| s.kind == kind) {
            Some(s) => s.set(rest, value),
            None => self.sections.push(Section {
                kind,
                line: 0,
                entries: vec![Entry {
                    key: rest.to_string(),
                    value: value.to_string(),
                    line: 0,
                }],
            }),
        }
        Ok(())
    }

    /// Layers `other` on top: its sections replace same-named ones.
    pub fn merge(&mut self, other: Document) {
        for sec in other.sections {
            match self.sections.iter_mut().find(|s| s.kind == sec.kind) {
                Some(s) => *s = sec,
                None => self.sections.push(sec),
            }
        }
    }

    fn section(&self, kind: &SectionKind) -> Option<&Section> {
        self.sections.iter().find(|s| &s.kind == kind)
    }

    pub fn resolve(&self) -> Result<Experiment, FileError> {
        let empty = Section {
            kind: SectionKind::Sweep,
            line: 0,
            entries: Vec::new(),
        };
        let sweep = self.section(&SectionKind::Sweep).unwrap_or(&empty);
        let seed = value_or(sweep, "seed", 0u64)?;
        let rounds = value_or(sweep, "rounds", 5u32)?;
        let attempts = value_or(sweep, "attempts", 150u32)?;
        let shuffle = value_or(sweep, "shuffle", true)?;
        let spacing_us = value_or(sweep, "spacing_us", DEFAULT_ATTEMPT_SPACING_US)?;
        for (key, v) in [("rounds", rounds), ("attempts", attempts)] {
            if v == 0 {
                let line = sweep.get(key).map_or(0, |e| e.line);
                return Err(parse_err(line, format!("{key} must be >= 1")));
            }
        }
        if !(spacing_us > 0.0) {
            return Err(FileError::Invalid(format!("spacing_us = {spacing_us} must be > 0")));
        }

        let channel = match self.section(&SectionKind::Channel) {
            Some(s) => {
                let d = ChannelModel::default();
                ChannelModel {
                    p_loss: value_or(s, "p_loss", d.p_loss)?,
                    p_corrupt: value_or(s, "p_corrupt", d.p_corrupt)?,
                    independent: value_or(s, "independent", d.independent)?,
                    dup_escape: value_or(s, "dup_escape", d.dup_escape)?,
                }
            }
            None => ChannelModel::default(),
        };
        channel
            .validate()
            .map_err(|e| FileError::Invalid(format!("[channel]: {e}")))?;

        let layout = match self.section(&SectionKind::Layout) {
            Some(s) => {
                let mut values: BTreeMap<String, u32> = LayoutConstants::default()
                    .entries()
                    .iter()
                    .map(|(k, v)| (k.to_string(), *v))
                    .collect();
                for e in &s.entries {
                    values.insert(e.key.clone(), parse_value(e)?);
                }
                LayoutConstants::from_map(&values).map_err(|e| FileError::Invalid(e.to_string()))?
            }
            None => LayoutConstants::default(),
        };

        let mut configs = Vec::new();
        for s in &self.sections {
            if let SectionKind::Config(name) = &s.kind {
                let config = resolve_config(s)?;
                let config = validate_with(config, &layout).map_err(|source| FileError::Config {
                    name: name.clone(),
                    source,
                })?;
                configs.push(NamedConfig {
                    name: name.clone(),
                    config,
                });
            }
        }
        if configs.is_empty() {
            return Err(parse_err(0, "no [config <name>] section"));
        }

        let pipeline = match (self.section(&SectionKind::Pipeline), self.section(&SectionKind::Modifiers)) {
            (None, None) => PipelineModel::reference(),
            (p, m) => {
                let mut pipeline = PipelineModel::reference();
                if let Some(p) = p {
                    apply_pipeline(&mut pipeline, p)?;
                }
                if let Some(m) = m {
                    for e in &m.entries {
                        let param: Param = e.key.parse().map_err(|r: String| parse_err(e.line, r))?;
                        pipeline.modifiers.set(param, parse_value(e)?);
                    }
                }
                pipeline
            }
        };
        pipeline
            .validate()
            .map_err(|e| FileError::Invalid(format!("[pipeline]: {e}")))?;

        let targets = match self.section(&SectionKind::Targets) {
            Some(s) => {
                let t = CalibrationTargets {
                    d0d7: required(s, "d0d7")?,
                    d2d5: required(s, "d2d5")?,
                    d3d4: required(s, "d3d4")?,
                };
                t.validate()
                    .map_err(|e| FileError::Invalid(format!("[targets]: {e}")))?;
                Some(t)
            }
            None => None,
        };

        let (connection_interval_us, transfer_us) = match self.section(&SectionKind::Ble) {
            Some(s) => (
                value_or(s, "connection_interval_us", MIN_CONNECTION_INTERVAL_US)?,
                s.get("transfer_us").map(parse_value).transpose()?,
            ),
            None => (MIN_CONNECTION_INTERVAL_US, None),
        };
        let ble = BleSettings {
            connection_interval_us,
            transfer_us,
        };

        let experiment = Experiment {
            plan: SweepPlan {
                seed,
                rounds,
                attempts_per_round: attempts,
                shuffle,
                spacing_us,
                configs,
            },
            channel,
            pipeline,
            targets,
            ble,
            layout,
        };
        experiment
            .ble_config()
            .validate()
            .map_err(|e| FileError::Invalid(format!("[ble]: {e}")))?;
        Ok(experiment)
    }
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, FileError> {
    e.value
        .parse()
        .map_err(|_| parse_err(e.line, format!("invalid value {:?} for {}", e.value, e.key)))
}

fn value_or<T: FromStr>(s: &Section, key: &str, default: T) -> Result<T, FileError> {
    s.get(key).map_or(Ok(default), parse_value)
}

fn required<T: FromStr>(s: &Section, key: &str) -> Result<T, FileError> {
    let e = s
        .get(key)
        .ok_or_else(|| parse_err(s.line, format!("[{}] requires {key}", s.kind.label())))?;
    parse_value(e)
}

fn keyword<T: FromStr<Err = String>>(e: &Entry) -> Result<T, FileError> {
    e.value
        .parse()
        .map_err(|r: String| parse_err(e.line, format!("{}: {r}", e.key)))
}

fn resolve_config(s: &Section) -> Result<EsbConfig, FileError> {
    let mut c = olcfg_preset();
    for e in &s.entries {
        match e.key.as_str() {
            "crc" => c.crc_mode = keyword(e)?,
            "protocol" => c.protocol_mode = keyword(e)?,
            "bitrate" => c.bitrate_mode = keyword(e)?,
            "txmode" => c.tx_mode = keyword(e)?,
            "payload" => c.payload_mode = keyword(e)?,
            "retransmit_spacing" => c.retransmit_spacing = keyword(e)?,
            "power" => c.tx_power_dbm = parse_value(e)?,
            "payload_len" => c.payload_len_bytes = parse_value(e)?,
            "retransmits" => c.retransmit_count = parse_value(e)?,
            "retransmit_delay_us" => c.retransmit_delay_us = parse_value(e)?,
            other => unreachable!("key {other} accepted by the parser"),
        }
    }
    Ok(c)
}

fn apply_pipeline(pipeline: &mut PipelineModel, s: &Section) -> Result<(), FileError> {
    if let Some(e) = s.get("jitter") {
        pipeline.jitter.family = e
            .value
            .parse::<JitterFamily>()
            .map_err(|r| parse_err(e.line, format!("jitter: {r}")))?;
    }
    if let Some(e) = s.get("jitter_sigma_us") {
        pipeline.jitter.sigma_us = [parse_value(e)?; 7];
    }
    for e in &s.entries {
        if let Ok(stage) = e.key.parse::<Stage>() {
            pipeline.bases_us[stage.index()] = parse_value(e)?;
        } else if let Some(stage) = e.key.strip_prefix("jitter_sigma_us.") {
            let stage: Stage = stage.parse().map_err(|r: String| parse_err(e.line, r))?;
            pipeline.jitter.sigma_us[stage.index()] = parse_value(e)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleSettings {
    pub connection_interval_us: f64,
    /// Defaults to the on-air time of the first ESB config.
    pub transfer_us: Option<f64>,
}

/// A fully resolved experiment file.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub plan: SweepPlan,
    pub channel: ChannelModel,
    pub pipeline: PipelineModel,
    pub targets: Option<CalibrationTargets>,
    pub ble: BleSettings,
    pub layout: LayoutConstants,
}

/// Parses and resolves an experiment file.
pub fn parse_experiment_file(text: &str) -> Result<Experiment, FileError> {
    Document::parse(text)?.resolve()
}

pub(crate) fn render_config_body(c: &EsbConfig) -> String {
    format!(
        "crc = {}\nprotocol = {}\nbitrate = {}\ntxmode = {}\npower = {}\npayload = {}\npayload_len = {}\nretransmits = {}\nretransmit_delay_us = {}\nretransmit_spacing = {}\n",
        c.crc_mode,
        c.protocol_mode,
        c.bitrate_mode,
        c.tx_mode,
        c.tx_power_dbm,
        c.payload_mode,
        c.payload_len_bytes,
        c.retransmit_count,
        c.retransmit_delay_us,
        c.retransmit_spacing,
    )
}

impl Experiment {
    /// The built-in experiment: OLCfg only, 5 rounds of 150 attempts.
    pub fn default_olcfg() -> Self {
        parse_experiment_file("[config olcfg]\n").expect("built-in experiment is valid")
    }

    pub fn ble_config(&self) -> BleConfig {
        BleConfig {
            connection_interval_us: self.ble.connection_interval_us,
            transfer_us: self
                .ble
                .transfer_us
                .unwrap_or_else(|| self.plan.configs[0].config.on_air().as_us()),
        }
    }

    pub fn config(&self, name: &str) -> Option<&NamedConfig> {
        self.plan.configs.iter().find(|c| c.name == name)
    }

    /// Canonical text; parsing it yields an identical experiment.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let p = &self.plan;
        let _ = writeln!(
            out,
            "[sweep]\nseed = {}\nrounds = {}\nattempts = {}\nshuffle = {}\nspacing_us = {}\n",
            p.seed, p.rounds, p.attempts_per_round, p.shuffle, p.spacing_us
        );
        let c = &self.channel;
        let _ = writeln!(
            out,
            "[channel]\np_loss = {}\np_corrupt = {}\nindependent = {}\ndup_escape = {}\n",
            c.p_loss, c.p_corrupt, c.independent, c.dup_escape
        );
        let _ = writeln!(out, "[layout]\n{}", self.layout.render());
        for nc in &p.configs {
            let _ = writeln!(out, "[config {}]\n{}", nc.name, render_config_body(&nc.config));
        }
        out += &render_pipeline(&self.pipeline);
        if let Some(t) = &self.targets {
            let _ = writeln!(out, "{}", render_targets(t));
        }
        let _ = write!(out, "[ble]\nconnection_interval_us = {}\n", self.ble.connection_interval_us);
        if let Some(t) = self.ble.transfer_us {
            let _ = writeln!(out, "transfer_us = {t}");
        }
        out
    }
}

/// `[pipeline]` and `[modifiers]` sections.
pub fn render_pipeline(p: &PipelineModel) -> String {
    let mut out = String::from("[pipeline]\n");
    for stage in Stage::ALL {
        let _ = writeln!(out, "{} = {}", stage.key(), p.base(stage));
    }
    let _ = writeln!(out, "jitter = {}", p.jitter.family.key());
    for stage in Stage::ALL {
        let _ = writeln!(out, "jitter_sigma_us.{} = {}", stage.key(), p.jitter.sigma_us[stage.index()]);
    }
    out += "\n[modifiers]\n";
    for (param, v) in &p.modifiers.entries {
        let _ = writeln!(out, "{param} = {v}");
    }
    out.push('\n');
    out
}

pub fn render_targets(t: &CalibrationTargets) -> String {
    format!("[targets]\nd0d7 = {}\nd2d5 = {}\nd3d4 = {}\n", t.d0d7, t.d2d5, t.d3d4)
}

impl ModifierTable {
    pub fn render(&self) -> String {
        self.entries.iter().map(|(p, v)| format!("{p} = {v}\n")).collect()
    }
}
