//! Run logs, metrics recomputed from them, and rendered reports.
//!
//! A log is line-delimited JSON: one header, one record per tick, one
//! summary. Field order is fixed by the struct definitions below.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mode::{Policy, RiskClass, SystemMode};
use crate::world::{CollisionReport, ControlInput};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("log has no header")]
    MissingHeader,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlSource {
    Ads,
    Operator,
    Mrm,
}

impl ControlSource {
    /// The only source allowed to drive in `mode`.
    pub fn for_mode(mode: SystemMode) -> ControlSource {
        match mode {
            SystemMode::AdsInOdd | SystemMode::AdsOutOfOdd | SystemMode::Undefined => ControlSource::Ads,
            SystemMode::TeleopInOdd | SystemMode::TeleopOutOfOdd => ControlSource::Operator,
            SystemMode::MrmActive | SystemMode::MinimalRiskCondition => ControlSource::Mrm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub dt_ms: f64,
    pub ticks: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoRecord {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    /// Lane arc length of the vehicle center.
    pub s: f64,
    /// Signed lateral offset from the lane center.
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    /// False when the monitor could not evaluate the perceived snapshot.
    pub ok: bool,
    pub inside: bool,
    pub truth_inside: bool,
    /// Finite margins only.
    pub margins: BTreeMap<String, f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapabilityRecord {
    pub capable: bool,
    pub required_m: f64,
    pub available_m: f64,
    pub margin_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub latency_ms: f64,
    pub loss_frac: f64,
    pub heartbeat_age_ms: f64,
    pub quality: String,
    pub connected: bool,
    pub outage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerRecord {
    pub front_s: f64,
    pub speed: f64,
    pub gap_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub decel: f64,
    pub target_stop_s: f64,
    /// Largest center arc length that keeps the vehicle inside the corridor.
    pub stop_limit_s: f64,
    pub half_width: f64,
    pub emergency: bool,
    pub straight_line: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub t_ms: u64,
    pub mode: SystemMode,
    pub risk: RiskClass,
    pub events: Vec<String>,
    pub actions: Vec<String>,
    pub source: ControlSource,
    pub control: ControlInput,
    pub ego: EgoRecord,
    pub in_zone: bool,
    pub ads: VerdictRecord,
    pub teleop: VerdictRecord,
    pub cap: CapabilityRecord,
    pub link: LinkRecord,
    /// Operator control packets delivered to the vehicle this tick.
    pub op_rx: u32,
    pub follower: Option<FollowerRecord>,
    pub collisions: Vec<CollisionReport>,
    pub plan: Option<PlanRecord>,
    pub fault: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Tick(Box<TickRecord>),
    Summary(Box<Metrics>),
}

impl LogLine {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log lines serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub policy: Policy,
    pub seed: u64,
    pub ticks: u64,
    pub undefined_entries: u32,
    pub mrm_started: u32,
    pub mrm_completed: u32,
    pub collisions: BTreeMap<String, u32>,
    pub hazards_logged: u32,
    pub unreasonable_risk_flags: u32,
    pub handovers_to_teleop: u32,
    pub handovers_to_ads: u32,
    /// Smallest margin seen per `subsystem.key`.
    pub min_margin: BTreeMap<String, f64>,
    pub operator_packets_in_outage: u32,
    pub final_mode: Option<SystemMode>,
    pub final_speed: f64,
    pub stop_point_in_zone: bool,
    /// Set once an MRM plan exists.
    pub stop_in_corridor: Option<bool>,
    pub failed: Option<String>,
}

impl Metrics {
    pub fn collisions_total(&self) -> u32 {
        self.collisions.values().sum()
    }

    pub fn collisions_of(&self, kind: &str) -> u32 {
        self.collisions.get(kind).copied().unwrap_or(0)
    }
}

/// Folds tick records into [`Metrics`]; the simulator and the log reader
/// share it so the summary is recomputable.
#[derive(Debug, Clone)]
pub struct MetricsBuilder {
    m: Metrics,
    prev_mode: Option<SystemMode>,
    last: Option<TickRecord>,
    plan: Option<PlanRecord>,
}

impl MetricsBuilder {
    pub fn new(header: &LogHeader) -> Self {
        MetricsBuilder {
            m: Metrics {
                scenario: header.scenario.clone(),
                policy: header.policy,
                seed: header.seed,
                ticks: 0,
                undefined_entries: 0,
                mrm_started: 0,
                mrm_completed: 0,
                collisions: BTreeMap::new(),
                hazards_logged: 0,
                unreasonable_risk_flags: 0,
                handovers_to_teleop: 0,
                handovers_to_ads: 0,
                min_margin: BTreeMap::new(),
                operator_packets_in_outage: 0,
                final_mode: None,
                final_speed: 0.0,
                stop_point_in_zone: false,
                stop_in_corridor: None,
                failed: None,
            },
            prev_mode: None,
            last: None,
            plan: None,
        }
    }

    pub fn push(&mut self, r: &TickRecord) {
        let m = &mut self.m;
        m.ticks += 1;
        let entered = |mode| r.mode == mode && self.prev_mode != Some(mode);
        if entered(SystemMode::Undefined) {
            m.undefined_entries += 1;
        }
        if entered(SystemMode::MinimalRiskCondition) {
            m.mrm_completed += 1;
        }
        for a in &r.actions {
            match a.as_str() {
                "StartMrm" => m.mrm_started += 1,
                "LogHazard" => m.hazards_logged += 1,
                "FlagUnreasonableRisk" => m.unreasonable_risk_flags += 1,
                "GrantControl(teleop)" => m.handovers_to_teleop += 1,
                "GrantControl(ads)" => m.handovers_to_ads += 1,
                _ => {}
            }
        }
        for c in &r.collisions {
            let kind = match c {
                CollisionReport::None => continue,
                CollisionReport::Static { .. } => "static",
                CollisionReport::RearEnd { .. } => "rear_end",
            };
            *m.collisions.entry(kind.to_string()).or_insert(0) += 1;
        }
        for (prefix, v) in [("ads", &r.ads), ("teleop", &r.teleop)] {
            for (k, x) in &v.margins {
                let e = m.min_margin.entry(format!("{prefix}.{k}")).or_insert(f64::INFINITY);
                *e = e.min(*x);
            }
        }
        if r.link.outage && r.op_rx > 0 {
            m.operator_packets_in_outage += r.op_rx;
        }
        if let Some(p) = r.plan {
            self.plan = Some(p);
        }
        if let (Some(f), None) = (&r.fault, &m.failed) {
            m.failed = Some(f.clone());
        }
        self.prev_mode = Some(r.mode);
        self.last = Some(r.clone());
    }

    pub fn finish(mut self) -> Metrics {
        if let Some(r) = &self.last {
            self.m.final_mode = Some(r.mode);
            self.m.final_speed = r.ego.speed;
            self.m.stop_point_in_zone = r.ego.speed == 0.0 && r.in_zone;
            self.m.stop_in_corridor = self
                .plan
                .map(|p| r.ego.d.abs() <= p.half_width && r.ego.s <= p.stop_limit_s + 1e-6);
        }
        self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub header: LogHeader,
    pub ticks: Vec<TickRecord>,
    pub summary: Option<Metrics>,
}

pub fn parse_log(text: &str) -> Result<ParsedLog, LogError> {
    let mut header = None;
    let mut ticks = Vec::new();
    let mut summary = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(line).map_err(|e| LogError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Header(h) => header = Some(h),
            LogLine::Tick(t) => ticks.push(*t),
            LogLine::Summary(m) => summary = Some(*m),
        }
    }
    Ok(ParsedLog {
        header: header.ok_or(LogError::MissingHeader)?,
        ticks,
        summary,
    })
}

/// Metrics recomputed from the tick records alone.
pub fn recompute_metrics(log: &ParsedLog) -> Metrics {
    let mut b = MetricsBuilder::new(&log.header);
    for t in &log.ticks {
        b.push(t);
    }
    let mut m = b.finish();
    // The failure cause is the only summary field not derivable per tick
    // when the fault line was the last one.
    if m.failed.is_none() {
        m.failed = log.summary.as_ref().and_then(|s| s.failed.clone());
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

pub const CSV_HEADER: &str = "scenario,policy,seed,ticks,undefined_entries,mrm_started,mrm_completed,\
collisions_static,collisions_rear_end,hazards_logged,unreasonable_risk_flags,final_mode,final_speed,\
stop_point_in_zone,stop_in_corridor,operator_packets_in_outage,failed,min_margin";

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn margins_cell(m: &Metrics) -> String {
    m.min_margin
        .iter()
        .map(|(k, v)| format!("{k}={v:.4}"))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn render_report(metrics: &[Metrics], format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for m in metrics {
                let cells = [
                    csv_field(&m.scenario),
                    m.policy.name().to_string(),
                    m.seed.to_string(),
                    m.ticks.to_string(),
                    m.undefined_entries.to_string(),
                    m.mrm_started.to_string(),
                    m.mrm_completed.to_string(),
                    m.collisions_of("static").to_string(),
                    m.collisions_of("rear_end").to_string(),
                    m.hazards_logged.to_string(),
                    m.unreasonable_risk_flags.to_string(),
                    opt(&m.final_mode),
                    format!("{:.3}", m.final_speed),
                    m.stop_point_in_zone.to_string(),
                    opt(&m.stop_in_corridor),
                    m.operator_packets_in_outage.to_string(),
                    csv_field(&opt(&m.failed)),
                    csv_field(&margins_cell(m)),
                ];
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            if metrics.is_empty() {
                out.push_str("no runs\n");
            }
            for m in metrics {
                let dash = |s: String| if s.is_empty() { "-".to_string() } else { s };
                let _ = writeln!(out, "{} [{} seed {}] {} ticks", m.scenario, m.policy.name(), m.seed, m.ticks);
                let _ = writeln!(
                    out,
                    "  undefined entries {}  mrm started {}  mrm completed {}",
                    m.undefined_entries, m.mrm_started, m.mrm_completed
                );
                let _ = writeln!(
                    out,
                    "  collisions static {}  rear-end {}  hazards {}  risk flags {}",
                    m.collisions_of("static"),
                    m.collisions_of("rear_end"),
                    m.hazards_logged,
                    m.unreasonable_risk_flags
                );
                let _ = writeln!(
                    out,
                    "  final mode {}  final speed {:.3} m/s  stop in zone {}  stop in corridor {}",
                    dash(opt(&m.final_mode)),
                    m.final_speed,
                    m.stop_point_in_zone,
                    dash(opt(&m.stop_in_corridor))
                );
                let _ = writeln!(out, "  failed {}", dash(opt(&m.failed)));
                for (k, v) in &m.min_margin {
                    let _ = writeln!(out, "  min margin {k} {v:.4}");
                }
            }
        }
    }
    out
}

/// Where two logs first differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Header,
    Tick(u64),
    Summary,
    Length { expected_lines: usize, actual_lines: usize },
}

pub fn first_divergence(expected: &str, actual: &str) -> Option<Divergence> {
    let a: Vec<&str> = expected.lines().collect();
    let b: Vec<&str> = actual.lines().collect();
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x != y {
            return Some(if i == 0 {
                Divergence::Header
            } else if i + 1 == a.len() || i + 1 == b.len() {
                Divergence::Summary
            } else {
                Divergence::Tick(i as u64 - 1)
            });
        }
    }
    if a.len() != b.len() || expected.len() != actual.len() {
        return Some(Divergence::Length {
            expected_lines: a.len(),
            actual_lines: b.len(),
        });
    }
    None
}
