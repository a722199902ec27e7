//! Emulated operator/vehicle channel: latency, jitter, loss, bandwidth,
//! scripted outages and heartbeat-based disconnect detection.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("invalid channel config: {0}")]
    InvalidConfig(String),
    #[error("event at tick {at} is in the past (now {now})")]
    PastEvent { at: u64, now: u64 },
    #[error("invalid quality thresholds: {0}")]
    InvalidThresholds(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub base_latency_ms: f64,
    /// Half-width of the uniform jitter.
    pub jitter_ms: f64,
    pub loss_prob: f64,
    pub heartbeat_period_ms: f64,
    pub disconnect_timeout_ms: f64,
    pub seed: u64,
    /// Serialization rate per direction; `None` is unlimited.
    pub bandwidth_bps: Option<f64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            base_latency_ms: 0.0,
            jitter_ms: 0.0,
            loss_prob: 0.0,
            heartbeat_period_ms: 50.0,
            disconnect_timeout_ms: 300.0,
            seed: 0,
            bandwidth_bps: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: &str| Err(LinkError::InvalidConfig(m.to_string()));
        if !(self.base_latency_ms >= 0.0 && self.base_latency_ms.is_finite()) {
            return bad("base_latency_ms must be finite and >= 0");
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return bad("jitter_ms must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return bad("loss_prob must lie in [0, 1]");
        }
        if !(self.heartbeat_period_ms > 0.0) || !(self.disconnect_timeout_ms > 0.0) {
            return bad("heartbeat period and disconnect timeout must be > 0");
        }
        if self.disconnect_timeout_ms < 2.0 * self.heartbeat_period_ms {
            return bad("disconnect_timeout_ms must be at least twice heartbeat_period_ms");
        }
        if let Some(bw) = self.bandwidth_bps {
            if !(bw > 0.0) {
                return bad("bandwidth_bps must be > 0");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Vehicle to operator.
    Uplink,
    /// Operator to vehicle.
    Downlink,
}

impl Direction {
    fn idx(self) -> usize {
        match self {
            Direction::Uplink => 0,
            Direction::Downlink => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacketKind {
    Control,
    Telemetry,
    Heartbeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub seq: u64,
    pub kind: PacketKind,
    pub direction: Direction,
    pub payload: Vec<u8>,
    pub sent_tick: u64,
    /// `None` once dropped.
    pub deliver_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkEventKind {
    HardDisconnect { duration_ticks: u64 },
    SetLoss { p: f64 },
    SetLatency { ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub at_tick: u64,
    pub kind: LinkEventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinkStats {
    pub mean_latency_ms: f64,
    pub loss_frac: f64,
    pub heartbeat_age_ms: f64,
    pub delivered: u64,
    pub resolved: u64,
}

/// One resolved packet, recorded in resolution order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub seq: u64,
    pub direction: Direction,
    pub sent_tick: u64,
    pub deliver_tick: Option<u64>,
}

const STATS_WINDOW_MS: f64 = 1000.0;

#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    dt_ms: f64,
    rng: ChaCha8Rng,
    next_seq: u64,
    in_flight: Vec<Packet>,
    last_rx: [u64; 2],
    busy_until_ms: [f64; 2],
    /// Merged, sorted `[start, end)` outage windows.
    outages: Vec<(u64, u64)>,
    pending: Vec<LinkEvent>,
    window: VecDeque<(u64, Option<f64>)>,
    trace: Vec<TraceEntry>,
    last_now: u64,
}

impl Channel {
    pub fn new(cfg: ChannelConfig, dt_ms: f64) -> Result<Self, LinkError> {
        cfg.validate()?;
        if !(dt_ms > 0.0) {
            return Err(LinkError::InvalidConfig("dt_ms must be > 0".into()));
        }
        Ok(Channel {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            dt_ms,
            next_seq: 0,
            in_flight: Vec::new(),
            last_rx: [0, 0],
            busy_until_ms: [0.0, 0.0],
            outages: Vec::new(),
            pending: Vec::new(),
            window: VecDeque::new(),
            trace: Vec::new(),
            last_now: 0,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn dt_ms(&self) -> f64 {
        self.dt_ms
    }

    pub fn in_flight(&self) -> &[Packet] {
        &self.in_flight
    }

    pub fn last_rx_tick(&self, dir: Direction) -> u64 {
        self.last_rx[dir.idx()]
    }

    pub fn outages(&self) -> &[(u64, u64)] {
        &self.outages
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    /// Trace rendered one entry per line, for byte comparison.
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for t in &self.trace {
            let d = match t.deliver_tick {
                Some(d) => d.to_string(),
                None => "DROPPED".into(),
            };
            let _ = writeln!(out, "{} {:?} {} {}", t.seq, t.direction, t.sent_tick, d);
        }
        out
    }

    pub fn in_outage(&self, tick: u64) -> bool {
        self.outages.iter().any(|&(a, b)| a <= tick && tick < b)
    }

    fn apply_due(&mut self, now: u64) {
        let mut i = 0;
        while i < self.pending.len() {
            if self.pending[i].at_tick <= now {
                match self.pending.remove(i).kind {
                    LinkEventKind::SetLoss { p } => self.cfg.loss_prob = p,
                    LinkEventKind::SetLatency { ms } => self.cfg.base_latency_ms = ms,
                    LinkEventKind::HardDisconnect { .. } => {}
                }
            } else {
                i += 1;
            }
        }
    }

    /// Schedules an outage or a parameter change.
    pub fn inject_event(&mut self, now: u64, ev: LinkEvent) -> Result<(), LinkError> {
        if ev.at_tick < now {
            return Err(LinkError::PastEvent { at: ev.at_tick, now });
        }
        match ev.kind {
            LinkEventKind::HardDisconnect { duration_ticks } => {
                let end = ev.at_tick.saturating_add(duration_ticks);
                if end > ev.at_tick {
                    self.outages.push((ev.at_tick, end));
                    self.outages.sort_unstable();
                    let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.outages.len());
                    for &(a, b) in &self.outages {
                        match merged.last_mut() {
                            Some(last) if a <= last.1 => last.1 = last.1.max(b),
                            _ => merged.push((a, b)),
                        }
                    }
                    self.outages = merged;
                }
            }
            LinkEventKind::SetLoss { p } if !(0.0..=1.0).contains(&p) => {
                return Err(LinkError::InvalidConfig(format!("loss {p} outside [0, 1]")));
            }
            LinkEventKind::SetLatency { ms } if !(ms >= 0.0 && ms.is_finite()) => {
                return Err(LinkError::InvalidConfig(format!("latency {ms} must be >= 0")));
            }
            _ => self.pending.push(ev),
        }
        Ok(())
    }

    /// Enqueues a packet, deciding its fate now. Returns the sequence number.
    pub fn send(&mut self, kind: PacketKind, direction: Direction, payload: Vec<u8>, now: u64) -> u64 {
        debug_assert!(now >= self.last_now, "time went backwards");
        self.last_now = self.last_now.max(now);
        self.apply_due(now);
        let seq = self.next_seq;
        self.next_seq += 1;
        // both draws happen regardless of outcome so the stream stays aligned
        let u_loss: f64 = self.rng.gen();
        let u_jit: f64 = self.rng.gen();
        let mut pkt = Packet {
            seq,
            kind,
            direction,
            sent_tick: now,
            deliver_tick: None,
            payload,
        };
        if self.in_outage(now) || u_loss < self.cfg.loss_prob {
            self.resolve(&pkt, now);
            return seq;
        }
        let now_ms = now as f64 * self.dt_ms;
        let mut queue_ms = 0.0;
        if let Some(bw) = self.cfg.bandwidth_bps {
            let d = direction.idx();
            let start = self.busy_until_ms[d].max(now_ms);
            let tx = pkt.payload.len() as f64 * 8.0 / bw * 1000.0;
            self.busy_until_ms[d] = start + tx;
            queue_ms = start + tx - now_ms;
        }
        let delay_ms = self.cfg.base_latency_ms + (2.0 * u_jit - 1.0) * self.cfg.jitter_ms + queue_ms;
        let ticks = (delay_ms / self.dt_ms).round().max(0.0) as u64;
        pkt.deliver_tick = Some(now + ticks);
        let key = (now + ticks, seq);
        let at = self
            .in_flight
            .partition_point(|p| (p.deliver_tick.unwrap_or(0), p.seq) <= key);
        self.in_flight.insert(at, pkt);
        seq
    }

    fn resolve(&mut self, pkt: &Packet, now: u64) {
        let latency = pkt
            .deliver_tick
            .map(|d| (d - pkt.sent_tick) as f64 * self.dt_ms);
        self.window.push_back((now, latency));
        self.trace.push(TraceEntry {
            seq: pkt.seq,
            direction: pkt.direction,
            sent_tick: pkt.sent_tick,
            deliver_tick: pkt.deliver_tick,
        });
    }

    /// Delivers every packet due by `now`, in delivery order.
    pub fn step(&mut self, now: u64) -> Vec<Packet> {
        self.last_now = self.last_now.max(now);
        self.apply_due(now);
        let due = self
            .in_flight
            .partition_point(|p| p.deliver_tick.is_some_and(|d| d <= now));
        let batch: Vec<Packet> = self.in_flight.drain(..due).collect();
        let mut delivered = Vec::with_capacity(batch.len());
        for mut pkt in batch {
            let d = pkt.deliver_tick.expect("in-flight packets have a delivery tick");
            if self.in_outage(d) {
                pkt.deliver_tick = None;
                self.resolve(&pkt, d);
                continue;
            }
            self.last_rx[pkt.direction.idx()] = self.last_rx[pkt.direction.idx()].max(d);
            self.resolve(&pkt, d);
            delivered.push(pkt);
        }
        let horizon = (STATS_WINDOW_MS / self.dt_ms).round() as u64;
        while self
            .window
            .front()
            .is_some_and(|(t, _)| t + horizon <= now)
        {
            self.window.pop_front();
        }
        delivered
    }

    /// Rolling statistics over the last second.
    pub fn stats(&self, now: u64) -> LinkStats {
        let age_ms = now.saturating_sub(self.last_rx[Direction::Downlink.idx()]) as f64 * self.dt_ms;
        let lat: Vec<f64> = self.window.iter().filter_map(|(_, l)| *l).collect();
        let resolved = self.window.len() as u64;
        let delivered = lat.len() as u64;
        let mean_latency_ms = if lat.is_empty() {
            age_ms
        } else {
            lat.iter().sum::<f64>() / lat.len() as f64
        };
        let loss_frac = if resolved == 0 {
            0.0
        } else {
            1.0 - delivered as f64 / resolved as f64
        };
        LinkStats {
            mean_latency_ms,
            loss_frac,
            heartbeat_age_ms: age_ms,
            delivered,
            resolved,
        }
    }

    /// True once nothing has arrived on the downlink for longer than the timeout.
    pub fn detect_disconnect(&self, now: u64) -> bool {
        let limit = self.cfg.disconnect_timeout_ms / self.dt_ms;
        (now.saturating_sub(self.last_rx[Direction::Downlink.idx()]) as f64) > limit
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityClass {
    Unusable,
    Degraded,
    Operational,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub degraded_latency_ms: f64,
    pub unusable_latency_ms: f64,
    pub degraded_loss: f64,
    pub unusable_loss: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds {
            degraded_latency_ms: 100.0,
            unusable_latency_ms: 250.0,
            degraded_loss: 0.05,
            unusable_loss: 0.2,
        }
    }
}

impl QualityThresholds {
    pub fn validate(&self) -> Result<(), LinkError> {
        if !(self.degraded_latency_ms < self.unusable_latency_ms) {
            return Err(LinkError::InvalidThresholds("latency thresholds not increasing".into()));
        }
        if !(self.degraded_loss < self.unusable_loss) {
            return Err(LinkError::InvalidThresholds("loss thresholds not increasing".into()));
        }
        Ok(())
    }
}

/// Worst-of classification; a metric degrades once strictly above its threshold.
pub fn classify_quality(stats: &LinkStats, th: &QualityThresholds) -> QualityClass {
    let by = |v: f64, deg: f64, unus: f64| {
        if v > unus {
            QualityClass::Unusable
        } else if v > deg {
            QualityClass::Degraded
        } else {
            QualityClass::Operational
        }
    };
    by(stats.mean_latency_ms, th.degraded_latency_ms, th.unusable_latency_ms)
        .min(by(stats.loss_frac, th.degraded_loss, th.unusable_loss))
}
