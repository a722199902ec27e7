//! Gateway wire protocol: JSON text frames over WebSocket.
//!
//! A session opens with a client `hello` carrying [`PROTOCOL_VERSION`]. The
//! server answers with its own `hello`, then streams telemetry at 20 Hz.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mode::{Controller, RiskClass, SystemMode};

pub const PROTOCOL_VERSION: u32 = 1;

/// Close code sent when the client speaks another protocol version.
pub const CLOSE_VERSION_MISMATCH: u16 = 4001;
/// Close code sent on malformed or out-of-order client messages.
pub const CLOSE_PROTOCOL_VIOLATION: u16 = 4002;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("expected hello first")]
    HelloExpected,
    #[error("unsupported protocol version {got}, server speaks {PROTOCOL_VERSION}")]
    VersionMismatch { got: u32 },
    #[error("unexpected second hello")]
    DuplicateHello,
}

impl ProtocolError {
    pub fn close_code(&self) -> u16 {
        match self {
            ProtocolError::VersionMismatch { .. } => CLOSE_VERSION_MISMATCH,
            _ => CLOSE_PROTOCOL_VIOLATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        version: u32,
    },
    Control {
        client_tick: u64,
        steering_rad: f64,
        accel_mps2: f64,
    },
    HandoverAck {
        accept: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Notification {
    DisconnectDetected,
    Reconnected,
    MrmStarted,
    MrcReached,
    UndefinedEntered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        version: u32,
        scenario: String,
        dt_ms: f64,
    },
    Telemetry(Box<TelemetryFrame>),
    HandoverOffer {
        target: Controller,
    },
    Event {
        kind: Notification,
        at_tick: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictView {
    pub inside: bool,
    pub margins: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddView {
    pub ads: VerdictView,
    pub teleop: VerdictView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkView {
    pub latency_ms: f64,
    pub loss_frac: f64,
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrmView {
    pub capable: bool,
    pub margin_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstacleView {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub length: f64,
    pub width: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub lane: Vec<[f64; 2]>,
    pub lane_width: f64,
    /// Obstacles near the vehicle.
    pub obstacles: Vec<ObstacleView>,
    pub zone: Option<[f64; 2]>,
    pub follower: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub tick: u64,
    pub pose: Pose,
    pub speed_mps: f64,
    pub mode: SystemMode,
    pub risk_class: RiskClass,
    pub odd: OddView,
    pub link: LinkView,
    pub mrm: MrmView,
    pub scene: SceneView,
}

pub fn parse_client_message(text: &str) -> Result<ClientMessage, ProtocolError> {
    serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Validates the opening message of a session.
pub fn check_hello(msg: &ClientMessage) -> Result<(), ProtocolError> {
    match msg {
        ClientMessage::Hello { version } if *version == PROTOCOL_VERSION => Ok(()),
        ClientMessage::Hello { version } => Err(ProtocolError::VersionMismatch { got: *version }),
        _ => Err(ProtocolError::HelloExpected),
    }
}

pub fn encode_server_message(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}
