//! Line-delimited JSON messages, version 1.
//!
//! Every frame is one JSON object terminated by `\n` with a `type` field.
//! Floating-point fields are rounded to 6 decimals on encode.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::mpc::{ControllerVariant, DelayModel};

pub const PROTOCOL_VERSION: u32 = 1;
pub const SUPPORTED_VERSIONS: &[u32] = &[PROTOCOL_VERSION];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        version: u32,
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    DevicePose {
        x_h: Vec<f64>,
        v_h: Vec<f64>,
    },
    Clutch {
        engage: bool,
    },
    Variant {
        variant: ControllerVariant,
    },
    Delay {
        model: DelayModel,
    },
    Pause,
    Resume,
    Reset,
}

impl ClientMessage {
    pub const TYPES: &'static [&'static str] =
        &["hello", "device_pose", "clutch", "variant", "delay", "pause", "resume", "reset"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallGeometry {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleGeometry {
    pub center: Vec<f64>,
    pub radius: f64,
    pub buffer: f64,
}

/// Static scene description sent once in `welcome`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionInfo {
    pub scenario: String,
    pub config_hash: String,
    pub ee_dim: usize,
    pub variant: ControllerVariant,
    pub telemetry_hz: f64,
    pub pace: f64,
    pub workspace_min: Vec<f64>,
    pub workspace_max: Vec<f64>,
    pub link_lengths: Option<Vec<f64>>,
    pub wall: Option<WallGeometry>,
    pub obstacles: Vec<ObstacleGeometry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetryFrame {
    /// Session time (s), monotone across resets.
    pub t: f64,
    /// Simulation time since the last reset (s).
    pub sim_t: f64,
    pub ee: Vec<f64>,
    pub x_d: Vec<f64>,
    pub v_d: Vec<f64>,
    pub joints: Vec<Vec<f64>>,
    pub contact_force: Vec<f64>,
    pub f_hf: Vec<f64>,
    pub policy_age_ms: Option<f64>,
    pub variant: ControllerVariant,
    pub clutched: bool,
    pub paused: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    HandshakeRequired,
    NotOperator,
    InvalidValue,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServerMessage {
    Welcome {
        version: u32,
        role: Role,
        session: SessionInfo,
    },
    Reject {
        reason: String,
        supported: Vec<u32>,
    },
    Telemetry(TelemetryFrame),
    Notice {
        message: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        field: Option<String>,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub const TYPES: &'static [&'static str] = &["welcome", "reject", "telemetry", "notice", "error"];

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message type {0:?}")]
    UnknownType(String),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::Malformed,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
        }
    }
}

/// Rounds to 6 decimals; the result prints as at most 6 fractional digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_value),
        Value::Object(o) => o.values_mut().for_each(round_value),
        _ => {}
    }
}

/// One frame, without the trailing newline.
pub fn encode<T: Serialize>(message: &T) -> String {
    let mut v = serde_json::to_value(message).expect("protocol messages serialize");
    round_value(&mut v);
    v.to_string()
}

fn decode_as<T: DeserializeOwned>(line: &str, types: &[&str]) -> Result<T, ProtocolError> {
    let v: Value = serde_json::from_str(line.trim_end()).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let ty = v
        .get("type")
        .ok_or_else(|| ProtocolError::Malformed("missing \"type\" field".into()))?
        .as_str()
        .ok_or_else(|| ProtocolError::Malformed("\"type\" must be a string".into()))?;
    if !types.contains(&ty) {
        return Err(ProtocolError::UnknownType(ty.to_string()));
    }
    serde_json::from_value(v).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

pub fn decode_client(line: &str) -> Result<ClientMessage, ProtocolError> {
    decode_as(line, ClientMessage::TYPES)
}

pub fn decode_server(line: &str) -> Result<ServerMessage, ProtocolError> {
    decode_as(line, ServerMessage::TYPES)
}
