//! Socket protocol: JSON text frames `{type, seq, payload}`.
//!
//! `seq` counts up from 0 per sender and connection. Replies carry the
//! `seq` of the frame they answer in `payload.in_reply_to`. The schema in
//! `schema/protocol.schema.json` is the reference.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA: &str = include_str!("../schema/protocol.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plate follows pose or stick commands; no ball control.
    Teleop,
    /// Rolling ball held at the plate centre.
    Balance,
    /// Friction puck traced along letter waypoints.
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    AcquireLease {},
    ReleaseLease {},
    /// Normalized stick axes x, y, z, roll, pitch, yaw in [-1, 1].
    Teleop { axes: [f64; 6] },
    /// Absolute target: metres and degrees.
    Pose { target: [f64; 6] },
    Disturb { direction_deg: f64, magnitude: f64 },
    SetMode {
        mode: Mode,
        #[serde(default)]
        letters: Option<String>,
    },
    Ping {},
}

impl ClientMessage {
    /// Commands that need the lease and count against the rate cap.
    pub fn is_command(&self) -> bool {
        !matches!(self, Self::AcquireLease {} | Self::ReleaseLease {} | Self::Ping {})
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallTelemetry {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub at_fence: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredTelemetry {
    pub x: f64,
    pub y: f64,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FlagTelemetry {
    pub stale: bool,
    pub ik_saturated: bool,
    pub tilt_clamped: bool,
    pub joint_saturated: [bool; 6],
    pub buckled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub schema_version: u32,
    /// Simulated time, s.
    pub t: f64,
    pub mode: Mode,
    /// x, y, z (m), roll, pitch, yaw (deg).
    pub pose: [f64; 6],
    /// deg
    pub joints_command: [f64; 6],
    /// deg
    pub joints_actual: [f64; 6],
    pub ball: BallTelemetry,
    pub measured: Option<MeasuredTelemetry>,
    pub waypoint: Option<[f64; 2]>,
    pub flags: FlagTelemetry,
    pub commander: Option<u64>,
    pub commands_applied: u64,
    pub commands_dropped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        schema_version: u32,
        client_id: u64,
        telemetry_rate: f64,
        command_rate: f64,
        lease_timeout: f64,
    },
    Telemetry(Box<Telemetry>),
    Lease { held: bool, holder: Option<u64>, in_reply_to: Option<u64> },
    Ack { in_reply_to: u64 },
    Rejected { in_reply_to: u64, reason: String },
    Error { in_reply_to: Option<u64>, message: String },
    Pong { in_reply_to: u64 },
}

/// Serialize `message` as a frame with sequence number `seq`.
pub fn encode(message: &ServerMessage, seq: u64) -> String {
    let mut v = serde_json::to_value(message).expect("server messages serialize");
    if let Value::Object(map) = &mut v {
        map.insert("seq".into(), seq.into());
    }
    v.to_string()
}

/// Client frame with the sequence number split off.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientFrame {
    pub seq: u64,
    pub message: ClientMessage,
}

/// Parse a client frame. On failure returns the frame's `seq` when one
/// could be read, and a description.
pub fn decode(text: &str) -> Result<ClientFrame, (Option<u64>, String)> {
    let mut v: Value = serde_json::from_str(text).map_err(|e| (None, format!("malformed JSON: {e}")))?;
    let Value::Object(map) = &mut v else {
        return Err((None, "frame must be a JSON object".into()));
    };
    let seq = match map.remove("seq") {
        Some(Value::Number(n)) if n.as_u64().is_some() => n.as_u64().unwrap_or_default(),
        Some(_) => return Err((None, "seq must be a non-negative integer".into())),
        None => return Err((None, "missing seq".into())),
    };
    if !map.contains_key("payload") {
        return Err((Some(seq), "missing payload".into()));
    }
    if let Some(extra) = map.keys().find(|k| *k != "type" && *k != "payload") {
        return Err((Some(seq), format!("unknown field `{extra}`")));
    }
    let message: ClientMessage = serde_json::from_value(v).map_err(|e| (Some(seq), e.to_string()))?;
    if let ClientMessage::Teleop { axes } = &message {
        if axes.iter().any(|a| !a.is_finite() || a.abs() > 1.0) {
            return Err((Some(seq), "teleop axes must lie in [-1, 1]".into()));
        }
    }
    Ok(ClientFrame { seq, message })
}

/// Encode a client frame; used by tests and tools.
pub fn encode_client(message: &ClientMessage, seq: u64) -> String {
    let mut v = serde_json::to_value(message).expect("client messages serialize");
    if let Value::Object(map) = &mut v {
        map.insert("seq".into(), seq.into());
    }
    v.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_round_trip() {
        let msgs = [
            ClientMessage::AcquireLease {},
            ClientMessage::Teleop { axes: [0.0, 0.5, 1.0, -1.0, 0.0, 0.2] },
            ClientMessage::Disturb { direction_deg: 90.0, magnitude: 0.2 },
            ClientMessage::SetMode { mode: Mode::Trace, letters: Some("HI".into()) },
        ];
        for (i, m) in msgs.iter().enumerate() {
            let f = decode(&encode_client(m, i as u64)).unwrap();
            assert_eq!(f.seq, i as u64);
            assert_eq!(&f.message, m);
        }
    }

    #[test]
    fn empty_payload_frames() {
        let f = decode(r#"{"type":"ping","seq":3,"payload":{}}"#).unwrap();
        assert_eq!(f.message, ClientMessage::Ping {});
    }

    #[test]
    fn malformed_frames_are_described() {
        assert_eq!(decode("{").unwrap_err().0, None);
        assert_eq!(decode(r#"{"type":"ping","payload":{}}"#).unwrap_err().0, None);
        assert_eq!(decode(r#"{"type":"warp","seq":4,"payload":{}}"#).unwrap_err().0, Some(4));
        assert!(decode(r#"{"type":"teleop","seq":5,"payload":{"axes":[2,0,0,0,0,0]}}"#).is_err());
        assert!(decode(r#"{"type":"ping","seq":6,"payload":{},"extra":1}"#).is_err());
    }

    #[test]
    fn server_frames_carry_seq() {
        let v: Value = serde_json::from_str(&encode(&ServerMessage::Ack { in_reply_to: 2 }, 9)).unwrap();
        assert_eq!(v["type"], "ack");
        assert_eq!(v["seq"], 9);
        assert_eq!(v["payload"]["in_reply_to"], 2);
    }
}
