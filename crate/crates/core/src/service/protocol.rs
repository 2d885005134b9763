//! Length-prefixed JSON messages between the live simulator and its clients.
//!
//! Every message is a 4-byte little-endian payload length followed by a UTF-8
//! JSON object whose `type` field selects the variant.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::session::Frame;
use crate::formats::{SavedState, WaypointExport};
use crate::plant::CHANNELS;
use crate::sysid::KeypointMap;
use crate::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;

/// Payloads above this size are rejected before allocation.
pub const MAX_MESSAGE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello {
        #[serde(default)]
        client: Option<String>,
    },
    ListModels,
    SelectModel {
        model: String,
    },
    SetPressures {
        u: [f64; CHANNELS],
    },
    /// Sends the current frame immediately, outside the tick schedule.
    Frame,
    SaveState {
        #[serde(default = "default_static")]
        is_static: bool,
    },
    Export {
        #[serde(default)]
        horizon: Option<usize>,
    },
    Reset,
}

fn default_static() -> bool {
    true
}

impl ClientMessage {
    pub const KINDS: [&'static str; 8] = [
        "hello",
        "list_models",
        "select_model",
        "set_pressures",
        "frame",
        "save_state",
        "export",
        "reset",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    UnknownType,
    BadMessage,
    NoModel,
    UnknownModel,
    InvalidArgument,
    Diverged,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol: u32,
        tick_hz: f64,
        slider_max: f64,
        /// Overlay maps per model, `center = origin + scale * z_pair`.
        keypoint_maps: BTreeMap<String, KeypointMap>,
    },
    Models {
        models: Vec<String>,
    },
    ModelSelected {
        model: String,
        height: usize,
        width: usize,
        latent_dim: usize,
        u: [f64; CHANNELS],
    },
    Frame(Frame),
    Saved {
        index: usize,
        state: SavedState,
    },
    Export {
        export: WaypointExport,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            message: message.into(),
        }
    }
}

/// Writes one framed message.
pub fn write_message<W: Write, T: Serialize>(out: &mut W, msg: &T) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&n| n as usize <= MAX_MESSAGE_BYTES)
        .ok_or_else(|| Error::InvalidArgument(format!("message of {} bytes is too large", body.len())))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&body)?;
    out.flush()?;
    Ok(())
}

/// Reads one framed payload; `None` on a clean end of stream before a prefix.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < prefix.len() {
        match input.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => {
                return Err(Error::Malformed {
                    format: "message",
                    reason: "stream ended inside a length prefix".into(),
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_MESSAGE_BYTES {
        return Err(Error::Malformed {
            format: "message",
            reason: format!("declared length {len} exceeds {MAX_MESSAGE_BYTES}"),
        });
    }
    let mut body = vec![0u8; len];
    input.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Malformed {
            format: "message",
            reason: format!("stream ended inside a {len}-byte payload"),
        },
        _ => e.into(),
    })?;
    Ok(Some(body))
}

/// Reads and decodes one message.
pub fn read_message<R: Read, T: for<'de> Deserialize<'de>>(input: &mut R) -> Result<Option<T>> {
    match read_frame(input)? {
        Some(body) => Ok(Some(serde_json::from_slice(&body)?)),
        None => Ok(None),
    }
}

/// Decodes a client payload, telling unknown message kinds apart from
/// malformed known ones.
pub fn parse_client_message(body: &[u8]) -> std::result::Result<ClientMessage, ServerMessage> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| ServerMessage::error(ErrorCode::BadMessage, format!("invalid JSON: {e}")))?;
    let kind = value
        .get("type")
        .and_then(|t| t.as_str())
        .ok_or_else(|| ServerMessage::error(ErrorCode::BadMessage, "message has no string `type` field"))?;
    if !ClientMessage::KINDS.contains(&kind) {
        return Err(ServerMessage::error(ErrorCode::UnknownType, format!("unknown message type `{kind}`")));
    }
    let kind = kind.to_string();
    serde_json::from_value(value).map_err(|e| ServerMessage::error(ErrorCode::BadMessage, format!("bad `{kind}` message: {e}")))
}
