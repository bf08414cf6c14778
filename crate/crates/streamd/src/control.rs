//! JSON control messages from clients and the replies sent back.

use std::path::PathBuf;

use pieeg_core::dsp::{BandpassSpec, NotchSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::record::RecordFormat;

pub const COMMANDS: &[&str] = &[
    "start",
    "stop",
    "set_gain",
    "set_test_signal",
    "set_filter",
    "mark_event",
    "get_status",
    "record_start",
    "record_stop",
];

const NO_ARGS: &[&str] = &["start", "stop", "get_status", "record_stop"];

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlCommand {
    Start,
    Stop,
    /// `channel` is 1-based; omitted means every channel.
    SetGain {
        #[serde(default)]
        channel: Option<u8>,
        gain: u32,
    },
    SetTestSignal {
        on: bool,
    },
    /// Replaces the whole live filter chain; a missing stage is disabled.
    SetFilter {
        #[serde(default)]
        bandpass: Option<BandpassSpec>,
        #[serde(default)]
        notch: Option<NotchSpec>,
    },
    MarkEvent {
        label: String,
    },
    GetStatus,
    RecordStart {
        path: PathBuf,
        #[serde(default)]
        format: RecordFormat,
        #[serde(default)]
        rotate_mb: Option<u64>,
    },
    RecordStop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlRequest {
    pub id: Value,
    pub command: ControlCommand,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ControlError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("missing \"cmd\" field")]
    MissingCmd,
    #[error("unknown command: {0}")]
    UnknownCommand(String),
    #[error("bad arguments for {cmd}: {message}")]
    BadArgs { cmd: String, message: String },
}

/// Parses one control message. The reply id is the client's `id` field, or
/// `default_id` (the message's position on the connection) when absent.
pub fn parse_control(text: &str, default_id: u64) -> Result<ControlRequest, (Value, ControlError)> {
    let fallback = Value::from(default_id);
    let value: Value = serde_json::from_str(text)
        .map_err(|e| (fallback.clone(), ControlError::Malformed(e.to_string())))?;
    let Value::Object(mut obj) = value else {
        return Err((
            fallback,
            ControlError::Malformed("expected a JSON object".into()),
        ));
    };
    let id = obj.remove("id").unwrap_or(fallback);
    let cmd = match obj.get("cmd") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err((
                id,
                ControlError::Malformed("\"cmd\" must be a string".into()),
            ))
        }
        None => return Err((id, ControlError::MissingCmd)),
    };
    if !COMMANDS.contains(&cmd.as_str()) {
        return Err((id, ControlError::UnknownCommand(cmd)));
    }
    if NO_ARGS.contains(&cmd.as_str()) {
        if let Some(extra) = obj.keys().find(|k| *k != "cmd") {
            let message = format!("unexpected field `{extra}`");
            return Err((id, ControlError::BadArgs { cmd, message }));
        }
    }
    match serde_json::from_value(Value::Object(obj)) {
        Ok(command) => Ok(ControlRequest { id, command }),
        Err(e) => Err((
            id,
            ControlError::BadArgs {
                cmd,
                message: e.to_string(),
            },
        )),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    #[serde(rename = "type")]
    pub kind: String,
    pub id: Value,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Reply {
    pub fn ok(id: Value, result: Value) -> Self {
        Self {
            kind: "reply".into(),
            id,
            ok: true,
            result: (!result.is_null()).then_some(result),
            error: None,
        }
    }

    pub fn err(id: Value, error: impl ToString) -> Self {
        Self {
            kind: "reply".into(),
            id,
            ok: false,
            result: None,
            error: Some(error.to_string()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("reply serializes")
    }
}
