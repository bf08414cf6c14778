//! Streaming daemon: binary wire format, control protocol, recording,
//! replay and the WebSocket/TCP server.

pub mod control;
pub mod record;
pub mod replay;
pub mod server;
pub mod wire;

pub use control::{parse_control, ControlCommand, ControlError, Reply};
pub use record::{record_stream, RecordFormat, RecordSummary, Recorder, RecordingSink};
pub use replay::{read_log, replay, ReplayStop, ReplaySummary};
pub use server::{serve, DaemonConfig, DaemonHandle, ServeError};
pub use wire::{WireError, WireFrame};
