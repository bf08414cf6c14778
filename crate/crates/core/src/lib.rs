//! Device codec, transports, simulator, acquisition engine and filters for a
//! PiEEG (ADS1299) front-end.

pub mod acquisition;
pub mod codec;
pub mod config;
pub mod dsp;
pub mod sim;
pub mod transport;

pub use acquisition::{Sample, SampleBlock, Session, SessionError, SessionEvent, SessionStats};
pub use config::SessionConfig;
pub use sim::{SimConfig, SimController, SimTransport};
pub use transport::{BusHandle, Transport, TransportError};
