//! The physical link: full-duplex SPI transfers plus a DRDY edge wait.
//!
//! [`Transport`] is implemented by the Linux spidev/GPIO backend and by the
//! simulator; upper layers cannot tell them apart except by timing.

mod clock;
#[cfg(target_os = "linux")]
mod gpio;
#[cfg(target_os = "linux")]
mod spidev;

use std::io;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{monotonic_ns, sleep_until_ns};
#[cfg(target_os = "linux")]
pub use spidev::SpidevTransport;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("device not found: {0}")]
    DeviceNotPresent(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("bus is closed")]
    BusClosed,
    #[error("timed out waiting for DRDY")]
    Timeout,
    #[error("invalid transfer: {0}")]
    InvalidArgument(String),
    #[error("invalid bus configuration: {0}")]
    Config(String),
    #[error("the hardware backend is only available on Linux")]
    Unsupported,
}

impl TransportError {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        TransportError::Io {
            context: context.into(),
            source,
        }
    }
}

pub trait Transport: Send {
    /// Clocks `tx` out while clocking the same number of bytes into `rx`.
    fn transfer(&mut self, tx: &[u8], rx: &mut [u8]) -> Result<(), TransportError>;

    /// Blocks until the next DRDY falling edge and returns its monotonic
    /// timestamp in nanoseconds.
    fn wait_drdy(&mut self, timeout: Duration) -> Result<u64, TransportError>;

    fn close(&mut self);

    fn is_open(&self) -> bool;

    fn describe(&self) -> String;

    /// Allocating convenience wrapper around [`Transport::transfer`].
    fn transfer_vec(&mut self, tx: &[u8]) -> Result<Vec<u8>, TransportError> {
        let mut rx = vec![0u8; tx.len()];
        self.transfer(tx, &mut rx)?;
        Ok(rx)
    }
}

pub(crate) fn check_transfer_args(tx: &[u8], rx: &[u8]) -> Result<(), TransportError> {
    if tx.is_empty() {
        return Err(TransportError::InvalidArgument("empty transfer".into()));
    }
    if tx.len() != rx.len() {
        return Err(TransportError::InvalidArgument(format!(
            "tx is {} bytes but rx is {}",
            tx.len(),
            rx.len()
        )));
    }
    Ok(())
}

/// GPIO line carrying DRDY.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrdyLine {
    pub chip: PathBuf,
    pub offset: u32,
}

/// SPI and DRDY wiring.
///
/// The defaults follow the shield's usual wiring on a Raspberry Pi 40-pin
/// header; verify them against your board revision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusConfig {
    pub spi_device_path: PathBuf,
    /// CPOL/CPHA mode, 0..=3.
    pub spi_mode: u8,
    pub max_clock_hz: u32,
    pub drdy_line: DrdyLine,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            spi_device_path: PathBuf::from("/dev/spidev0.0"),
            spi_mode: 1,
            max_clock_hz: 4_000_000,
            drdy_line: DrdyLine {
                chip: PathBuf::from("/dev/gpiochip0"),
                offset: 26,
            },
        }
    }
}

impl BusConfig {
    pub const MIN_CLOCK_HZ: u32 = 100_000;
    pub const MAX_CLOCK_HZ: u32 = 20_000_000;

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.spi_mode > 3 {
            return Err(TransportError::Config(format!(
                "spi_mode must be 0..=3, got {}",
                self.spi_mode
            )));
        }
        if !(Self::MIN_CLOCK_HZ..=Self::MAX_CLOCK_HZ).contains(&self.max_clock_hz) {
            return Err(TransportError::Config(format!(
                "max_clock_hz must be in {}..={}, got {}",
                Self::MIN_CLOCK_HZ,
                Self::MAX_CLOCK_HZ,
                self.max_clock_hz
            )));
        }
        Ok(())
    }
}

/// Opens the hardware backend.
pub fn open_spidev(config: &BusConfig) -> Result<Box<dyn Transport>, TransportError> {
    config.validate()?;
    #[cfg(target_os = "linux")]
    {
        Ok(Box::new(SpidevTransport::open(config)?))
    }
    #[cfg(not(target_os = "linux"))]
    {
        Err(TransportError::Unsupported)
    }
}

/// Shared slot holding a bus while no session owns it.
///
/// A session takes the transport out for its lifetime and hands it back when
/// stopped, so a second session on the same handle fails fast.
#[derive(Clone)]
pub struct BusHandle {
    slot: Arc<Mutex<Option<Box<dyn Transport>>>>,
}

impl BusHandle {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self::from_boxed(Box::new(transport))
    }

    pub fn from_boxed(transport: Box<dyn Transport>) -> Self {
        Self {
            slot: Arc::new(Mutex::new(Some(transport))),
        }
    }

    pub fn take(&self) -> Option<Box<dyn Transport>> {
        self.slot.lock().expect("bus slot poisoned").take()
    }

    pub fn restore(&self, transport: Box<dyn Transport>) {
        *self.slot.lock().expect("bus slot poisoned") = Some(transport);
    }

    pub fn is_available(&self) -> bool {
        self.slot.lock().expect("bus slot poisoned").is_some()
    }
}

impl std::fmt::Debug for BusHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BusHandle")
            .field("available", &self.is_available())
            .finish()
    }
}
