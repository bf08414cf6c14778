//! Linux spidev backend with DRDY from a GPIO character device.

use std::fs::{File, OpenOptions};
use std::io;
use std::os::fd::AsRawFd;
use std::path::Path;
use std::time::Duration;

use super::gpio::EdgeLine;
use super::{check_transfer_args, BusConfig, Transport, TransportError};

const SPI_IOC_MAGIC: u8 = b'k';
const IOC_WRITE: u32 = 1;

const fn ioc(dir: u32, ty: u8, nr: u8, size: usize) -> u32 {
    (dir << 30) | ((size as u32) << 16) | ((ty as u32) << 8) | nr as u32
}

const SPI_IOC_WR_MODE: u32 = ioc(IOC_WRITE, SPI_IOC_MAGIC, 1, 1);
const SPI_IOC_WR_BITS_PER_WORD: u32 = ioc(IOC_WRITE, SPI_IOC_MAGIC, 3, 1);
const SPI_IOC_WR_MAX_SPEED_HZ: u32 = ioc(IOC_WRITE, SPI_IOC_MAGIC, 4, 4);
const SPI_IOC_MESSAGE_1: u32 = ioc(
    IOC_WRITE,
    SPI_IOC_MAGIC,
    0,
    std::mem::size_of::<SpiIocTransfer>(),
);

/// `struct spi_ioc_transfer` from `<linux/spi/spidev.h>`.
#[repr(C)]
#[derive(Default)]
struct SpiIocTransfer {
    tx_buf: u64,
    rx_buf: u64,
    len: u32,
    speed_hz: u32,
    delay_usecs: u16,
    bits_per_word: u8,
    cs_change: u8,
    tx_nbits: u8,
    rx_nbits: u8,
    word_delay_usecs: u8,
    pad: u8,
}

const _: () = assert!(std::mem::size_of::<SpiIocTransfer>() == 32);

pub(crate) fn ioctl_ptr<T>(
    file: &File,
    request: u32,
    arg: *mut T,
    what: &str,
) -> Result<(), TransportError> {
    // SAFETY: callers pass a request code whose argument layout matches `T`,
    // and `arg` points to a live, properly aligned `T`.
    let rc = unsafe { libc::ioctl(file.as_raw_fd(), request as _, arg) };
    if rc < 0 {
        Err(TransportError::io(what, io::Error::last_os_error()))
    } else {
        Ok(())
    }
}

pub(crate) fn open_device(path: &Path, write: bool) -> Result<File, TransportError> {
    OpenOptions::new()
        .read(true)
        .write(write)
        .open(path)
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => TransportError::DeviceNotPresent(path.to_path_buf()),
            _ => TransportError::io(format!("opening {}", path.display()), e),
        })
}

pub struct SpidevTransport {
    spi: Option<File>,
    drdy: Option<EdgeLine>,
    speed_hz: u32,
    label: String,
}

impl SpidevTransport {
    pub fn open(config: &BusConfig) -> Result<Self, TransportError> {
        config.validate()?;
        let spi = open_device(&config.spi_device_path, true)?;
        let mut mode = config.spi_mode;
        ioctl_ptr(&spi, SPI_IOC_WR_MODE, &mut mode, "setting SPI mode")?;
        let mut bits = 8u8;
        ioctl_ptr(
            &spi,
            SPI_IOC_WR_BITS_PER_WORD,
            &mut bits,
            "setting SPI word size",
        )?;
        let mut speed = config.max_clock_hz;
        ioctl_ptr(
            &spi,
            SPI_IOC_WR_MAX_SPEED_HZ,
            &mut speed,
            "setting SPI clock",
        )?;
        let drdy = EdgeLine::request_falling(&config.drdy_line.chip, config.drdy_line.offset)?;
        Ok(Self {
            spi: Some(spi),
            drdy: Some(drdy),
            speed_hz: config.max_clock_hz,
            label: format!(
                "spidev {} (DRDY {}:{})",
                config.spi_device_path.display(),
                config.drdy_line.chip.display(),
                config.drdy_line.offset
            ),
        })
    }
}

impl Transport for SpidevTransport {
    fn transfer(&mut self, tx: &[u8], rx: &mut [u8]) -> Result<(), TransportError> {
        let spi = self.spi.as_ref().ok_or(TransportError::BusClosed)?;
        check_transfer_args(tx, rx)?;
        let mut xfer = SpiIocTransfer {
            tx_buf: tx.as_ptr() as u64,
            rx_buf: rx.as_mut_ptr() as u64,
            len: tx.len() as u32,
            speed_hz: self.speed_hz,
            bits_per_word: 8,
            ..Default::default()
        };
        ioctl_ptr(spi, SPI_IOC_MESSAGE_1, &mut xfer, "SPI transfer")
    }

    fn wait_drdy(&mut self, timeout: Duration) -> Result<u64, TransportError> {
        self.drdy
            .as_mut()
            .ok_or(TransportError::BusClosed)?
            .wait_falling(timeout)
    }

    fn close(&mut self) {
        self.spi = None;
        self.drdy = None;
    }

    fn is_open(&self) -> bool {
        self.spi.is_some()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ioctl_numbers_match_kernel_headers() {
        // Values computed by the C preprocessor on x86_64/aarch64.
        assert_eq!(SPI_IOC_WR_MODE, 0x4001_6B01);
        assert_eq!(SPI_IOC_WR_BITS_PER_WORD, 0x4001_6B03);
        assert_eq!(SPI_IOC_WR_MAX_SPEED_HZ, 0x4004_6B04);
        assert_eq!(SPI_IOC_MESSAGE_1, 0x4020_6B00);
    }
}
