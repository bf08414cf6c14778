//! GPIO character-device (uAPI v2) edge events.

use std::fs::File;
use std::io::{self, Read};
use std::os::fd::{AsRawFd, FromRawFd};
use std::path::Path;
use std::time::Duration;

use super::clock::monotonic_ns;
use super::spidev::{ioctl_ptr, open_device};
use super::TransportError;

const GPIO_V2_LINES_MAX: usize = 64;
const GPIO_MAX_NAME_SIZE: usize = 32;
const GPIO_V2_LINE_NUM_ATTRS_MAX: usize = 10;

const GPIO_V2_LINE_FLAG_INPUT: u64 = 1 << 2;
const GPIO_V2_LINE_FLAG_EDGE_FALLING: u64 = 1 << 4;
const GPIO_V2_LINE_EVENT_FALLING_EDGE: u32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Default)]
struct LineAttribute {
    id: u32,
    padding: u32,
    value: u64,
}

#[repr(C)]
#[derive(Clone, Copy, Default)]
struct LineConfigAttribute {
    attr: LineAttribute,
    mask: u64,
}

#[repr(C)]
#[derive(Default)]
struct LineConfig {
    flags: u64,
    num_attrs: u32,
    padding: [u32; 5],
    attrs: [LineConfigAttribute; GPIO_V2_LINE_NUM_ATTRS_MAX],
}

#[repr(C)]
struct LineRequest {
    offsets: [u32; GPIO_V2_LINES_MAX],
    consumer: [u8; GPIO_MAX_NAME_SIZE],
    config: LineConfig,
    num_lines: u32,
    event_buffer_size: u32,
    padding: [u32; 5],
    fd: i32,
}

#[repr(C)]
#[derive(Default)]
struct LineEvent {
    timestamp_ns: u64,
    id: u32,
    offset: u32,
    seqno: u32,
    line_seqno: u32,
    padding: [u32; 6],
}

const _: () = assert!(std::mem::size_of::<LineRequest>() == 592);
const _: () = assert!(std::mem::size_of::<LineEvent>() == 48);

const GPIO_V2_GET_LINE_IOCTL: u32 =
    (3 << 30) | ((std::mem::size_of::<LineRequest>() as u32) << 16) | (0xB4 << 8) | 0x07;

/// A requested input line delivering falling-edge events.
pub struct EdgeLine {
    file: File,
}

impl EdgeLine {
    pub fn request_falling(chip: &Path, offset: u32) -> Result<Self, TransportError> {
        let chip_file = open_device(chip, false)?;
        let mut req = LineRequest {
            offsets: [0; GPIO_V2_LINES_MAX],
            consumer: [0; GPIO_MAX_NAME_SIZE],
            config: LineConfig {
                flags: GPIO_V2_LINE_FLAG_INPUT | GPIO_V2_LINE_FLAG_EDGE_FALLING,
                ..Default::default()
            },
            num_lines: 1,
            event_buffer_size: 0,
            padding: [0; 5],
            fd: -1,
        };
        req.offsets[0] = offset;
        let label = b"pieeg-drdy";
        req.consumer[..label.len()].copy_from_slice(label);
        ioctl_ptr(
            &chip_file,
            GPIO_V2_GET_LINE_IOCTL,
            &mut req,
            "requesting DRDY line",
        )?;
        // SAFETY: the kernel returned a fresh line fd that we now own.
        let file = unsafe { File::from_raw_fd(req.fd) };
        Ok(Self { file })
    }

    /// Waits for a falling edge and returns the kernel's CLOCK_MONOTONIC stamp.
    pub fn wait_falling(&mut self, timeout: Duration) -> Result<u64, TransportError> {
        let deadline = monotonic_ns().saturating_add(timeout.as_nanos() as u64);
        loop {
            let remaining = deadline.saturating_sub(monotonic_ns());
            let ts = libc::timespec {
                tv_sec: (remaining / 1_000_000_000) as libc::time_t,
                tv_nsec: (remaining % 1_000_000_000) as libc::c_long,
            };
            let mut pfd = libc::pollfd {
                fd: self.file.as_raw_fd(),
                events: libc::POLLIN,
                revents: 0,
            };
            // SAFETY: one valid pollfd, valid timespec, no signal mask.
            let rc = unsafe { libc::ppoll(&mut pfd, 1, &ts, std::ptr::null()) };
            if rc < 0 {
                let err = io::Error::last_os_error();
                if err.kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return Err(TransportError::io("polling DRDY", err));
            }
            if rc == 0 {
                return Err(TransportError::Timeout);
            }
            let mut ev = LineEvent::default();
            // SAFETY: LineEvent is plain old data; any byte pattern is valid.
            let buf = unsafe {
                std::slice::from_raw_parts_mut(
                    (&mut ev as *mut LineEvent).cast::<u8>(),
                    std::mem::size_of::<LineEvent>(),
                )
            };
            self.file
                .read_exact(buf)
                .map_err(|e| TransportError::io("reading DRDY event", e))?;
            if ev.id == GPIO_V2_LINE_EVENT_FALLING_EDGE {
                return Ok(ev.timestamp_ns);
            }
        }
    }
}
