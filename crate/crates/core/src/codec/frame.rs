use std::fmt;

use thiserror::Error;

/// Bytes per continuous-read frame: 3 status + 8 × 3 sample bytes.
pub const FRAME_LEN: usize = 27;
pub const CHANNELS: usize = 8;

/// Value of the status word's top nibble on a well-aligned frame.
pub const SYNC_NIBBLE: u32 = 0xC;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame must be {FRAME_LEN} bytes, got {0}")]
    Length(usize),
    #[error("frame sync nibble is 0x{:X}, expected 0xC", .raw[0] >> 4)]
    Desync { raw: [u8; FRAME_LEN] },
}

/// One decoded continuous-read frame.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct DataFrame {
    /// 24-bit status word: `1100 | LOFF_STATP | LOFF_STATN | GPIO[7:4]`.
    pub status: u32,
    pub channels: [i32; CHANNELS],
}

impl fmt::Debug for DataFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DataFrame")
            .field("status", &format_args!("0x{:06X}", self.status))
            .field("channels", &self.channels)
            .finish()
    }
}

impl DataFrame {
    pub fn loff_statp(&self) -> u8 {
        ((self.status >> 12) & 0xFF) as u8
    }

    pub fn loff_statn(&self) -> u8 {
        ((self.status >> 4) & 0xFF) as u8
    }

    pub fn gpio(&self) -> u8 {
        (self.status & 0x0F) as u8
    }

    /// Lead-off flags packed as `STATP << 8 | STATN`.
    pub fn loff_flags(&self) -> u16 {
        (u16::from(self.loff_statp()) << 8) | u16::from(self.loff_statn())
    }

    pub fn to_bytes(&self) -> [u8; FRAME_LEN] {
        let mut out = [0u8; FRAME_LEN];
        out[..3].copy_from_slice(&self.status.to_be_bytes()[1..]);
        for (i, ch) in self.channels.iter().enumerate() {
            let o = 3 + 3 * i;
            out[o..o + 3].copy_from_slice(&ch.to_be_bytes()[1..]);
        }
        out
    }
}

/// Sign-extends a big-endian 24-bit two's-complement sample.
#[inline]
pub fn sample_from_be24(b: [u8; 3]) -> i32 {
    i32::from_be_bytes([b[0], b[1], b[2], 0]) >> 8
}

/// Parses one 27-byte frame. Frames whose sync nibble is wrong are rejected
/// with their raw bytes; no attempt is made to hunt for the next boundary.
pub fn parse_frame(bytes: &[u8]) -> Result<DataFrame, FrameError> {
    let raw: &[u8; FRAME_LEN] = bytes
        .try_into()
        .map_err(|_| FrameError::Length(bytes.len()))?;
    let status = u32::from_be_bytes([0, raw[0], raw[1], raw[2]]);
    if status >> 20 != SYNC_NIBBLE {
        return Err(FrameError::Desync { raw: *raw });
    }
    let mut channels = [0i32; CHANNELS];
    for (i, ch) in channels.iter_mut().enumerate() {
        let o = 3 + 3 * i;
        *ch = sample_from_be24([raw[o], raw[o + 1], raw[o + 2]]);
    }
    Ok(DataFrame { status, channels })
}
