//! Binary frames sent from the daemon to clients.
//!
//! ```text
//! offset size field
//!      0    4 magic "PEEG"
//!      4    1 version (1)
//!      5    1 msg_type: 1 data, 2 stats, 3 event
//!      6    8 seq, u64 LE
//!     14    8 timestamp_ns, u64 LE
//!     22    1 n_channels
//!     23    3 aux, u24 LE: lead-off flags (data) or JSON payload length (stats, event)
//!     26    . data: n_channels x f32 LE volts; stats/event: UTF-8 JSON
//! ```
//!
//! A data frame is therefore exactly `26 + 4 * n_channels` bytes. One
//! transport message may carry several frames back to back.

use pieeg_core::SampleBlock;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"PEEG";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 26;
pub const MAX_AUX: u32 = 0xFF_FFFF;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Data = 1,
    Stats = 2,
    Event = 3,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Data),
            2 => Some(Self::Stats),
            3 => Some(Self::Event),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("need {needed} bytes, only {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02X?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("JSON payload is not UTF-8")]
    BadUtf8,
    #[error("field does not fit: {0}")]
    TooLarge(&'static str),
}

#[derive(Clone, Debug)]
pub enum WireFrame {
    Data {
        seq: u64,
        timestamp_ns: u64,
        loff_flags: u32,
        volts: Vec<f32>,
    },
    Stats {
        seq: u64,
        timestamp_ns: u64,
        json: String,
    },
    Event {
        seq: u64,
        timestamp_ns: u64,
        json: String,
    },
}

impl PartialEq for WireFrame {
    /// Bitwise on samples, so NaN payloads compare equal to themselves.
    fn eq(&self, other: &Self) -> bool {
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.encode_into(&mut a).is_ok() && other.encode_into(&mut b).is_ok() && a == b
    }
}

impl WireFrame {
    pub fn msg_type(&self) -> MsgType {
        match self {
            WireFrame::Data { .. } => MsgType::Data,
            WireFrame::Stats { .. } => MsgType::Stats,
            WireFrame::Event { .. } => MsgType::Event,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            WireFrame::Data { seq, .. }
            | WireFrame::Stats { seq, .. }
            | WireFrame::Event { seq, .. } => *seq,
        }
    }

    pub fn timestamp_ns(&self) -> u64 {
        match self {
            WireFrame::Data { timestamp_ns, .. }
            | WireFrame::Stats { timestamp_ns, .. }
            | WireFrame::Event { timestamp_ns, .. } => *timestamp_ns,
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            WireFrame::Data { volts, .. } => HEADER_LEN + 4 * volts.len(),
            WireFrame::Stats { json, .. } | WireFrame::Event { json, .. } => {
                HEADER_LEN + json.len()
            }
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), WireError> {
        let (n_channels, aux) = match self {
            WireFrame::Data {
                volts, loff_flags, ..
            } => {
                let n = u8::try_from(volts.len()).map_err(|_| WireError::TooLarge("n_channels"))?;
                if *loff_flags > MAX_AUX {
                    return Err(WireError::TooLarge("loff_flags"));
                }
                (n, *loff_flags)
            }
            WireFrame::Stats { json, .. } | WireFrame::Event { json, .. } => {
                if json.len() > MAX_AUX as usize {
                    return Err(WireError::TooLarge("payload"));
                }
                (0, json.len() as u32)
            }
        };
        out.reserve(self.encoded_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type() as u8);
        out.extend_from_slice(&self.seq().to_le_bytes());
        out.extend_from_slice(&self.timestamp_ns().to_le_bytes());
        out.push(n_channels);
        out.extend_from_slice(&aux.to_le_bytes()[..3]);
        match self {
            WireFrame::Data { volts, .. } => {
                for v in volts {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            WireFrame::Stats { json, .. } | WireFrame::Event { json, .. } => {
                out.extend_from_slice(json.as_bytes());
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Decodes the frame at the start of `buf`, returning it and its length.
    pub fn decode(buf: &[u8]) -> Result<(WireFrame, usize), WireError> {
        if buf.len() < HEADER_LEN {
            // Check what we can so a garbage prefix is reported as such.
            let n = buf.len().min(4);
            if buf[..n] != MAGIC[..n] {
                let mut m = [0u8; 4];
                m[..n].copy_from_slice(&buf[..n]);
                return Err(WireError::BadMagic(m));
            }
            return Err(WireError::Truncated {
                needed: HEADER_LEN,
                available: buf.len(),
            });
        }
        let magic: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        if buf[4] != VERSION {
            return Err(WireError::BadVersion(buf[4]));
        }
        let msg_type = MsgType::from_u8(buf[5]).ok_or(WireError::BadType(buf[5]))?;
        let seq = u64::from_le_bytes(buf[6..14].try_into().expect("8 bytes"));
        let timestamp_ns = u64::from_le_bytes(buf[14..22].try_into().expect("8 bytes"));
        let n_channels = usize::from(buf[22]);
        let aux = u32::from_le_bytes([buf[23], buf[24], buf[25], 0]);
        let body_len = match msg_type {
            MsgType::Data => 4 * n_channels,
            _ => aux as usize,
        };
        let total = HEADER_LEN + body_len;
        if buf.len() < total {
            return Err(WireError::Truncated {
                needed: total,
                available: buf.len(),
            });
        }
        let body = &buf[HEADER_LEN..total];
        let frame = match msg_type {
            MsgType::Data => WireFrame::Data {
                seq,
                timestamp_ns,
                loff_flags: aux,
                volts: body
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            },
            MsgType::Stats | MsgType::Event => {
                let json = std::str::from_utf8(body)
                    .map_err(|_| WireError::BadUtf8)?
                    .to_string();
                if msg_type == MsgType::Stats {
                    WireFrame::Stats {
                        seq,
                        timestamp_ns,
                        json,
                    }
                } else {
                    WireFrame::Event {
                        seq,
                        timestamp_ns,
                        json,
                    }
                }
            }
        };
        Ok((frame, total))
    }

    /// Decodes a buffer holding whole frames back to back.
    pub fn decode_all(mut buf: &[u8]) -> Result<Vec<WireFrame>, WireError> {
        let mut frames = Vec::new();
        while !buf.is_empty() {
            let (f, used) = WireFrame::decode(buf)?;
            frames.push(f);
            buf = &buf[used..];
        }
        Ok(frames)
    }
}

/// Appends one data frame per sample of `block`.
pub fn encode_block(block: &SampleBlock, out: &mut Vec<u8>) {
    out.reserve(block.block_len() * (HEADER_LEN + 32));
    for (i, s) in block.samples().iter().enumerate() {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(MsgType::Data as u8);
        out.extend_from_slice(&(block.seq() + i as u64).to_le_bytes());
        out.extend_from_slice(&s.timestamp_ns.to_le_bytes());
        out.push(s.volts.len() as u8);
        out.extend_from_slice(&u32::from(s.loff_flags).to_le_bytes()[..3]);
        for v in s.volts {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pieeg_core::Sample;

    #[test]
    fn data_frame_layout() {
        let f = WireFrame::Data {
            seq: 0x0102,
            timestamp_ns: 7,
            loff_flags: 0x0201,
            volts: vec![1.0, -2.0],
        };
        let b = f.encode().unwrap();
        assert_eq!(b.len(), 26 + 8);
        assert_eq!(&b[..6], b"PEEG\x01\x01");
        assert_eq!(&b[6..14], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[14..22], &[7, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(b[22], 2);
        assert_eq!(&b[23..26], &[1, 2, 0]);
        assert_eq!(&b[26..30], &1.0f32.to_le_bytes());
        assert_eq!(WireFrame::decode(&b).unwrap(), (f, 34));
    }

    #[test]
    fn json_frames_carry_length() {
        let f = WireFrame::Event {
            seq: 3,
            timestamp_ns: 9,
            json: r#"{"label":"blink"}"#.into(),
        };
        let b = f.encode().unwrap();
        assert_eq!(b[22], 0);
        assert_eq!(usize::from(b[23]), 17);
        assert_eq!(WireFrame::decode_all(&b).unwrap(), vec![f]);
    }

    #[test]
    fn header_checks() {
        let mut b = WireFrame::Data {
            seq: 0,
            timestamp_ns: 0,
            loff_flags: 0,
            volts: vec![0.0; 8],
        }
        .encode()
        .unwrap();
        assert!(matches!(
            WireFrame::decode(&b[..57]),
            Err(WireError::Truncated {
                needed: 58,
                available: 57
            })
        ));
        b[4] = 2;
        assert!(matches!(
            WireFrame::decode(&b),
            Err(WireError::BadVersion(2))
        ));
        b[4] = 1;
        b[5] = 9;
        assert!(matches!(WireFrame::decode(&b), Err(WireError::BadType(9))));
        b[0] = b'X';
        assert!(matches!(WireFrame::decode(&b), Err(WireError::BadMagic(_))));
        assert!(matches!(
            WireFrame::decode(b"XY"),
            Err(WireError::BadMagic(_))
        ));
    }

    #[test]
    fn block_encoding_matches_frames() {
        let s = Sample {
            timestamp_ns: 100,
            volts: [1e-6; 8],
            raw: [0; 8],
            loff_flags: 0x8001,
        };
        let block = SampleBlock::from_samples(40, &[s, s]).unwrap();
        let mut out = Vec::new();
        encode_block(&block, &mut out);
        let frames = WireFrame::decode_all(&out).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].seq(), 41);
        match &frames[0] {
            WireFrame::Data {
                loff_flags, volts, ..
            } => {
                assert_eq!(*loff_flags, 0x8001);
                assert_eq!(volts[0], 1e-6f32);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn oversize_rejected() {
        let f = WireFrame::Data {
            seq: 0,
            timestamp_ns: 0,
            loff_flags: 1 << 24,
            volts: vec![],
        };
        assert!(f.encode().is_err());
    }
}
