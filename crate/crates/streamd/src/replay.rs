//! Reading raw WireFrame logs back, optionally paced like the original run.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::Path;
use std::time::Duration;

use pieeg_core::codec::CHANNELS;
use pieeg_core::transport::{monotonic_ns, sleep_until_ns};
use pieeg_core::{Sample, SampleBlock};
use serde::Serialize;
use thiserror::Error;

use crate::wire::{WireError, WireFrame, HEADER_LEN};

/// Why reading stopped before the end of the file.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("log unreadable at byte {offset}: {reason}")]
pub struct ReplayStop {
    /// Start of the first frame that could not be read whole.
    pub offset: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub frames: u64,
    pub data_frames: u64,
    pub bytes: u64,
    pub stop: Option<ReplayStop>,
    pub elapsed: Duration,
}

/// Sequential frame reader over any byte source.
pub struct LogReader<R> {
    reader: R,
    offset: u64,
    buf: Vec<u8>,
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl LogReader<BufReader<File>> {
    pub fn open(path: &Path) -> io::Result<Self> {
        Ok(Self::new(BufReader::new(File::open(path)?)))
    }
}

impl<R: Read> LogReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            offset: 0,
            buf: Vec::with_capacity(HEADER_LEN + 64),
        }
    }

    /// Byte offset of the next frame.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// `Ok(None)` at a clean end of file.
    pub fn next_frame(&mut self) -> Result<Option<WireFrame>, ReplayStop> {
        let stop = |offset, reason: String| ReplayStop { offset, reason };
        self.buf.resize(HEADER_LEN, 0);
        let n = read_full(&mut self.reader, &mut self.buf)
            .map_err(|e| stop(self.offset, e.to_string()))?;
        if n == 0 {
            return Ok(None);
        }
        self.buf.truncate(n);
        let needed = match WireFrame::decode(&self.buf) {
            Ok((frame, used)) => {
                self.offset += used as u64;
                return Ok(Some(frame));
            }
            Err(WireError::Truncated { needed, .. }) if n == HEADER_LEN => needed,
            Err(e) => return Err(stop(self.offset, e.to_string())),
        };
        self.buf.resize(needed, 0);
        let m = read_full(&mut self.reader, &mut self.buf[HEADER_LEN..])
            .map_err(|e| stop(self.offset, e.to_string()))?;
        self.buf.truncate(HEADER_LEN + m);
        match WireFrame::decode(&self.buf) {
            Ok((frame, used)) => {
                self.offset += used as u64;
                Ok(Some(frame))
            }
            Err(e) => Err(stop(self.offset, e.to_string())),
        }
    }
}

/// Reads every whole frame; the second value explains an early stop.
pub fn read_log(path: &Path) -> io::Result<(Vec<WireFrame>, Option<ReplayStop>)> {
    let mut reader = LogReader::open(path)?;
    let mut frames = Vec::new();
    loop {
        match reader.next_frame() {
            Ok(Some(f)) => frames.push(f),
            Ok(None) => return Ok((frames, None)),
            Err(stop) => return Ok((frames, Some(stop))),
        }
    }
}

/// Converts a data frame back into a one-sample block. Raw codes are not
/// stored in the log and come back as zero.
pub fn frame_to_block(frame: &WireFrame) -> Option<SampleBlock> {
    match frame {
        WireFrame::Data {
            seq,
            timestamp_ns,
            loff_flags,
            volts,
        } => {
            let mut sample = Sample {
                timestamp_ns: *timestamp_ns,
                loff_flags: *loff_flags as u16,
                ..Sample::default()
            };
            for (dst, v) in sample.volts.iter_mut().zip(volts.iter().take(CHANNELS)) {
                *dst = f64::from(*v);
            }
            Some(SampleBlock::single(*seq, sample))
        }
        _ => None,
    }
}

/// Streams a log to `on_frame`. `speed` is a multiple of real time;
/// `f64::INFINITY` replays without pacing.
pub fn replay<F: FnMut(&WireFrame)>(
    path: &Path,
    speed: f64,
    mut on_frame: F,
) -> io::Result<ReplaySummary> {
    if !(speed > 0.0) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("speed must be positive, got {speed}"),
        ));
    }
    let mut reader = LogReader::open(path)?;
    let wall_start = monotonic_ns();
    let mut first_ts: Option<u64> = None;
    let mut summary = ReplaySummary::default();
    loop {
        let frame = match reader.next_frame() {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(stop) => {
                log::warn!("{stop}");
                summary.stop = Some(stop);
                break;
            }
        };
        if let WireFrame::Data { timestamp_ns, .. } = frame {
            let t0 = *first_ts.get_or_insert(timestamp_ns);
            if speed.is_finite() {
                let offset = (timestamp_ns.saturating_sub(t0) as f64 / speed) as u64;
                sleep_until_ns(wall_start + offset);
            }
            summary.data_frames += 1;
        }
        summary.frames += 1;
        on_frame(&frame);
    }
    summary.bytes = reader.offset();
    summary.elapsed = Duration::from_nanos(monotonic_ns() - wall_start);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wire::encode_block;

    fn log_bytes(n: u64) -> Vec<u8> {
        let mut out = Vec::new();
        for i in 0..n {
            let b = SampleBlock::single(
                i,
                Sample {
                    timestamp_ns: 1_000 + i * 4_000_000,
                    volts: [i as f64 * 1e-6; 8],
                    ..Sample::default()
                },
            );
            encode_block(&b, &mut out);
        }
        out
    }

    #[test]
    fn reads_whole_log() {
        let bytes = log_bytes(10);
        let mut r = LogReader::new(&bytes[..]);
        let mut n = 0;
        while let Some(f) = r.next_frame().unwrap() {
            assert_eq!(f.seq(), n);
            n += 1;
        }
        assert_eq!(n, 10);
        assert_eq!(r.offset(), bytes.len() as u64);
    }

    #[test]
    fn truncation_reports_offset_of_partial_frame() {
        let bytes = log_bytes(3);
        for cut in [1, 10, 26, 40, 57] {
            let data = &bytes[..58 * 2 + cut];
            let mut r = LogReader::new(data);
            assert!(r.next_frame().unwrap().is_some());
            assert!(r.next_frame().unwrap().is_some());
            let stop = r.next_frame().unwrap_err();
            assert_eq!(stop.offset, 116, "cut {cut}");
        }
    }

    #[test]
    fn bad_magic_mid_file() {
        let mut bytes = log_bytes(5);
        bytes[58 * 3] = b'X';
        let mut r = LogReader::new(&bytes[..]);
        for _ in 0..3 {
            r.next_frame().unwrap().unwrap();
        }
        let stop = r.next_frame().unwrap_err();
        assert_eq!(stop.offset, 174);
        assert!(stop.reason.contains("magic"));
    }

    #[test]
    fn blocks_rebuilt_from_frames() {
        let bytes = log_bytes(2);
        let frames = crate::wire::WireFrame::decode_all(&bytes).unwrap();
        let b = frame_to_block(&frames[1]).unwrap();
        assert_eq!(b.seq(), 1);
        assert_eq!(b.samples()[0].volts[7], f64::from(1e-6f32));
    }

    #[test]
    fn nonpositive_speed_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.peeg");
        std::fs::write(&p, log_bytes(1)).unwrap();
        assert!(replay(&p, 0.0, |_| {}).is_err());
        assert!(replay(&p, -1.0, |_| {}).is_err());
        assert_eq!(replay(&p, f64::INFINITY, |_| {}).unwrap().frames, 1);
    }
}
