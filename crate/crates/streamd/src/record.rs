//! Persisting block streams as CSV or as a raw WireFrame log.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::Receiver;
use pieeg_core::acquisition::{RecvError, Subscriber};
use pieeg_core::SampleBlock;
use serde::{Deserialize, Serialize};

use crate::wire::{encode_block, WireFrame};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordFormat {
    #[default]
    Csv,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingSink {
    #[serde(default)]
    pub format: RecordFormat,
    pub path: PathBuf,
    /// Start a new file once the current one reaches this many MiB.
    #[serde(default)]
    pub rotate_mb: Option<u64>,
}

impl RecordingSink {
    pub fn csv(path: impl Into<PathBuf>) -> Self {
        Self {
            format: RecordFormat::Csv,
            path: path.into(),
            rotate_mb: None,
        }
    }

    pub fn raw(path: impl Into<PathBuf>) -> Self {
        Self {
            format: RecordFormat::Raw,
            path: path.into(),
            rotate_mb: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RecordSummary {
    /// Samples written (CSV rows or data frames).
    pub rows: u64,
    pub bytes: u64,
    /// Blocks lost because the recorder fell behind.
    pub dropped: u64,
    pub events: u64,
    pub files: Vec<PathBuf>,
    /// Set when writing failed; the file in progress was renamed `*.partial`.
    pub error: Option<String>,
}

/// A user annotation stored alongside the data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkEvent {
    pub seq: u64,
    pub timestamp_ns: u64,
    pub label: String,
}

pub type EventSender = crossbeam_channel::Sender<MarkEvent>;
pub type EventReceiver = crossbeam_channel::Receiver<MarkEvent>;

/// Channel feeding mark events to a [`RecordingTask`].
pub fn event_channel() -> (EventSender, EventReceiver) {
    crossbeam_channel::unbounded()
}

pub const CSV_HEADER: &str = "seq,timestamp_ns,ch1,ch2,ch3,ch4,ch5,ch6,ch7,ch8\n";
const EVENTS_HEADER: &str = "seq,timestamp_ns,label\n";

/// Formats `v` in positional notation with 9 significant digits.
pub fn format_sig9(v: f64, out: &mut String) {
    use std::fmt::Write as _;
    if v == 0.0 || !v.is_finite() {
        let _ = write!(out, "{}", if v == 0.0 { 0.0 } else { v });
        return;
    }
    // Exponent after rounding to 9 digits, so 9.9999999996e-5 counts as e-4.
    let sci = format!("{v:.8e}");
    let exp: i32 = sci[sci.find('e').expect("exponent") + 1..]
        .parse()
        .expect("integer exponent");
    let decimals = (8 - exp).max(0) as usize;
    let _ = write!(out, "{v:.decimals$}");
}

/// Writable target the recorder can flush to stable storage.
pub trait SinkFile: Write + Send {
    fn sync(&mut self) -> io::Result<()>;
}

impl SinkFile for File {
    fn sync(&mut self) -> io::Result<()> {
        self.sync_all()
    }
}

pub type Opener = Box<dyn FnMut(&Path) -> io::Result<Box<dyn SinkFile>> + Send>;

fn open_file(path: &Path) -> io::Result<Box<dyn SinkFile>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(Box::new(File::create(path)?))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn rotated_path(path: &Path, index: u32) -> PathBuf {
    if index == 0 {
        path.to_path_buf()
    } else {
        with_suffix(path, &format!(".{index:03}"))
    }
}

pub fn events_path(path: &Path) -> PathBuf {
    path.with_file_name(format!(
        "{}.events.csv",
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    ))
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

pub struct Recorder {
    sink: RecordingSink,
    opener: Opener,
    out: Option<BufWriter<Box<dyn SinkFile>>>,
    events_out: Option<BufWriter<Box<dyn SinkFile>>>,
    file_index: u32,
    bytes_in_file: u64,
    summary: RecordSummary,
    line: String,
    frame_buf: Vec<u8>,
}

impl Recorder {
    pub fn create(sink: RecordingSink) -> io::Result<Self> {
        Self::with_opener(sink, Box::new(open_file))
    }

    pub fn with_opener(sink: RecordingSink, opener: Opener) -> io::Result<Self> {
        let mut r = Self {
            sink,
            opener,
            out: None,
            events_out: None,
            file_index: 0,
            bytes_in_file: 0,
            summary: RecordSummary::default(),
            line: String::with_capacity(256),
            frame_buf: Vec::with_capacity(1024),
        };
        r.open_next()?;
        Ok(r)
    }

    pub fn summary(&self) -> &RecordSummary {
        &self.summary
    }

    pub fn is_failed(&self) -> bool {
        self.summary.error.is_some()
    }

    fn current_path(&self) -> PathBuf {
        rotated_path(&self.sink.path, self.file_index)
    }

    fn open_next(&mut self) -> io::Result<()> {
        if let Some(mut out) = self.out.take() {
            out.flush()?;
            out.get_mut().sync()?;
            self.file_index += 1;
        }
        let path = self.current_path();
        let file = (self.opener)(&path)?;
        let mut out = BufWriter::with_capacity(64 * 1024, file);
        self.bytes_in_file = 0;
        if self.sink.format == RecordFormat::Csv {
            out.write_all(CSV_HEADER.as_bytes())?;
            self.bytes_in_file += CSV_HEADER.len() as u64;
            self.summary.bytes += CSV_HEADER.len() as u64;
        }
        self.summary.files.push(path);
        self.out = Some(out);
        Ok(())
    }

    fn fail(&mut self, e: &io::Error) {
        if self.summary.error.is_some() {
            return;
        }
        log::error!("recording to {} failed: {e}", self.current_path().display());
        self.summary.error = Some(e.to_string());
        self.out = None;
        let path = self.current_path();
        let partial = partial_path(&path);
        if fs::rename(&path, &partial).is_ok() {
            if let Some(last) = self.summary.files.last_mut() {
                *last = partial;
            }
        }
    }

    fn guarded<T>(&mut self, op: impl FnOnce(&mut Self) -> io::Result<T>) -> io::Result<T> {
        if let Some(e) = &self.summary.error {
            return Err(io::Error::other(format!("recording already failed: {e}")));
        }
        let r = op(self);
        if let Err(e) = &r {
            self.fail(e);
        }
        r
    }

    fn rotate_if_needed(&mut self) -> io::Result<()> {
        if let Some(mb) = self.sink.rotate_mb {
            if self.bytes_in_file >= mb.max(1) * 1024 * 1024 {
                self.open_next()?;
            }
        }
        Ok(())
    }

    pub fn write_block(&mut self, block: &SampleBlock) -> io::Result<()> {
        self.guarded(|r| {
            let out = r.out.as_mut().expect("open while not failed");
            let mut written = 0u64;
            match r.sink.format {
                RecordFormat::Csv => {
                    use std::fmt::Write as _;
                    for (i, s) in block.samples().iter().enumerate() {
                        r.line.clear();
                        let _ = write!(r.line, "{},{}", block.seq() + i as u64, s.timestamp_ns);
                        for v in s.volts {
                            r.line.push(',');
                            format_sig9(v, &mut r.line);
                        }
                        r.line.push('\n');
                        out.write_all(r.line.as_bytes())?;
                        written += r.line.len() as u64;
                    }
                }
                RecordFormat::Raw => {
                    r.frame_buf.clear();
                    encode_block(block, &mut r.frame_buf);
                    out.write_all(&r.frame_buf)?;
                    written += r.frame_buf.len() as u64;
                }
            }
            r.summary.rows += block.block_len() as u64;
            r.summary.bytes += written;
            r.bytes_in_file += written;
            r.rotate_if_needed()
        })
    }

    pub fn write_event(&mut self, event: &MarkEvent) -> io::Result<()> {
        self.guarded(|r| {
            let written = match r.sink.format {
                RecordFormat::Csv => {
                    if r.events_out.is_none() {
                        let path = events_path(&r.sink.path);
                        let mut w = BufWriter::new((r.opener)(&path)?);
                        w.write_all(EVENTS_HEADER.as_bytes())?;
                        r.summary.bytes += EVENTS_HEADER.len() as u64;
                        r.summary.files.push(path);
                        r.events_out = Some(w);
                    }
                    let label = event.label.replace(['"', '\n', '\r'], " ");
                    let line = format!("{},{},\"{}\"\n", event.seq, event.timestamp_ns, label);
                    r.events_out
                        .as_mut()
                        .expect("opened")
                        .write_all(line.as_bytes())?;
                    line.len() as u64
                }
                RecordFormat::Raw => {
                    let frame = WireFrame::Event {
                        seq: event.seq,
                        timestamp_ns: event.timestamp_ns,
                        json: serde_json::json!({ "label": event.label }).to_string(),
                    };
                    let bytes = frame.encode().map_err(io::Error::other)?;
                    r.out
                        .as_mut()
                        .expect("open while not failed")
                        .write_all(&bytes)?;
                    r.bytes_in_file += bytes.len() as u64;
                    bytes.len() as u64
                }
            };
            r.summary.events += 1;
            r.summary.bytes += written;
            Ok(())
        })
    }

    pub fn note_dropped(&mut self, blocks: u64) {
        self.summary.dropped += blocks;
    }

    /// Flushes and fsyncs everything and returns the totals.
    pub fn finish(mut self) -> RecordSummary {
        let _ = self.guarded(|r| {
            for w in [r.out.as_mut(), r.events_out.as_mut()]
                .into_iter()
                .flatten()
            {
                w.flush()?;
                w.get_mut().sync()?;
            }
            Ok(())
        });
        self.summary
    }
}

/// Records every block from `sub` until the stream ends or writing fails.
pub fn record_stream(
    sub: &Subscriber<SampleBlock>,
    sink: RecordingSink,
) -> io::Result<RecordSummary> {
    let mut rec = Recorder::create(sink)?;
    let stop = AtomicBool::new(false);
    drain_into(&mut rec, sub, None, &stop);
    Ok(rec.finish())
}

fn drain_into(
    rec: &mut Recorder,
    sub: &Subscriber<SampleBlock>,
    events: Option<&Receiver<MarkEvent>>,
    stop: &AtomicBool,
) {
    let mut seen_lag = 0;
    loop {
        if let Some(rx) = events {
            for ev in rx.try_iter() {
                let _ = rec.write_event(&ev);
            }
        }
        let lag = sub.lag();
        if lag > seen_lag {
            rec.note_dropped(lag - seen_lag);
            seen_lag = lag;
        }
        match sub.recv_timeout(Duration::from_millis(20)) {
            Ok(block) => {
                if rec.write_block(&block).is_err() {
                    return;
                }
            }
            Err(RecvError::Terminated) => return,
            Err(RecvError::Timeout) => {
                if stop.load(Ordering::Acquire) {
                    return;
                }
            }
        }
        if stop.load(Ordering::Acquire) {
            // Take whatever is already queued, then stop.
            while let Ok(Some(block)) = sub.try_recv() {
                if rec.write_block(&block).is_err() {
                    return;
                }
            }
            return;
        }
    }
}

/// A recorder on its own thread, consuming its own subscriber.
pub struct RecordingTask {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<RecordSummary>>,
    sink: RecordingSink,
}

impl RecordingTask {
    pub fn spawn(
        sub: Subscriber<SampleBlock>,
        sink: RecordingSink,
        events: Receiver<MarkEvent>,
    ) -> io::Result<Self> {
        let mut rec = Recorder::create(sink.clone())?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let handle = thread::Builder::new()
            .name("pieeg-recorder".into())
            .spawn(move || {
                drain_into(&mut rec, &sub, Some(&events), &flag);
                for ev in events.try_iter() {
                    let _ = rec.write_event(&ev);
                }
                rec.finish()
            })?;
        Ok(Self {
            stop,
            handle: Some(handle),
            sink,
        })
    }

    pub fn sink(&self) -> &RecordingSink {
        &self.sink
    }

    pub fn is_finished(&self) -> bool {
        self.handle.as_ref().is_none_or(|h| h.is_finished())
    }

    pub fn stop(mut self) -> RecordSummary {
        self.stop.store(true, Ordering::Release);
        match self.handle.take().map(|h| h.join()) {
            Some(Ok(summary)) => summary,
            _ => RecordSummary {
                error: Some("recorder thread panicked".into()),
                ..RecordSummary::default()
            },
        }
    }
}

impl Drop for RecordingTask {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
