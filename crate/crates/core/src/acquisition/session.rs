use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use serde::Serialize;
use thiserror::Error;

use super::broadcast::{Broadcaster, SubscribeHandle, Subscriber};
use super::stats::{LiveStats, SessionState, SessionStats};
use super::{Sample, SampleBlock};
use crate::codec::{
    build_init_sequence, encode_register_read, parse_frame, raw_to_volts, Command,
    ConversionParams, InitMode, InitStep, CHANNELS, FRAME_LEN,
};
use crate::config::{ConfigError, SessionConfig};
use crate::transport::{monotonic_ns, BusHandle, Transport, TransportError};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("a session is already active on this bus")]
    AlreadyActive,
    #[error("bus is closed")]
    BusClosed,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Transport {
        context: String,
        #[source]
        source: TransportError,
    },
    #[error(
        "init verification failed: {register} (0x{address:02X}) reads back 0x{actual:02X}, expected 0x{expected:02X}"
    )]
    InitVerification {
        register: &'static str,
        address: u8,
        expected: u8,
        actual: u8,
    },
    #[error("session is not running")]
    NotRunning,
    #[error("could not start acquisition thread: {0}")]
    Spawn(std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    /// Bring-up finished and the device is streaming.
    InitOk,
    /// The frame that would have carried `seq` had a bad sync nibble.
    Desync {
        seq: u64,
    },
    /// DRDY stayed silent past the watchdog; `seq` is the next expected frame.
    WatchdogRestart {
        seq: u64,
    },
    Recovering {
        attempt: u32,
    },
    Recovered,
    Reconfigured,
    Failed {
        reason: String,
    },
    Stopped,
}

enum Control {
    Reconfigure(Box<SessionConfig>, Sender<Result<(), SessionError>>),
}

fn send(
    t: &mut dyn Transport,
    bytes: &[u8],
    what: &dyn std::fmt::Display,
) -> Result<(), SessionError> {
    let mut rx = [0u8; 3];
    t.transfer(bytes, &mut rx[..bytes.len()])
        .map_err(|source| SessionError::Transport {
            context: format!("sending {what}"),
            source,
        })
}

fn send_command(t: &mut dyn Transport, cmd: Command) -> Result<(), SessionError> {
    send(t, &[cmd.opcode()], &format_args!("{cmd}"))
}

/// Reads back every register the script writes and compares with the last
/// value written to it.
fn verify_registers(t: &mut dyn Transport, steps: &[InitStep]) -> Result<(), SessionError> {
    let mut expected = BTreeMap::new();
    for step in steps {
        if let InitStep::Write { address, value } = step {
            expected.insert(*address, *value);
        }
    }
    for (address, value) in expected {
        let tx = encode_register_read(address.get()).expect("address in range");
        let mut rx = [0u8; 3];
        t.transfer(&tx, &mut rx)
            .map_err(|source| SessionError::Transport {
                context: format!("reading back {}", address.name()),
                source,
            })?;
        if rx[2] != value {
            return Err(SessionError::InitVerification {
                register: address.name(),
                address: address.get(),
                expected: value,
                actual: rx[2],
            });
        }
    }
    Ok(())
}

/// Runs the bring-up script. `restart` first takes the device out of
/// continuous-read mode and stops conversions.
fn bring_up(t: &mut dyn Transport, cfg: &SessionConfig, restart: bool) -> Result<(), SessionError> {
    if !t.is_open() {
        return Err(SessionError::BusClosed);
    }
    if restart {
        send_command(t, Command::Sdatac)?;
        send_command(t, Command::Stop)?;
    }
    let steps = build_init_sequence(cfg);
    let mut verified = cfg.init_mode != InitMode::Strict;
    for step in &steps {
        if !verified && *step == InitStep::Command(Command::Start) {
            verify_registers(t, &steps)?;
            verified = true;
        }
        send(t, &step.bytes(), step)?;
    }
    Ok(())
}

struct Producer {
    transport: Box<dyn Transport>,
    cfg: SessionConfig,
    params: [ConversionParams; CHANNELS],
    block_len: usize,
    period_ns: u64,
    watchdog: Duration,
    out: Broadcaster<SampleBlock>,
    live: Arc<LiveStats>,
    events: Sender<SessionEvent>,
    control: Receiver<Control>,
    stop: Arc<AtomicBool>,
}

impl Producer {
    fn new(
        transport: Box<dyn Transport>,
        cfg: SessionConfig,
        out: Broadcaster<SampleBlock>,
        live: Arc<LiveStats>,
        events: Sender<SessionEvent>,
        control: Receiver<Control>,
        stop: Arc<AtomicBool>,
    ) -> Self {
        let mut p = Self {
            transport,
            params: [ConversionParams::default(); CHANNELS],
            block_len: 1,
            period_ns: 1,
            watchdog: Duration::ZERO,
            cfg,
            out,
            live,
            events,
            control,
            stop,
        };
        p.adopt_config();
        p
    }

    fn adopt_config(&mut self) {
        self.params = std::array::from_fn(|ch| self.cfg.conversion(ch));
        self.block_len = self.cfg.block_len();
        self.period_ns = self.cfg.period_ns();
        self.watchdog = self.cfg.watchdog_timeout();
    }

    fn emit(&self, event: SessionEvent) {
        let _ = self.events.send(event);
    }

    fn publish(&mut self, block: &mut SampleBlock, next_seq: u64) {
        if !block.is_empty() {
            let edge = block.samples()[block.block_len() - 1].timestamp_ns;
            self.out.publish(*block);
            LiveStats::bump(&self.live.blocks_published, 1);
            self.live
                .latency
                .record(monotonic_ns().saturating_sub(edge));
        }
        block.reset(next_seq);
    }

    fn reconfigure(&mut self, cfg: SessionConfig) -> Result<(), SessionError> {
        match bring_up(&mut *self.transport, &cfg, true) {
            Ok(()) => {
                self.cfg = cfg;
                self.adopt_config();
                Ok(())
            }
            Err(e) => {
                // Put the previous configuration back so the stream continues.
                let _ = bring_up(&mut *self.transport, &self.cfg, true);
                Err(e)
            }
        }
    }

    fn run(mut self) -> Box<dyn Transport> {
        let tx = [0u8; FRAME_LEN];
        let mut rx = [0u8; FRAME_LEN];
        let mut seq = 0u64;
        let mut block = SampleBlock::new(0);
        let mut last_ts: Option<u64> = None;
        let mut failures = 0u32;

        let end = loop {
            if self.stop.load(Ordering::Acquire) {
                break SessionState::Stopped;
            }
            if let Ok(Control::Reconfigure(cfg, reply)) = self.control.try_recv() {
                self.publish(&mut block, seq);
                let result = self.reconfigure(*cfg);
                last_ts = None;
                if result.is_ok() {
                    self.emit(SessionEvent::Reconfigured);
                }
                let _ = reply.send(result);
                continue;
            }
            if self.cfg.frame_limit.is_some_and(|limit| seq >= limit) {
                break SessionState::Stopped;
            }
            match self.transport.wait_drdy(self.watchdog) {
                Ok(ts) => {
                    if let Some(prev) = last_ts {
                        let delta = ts.saturating_sub(prev);
                        let gap = (delta as f64 / self.period_ns as f64).round() as u64;
                        if gap > 1 {
                            LiveStats::bump(&self.live.drops, gap - 1);
                            self.publish(&mut block, seq);
                            seq += gap - 1;
                            block.reset(seq);
                        } else if gap == 1 {
                            self.live.jitter.record(delta.abs_diff(self.period_ns));
                        }
                    }
                    last_ts = Some(ts);
                    if let Err(source) = self.transport.transfer(&tx, &mut rx) {
                        self.emit(SessionEvent::Failed {
                            reason: format!("reading frame: {source}"),
                        });
                        break SessionState::Failed;
                    }
                    match parse_frame(&rx) {
                        Ok(frame) => {
                            failures = 0;
                            LiveStats::bump(&self.live.frames_ok, 1);
                            let mut sample = Sample {
                                timestamp_ns: ts,
                                raw: frame.channels,
                                loff_flags: frame.loff_flags(),
                                ..Sample::default()
                            };
                            for ch in 0..CHANNELS {
                                sample.volts[ch] =
                                    raw_to_volts(frame.channels[ch], &self.params[ch]);
                            }
                            if block.is_empty() {
                                block.reset(seq);
                            }
                            block.push_sample(sample);
                            seq += 1;
                            if block.block_len() >= self.block_len {
                                self.publish(&mut block, seq);
                            }
                        }
                        Err(_) => {
                            LiveStats::bump(&self.live.frames_desync, 1);
                            self.publish(&mut block, seq);
                            self.emit(SessionEvent::Desync { seq });
                            seq += 1;
                            block.reset(seq);
                            let resync = send_command(&mut *self.transport, Command::Sdatac)
                                .and_then(|_| send_command(&mut *self.transport, Command::Rdatac));
                            if let Err(e) = resync {
                                self.emit(SessionEvent::Failed {
                                    reason: e.to_string(),
                                });
                                break SessionState::Failed;
                            }
                        }
                    }
                }
                Err(TransportError::Timeout) => {
                    self.publish(&mut block, seq);
                    LiveStats::bump(&self.live.watchdog_restarts, 1);
                    self.emit(SessionEvent::WatchdogRestart { seq });
                    failures += 1;
                    if failures > self.cfg.max_recovery_attempts {
                        self.emit(SessionEvent::Failed {
                            reason: format!(
                                "no data after {} recovery attempts",
                                self.cfg.max_recovery_attempts
                            ),
                        });
                        break SessionState::Failed;
                    }
                    self.live.set_state(SessionState::Recovering);
                    self.emit(SessionEvent::Recovering { attempt: failures });
                    last_ts = None;
                    match bring_up(&mut *self.transport, &self.cfg, true) {
                        Ok(()) => {
                            self.live.set_state(SessionState::Running);
                            self.emit(SessionEvent::Recovered);
                        }
                        Err(SessionError::BusClosed) => {
                            self.emit(SessionEvent::Failed {
                                reason: "bus closed".into(),
                            });
                            break SessionState::Failed;
                        }
                        // Counted as a failed attempt when the next wait times out.
                        Err(_) => {}
                    }
                }
                Err(e) => {
                    self.emit(SessionEvent::Failed {
                        reason: format!("waiting for DRDY: {e}"),
                    });
                    break SessionState::Failed;
                }
            }
        };

        self.publish(&mut block, seq);
        if self.transport.is_open() {
            let _ = send_command(&mut *self.transport, Command::Stop);
            let _ = send_command(&mut *self.transport, Command::Sdatac);
        }
        self.live.set_state(end);
        self.out.terminate();
        if end == SessionState::Stopped {
            self.emit(SessionEvent::Stopped);
        }
        self.transport
    }
}

/// A running acquisition: one producer thread owns the bus and publishes
/// [`SampleBlock`]s to any number of subscribers.
pub struct Session {
    bus: BusHandle,
    blocks: SubscribeHandle<SampleBlock>,
    live: Arc<LiveStats>,
    events: Receiver<SessionEvent>,
    control: Sender<Control>,
    stop: Arc<AtomicBool>,
    init_ok: bool,
    producer: Mutex<Option<JoinHandle<Box<dyn Transport>>>>,
    final_stats: Mutex<Option<SessionStats>>,
    config: Mutex<SessionConfig>,
}

impl Session {
    /// Brings the device up and starts streaming.
    pub fn start(bus: &BusHandle, config: SessionConfig) -> Result<Session, SessionError> {
        Self::launch(bus, config, None).map(|(s, _)| s)
    }

    /// Like [`Session::start`], with a subscriber registered before the first
    /// frame so nothing is missed.
    pub fn start_subscribed(
        bus: &BusHandle,
        config: SessionConfig,
        capacity: usize,
    ) -> Result<(Session, Subscriber<SampleBlock>), SessionError> {
        Self::launch(bus, config, Some(capacity)).map(|(s, sub)| (s, sub.expect("requested")))
    }

    fn launch(
        bus: &BusHandle,
        config: SessionConfig,
        capacity: Option<usize>,
    ) -> Result<(Session, Option<Subscriber<SampleBlock>>), SessionError> {
        config.validate()?;
        let mut transport = bus.take().ok_or(SessionError::AlreadyActive)?;
        if let Err(e) = bring_up(&mut *transport, &config, false) {
            bus.restore(transport);
            return Err(e);
        }
        let out = Broadcaster::new();
        let blocks = out.handle();
        let first = capacity.map(|c| out.subscribe(c));
        let live = Arc::new(LiveStats::default());
        let (events_tx, events) = unbounded();
        let (control, control_rx) = unbounded();
        let stop = Arc::new(AtomicBool::new(false));
        let _ = events_tx.send(SessionEvent::InitOk);

        let producer = Producer::new(
            transport,
            config.clone(),
            out,
            Arc::clone(&live),
            events_tx,
            control_rx,
            Arc::clone(&stop),
        );
        let handle = thread::Builder::new()
            .name("pieeg-acquisition".into())
            .spawn(move || producer.run())
            .map_err(SessionError::Spawn)?;
        log::info!("session started at {} SPS", config.sample_rate.sps());
        Ok((
            Session {
                bus: bus.clone(),
                blocks,
                live,
                events,
                control,
                stop,
                init_ok: true,
                producer: Mutex::new(Some(handle)),
                final_stats: Mutex::new(None),
                config: Mutex::new(config),
            },
            first,
        ))
    }

    /// Subscribes to blocks published from now on. After the session ends
    /// the subscriber reports termination immediately.
    pub fn subscribe(&self, capacity: usize) -> Subscriber<SampleBlock> {
        self.blocks.subscribe(capacity)
    }

    pub fn subscribe_handle(&self) -> SubscribeHandle<SampleBlock> {
        self.blocks.clone()
    }

    /// Lifecycle events. Receivers share one queue; clone only to hand it
    /// to a different single consumer.
    pub fn events(&self) -> Receiver<SessionEvent> {
        self.events.clone()
    }

    /// Latched once the bring-up script completed.
    pub fn init_ok(&self) -> bool {
        self.init_ok
    }

    pub fn config(&self) -> SessionConfig {
        self.config.lock().expect("config poisoned").clone()
    }

    pub fn stats(&self) -> SessionStats {
        match *self.final_stats.lock().expect("stats poisoned") {
            Some(s) => s,
            None => self.live.snapshot(),
        }
    }

    /// Whether the producer thread has exited (stop, frame limit or failure).
    pub fn is_finished(&self) -> bool {
        self.producer
            .lock()
            .expect("producer poisoned")
            .as_ref()
            .is_none_or(|h| h.is_finished())
    }

    /// Waits up to `timeout` for the producer to exit on its own.
    pub fn wait_finished(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while !self.is_finished() {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(2));
        }
        true
    }

    /// Re-runs bring-up with a new configuration; sequence numbers continue.
    pub fn reconfigure(&self, config: SessionConfig) -> Result<(), SessionError> {
        config.validate()?;
        if self.is_finished() {
            return Err(SessionError::NotRunning);
        }
        let (reply_tx, reply_rx) = bounded(1);
        self.control
            .send(Control::Reconfigure(Box::new(config.clone()), reply_tx))
            .map_err(|_| SessionError::NotRunning)?;
        loop {
            match reply_rx.recv_timeout(Duration::from_millis(50)) {
                Ok(Ok(())) => {
                    *self.config.lock().expect("config poisoned") = config;
                    return Ok(());
                }
                Ok(Err(e)) => return Err(e),
                Err(_) if self.is_finished() => return Err(SessionError::NotRunning),
                Err(_) => continue,
            }
        }
    }

    /// Stops streaming, releases the bus and returns final statistics.
    /// Calling it again returns the same numbers.
    pub fn stop(&self) -> SessionStats {
        let mut producer = self.producer.lock().expect("producer poisoned");
        if let Some(handle) = producer.take() {
            self.stop.store(true, Ordering::Release);
            match handle.join() {
                Ok(transport) => self.bus.restore(transport),
                Err(_) => {
                    log::error!("acquisition thread panicked; bus is lost");
                    self.live.set_state(SessionState::Failed);
                }
            }
            let stats = self.live.snapshot();
            *self.final_stats.lock().expect("stats poisoned") = Some(stats);
            log::info!(
                "session stopped: {} ok, {} desync, {} dropped",
                stats.frames_ok,
                stats.frames_desync,
                stats.drops
            );
        }
        drop(producer);
        self.stats()
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("stats", &self.stats())
            .finish_non_exhaustive()
    }
}
