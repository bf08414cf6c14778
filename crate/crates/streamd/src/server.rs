//! Network daemon: one session owner, one acceptor, one thread per client.
//!
//! The owner thread holds the [`Session`], filters every block, encodes it
//! once and fans the bytes out through a [`Broadcaster`]; clients each hold
//! their own drop-oldest subscriber. All control mutations are funneled to the
//! owner over a channel, so they are applied one at a time.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use pieeg_core::acquisition::{Broadcaster, RecvError, SessionEvent, SubscribeHandle, Subscriber};
use pieeg_core::codec::{build_init_sequence, Gain, InitStep, RegisterImage};
use pieeg_core::dsp::{BiquadCascade, FilterChainSpec};
use pieeg_core::transport::monotonic_ns;
use pieeg_core::{BusHandle, SampleBlock, Session, SessionConfig, SessionStats};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;
use tungstenite::protocol::{Message, Role};
use tungstenite::{Bytes, WebSocket};

use crate::control::{parse_control, ControlCommand, Reply};
use crate::record::{MarkEvent, RecordSummary, RecordingSink, RecordingTask};
use crate::wire::{encode_block, WireFrame};

pub const MAX_CLIENTS: usize = 32;

#[derive(Clone, Debug)]
pub struct DaemonConfig {
    /// HTTP and WebSocket listener.
    pub listen: SocketAddr,
    /// Optional plain-TCP listener streaming the same binary frames.
    pub tcp_listen: Option<SocketAddr>,
    /// Blocks each client may fall behind before losing the oldest.
    pub client_capacity: usize,
    pub max_clients: usize,
    pub stats_interval: Duration,
    /// Start a session as soon as the daemon is up.
    pub autostart: bool,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8765)),
            tcp_listen: None,
            client_capacity: 512,
            max_clients: MAX_CLIENTS,
            stats_interval: Duration::from_secs(1),
            autostart: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("could not start daemon thread: {0}")]
    Spawn(#[source] io::Error),
    #[error("initial session failed: {0}")]
    Session(#[from] pieeg_core::SessionError),
    #[error("invalid filter configuration: {0}")]
    Filter(#[from] pieeg_core::dsp::DspError),
}

enum OwnerMsg {
    Control(ControlCommand, Sender<Result<Value, String>>),
    Status(Sender<Value>),
}

#[derive(Clone)]
struct Shared {
    data: SubscribeHandle<Bytes>,
    owner: Sender<OwnerMsg>,
    clients: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    client_capacity: usize,
    max_clients: usize,
}

/// Register image the host expects after bring-up with `cfg`.
pub fn expected_registers(cfg: &SessionConfig) -> RegisterImage {
    let mut image = RegisterImage::power_on();
    for step in build_init_sequence(cfg) {
        if let InitStep::Write { address, value } = step {
            image.set(address, value);
        }
    }
    image
}

fn registers_json(cfg: &SessionConfig) -> Value {
    let image = expected_registers(cfg);
    let hex = |v: u8| format!("0x{v:02X}");
    let chnset: Vec<String> = (0..8).map(|ch| hex(image.values()[0x05 + ch])).collect();
    json!({
        "config1": hex(image.values()[0x01]),
        "config2": hex(image.values()[0x02]),
        "config3": hex(image.values()[0x03]),
        "misc1": hex(image.values()[0x15]),
        "chnset": chnset,
        "test_source_internal": image.config2().test_source_internal,
    })
}

#[derive(Serialize)]
struct ConfigView<'a> {
    sample_rate: u32,
    gains: Vec<u32>,
    channel_enable: u8,
    test_signal: bool,
    filters: &'a FilterChainSpec,
}

struct Owner {
    bus: BusHandle,
    cfg: SessionConfig,
    session: Option<Session>,
    sub: Option<Subscriber<SampleBlock>>,
    events: Option<Receiver<SessionEvent>>,
    filter: BiquadCascade,
    out: Broadcaster<Bytes>,
    recorder: Option<(RecordingTask, Sender<MarkEvent>)>,
    last_recording: Option<RecordSummary>,
    last_stats: Option<SessionStats>,
    last_seq: u64,
    last_ts: u64,
    control: Receiver<OwnerMsg>,
    clients: Arc<AtomicUsize>,
    shutdown: Arc<AtomicBool>,
    stats_interval: Duration,
    scratch: Vec<u8>,
}

impl Owner {
    fn status(&self) -> Value {
        let stats = self.session.as_ref().map(|s| s.stats()).or(self.last_stats);
        let recording = match &self.recorder {
            Some((task, _)) => json!({ "active": true, "path": task.sink().path }),
            None => json!({ "active": false, "last": self.last_recording }),
        };
        json!({
            "running": self.session.is_some(),
            "session": stats,
            "config": ConfigView {
                sample_rate: self.cfg.sample_rate.sps(),
                gains: self.cfg.gains.iter().map(|g| g.factor()).collect(),
                channel_enable: self.cfg.channel_enable,
                test_signal: self.cfg.test_signal,
                filters: &self.cfg.filters,
            },
            "registers": registers_json(&self.cfg),
            "clients": self.clients.load(Ordering::SeqCst),
            "recording": recording,
        })
    }

    fn broadcast_json(&mut self, frame: WireFrame) {
        self.scratch.clear();
        if frame.encode_into(&mut self.scratch).is_ok() {
            self.out.publish(Bytes::copy_from_slice(&self.scratch));
        }
    }

    fn broadcast_stats(&mut self) {
        let json = self.status().to_string();
        self.broadcast_json(WireFrame::Stats {
            seq: self.last_seq,
            timestamp_ns: monotonic_ns(),
            json,
        });
    }

    fn broadcast_event(&mut self, seq: u64, payload: Value) {
        self.broadcast_json(WireFrame::Event {
            seq,
            timestamp_ns: monotonic_ns(),
            json: payload.to_string(),
        });
    }

    fn start_session(&mut self) -> Result<Value, String> {
        if self.session.is_some() {
            return Err("session already running".into());
        }
        let (session, sub) = Session::start_subscribed(&self.bus, self.cfg.clone(), 4096)
            .map_err(|e| e.to_string())?;
        self.events = Some(session.events());
        self.sub = Some(sub);
        self.session = Some(session);
        self.filter.reset_state();
        Ok(json!({ "started": true }))
    }

    fn stop_session(&mut self) -> Option<SessionStats> {
        let session = self.session.take()?;
        let stats = session.stop();
        self.drain_events();
        self.sub = None;
        self.events = None;
        self.last_stats = Some(stats);
        Some(stats)
    }

    fn apply_config(&mut self, cfg: SessionConfig) -> Result<(), String> {
        cfg.validate().map_err(|e| e.to_string())?;
        if let Some(s) = &self.session {
            s.reconfigure(cfg.clone()).map_err(|e| e.to_string())?;
        }
        self.cfg = cfg;
        Ok(())
    }

    fn handle(&mut self, cmd: ControlCommand) -> Result<Value, String> {
        match cmd {
            ControlCommand::Start => self.start_session(),
            ControlCommand::Stop => match self.stop_session() {
                Some(stats) => Ok(json!({ "stats": stats })),
                None => Err("no session running".into()),
            },
            ControlCommand::SetGain { channel, gain } => {
                let gain = Gain::try_from(gain).map_err(|e| e.to_string())?;
                let mut cfg = self.cfg.clone();
                match channel {
                    None => cfg.gains = [gain; 8],
                    Some(c @ 1..=8) => cfg.gains[usize::from(c) - 1] = gain,
                    Some(c) => return Err(format!("channel must be 1..=8, got {c}")),
                }
                self.apply_config(cfg)?;
                Ok(
                    json!({ "gains": self.cfg.gains.iter().map(|g| g.factor()).collect::<Vec<_>>() }),
                )
            }
            ControlCommand::SetTestSignal { on } => {
                let cfg = SessionConfig {
                    test_signal: on,
                    ..self.cfg.clone()
                };
                self.apply_config(cfg)?;
                Ok(json!({ "test_signal": on, "registers": registers_json(&self.cfg) }))
            }
            ControlCommand::SetFilter { bandpass, notch } => {
                let chain = FilterChainSpec { bandpass, notch };
                let filter = chain
                    .design(f64::from(self.cfg.sample_rate.sps()))
                    .map_err(|e| e.to_string())?;
                self.cfg.filters = chain;
                self.filter = filter;
                Ok(json!({ "filters": chain }))
            }
            ControlCommand::MarkEvent { label } => {
                let event = MarkEvent {
                    seq: self.last_seq,
                    timestamp_ns: if self.last_ts > 0 {
                        self.last_ts
                    } else {
                        monotonic_ns()
                    },
                    label,
                };
                if let Some((_, tx)) = &self.recorder {
                    let _ = tx.send(event.clone());
                }
                self.broadcast_event(event.seq, json!({ "event": "mark", "label": event.label }));
                Ok(json!({ "seq": event.seq, "timestamp_ns": event.timestamp_ns }))
            }
            ControlCommand::GetStatus => Ok(self.status()),
            ControlCommand::RecordStart {
                path,
                format,
                rotate_mb,
            } => {
                if self.recorder.is_some() {
                    return Err("already recording".into());
                }
                let session = self.session.as_ref().ok_or("no session running")?;
                let sink = RecordingSink {
                    format,
                    path,
                    rotate_mb,
                };
                let (tx, rx) = unbounded();
                let task = RecordingTask::spawn(session.subscribe(8192), sink.clone(), rx)
                    .map_err(|e| format!("cannot record to {}: {e}", sink.path.display()))?;
                self.recorder = Some((task, tx));
                Ok(json!({ "path": sink.path }))
            }
            ControlCommand::RecordStop => {
                let (task, _) = self.recorder.take().ok_or("not recording")?;
                let summary = task.stop();
                self.last_recording = Some(summary.clone());
                Ok(json!({ "summary": summary }))
            }
        }
    }

    fn drain_events(&mut self) {
        let Some(rx) = self.events.clone() else {
            return;
        };
        for ev in rx.try_iter() {
            let seq = match ev {
                SessionEvent::Desync { seq } | SessionEvent::WatchdogRestart { seq } => seq,
                _ => self.last_seq,
            };
            let payload = serde_json::to_value(&ev).unwrap_or(Value::Null);
            self.broadcast_event(seq, payload);
        }
    }

    fn process(&mut self, mut block: SampleBlock) {
        let _ = self.filter.process_block(&mut block);
        self.last_seq = block.next_seq().saturating_sub(1);
        self.last_ts = block.samples().last().map_or(0, |s| s.timestamp_ns);
        self.scratch.clear();
        encode_block(&block, &mut self.scratch);
        self.out.publish(Bytes::copy_from_slice(&self.scratch));
    }

    fn forward_pending(&mut self) {
        if let Some(sub) = self.sub.take() {
            while let Ok(Some(block)) = sub.try_recv() {
                self.process(block);
            }
            self.sub = Some(sub);
        }
    }

    fn run(mut self) -> Option<SessionStats> {
        let mut next_stats = Instant::now() + self.stats_interval;
        while !self.shutdown.load(Ordering::Acquire) {
            let mut changed = false;
            for msg in self.control.try_iter().collect::<Vec<_>>() {
                match msg {
                    OwnerMsg::Control(cmd, reply) => {
                        let mutating = !matches!(
                            cmd,
                            ControlCommand::GetStatus | ControlCommand::MarkEvent { .. }
                        );
                        let r = self.handle(cmd);
                        changed |= mutating && r.is_ok();
                        let _ = reply.send(r);
                    }
                    OwnerMsg::Status(reply) => {
                        let _ = reply.send(self.status());
                    }
                }
            }
            if changed {
                // Blocks still queued were acquired before the change; the stats
                // frame's seq must come after them.
                self.forward_pending();
                self.broadcast_stats();
            }
            self.drain_events();
            if let Some(sub) = self.sub.take() {
                let mut ended = false;
                match sub.recv_timeout(Duration::from_millis(10)) {
                    Ok(block) => {
                        self.process(block);
                        while let Ok(Some(block)) = sub.try_recv() {
                            self.process(block);
                        }
                    }
                    Err(RecvError::Terminated) => ended = true,
                    Err(RecvError::Timeout) => {}
                }
                self.sub = Some(sub);
                if ended {
                    self.stop_session();
                    self.broadcast_stats();
                }
            } else if let Ok(msg) = self.control.recv_timeout(Duration::from_millis(10)) {
                // Put it back in front of the queue by handling it now.
                match msg {
                    OwnerMsg::Control(cmd, reply) => {
                        let r = self.handle(cmd);
                        let ok = r.is_ok();
                        let _ = reply.send(r);
                        if ok {
                            self.broadcast_stats();
                        }
                    }
                    OwnerMsg::Status(reply) => {
                        let _ = reply.send(self.status());
                    }
                }
            }
            if self.recorder.as_ref().is_some_and(|(t, _)| t.is_finished()) {
                let (task, _) = self.recorder.take().expect("checked");
                self.last_recording = Some(task.stop());
            }
            if Instant::now() >= next_stats {
                self.broadcast_stats();
                next_stats += self.stats_interval;
                if next_stats < Instant::now() {
                    next_stats = Instant::now() + self.stats_interval;
                }
            }
        }
        if let Some((task, _)) = self.recorder.take() {
            self.last_recording = Some(task.stop());
        }
        let stats = self.stop_session().or(self.last_stats);
        self.out.terminate();
        stats
    }
}

/// A running daemon. Dropping it without [`DaemonHandle::shutdown`] leaves
/// the threads running until the process exits.
pub struct DaemonHandle {
    local_addr: SocketAddr,
    tcp_addr: Option<SocketAddr>,
    shared: Shared,
    owner: Option<JoinHandle<Option<SessionStats>>>,
    acceptors: Vec<JoinHandle<()>>,
}

impl DaemonHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.load(Ordering::SeqCst)
    }

    /// Current status document, as served on `/healthz`.
    pub fn status(&self) -> Option<Value> {
        owner_status(&self.shared, Duration::from_secs(2))
    }

    /// Sends a control command as if from a client.
    pub fn control(&self, cmd: ControlCommand) -> Result<Value, String> {
        let (tx, rx) = bounded(1);
        self.shared
            .owner
            .send(OwnerMsg::Control(cmd, tx))
            .map_err(|_| "daemon stopped".to_string())?;
        rx.recv_timeout(Duration::from_secs(5))
            .map_err(|_| "daemon did not answer".to_string())?
    }

    pub fn is_shutting_down(&self) -> bool {
        self.shared.shutdown.load(Ordering::Acquire)
    }

    /// A flag that, once set, shuts the daemon down (for signal handlers).
    pub fn shutdown_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.shared.shutdown)
    }

    /// Stops the session and all threads; returns the last session stats.
    pub fn shutdown(mut self) -> Option<SessionStats> {
        self.shared.shutdown.store(true, Ordering::Release);
        let stats = self.owner.take().and_then(|h| h.join().ok()).flatten();
        for h in self.acceptors.drain(..) {
            let _ = h.join();
        }
        stats
    }
}

fn owner_status(shared: &Shared, timeout: Duration) -> Option<Value> {
    let (tx, rx) = bounded(1);
    shared.owner.send(OwnerMsg::Status(tx)).ok()?;
    rx.recv_timeout(timeout).ok()
}

fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    let l = TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr, source })?;
    l.set_nonblocking(true)
        .map_err(|source| ServeError::Bind { addr, source })?;
    Ok(l)
}

/// Binds the listeners and starts serving `bus` with `session_config`.
pub fn serve(
    config: DaemonConfig,
    bus: BusHandle,
    session_config: SessionConfig,
) -> Result<DaemonHandle, ServeError> {
    session_config
        .validate()
        .map_err(pieeg_core::SessionError::from)?;
    let filter = session_config
        .filters
        .design(f64::from(session_config.sample_rate.sps()))?;
    let listener = bind(config.listen)?;
    let local_addr = listener.local_addr().map_err(ServeError::Spawn)?;
    let tcp = config.tcp_listen.map(bind).transpose()?;
    let tcp_addr = tcp
        .as_ref()
        .map(|l| l.local_addr())
        .transpose()
        .map_err(ServeError::Spawn)?;

    let out = Broadcaster::new();
    let (owner_tx, owner_rx) = unbounded();
    let shared = Shared {
        data: out.handle(),
        owner: owner_tx,
        clients: Arc::new(AtomicUsize::new(0)),
        shutdown: Arc::new(AtomicBool::new(false)),
        client_capacity: config.client_capacity,
        max_clients: config.max_clients.min(MAX_CLIENTS),
    };
    let mut owner = Owner {
        bus,
        cfg: session_config,
        session: None,
        sub: None,
        events: None,
        filter,
        out,
        recorder: None,
        last_recording: None,
        last_stats: None,
        last_seq: 0,
        last_ts: 0,
        control: owner_rx,
        clients: Arc::clone(&shared.clients),
        shutdown: Arc::clone(&shared.shutdown),
        stats_interval: config.stats_interval,
        scratch: Vec::with_capacity(4096),
    };
    if config.autostart {
        owner
            .start_session()
            .map_err(|e| ServeError::Spawn(io::Error::other(format!("starting session: {e}"))))?;
    }
    let owner = thread::Builder::new()
        .name("pieeg-owner".into())
        .spawn(move || owner.run())
        .map_err(ServeError::Spawn)?;

    let mut acceptors = Vec::new();
    let s = shared.clone();
    acceptors.push(
        thread::Builder::new()
            .name("pieeg-accept".into())
            .spawn(move || accept_loop(listener, s, handle_http))
            .map_err(ServeError::Spawn)?,
    );
    if let Some(l) = tcp {
        let s = shared.clone();
        acceptors.push(
            thread::Builder::new()
                .name("pieeg-accept-tcp".into())
                .spawn(move || accept_loop(l, s, handle_raw_tcp))
                .map_err(ServeError::Spawn)?,
        );
    }
    log::info!("serving on http://{local_addr} (ws /stream, /healthz)");
    Ok(DaemonHandle {
        local_addr,
        tcp_addr,
        shared,
        owner: Some(owner),
        acceptors,
    })
}

fn accept_loop(listener: TcpListener, shared: Shared, handler: fn(TcpStream, Shared)) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.shutdown.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let s = shared.clone();
                match thread::Builder::new()
                    .name(format!("pieeg-client-{peer}"))
                    .spawn(move || handler(stream, s))
                {
                    Ok(h) => workers.push(h),
                    Err(e) => log::error!("cannot serve {peer}: {e}"),
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(10))
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

/// Counts a client for its lifetime, refusing past the limit.
struct ClientSlot(Arc<AtomicUsize>);

impl ClientSlot {
    fn acquire(shared: &Shared) -> Option<Self> {
        let prev = shared.clients.fetch_add(1, Ordering::SeqCst);
        if prev >= shared.max_clients {
            shared.clients.fetch_sub(1, Ordering::SeqCst);
            return None;
        }
        Some(Self(Arc::clone(&shared.clients)))
    }
}

impl Drop for ClientSlot {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn respond(stream: &mut TcpStream, status: &str, content_type: &str, body: &str) {
    let head = format!(
        "HTTP/1.1 {status}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\nCache-Control: no-store\r\n\r\n",
        body.len()
    );
    let _ = stream.write_all(head.as_bytes());
    let _ = stream.write_all(body.as_bytes());
    let _ = stream.flush();
}

struct HttpRequest {
    method: String,
    path: String,
    websocket_key: Option<String>,
    upgrade: bool,
    body_start: usize,
}

fn read_request(stream: &mut TcpStream, buf: &mut Vec<u8>) -> io::Result<Option<HttpRequest>> {
    let mut chunk = [0u8; 2048];
    loop {
        let mut headers = [httparse::EMPTY_HEADER; 32];
        let mut req = httparse::Request::new(&mut headers);
        match req.parse(buf) {
            Ok(httparse::Status::Complete(len)) => {
                let header = |name: &str| {
                    req.headers
                        .iter()
                        .find(|h| h.name.eq_ignore_ascii_case(name))
                        .and_then(|h| std::str::from_utf8(h.value).ok())
                        .map(str::trim)
                };
                let upgrade =
                    header("upgrade").is_some_and(|v| v.eq_ignore_ascii_case("websocket"));
                return Ok(Some(HttpRequest {
                    method: req.method.unwrap_or("").to_string(),
                    path: req.path.unwrap_or("").to_string(),
                    websocket_key: header("sec-websocket-key").map(str::to_string),
                    upgrade,
                    body_start: len,
                }));
            }
            Ok(httparse::Status::Partial) => {}
            Err(_) => return Ok(None),
        }
        if buf.len() > 16 * 1024 {
            return Ok(None);
        }
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

fn handle_http(mut stream: TcpStream, shared: Shared) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let mut buf = Vec::with_capacity(1024);
    let req = match read_request(&mut stream, &mut buf) {
        Ok(Some(r)) => r,
        Ok(None) => {
            return respond(
                &mut stream,
                "400 Bad Request",
                "text/plain",
                "bad request\n",
            )
        }
        Err(_) => return,
    };
    let path = req.path.split('?').next().unwrap_or("");
    match (req.method.as_str(), path) {
        ("GET", "/healthz") => match owner_status(&shared, Duration::from_secs(2)) {
            Some(mut status) => {
                status["status"] = Value::from("ok");
                respond(
                    &mut stream,
                    "200 OK",
                    "application/json",
                    &status.to_string(),
                );
            }
            None => respond(
                &mut stream,
                "503 Service Unavailable",
                "application/json",
                r#"{"status":"unavailable"}"#,
            ),
        },
        ("GET", "/stream") => {
            let Some(key) = req.websocket_key.filter(|_| req.upgrade) else {
                return respond(
                    &mut stream,
                    "426 Upgrade Required",
                    "text/plain",
                    "websocket required\n",
                );
            };
            let Some(slot) = ClientSlot::acquire(&shared) else {
                return respond(
                    &mut stream,
                    "503 Service Unavailable",
                    "text/plain",
                    "too many clients\n",
                );
            };
            let accept = tungstenite::handshake::derive_accept_key(key.as_bytes());
            let head = format!(
                "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: {accept}\r\n\r\n"
            );
            if stream.write_all(head.as_bytes()).is_err() {
                return;
            }
            let leftover = buf[req.body_start..].to_vec();
            let ws = WebSocket::from_partially_read(stream, leftover, Role::Server, None);
            serve_websocket(ws, &shared);
            drop(slot);
        }
        ("GET", _) => respond(&mut stream, "404 Not Found", "text/plain", "not found\n"),
        _ => respond(
            &mut stream,
            "405 Method Not Allowed",
            "text/plain",
            "method not allowed\n",
        ),
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn control_reply(shared: &Shared, text: &str, default_id: u64) -> Reply {
    let req = match parse_control(text, default_id) {
        Ok(r) => r,
        Err((id, e)) => return Reply::err(id, e),
    };
    let (tx, rx) = bounded(1);
    if shared
        .owner
        .send(OwnerMsg::Control(req.command, tx))
        .is_err()
    {
        return Reply::err(req.id, "daemon is shutting down");
    }
    match rx.recv_timeout(Duration::from_secs(5)) {
        Ok(Ok(v)) => Reply::ok(req.id, v),
        Ok(Err(e)) => Reply::err(req.id, e),
        Err(_) => Reply::err(req.id, "timed out waiting for the session owner"),
    }
}

fn serve_websocket(mut ws: WebSocket<TcpStream>, shared: &Shared) {
    let sub = shared.data.subscribe(shared.client_capacity);
    let _ = ws
        .get_mut()
        .set_read_timeout(Some(Duration::from_millis(1)));
    let _ = ws.get_mut().set_write_timeout(Some(Duration::from_secs(2)));
    let mut message_no = 0u64;
    loop {
        if shared.shutdown.load(Ordering::Acquire) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return;
        }
        match sub.recv_timeout(Duration::from_millis(10)) {
            Ok(first) => {
                let mut batch = Some(first);
                while let Some(bytes) = batch.take() {
                    if let Err(e) = ws.write(Message::Binary(bytes)) {
                        if !is_timeout(&e) {
                            log::debug!("client write failed: {e}");
                            return;
                        }
                    }
                    batch = sub.try_recv().ok().flatten();
                }
                if let Err(e) = ws.flush() {
                    if !is_timeout(&e) {
                        return;
                    }
                }
            }
            Err(RecvError::Terminated) => {
                let _ = ws.close(None);
                let _ = ws.flush();
                return;
            }
            Err(RecvError::Timeout) => {}
        }
        loop {
            match ws.read() {
                Ok(Message::Text(text)) => {
                    message_no += 1;
                    let reply = control_reply(shared, text.as_str(), message_no);
                    if ws.send(Message::text(reply.to_json())).is_err() {
                        return;
                    }
                }
                Ok(Message::Binary(_)) => {
                    message_no += 1;
                    let reply = Reply::err(
                        Value::from(message_no),
                        "control messages must be text frames",
                    );
                    if ws.send(Message::text(reply.to_json())).is_err() {
                        return;
                    }
                }
                Ok(Message::Close(_)) => {
                    let _ = ws.flush();
                    return;
                }
                Ok(_) => {}
                Err(e) if is_timeout(&e) => break,
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => {
                    return
                }
                Err(e) => {
                    log::debug!("client read failed: {e}");
                    return;
                }
            }
        }
    }
}

fn handle_raw_tcp(mut stream: TcpStream, shared: Shared) {
    let Some(_slot) = ClientSlot::acquire(&shared) else {
        return;
    };
    let _ = stream.set_write_timeout(Some(Duration::from_secs(2)));
    let sub = shared.data.subscribe(shared.client_capacity);
    loop {
        if shared.shutdown.load(Ordering::Acquire) {
            return;
        }
        match sub.recv_timeout(Duration::from_millis(50)) {
            Ok(bytes) => {
                if stream.write_all(&bytes).is_err() {
                    return;
                }
            }
            Err(RecvError::Terminated) => return,
            Err(RecvError::Timeout) => {}
        }
    }
}
