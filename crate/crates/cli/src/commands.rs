use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use pieeg_core::acquisition::RecvError;
use pieeg_core::codec::{build_init_sequence, DecodedRegister, RegisterAddress};
use pieeg_core::{Session, SessionConfig};
use pieeg_streamd::record::RecordingTask;
use pieeg_streamd::server::expected_registers;
use pieeg_streamd::{replay, serve, DaemonConfig, RecordFormat, RecordingSink, WireFrame};
use serde_json::json;

use crate::check::open_bus;
use crate::config::AppConfig;

/// Set by Ctrl-C; long-running commands poll it.
pub fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
        log::warn!("cannot install Ctrl-C handler: {e}");
    }
    flag
}

fn frames_for(duration: Duration, cfg: &SessionConfig) -> u64 {
    (duration.as_nanos() * u128::from(cfg.sample_rate.sps()) / 1_000_000_000) as u64
}

fn channel_indices(channels: &[u8]) -> Result<Vec<usize>> {
    if channels.is_empty() {
        return Ok((0..8).collect());
    }
    channels
        .iter()
        .map(|&c| match c {
            1..=8 => Ok(usize::from(c) - 1),
            _ => bail!("channel {c} is out of range 1..=8"),
        })
        .collect()
}

pub struct StreamOpts {
    pub duration: Option<Duration>,
    pub summary: bool,
    pub channels: Vec<u8>,
    pub unfiltered: bool,
}

pub fn stream(cfg: &AppConfig, ack: bool, opts: StreamOpts) -> Result<()> {
    let shown = channel_indices(&opts.channels)?;
    let mut session_cfg = cfg.session.clone();
    if let Some(d) = opts.duration {
        session_cfg.frame_limit = Some(frames_for(d, &session_cfg));
    }
    let sps = session_cfg.sample_rate.sps();
    let mut filter = if opts.unfiltered {
        pieeg_core::dsp::FilterChainSpec::none().design(f64::from(sps))?
    } else {
        session_cfg.filters.design(f64::from(sps))?
    };
    let bus = open_bus(cfg, ack)?;
    let (session, sub) = Session::start_subscribed(&bus, session_cfg, 8192)?;
    let stop = interrupt_flag();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    let window = (sps / 2).max(1) as usize;
    let mut sumsq = [0f64; 8];
    let mut n = 0usize;
    let mut window_start_ts: Option<u64> = None;
    let mut elapsed_samples = 0u64;
    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let mut block = match sub.recv_timeout(Duration::from_millis(200)) {
            Ok(b) => b,
            Err(RecvError::Terminated) => break,
            Err(RecvError::Timeout) => continue,
        };
        filter.process_block(&mut block)?;
        for (i, s) in block.samples().iter().enumerate() {
            if !opts.summary {
                write!(out, "{} {}", block.seq() + i as u64, s.timestamp_ns)?;
                for &ch in &shown {
                    write!(out, " {:.3}", s.volts[ch] * 1e6)?;
                }
                writeln!(out)?;
                continue;
            }
            let t0 = *window_start_ts.get_or_insert(s.timestamp_ns);
            for ch in 0..8 {
                sumsq[ch] += s.volts[ch] * s.volts[ch];
            }
            n += 1;
            elapsed_samples += 1;
            if n == window {
                let span = (s.timestamp_ns - t0) as f64 / 1e9;
                let rate = if span > 0.0 {
                    (n - 1) as f64 / span
                } else {
                    0.0
                };
                let stats = session.stats();
                let rms: Vec<String> = shown
                    .iter()
                    .map(|&ch| format!("{:.2}", (sumsq[ch] / n as f64).sqrt() * 1e6))
                    .collect();
                writeln!(
                    out,
                    "t={:.1}s rate={:.1}sps drops={} desync={} rms_uV=[{}]",
                    elapsed_samples as f64 / f64::from(sps),
                    rate,
                    stats.drops,
                    stats.frames_desync,
                    rms.join(",")
                )?;
                out.flush()?;
                sumsq = [0.0; 8];
                n = 0;
                window_start_ts = None;
            }
        }
    }
    out.flush()?;
    let stats = session.stop();
    eprintln!(
        "stream finished: frames_ok={} drops={} desync={} watchdog_restarts={}",
        stats.frames_ok, stats.drops, stats.frames_desync, stats.watchdog_restarts
    );
    Ok(())
}

pub struct RecordOpts {
    pub out: PathBuf,
    pub duration: Option<Duration>,
    pub format: Option<RecordFormat>,
    pub rotate_mb: Option<u64>,
}

fn format_for(path: &Path, default: RecordFormat) -> RecordFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => RecordFormat::Csv,
        Some("peeg" | "raw" | "bin") => RecordFormat::Raw,
        _ => default,
    }
}

pub fn record(cfg: &AppConfig, ack: bool, opts: RecordOpts) -> Result<()> {
    let sink = RecordingSink {
        format: opts
            .format
            .unwrap_or_else(|| format_for(&opts.out, cfg.recording.format)),
        path: opts.out.clone(),
        rotate_mb: opts.rotate_mb.or(cfg.recording.rotate_mb),
    };
    let mut session_cfg = cfg.session.clone();
    if let Some(d) = opts.duration {
        session_cfg.frame_limit = Some(frames_for(d, &session_cfg));
    }
    let bus = open_bus(cfg, ack)?;
    let (session, sub) = Session::start_subscribed(&bus, session_cfg, 1 << 16)?;
    // Mark events only come in through the daemon; nothing sends here.
    let (_tx, rx) = pieeg_streamd::record::event_channel();
    let task = RecordingTask::spawn(sub, sink, rx)
        .with_context(|| format!("creating {}", opts.out.display()))?;
    let stop = interrupt_flag();
    while !session.is_finished() && !task.is_finished() && !stop.load(Ordering::SeqCst) {
        thread::sleep(Duration::from_millis(20));
    }
    let stats = session.stop();
    let summary = task.stop();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({ "recording": summary, "session": stats }))?
    );
    if let Some(e) = &summary.error {
        bail!("recording incomplete: {e}");
    }
    Ok(())
}

pub struct ReplayOpts {
    pub path: PathBuf,
    pub speed: f64,
    pub summary: bool,
}

pub fn replay_cmd(opts: ReplayOpts) -> Result<()> {
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut write_err = None;
    let summary = replay(&opts.path, opts.speed, |f| {
        if opts.summary || write_err.is_some() {
            return;
        }
        let r = match f {
            WireFrame::Data {
                seq,
                timestamp_ns,
                volts,
                ..
            } => {
                let vals: Vec<String> = volts
                    .iter()
                    .map(|v| format!("{:.3}", f64::from(*v) * 1e6))
                    .collect();
                writeln!(out, "{seq} {timestamp_ns} {}", vals.join(" "))
            }
            WireFrame::Event { seq, json, .. } => writeln!(out, "# event {seq} {json}"),
            WireFrame::Stats { .. } => Ok(()),
        };
        if let Err(e) = r {
            write_err = Some(e);
        }
    })
    .with_context(|| format!("replaying {}", opts.path.display()))?;
    if let Some(e) = write_err {
        if e.kind() != io::ErrorKind::BrokenPipe {
            return Err(e.into());
        }
    }
    out.flush().ok();
    drop(out);
    if let Some(stop) = &summary.stop {
        if summary.frames == 0 {
            bail!("{} is not a recording: {stop}", opts.path.display());
        }
        eprintln!(
            "warning: {stop}; replayed the {} whole frames before it",
            summary.frames
        );
    }
    eprintln!(
        "replayed {} frames ({} data) in {:.3} s",
        summary.frames,
        summary.data_frames,
        summary.elapsed.as_secs_f64()
    );
    Ok(())
}

pub struct ServeOpts {
    pub listen: Option<SocketAddr>,
    pub tcp_listen: Option<SocketAddr>,
    pub duration: Option<Duration>,
    pub no_autostart: bool,
}

pub fn serve_cmd(cfg: &AppConfig, ack: bool, opts: ServeOpts) -> Result<()> {
    let bus = open_bus(cfg, ack)?;
    let dc = DaemonConfig {
        listen: opts.listen.unwrap_or(cfg.listen),
        tcp_listen: opts.tcp_listen.or(cfg.tcp_listen),
        client_capacity: cfg.client_capacity,
        autostart: !opts.no_autostart,
        ..DaemonConfig::default()
    };
    let daemon = serve(dc, bus, cfg.session.clone())?;
    println!(
        "listening on http://{} (WebSocket /stream, GET /healthz)",
        daemon.local_addr()
    );
    if let Some(t) = daemon.tcp_addr() {
        println!("raw TCP frames on {t}");
    }
    io::stdout().flush().ok();
    let stop = interrupt_flag();
    let started = Instant::now();
    while !stop.load(Ordering::SeqCst) && opts.duration.is_none_or(|d| started.elapsed() < d) {
        thread::sleep(Duration::from_millis(50));
    }
    let stats = daemon.shutdown();
    println!(
        "{}",
        serde_json::to_string(&json!({ "final_stats": stats }))?
    );
    Ok(())
}

fn parse_register_assignment(s: &str) -> Result<(RegisterAddress, u8)> {
    let (name, value) = s
        .split_once('=')
        .context("expected REGISTER=VALUE, e.g. CONFIG1=0x96")?;
    let address = RegisterAddress::from_name(&name.to_ascii_uppercase())
        .or_else(|| parse_u8(name).and_then(|a| RegisterAddress::new(a).ok()))
        .with_context(|| format!("unknown register {name}"))?;
    let value = parse_u8(value).with_context(|| format!("bad register value {value}"))?;
    Ok((address, value))
}

fn parse_u8(s: &str) -> Option<u8> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16).ok(),
        None => match s.strip_prefix("0b") {
            Some(bin) => u8::from_str_radix(bin, 2).ok(),
            None => s.parse().ok(),
        },
    }
}

fn describe(address: RegisterAddress, value: u8) -> String {
    let d = DecodedRegister::decode(address, value);
    let fields: Vec<String> = d.fields.iter().map(|(n, v)| format!("{n}={v}")).collect();
    let mut line = format!(
        "0x{:02X} {:<10} 0x{value:02X}  {}",
        address.get(),
        address.name(),
        fields.join(" ")
    );
    if d.reserved_mismatch {
        line.push_str("  (reserved bits differ from datasheet values)");
    }
    line
}

pub fn registers(cfg: &AppConfig, decode: &[String], script: bool) -> Result<()> {
    if script {
        for step in build_init_sequence(&cfg.session) {
            let bytes: Vec<String> = step.bytes().iter().map(|b| format!("{b:02X}")).collect();
            println!("{:<28} [{}]", step.to_string(), bytes.join(" "));
        }
        return Ok(());
    }
    if !decode.is_empty() {
        for s in decode {
            let (a, v) = parse_register_assignment(s)?;
            println!("{}", describe(a, v));
        }
        return Ok(());
    }
    let image = expected_registers(&cfg.session);
    for a in RegisterAddress::all() {
        println!("{}", describe(a, image.get(a)));
    }
    Ok(())
}
