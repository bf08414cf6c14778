//! Board bring-up diagnostics and the hardware safety notice.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use pieeg_core::transport::{open_spidev, BusConfig};
use pieeg_core::{BusHandle, Session, SessionConfig, SessionEvent, SimTransport, TransportError};

use crate::config::{AppConfig, TransportKind};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChecklistEntry {
    pub label: &'static str,
    pub expected_volts: f64,
    pub tolerance_volts: f64,
}

/// Test-point voltages of the shield: supply rails, then ADC capacitor pins.
const SUPPLY: [(&str, f64); 3] = [("TP1", -2.5), ("TP2", 3.3), ("TP3", 2.5)];
const VCAP: [(&str, f64); 4] = [
    ("VCAP1", -1.2),
    ("VCAP2", 0.001),
    ("VCAP3", 4.2),
    ("VCAP4", -0.125),
];

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticChecklist {
    pub entries: [ChecklistEntry; 7],
}

impl DiagnosticChecklist {
    pub fn new(tolerance_pct: f64) -> Self {
        let mut all = SUPPLY
            .iter()
            .chain(VCAP.iter())
            .map(|&(label, v)| ChecklistEntry {
                label,
                expected_volts: v,
                tolerance_volts: (v * tolerance_pct / 100.0).abs(),
            });
        Self {
            entries: std::array::from_fn(|_| all.next().expect("seven entries")),
        }
    }

    pub fn supply(&self) -> &[ChecklistEntry] {
        &self.entries[..3]
    }

    pub fn vcap(&self) -> &[ChecklistEntry] {
        &self.entries[3..]
    }

    pub fn render(&self, tolerance_pct: f64) -> String {
        let mut out = String::new();
        let row = |out: &mut String, e: &ChecklistEntry| {
            let _ = writeln!(
                out,
                "  {:<6} {:>7} V   (±{} V)",
                e.label,
                e.expected_volts,
                trim_float(e.tolerance_volts)
            );
        };
        out.push_str("PiEEG board checklist\n");
        out.push_str(
            "Board voltages cannot be read from software; measure each point with a multimeter.\n",
        );
        let _ = writeln!(
            out,
            "Tolerance: ±{}% of the expected value.\n",
            trim_float(tolerance_pct)
        );
        out.push_str("Supply test points (if the init LED on the shield stays dark):\n");
        for e in self.supply() {
            row(&mut out, e);
        }
        out.push_str(
            "\nADC capacitor pins (if signals are noisier than the device should allow):\n",
        );
        for e in self.vcap() {
            row(&mut out, e);
        }
        out
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

const SAFETY_NOTICE: &str = "\
Safety notice for the hardware backend:
  - Power the Raspberry Pi, the shield and every attached peripheral from
    batteries. Nothing in the setup may be connected to mains power.
  - The shield attaches to the Pi through the 40-pin GPIO header and nothing else.
  - Turn everything off at once if a component heats up or you notice smoke.
  - Keep fingers off the board while it is powered.
This notice is shown once per machine; pass --ack-safety to suppress it.
";

fn safety_marker() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("PIEEG_STATE_DIR") {
        return Some(PathBuf::from(dir).join("safety-notice-shown"));
    }
    let base = std::env::var_os("XDG_STATE_HOME")
        .map(PathBuf::from)
        .or_else(|| std::env::var_os("HOME").map(|h| PathBuf::from(h).join(".local/state")))?;
    Some(base.join("pieeg").join("safety-notice-shown"))
}

/// Prints the notice on first hardware use unless acknowledged.
pub fn safety_notice(transport: TransportKind, acknowledged: bool) {
    if transport != TransportKind::Spidev || acknowledged {
        return;
    }
    let marker = safety_marker();
    if marker.as_ref().is_some_and(|m| m.exists()) {
        return;
    }
    eprint!("{SAFETY_NOTICE}");
    if let Some(m) = marker {
        if let Some(dir) = m.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        let _ = std::fs::write(&m, b"");
    }
}

/// Opens the configured backend.
pub fn open_bus(cfg: &AppConfig, ack_safety: bool) -> Result<BusHandle, TransportError> {
    match cfg.transport() {
        TransportKind::Sim => SimTransport::new(cfg.sim.clone())
            .map(BusHandle::new)
            .map_err(|e| TransportError::Config(e.to_string())),
        TransportKind::Spidev => {
            safety_notice(TransportKind::Spidev, ack_safety);
            open_hw(&cfg.bus)
        }
    }
}

fn open_hw(bus: &BusConfig) -> Result<BusHandle, TransportError> {
    open_spidev(bus).map(BusHandle::from_boxed)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProbeResult {
    Skipped,
    Ok,
    Failed(String),
}

impl std::fmt::Display for ProbeResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeResult::Skipped => write!(f, "init: skipped (no transport selected)"),
            ProbeResult::Ok => write!(f, "init: OK"),
            ProbeResult::Failed(why) => write!(f, "init: FAILED ({why})"),
        }
    }
}

/// Brings the device up briefly and waits for the init event and one sample.
pub fn probe(cfg: &AppConfig, ack_safety: bool) -> ProbeResult {
    if cfg.transport.is_none() {
        return ProbeResult::Skipped;
    }
    let bus = match open_bus(cfg, ack_safety) {
        Ok(b) => b,
        Err(TransportError::DeviceNotPresent(_)) => {
            return ProbeResult::Failed("device not found".into())
        }
        Err(e) => return ProbeResult::Failed(e.to_string()),
    };
    let session_cfg = SessionConfig {
        frame_limit: Some(u64::from(cfg.session.sample_rate.sps()) / 4 + 1),
        ..cfg.session.clone()
    };
    let (session, sub) = match Session::start_subscribed(&bus, session_cfg, 64) {
        Ok(s) => s,
        Err(e) => return ProbeResult::Failed(e.to_string()),
    };
    let events = session.events();
    let init = loop {
        match events.recv_timeout(Duration::from_secs(1)) {
            Ok(SessionEvent::InitOk) => break true,
            Ok(SessionEvent::Failed { .. }) | Err(_) => break false,
            Ok(_) => {}
        }
    };
    let got_data = init && sub.recv_timeout(Duration::from_secs(1)).is_ok();
    session.stop();
    match (init, got_data) {
        (false, _) => ProbeResult::Failed("no init event".into()),
        (true, false) => ProbeResult::Failed("no data from device".into()),
        (true, true) => ProbeResult::Ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checklist_has_the_seven_points() {
        let c = DiagnosticChecklist::new(5.0);
        let labels: Vec<_> = c.entries.iter().map(|e| e.label).collect();
        assert_eq!(
            labels,
            ["TP1", "TP2", "TP3", "VCAP1", "VCAP2", "VCAP3", "VCAP4"]
        );
        assert_eq!(c.entries[0].tolerance_volts, 0.125);
        let text = c.render(5.0);
        for s in [
            "TP1", "-2.5", "3.3", "2.5", "VCAP1", "-1.2", "0.001", "4.2", "-0.125",
        ] {
            assert!(text.contains(s), "missing {s}");
        }
    }

    #[test]
    fn probe_skipped_without_transport() {
        assert_eq!(probe(&AppConfig::default(), false), ProbeResult::Skipped);
    }

    #[test]
    fn probe_on_simulator() {
        let cfg = AppConfig {
            transport: Some(TransportKind::Sim),
            ..AppConfig::default()
        };
        assert_eq!(probe(&cfg, false), ProbeResult::Ok);
    }

    #[test]
    fn missing_device_reported() {
        let mut cfg = AppConfig {
            transport: Some(TransportKind::Spidev),
            ..AppConfig::default()
        };
        cfg.bus.spi_device_path = "/nonexistent/spidev9.9".into();
        assert_eq!(
            probe(&cfg, true),
            ProbeResult::Failed("device not found".into())
        );
    }
}
