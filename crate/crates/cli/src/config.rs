//! Application configuration: TOML file, then `PIEEG_*` environment, then flags.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use pieeg_core::codec::{Gain, InitMode, SampleRate};
use pieeg_core::dsp::{FilterChainSpec, NotchSpec};
use pieeg_core::transport::BusConfig;
use pieeg_core::{SessionConfig, SimConfig};
use pieeg_streamd::RecordFormat;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Sim,
    Spidev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingDefaults {
    pub format: RecordFormat,
    pub rotate_mb: Option<u64>,
}

impl Default for RecordingDefaults {
    fn default() -> Self {
        Self {
            format: RecordFormat::Csv,
            rotate_mb: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Allowed deviation of each test point, percent of the expected value.
    pub tolerance_pct: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { tolerance_pct: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Unset means "not chosen": `check` skips its probe, other commands use the simulator.
    pub transport: Option<TransportKind>,
    /// Moves the notch filter to the local mains frequency.
    pub mains_hz: Option<u32>,
    pub listen: SocketAddr,
    pub tcp_listen: Option<SocketAddr>,
    pub client_capacity: usize,
    pub bus: BusConfig,
    pub sim: SimConfig,
    pub session: SessionConfig,
    pub recording: RecordingDefaults,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            transport: None,
            mains_hz: None,
            listen: SocketAddr::from(([127, 0, 0, 1], 8765)),
            tcp_listen: None,
            client_capacity: 512,
            bus: BusConfig::default(),
            sim: SimConfig::default(),
            session: SessionConfig::default(),
            recording: RecordingDefaults::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: AppConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn transport(&self) -> TransportKind {
        self.transport.unwrap_or(TransportKind::Sim)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(hz) = self.mains_hz {
            if hz != 50 && hz != 60 {
                bail!("mains_hz must be 50 or 60, got {hz}");
            }
        }
        if !(self.diagnostics.tolerance_pct > 0.0 && self.diagnostics.tolerance_pct < 100.0) {
            bail!("diagnostics.tolerance_pct must be in (0, 100)");
        }
        if self.client_capacity == 0 {
            bail!("client_capacity must be at least 1");
        }
        self.session
            .validate()
            .context("invalid session settings")?;
        self.bus.validate().context("invalid bus settings")?;
        self.session
            .filters
            .design(f64::from(self.session.sample_rate.sps()))
            .context("invalid filter settings")?;
        Ok(())
    }
}

fn parse_rate(s: &str) -> Result<SampleRate, String> {
    let n: u32 = s.parse().map_err(|_| {
        format!(
            "not a number; allowed rates: {}",
            SampleRate::allowed_list()
        )
    })?;
    SampleRate::try_from(n).map_err(|_| {
        format!(
            "{n} SPS is not supported; allowed rates: {}",
            SampleRate::allowed_list()
        )
    })
}

fn parse_gain(s: &str) -> Result<Gain, String> {
    let allowed = Gain::ALL.map(|g| g.factor().to_string()).join(", ");
    let n: u32 = s
        .parse()
        .map_err(|_| format!("not a number; allowed gains: {allowed}"))?;
    Gain::try_from(n).map_err(|_| format!("{n} is not a supported gain; allowed gains: {allowed}"))
}

fn parse_mains(s: &str) -> Result<u32, String> {
    match s {
        "50" => Ok(50),
        "60" => Ok(60),
        _ => Err("mains frequency must be 50 or 60".into()),
    }
}

/// Options shared by every subcommand that talks to a device.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, env = "PIEEG_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Device backend.
    #[arg(long, env = "PIEEG_TRANSPORT", value_enum)]
    pub transport: Option<TransportKind>,
    /// Sample rate in SPS.
    #[arg(long, env = "PIEEG_SAMPLE_RATE", value_parser = parse_rate, value_name = "SPS")]
    pub rate: Option<SampleRate>,
    /// PGA gain applied to every channel.
    #[arg(long, env = "PIEEG_GAIN", value_parser = parse_gain)]
    pub gain: Option<Gain>,
    /// Route all channels to the internal test signal.
    #[arg(long)]
    pub test_signal: bool,
    /// Mains frequency for the notch filter.
    #[arg(long, env = "PIEEG_MAINS_HZ", value_parser = parse_mains, value_name = "HZ")]
    pub mains: Option<u32>,
    /// Disable the bandpass and notch filters.
    #[arg(long)]
    pub no_filter: bool,
    /// Verify register contents before starting conversions.
    #[arg(long)]
    pub strict_init: bool,
    /// SPI device node for the hardware backend.
    #[arg(long, env = "PIEEG_SPI_DEVICE", value_name = "PATH")]
    pub spi_device: Option<PathBuf>,
    /// Acknowledge the hardware safety notice and stop showing it.
    #[arg(long, env = "PIEEG_ACK_SAFETY")]
    pub ack_safety: bool,
}

impl CommonArgs {
    /// File (if any) with environment and flag overrides applied.
    pub fn resolve(&self) -> Result<AppConfig> {
        let mut cfg = match &self.config {
            Some(p) => AppConfig::load(p)?,
            None => AppConfig::default(),
        };
        if let Some(t) = self.transport {
            cfg.transport = Some(t);
        }
        if let Some(r) = self.rate {
            cfg.session.sample_rate = r;
        }
        if let Some(g) = self.gain {
            cfg.session.gains = [g; 8];
        }
        if self.test_signal {
            cfg.session.test_signal = true;
        }
        if let Some(hz) = self.mains {
            cfg.mains_hz = Some(hz);
        }
        if let Some(p) = &self.spi_device {
            cfg.bus.spi_device_path = p.clone();
        }
        if self.strict_init {
            cfg.session.init_mode = InitMode::Strict;
        }
        if let Some(hz) = cfg.mains_hz {
            apply_mains(&mut cfg.session.filters, hz);
        }
        if self.no_filter {
            cfg.session.filters = FilterChainSpec::none();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_mains(filters: &mut FilterChainSpec, hz: u32) {
    match filters.notch.as_mut() {
        Some(n) => n.center_hz = f64::from(hz),
        None => {
            filters.notch = Some(NotchSpec {
                center_hz: f64::from(hz),
                q: 30.0,
            })
        }
    }
}
