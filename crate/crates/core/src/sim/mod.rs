//! Software ADS1299 behind the [`Transport`] interface.
//!
//! The simulator interprets the same SPI byte stream real silicon does
//! (WREG/RREG/system commands, RDATAC readout after DRDY), paces DRDY from the
//! monotonic clock and synthesizes deterministic signals, the internal test
//! square wave and scheduled faults.
//!
//! Differences from silicon, kept on purpose for testability:
//! * power-up leaves continuous-read mode off, so register writes issued
//!   before SDATAC are honored;
//! * CHnSET powers up as `0x60` (gain 24, normal input) rather than `0x61`;
//! * frames not read in time queue up to a configurable backlog instead of
//!   being overwritten immediately.

mod waveform;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    volts_to_raw, Command, ConversionParams, DataFrame, Gain, InputMux, RegisterAddress,
    RegisterImage, TestFrequency, CHANNELS, DEFAULT_VREF, FRAME_LEN, RREG, WREG,
};
use crate::transport::{
    check_transfer_args, monotonic_ns, sleep_until_ns, Transport, TransportError,
};

pub use waveform::{ChannelWaveform, SimWaveformSpec, Tone};

/// Master clock; pins the test-signal frequency at f_clk / 2^21 ≈ 0.977 Hz.
pub const F_CLK_HZ: f64 = 2.048e6;

const SIM_CHSET_POWER_ON: u8 = 0x60;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("frame {requested} is in the past (device is at frame {current})")]
    PastFrame { requested: u64, current: u64 },
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("register address 0x{0:02X} is outside 0x00..=0x17")]
    BadRegister(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// The frame is converted but its DRDY never reaches the host.
    DropFrame,
    /// The frame's status word loses its sync nibble.
    CorruptSync,
    /// DRDY goes quiet for the duration, or until the device is restarted.
    StallDrdy { duration_ms: u64 },
}

impl FaultKind {
    pub fn stall(duration: Duration) -> Self {
        FaultKind::StallDrdy {
            duration_ms: duration.as_millis() as u64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedFault {
    pub frame_index: u64,
    #[serde(flatten)]
    pub kind: FaultKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub waveform: SimWaveformSpec,
    pub faults: Vec<PlannedFault>,
    /// How far behind the host may fall before unread frames are lost.
    pub backlog_ms: u64,
    pub f_clk_hz: f64,
    pub vref: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            waveform: SimWaveformSpec::default(),
            faults: Vec::new(),
            backlog_ms: 100,
            f_clk_hz: F_CLK_HZ,
            vref: DEFAULT_VREF,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimStats {
    /// Frames converted: delivered plus lost to faults or overrun.
    pub frames_emitted: u64,
    pub frames_delivered: u64,
    pub frames_dropped: u64,
    pub frames_corrupted: u64,
    pub frames_overrun: u64,
    pub stalls: u64,
    pub clipped_samples: u64,
    pub sample_index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimMode {
    pub running: bool,
    pub rdatac: bool,
}

/// Register image the simulator powers up with.
pub fn sim_power_on_registers() -> RegisterImage {
    let mut regs = RegisterImage::power_on();
    for ch in 0..CHANNELS {
        regs.set(
            RegisterAddress::channel_set(ch).expect("channel < 8"),
            SIM_CHSET_POWER_ON,
        );
    }
    regs
}

/// Output of one simulated conversion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderedFrame {
    pub frame: DataFrame,
    /// Analog value each channel was asked to convert, before quantization.
    pub analog_volts: [f64; CHANNELS],
    pub clipped: [bool; CHANNELS],
}

/// Internal test-signal level at frame `index` for the given CONFIG2 state.
pub fn test_signal_volts(
    regs: &RegisterImage,
    vref: f64,
    f_clk_hz: f64,
    sps: f64,
    index: u64,
) -> f64 {
    let c2 = regs.config2();
    if !c2.test_source_internal {
        return 0.0;
    }
    let amplitude = c2.test_amplitude(vref);
    match c2.test_frequency() {
        TestFrequency::Dc => amplitude,
        TestFrequency::NotUsed => 0.0,
        f => {
            let hz = f.hz(f_clk_hz).expect("square-wave code");
            let half_periods = (2.0 * hz * index as f64 / sps).floor() as u64;
            if half_periods.is_multiple_of(2) {
                amplitude
            } else {
                -amplitude
            }
        }
    }
}

/// One conversion of all channels at frame `index`.
///
/// `noise` holds one standard-normal draw per channel, scaled here by each
/// channel's sigma.
pub fn render_frame(
    regs: &RegisterImage,
    waveform: &SimWaveformSpec,
    vref: f64,
    f_clk_hz: f64,
    sps: f64,
    index: u64,
    noise: &[f64; CHANNELS],
) -> RenderedFrame {
    let t = index as f64 / sps;
    let lead_off = u32::from(waveform.lead_off);
    let status = 0xC0_0000 | ((lead_off >> 8) << 12) | ((lead_off & 0xFF) << 4);
    let mut channels = [0i32; CHANNELS];
    let mut analog_volts = [0f64; CHANNELS];
    let mut clipped = [false; CHANNELS];
    for ch in 0..CHANNELS {
        let settings = regs.channel(ch).expect("channel < 8");
        let gain = settings.gain().unwrap_or(Gain::X24);
        let v = if settings.powered_down {
            0.0
        } else {
            match settings.mux {
                InputMux::Normal => {
                    let w = &waveform.channels[ch];
                    w.deterministic(t) + w.noise_sigma_v * noise[ch]
                }
                InputMux::TestSignal => test_signal_volts(regs, vref, f_clk_hz, sps, index),
                _ => 0.0,
            }
        };
        let params = ConversionParams::new(vref, gain).expect("vref validated");
        let (raw, clip) = volts_to_raw(v, &params);
        channels[ch] = raw;
        analog_volts[ch] = v;
        clipped[ch] = clip;
    }
    RenderedFrame {
        frame: DataFrame { status, channels },
        analog_volts,
        clipped,
    }
}

struct Device {
    regs: RegisterImage,
    open: bool,
    running: bool,
    rdatac: bool,
    sample_index: u64,
    anchor_ns: u64,
    anchor_index: u64,
    period_ns: u64,
    sps: f64,
    stall_until: Option<u64>,
    pending: Option<[u8; FRAME_LEN]>,
    last_frame: [u8; FRAME_LEN],
    faults: BTreeMap<u64, FaultKind>,
    poisoned: [Option<u8>; 24],
    stats: SimStats,
    rng: ChaCha8Rng,
    config: SimConfig,
}

impl Device {
    fn new(config: SimConfig) -> Self {
        let faults = config
            .faults
            .iter()
            .map(|f| (f.frame_index, f.kind))
            .collect();
        Self {
            regs: sim_power_on_registers(),
            open: true,
            running: false,
            rdatac: false,
            sample_index: 0,
            anchor_ns: 0,
            anchor_index: 0,
            period_ns: 4_000_000,
            sps: 250.0,
            stall_until: None,
            pending: None,
            last_frame: [0; FRAME_LEN],
            faults,
            poisoned: [None; 24],
            stats: SimStats::default(),
            rng: ChaCha8Rng::seed_from_u64(config.waveform.seed),
            config,
        }
    }

    fn due_ns(&self, index: u64) -> u64 {
        self.anchor_ns + (index - self.anchor_index + 1) * self.period_ns
    }

    fn generate(&mut self, index: u64) -> [u8; FRAME_LEN] {
        let mut noise = [0f64; CHANNELS];
        for n in &mut noise {
            *n = self.rng.sample(StandardNormal);
        }
        let r = render_frame(
            &self.regs,
            &self.config.waveform,
            self.config.vref,
            self.config.f_clk_hz,
            self.sps,
            index,
            &noise,
        );
        self.stats.clipped_samples += r.clipped.iter().filter(|c| **c).count() as u64;
        r.frame.to_bytes()
    }

    /// Consumes frame `sample_index` without delivering it.
    fn lose_current(&mut self) {
        let k = self.sample_index;
        self.generate(k);
        self.sample_index += 1;
        self.stats.frames_emitted += 1;
    }

    fn start(&mut self) {
        let rate = self
            .regs
            .sample_rate()
            .unwrap_or(crate::codec::SampleRate::Sps250);
        self.running = true;
        self.period_ns = rate.period_ns();
        self.sps = f64::from(rate.sps());
        self.anchor_ns = monotonic_ns();
        self.anchor_index = self.sample_index;
        self.stall_until = None;
        self.pending = None;
    }

    fn reset(&mut self) {
        self.regs = sim_power_on_registers();
        self.running = false;
        self.rdatac = false;
        self.sample_index = 0;
        self.anchor_index = 0;
        self.stall_until = None;
        self.pending = None;
        self.rng = ChaCha8Rng::seed_from_u64(self.config.waveform.seed);
    }

    fn command(&mut self, cmd: Command) {
        match cmd {
            Command::Start => self.start(),
            Command::Stop | Command::Standby => {
                self.running = false;
                self.pending = None;
            }
            Command::Reset => self.reset(),
            Command::Rdatac => self.rdatac = true,
            Command::Sdatac => self.rdatac = false,
            Command::Wakeup | Command::Rdata => {}
        }
    }

    fn write_register(&mut self, address: usize, value: u8) {
        if address < self.poisoned.len() {
            let stored = self.poisoned[address].unwrap_or(value);
            self.regs.set(
                RegisterAddress::new(address as u8).expect("checked"),
                stored,
            );
        }
    }

    fn read_register(&self, address: usize) -> u8 {
        if address < 24 {
            self.regs
                .get(RegisterAddress::new(address as u8).expect("checked"))
        } else {
            0
        }
    }

    /// Interprets a command byte stream, honoring WREG/RREG only outside RDATAC.
    fn interpret(&mut self, tx: &[u8], rx: &mut [u8]) {
        rx.fill(0);
        let mut i = 0;
        while i < tx.len() {
            let op = tx[i];
            let is_rreg = op & 0xE0 == RREG;
            let is_wreg = op & 0xE0 == WREG;
            if is_rreg || is_wreg {
                let start = usize::from(op & 0x1F);
                let count = tx.get(i + 1).map_or(0, |n| usize::from(*n) + 1);
                for j in 0..count {
                    let pos = i + 2 + j;
                    if pos >= tx.len() {
                        break;
                    }
                    if self.rdatac {
                        continue;
                    }
                    if is_wreg {
                        self.write_register(start + j, tx[pos]);
                    } else {
                        rx[pos] = self.read_register(start + j);
                    }
                }
                i += 2 + count;
            } else {
                if let Some(cmd) = Command::from_opcode(op) {
                    self.command(cmd);
                }
                i += 1;
            }
        }
    }
}

/// Shared access to a simulator for test code and fault injection.
#[derive(Clone)]
pub struct SimController {
    device: Arc<Mutex<Device>>,
}

impl SimController {
    fn lock(&self) -> MutexGuard<'_, Device> {
        self.device.lock().expect("simulator state poisoned")
    }

    /// Schedules a fault for a frame that has not been converted yet.
    pub fn inject_fault(&self, frame_index: u64, kind: FaultKind) -> Result<(), SimError> {
        let mut dev = self.lock();
        if frame_index < dev.sample_index {
            return Err(SimError::PastFrame {
                requested: frame_index,
                current: dev.sample_index,
            });
        }
        dev.faults.insert(frame_index, kind);
        Ok(())
    }

    /// Makes every later write to `address` store `value` instead.
    pub fn poison_register(&self, address: u8, value: u8) -> Result<(), SimError> {
        if address as usize >= 24 {
            return Err(SimError::BadRegister(address));
        }
        self.lock().poisoned[address as usize] = Some(value);
        Ok(())
    }

    pub fn stats(&self) -> SimStats {
        let dev = self.lock();
        SimStats {
            sample_index: dev.sample_index,
            ..dev.stats
        }
    }

    pub fn registers(&self) -> RegisterImage {
        self.lock().regs
    }

    pub fn mode(&self) -> SimMode {
        let dev = self.lock();
        SimMode {
            running: dev.running,
            rdatac: dev.rdatac,
        }
    }

    pub fn sample_index(&self) -> u64 {
        self.lock().sample_index
    }
}

/// The simulated device as seen through the transport interface.
pub struct SimTransport {
    device: Arc<Mutex<Device>>,
}

impl SimTransport {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config
            .waveform
            .validate()
            .map_err(SimError::InvalidWaveform)?;
        Ok(Self {
            device: Arc::new(Mutex::new(Device::new(config))),
        })
    }

    pub fn controller(&self) -> SimController {
        SimController {
            device: Arc::clone(&self.device),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Device> {
        self.device.lock().expect("simulator state poisoned")
    }
}

impl Default for SimTransport {
    fn default() -> Self {
        Self::new(SimConfig::default()).expect("default waveform is valid")
    }
}

impl Transport for SimTransport {
    fn transfer(&mut self, tx: &[u8], rx: &mut [u8]) -> Result<(), TransportError> {
        let mut dev = self.lock();
        if !dev.open {
            return Err(TransportError::BusClosed);
        }
        check_transfer_args(tx, rx)?;
        if dev.rdatac && tx.len() == FRAME_LEN && tx.iter().all(|b| *b == 0) {
            let frame = dev.pending.take().unwrap_or(dev.last_frame);
            rx.copy_from_slice(&frame);
            return Ok(());
        }
        dev.interpret(tx, rx);
        Ok(())
    }

    fn wait_drdy(&mut self, timeout: Duration) -> Result<u64, TransportError> {
        let limit = monotonic_ns().saturating_add(timeout.as_nanos() as u64);
        loop {
            let mut dev = self.lock();
            if !dev.open {
                return Err(TransportError::BusClosed);
            }
            let now = monotonic_ns();
            let wake_at = if !dev.running {
                limit
            } else if let Some(until) = dev.stall_until {
                if now >= until {
                    dev.stall_until = None;
                    dev.anchor_ns = until;
                    dev.anchor_index = dev.sample_index;
                    continue;
                }
                until.min(limit)
            } else {
                let k = dev.sample_index;
                let due = dev.due_ns(k);
                if now >= due {
                    let overrun = now - due > dev.config.backlog_ms * 1_000_000;
                    match dev.faults.remove(&k) {
                        Some(FaultKind::StallDrdy { duration_ms }) => {
                            dev.stall_until = Some(due + duration_ms * 1_000_000);
                            dev.stats.stalls += 1;
                            continue;
                        }
                        Some(FaultKind::DropFrame) => {
                            dev.lose_current();
                            dev.stats.frames_dropped += 1;
                            continue;
                        }
                        Some(FaultKind::CorruptSync) if !overrun => {
                            let mut frame = dev.generate(k);
                            frame[0] &= 0x0F;
                            dev.stats.frames_corrupted += 1;
                            return Ok(dev.deliver(frame, due));
                        }
                        _ if overrun => {
                            dev.lose_current();
                            dev.stats.frames_overrun += 1;
                            continue;
                        }
                        _ => {
                            let frame = dev.generate(k);
                            return Ok(dev.deliver(frame, due));
                        }
                    }
                }
                due.min(limit)
            };
            drop(dev);
            if now >= limit {
                return Err(TransportError::Timeout);
            }
            sleep_until_ns(wake_at);
        }
    }

    fn close(&mut self) {
        self.lock().open = false;
    }

    fn is_open(&self) -> bool {
        self.lock().open
    }

    fn describe(&self) -> String {
        "simulator".to_string()
    }
}

impl Device {
    fn deliver(&mut self, frame: [u8; FRAME_LEN], due: u64) -> u64 {
        self.pending = Some(frame);
        self.last_frame = frame;
        self.sample_index += 1;
        self.stats.frames_emitted += 1;
        self.stats.frames_delivered += 1;
        due
    }
}
