//! Bring-up command scripts derived from a [`SessionConfig`].

use std::fmt;

use serde::{Deserialize, Serialize};

use super::registers::addr;
use super::{encode_register_write, ChannelSettings, Command, Config1, InputMux, RegisterAddress};
use crate::config::SessionConfig;

/// Register values of the shield's reference bring-up script.
pub const MISC1_SRB1: u8 = 0x20;
pub const CONFIG2_TEST_INTERNAL: u8 = 0xD4;
pub const CONFIG3_INTERNAL_REF: u8 = 0xE0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Register writes then `0x10`, `0x08`, exactly as the shield's reference
    /// driver issues them. The driver labels `0x10` "sdatc" although the opcode
    /// is RDATAC; the byte is sent as written.
    #[default]
    Paper,
    /// SDATAC first so register writes are honored, then START and RDATAC.
    /// Register contents are read back before START.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitStep {
    Write { address: RegisterAddress, value: u8 },
    Command(Command),
}

impl InitStep {
    /// SPI bytes for this step (1 byte for commands, 3 for writes).
    pub fn bytes(&self) -> Vec<u8> {
        match *self {
            InitStep::Write { address, value } => encode_register_write(address.get(), value)
                .expect("address is range-checked")
                .to_vec(),
            InitStep::Command(c) => vec![c.opcode()],
        }
    }
}

impl fmt::Display for InitStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitStep::Write { address, value } => write!(f, "WREG {address} <- 0x{value:02X}"),
            InitStep::Command(c) => write!(f, "CMD {c}"),
        }
    }
}

fn write(address: u8, value: u8) -> InitStep {
    InitStep::Write {
        address: RegisterAddress::new(address).expect("constant address"),
        value,
    }
}

/// CHnSET value a config asks for on one channel.
pub fn channel_register(config: &SessionConfig, channel: usize) -> u8 {
    let enabled = config.channel_enable & (1 << channel) != 0;
    let mux = if !enabled {
        InputMux::Shorted
    } else if config.test_signal {
        InputMux::TestSignal
    } else {
        InputMux::Normal
    };
    let mut settings = ChannelSettings::new(config.gains[channel], mux);
    settings.powered_down = !enabled;
    settings.encode()
}

/// Ordered write/command steps that bring the device up in `config`.
///
/// Per-channel CHnSET writes are only emitted when the config departs from
/// gain 24 on all eight enabled channels with normal inputs, so the default
/// config reproduces the reference six-step script byte for byte.
pub fn build_init_sequence(config: &SessionConfig) -> Vec<InitStep> {
    let mut steps = Vec::with_capacity(20);
    if config.init_mode == InitMode::Strict {
        steps.push(InitStep::Command(Command::Sdatac));
    }
    steps.push(write(addr::MISC1, MISC1_SRB1));
    steps.push(write(
        addr::CONFIG1,
        Config1::new(config.sample_rate).encode(),
    ));
    steps.push(write(addr::CONFIG2, CONFIG2_TEST_INTERNAL));
    steps.push(write(addr::CONFIG3, CONFIG3_INTERNAL_REF));
    if config.programs_channels() {
        for ch in 0..8 {
            steps.push(write(addr::CH1SET + ch as u8, channel_register(config, ch)));
        }
    }
    for o in &config.register_overrides {
        steps.push(InitStep::Write {
            address: RegisterAddress::new(o.address).expect("validated override"),
            value: o.value,
        });
    }
    match config.init_mode {
        InitMode::Paper => {
            steps.push(InitStep::Command(Command::Rdatac));
            steps.push(InitStep::Command(Command::Start));
        }
        InitMode::Strict => {
            steps.push(InitStep::Command(Command::Start));
            steps.push(InitStep::Command(Command::Rdatac));
        }
    }
    steps
}

/// Concatenated SPI bytes of a step list.
pub fn sequence_bytes(steps: &[InitStep]) -> Vec<u8> {
    steps.iter().flat_map(InitStep::bytes).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Gain;

    #[test]
    fn default_sequence_is_byte_exact() {
        let steps = build_init_sequence(&SessionConfig::default());
        let bytes: Vec<Vec<u8>> = steps.iter().map(InitStep::bytes).collect();
        assert_eq!(
            bytes,
            vec![
                vec![0x55, 0x00, 0x20],
                vec![0x41, 0x00, 0x96],
                vec![0x42, 0x00, 0xD4],
                vec![0x43, 0x00, 0xE0],
                vec![0x10],
                vec![0x08],
            ]
        );
    }

    #[test]
    fn strict_leads_with_sdatac_and_ends_start_rdatac() {
        let cfg = SessionConfig {
            init_mode: InitMode::Strict,
            ..SessionConfig::default()
        };
        assert!(cfg.register_overrides.is_empty());
        let steps = build_init_sequence(&cfg);
        assert_eq!(steps[0], InitStep::Command(Command::Sdatac));
        assert_eq!(
            &steps[steps.len() - 2..],
            &[
                InitStep::Command(Command::Start),
                InitStep::Command(Command::Rdatac)
            ]
        );
    }

    #[test]
    fn gain_one_programs_channels_with_code_zero() {
        let cfg = SessionConfig {
            gains: [Gain::X1; 8],
            ..SessionConfig::default()
        };
        let writes: Vec<(u8, u8)> = build_init_sequence(&cfg)
            .into_iter()
            .filter_map(|s| match s {
                InitStep::Write { address, value } => Some((address.get(), value)),
                _ => None,
            })
            .filter(|(a, _)| (addr::CH1SET..=addr::CH8SET).contains(a))
            .collect();
        assert_eq!(writes.len(), 8);
        for (_, v) in writes {
            assert_eq!((v >> 4) & 0x07, 0b000);
            assert_eq!(v & 0x07, InputMux::Normal.code());
        }
    }

    #[test]
    fn test_signal_and_disabled_channels() {
        let cfg = SessionConfig {
            test_signal: true,
            channel_enable: 0b1111_1110,
            ..SessionConfig::default()
        };
        assert_eq!(channel_register(&cfg, 0), 0x80 | 0x60 | 0x01);
        assert_eq!(channel_register(&cfg, 1), 0x65);
    }

    #[test]
    fn sample_rate_lands_in_config1() {
        let cfg = SessionConfig {
            sample_rate: crate::codec::SampleRate::Sps16000,
            ..SessionConfig::default()
        };
        let steps = build_init_sequence(&cfg);
        assert_eq!(steps[1], write(addr::CONFIG1, 0x90));
    }
}
