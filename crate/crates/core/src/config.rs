use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::MAX_BLOCK_LEN;
use crate::codec::{CodecError, ConversionParams, Gain, InitMode, RegisterAddress, SampleRate};
use crate::dsp::{DspError, FilterChainSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Filter(#[from] DspError),
    #[error("batch_len must be in 1..={MAX_BLOCK_LEN}, got {0}")]
    BatchLen(usize),
    #[error("watchdog_periods must be at least 2, got {0}")]
    Watchdog(u32),
}

/// Extra register write appended to the bring-up script.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterOverride {
    pub address: u8,
    pub value: u8,
}

/// Everything a session needs to program the device and shape its output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub sample_rate: SampleRate,
    pub gains: [Gain; 8],
    /// Bit n enables channel n+1.
    pub channel_enable: u8,
    /// Route enabled channels to the internal test signal.
    pub test_signal: bool,
    pub init_mode: InitMode,
    pub filters: FilterChainSpec,
    pub vref: f64,
    pub register_overrides: Vec<RegisterOverride>,
    /// Rates above this are published in blocks of `batch_len` frames.
    pub batch_threshold_sps: u32,
    pub batch_len: usize,
    /// Stop on our own after this many sequence numbers.
    pub frame_limit: Option<u64>,
    /// DRDY silence, in sample periods, that triggers re-initialization.
    pub watchdog_periods: u32,
    pub max_recovery_attempts: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            sample_rate: SampleRate::Sps250,
            gains: [Gain::X24; 8],
            channel_enable: 0xFF,
            test_signal: false,
            init_mode: InitMode::Paper,
            filters: FilterChainSpec::default(),
            vref: crate::codec::DEFAULT_VREF,
            register_overrides: Vec::new(),
            batch_threshold_sps: 1_000,
            batch_len: MAX_BLOCK_LEN,
            frame_limit: None,
            watchdog_periods: 10,
            max_recovery_attempts: 5,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ConversionParams::new(self.vref, Gain::X1)?;
        for o in &self.register_overrides {
            RegisterAddress::new(o.address)?;
        }
        if self.batch_len == 0 || self.batch_len > MAX_BLOCK_LEN {
            return Err(ConfigError::BatchLen(self.batch_len));
        }
        if self.watchdog_periods < 2 {
            return Err(ConfigError::Watchdog(self.watchdog_periods));
        }
        self.filters.validate(f64::from(self.sample_rate.sps()))?;
        Ok(())
    }

    /// Frames per published block.
    pub fn block_len(&self) -> usize {
        if self.sample_rate.sps() > self.batch_threshold_sps {
            self.batch_len
        } else {
            1
        }
    }

    pub fn conversion(&self, channel: usize) -> ConversionParams {
        ConversionParams::new(self.vref, self.gains[channel]).expect("vref validated before use")
    }

    /// Whether the bring-up script must carry CHnSET writes.
    pub fn programs_channels(&self) -> bool {
        self.test_signal
            || self.channel_enable != 0xFF
            || self.gains.iter().any(|g| *g != Gain::X24)
    }

    pub fn period_ns(&self) -> u64 {
        self.sample_rate.period_ns()
    }

    pub fn watchdog_timeout(&self) -> std::time::Duration {
        std::time::Duration::from_nanos(self.period_ns() * u64::from(self.watchdog_periods))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = SessionConfig::default();
        c.validate().unwrap();
        assert_eq!(c.block_len(), 1);
        assert!(!c.programs_channels());
        assert_eq!(c.watchdog_timeout().as_millis(), 40);
    }

    #[test]
    fn batching_above_threshold() {
        let c = SessionConfig {
            sample_rate: SampleRate::Sps16000,
            ..Default::default()
        };
        assert_eq!(c.block_len(), 8);
        let c = SessionConfig {
            sample_rate: SampleRate::Sps1000,
            ..Default::default()
        };
        assert_eq!(c.block_len(), 1);
    }

    #[test]
    fn invalid_pieces_are_rejected() {
        let c = SessionConfig {
            batch_len: 9,
            ..Default::default()
        };
        assert_eq!(c.validate(), Err(ConfigError::BatchLen(9)));
        let c = SessionConfig {
            register_overrides: vec![RegisterOverride {
                address: 0x20,
                value: 0,
            }],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(ConfigError::Codec(_))));
    }
}
