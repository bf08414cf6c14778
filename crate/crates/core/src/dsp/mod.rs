//! Per-channel IIR filtering of the block stream.
//!
//! Filters run in `f64` on converted volts, one direct-form-II-transposed
//! state per channel per section. Raw codes pass through untouched.

mod design;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::SampleBlock;
use crate::codec::CHANNELS;

pub use design::{design_filter, design_sections, FilterKind, FilterSpec, MAX_BANDPASS_ORDER};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("invalid filter spec: {0}")]
    InvalidSpec(String),
    #[error("designed section {0} has a pole on or outside the unit circle")]
    Unstable(usize),
    #[error("cascade has state for {expected} channels, block carries {got}")]
    ChannelMismatch { expected: usize, got: usize },
}

/// One second-order section with `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Both roots of `1 + a1 z^-1 + a2 z^-2` strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// Frequency response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }
}

/// A chain of biquads plus per-channel delay state.
#[derive(Clone, Debug)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    channels: usize,
    // state[ch * sections.len() + s] = [z1, z2]
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>, channels: usize) -> Result<Self, DspError> {
        if let Some(bad) = sections.iter().position(|s| !s.is_stable()) {
            return Err(DspError::Unstable(bad));
        }
        let state = vec![[0.0; 2]; sections.len() * channels];
        Ok(Self {
            sections,
            channels,
            state,
        })
    }

    /// Pass-through cascade with no sections.
    pub fn identity(channels: usize) -> Self {
        Self {
            sections: Vec::new(),
            channels,
            state: Vec::new(),
        }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Appends another cascade's sections; state is reset.
    pub fn chain(mut self, other: BiquadCascade) -> Self {
        self.sections.extend(other.sections);
        self.state = vec![[0.0; 2]; self.sections.len() * self.channels];
        self
    }

    pub fn response(&self, omega: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    pub fn magnitude(&self, omega: f64) -> f64 {
        self.response(omega).norm()
    }

    pub fn reset_state(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    #[inline]
    pub fn process_sample(&mut self, channel: usize, x: f64) -> f64 {
        let n = self.sections.len();
        let state = &mut self.state[channel * n..(channel + 1) * n];
        let mut y = x;
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let input = y;
            y = s.b0 * input + z[0];
            z[0] = s.b1 * input - s.a1 * y + z[1];
            z[1] = s.b2 * input - s.a2 * y;
        }
        y
    }

    pub fn process_channel(&mut self, channel: usize, samples: &mut [f64]) {
        for x in samples {
            *x = self.process_sample(channel, *x);
        }
    }

    /// Filters the block's volts in place; sequence, timestamps and raw codes
    /// are left as they are.
    pub fn process_block(&mut self, block: &mut SampleBlock) -> Result<(), DspError> {
        if self.channels != CHANNELS {
            return Err(DspError::ChannelMismatch {
                expected: self.channels,
                got: CHANNELS,
            });
        }
        for sample in block.samples_mut() {
            for (ch, v) in sample.volts.iter_mut().enumerate() {
                *v = self.process_sample(ch, *v);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandpassSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotchSpec {
    pub center_hz: f64,
    pub q: f64,
}

/// Filter chain as it appears in configuration: an optional bandpass followed
/// by an optional mains notch. The sample rate comes from the session.
///
/// A stage left out of a deserialized table is disabled; the defaults only
/// apply when the whole table is absent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterChainSpec {
    #[serde(default)]
    pub bandpass: Option<BandpassSpec>,
    #[serde(default)]
    pub notch: Option<NotchSpec>,
}

impl Default for FilterChainSpec {
    fn default() -> Self {
        Self {
            bandpass: Some(BandpassSpec {
                low_hz: 1.0,
                high_hz: 40.0,
                order: 4,
            }),
            notch: Some(NotchSpec {
                center_hz: 50.0,
                q: 30.0,
            }),
        }
    }
}

impl FilterChainSpec {
    pub fn none() -> Self {
        Self {
            bandpass: None,
            notch: None,
        }
    }

    pub fn with_mains(mut self, hz: f64) -> Self {
        if let Some(n) = self.notch.as_mut() {
            n.center_hz = hz;
        }
        self
    }

    pub fn specs(&self, sample_rate_sps: f64) -> Vec<FilterSpec> {
        let mut out = Vec::with_capacity(2);
        if let Some(b) = self.bandpass {
            out.push(FilterSpec::bandpass(
                b.low_hz,
                b.high_hz,
                b.order,
                sample_rate_sps,
            ));
        }
        if let Some(n) = self.notch {
            out.push(FilterSpec::notch(n.center_hz, n.q, sample_rate_sps));
        }
        out
    }

    pub fn validate(&self, sample_rate_sps: f64) -> Result<(), DspError> {
        self.specs(sample_rate_sps)
            .iter()
            .try_for_each(FilterSpec::validate)
    }

    pub fn design(&self, sample_rate_sps: f64) -> Result<BiquadCascade, DspError> {
        self.specs(sample_rate_sps)
            .iter()
            .try_fold(BiquadCascade::identity(CHANNELS), |acc, spec| {
                Ok(acc.chain(design_filter(spec)?))
            })
    }
}
