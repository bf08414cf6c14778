use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::codec::CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub frequency_hz: f64,
    pub amplitude_v: f64,
    #[serde(default)]
    pub phase_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelWaveform {
    pub tones: Vec<Tone>,
    pub noise_sigma_v: f64,
}

impl Default for ChannelWaveform {
    /// Alpha 10 Hz / 30 µV, beta 22 Hz / 10 µV, mains 50 Hz / 20 µV, 5 µV noise.
    fn default() -> Self {
        Self {
            tones: vec![
                Tone {
                    frequency_hz: 10.0,
                    amplitude_v: 30e-6,
                    phase_rad: 0.0,
                },
                Tone {
                    frequency_hz: 22.0,
                    amplitude_v: 10e-6,
                    phase_rad: 0.0,
                },
                Tone {
                    frequency_hz: 50.0,
                    amplitude_v: 20e-6,
                    phase_rad: 0.0,
                },
            ],
            noise_sigma_v: 5e-6,
        }
    }
}

impl ChannelWaveform {
    pub fn single_tone(frequency_hz: f64, amplitude_v: f64, phase_rad: f64) -> Self {
        Self {
            tones: vec![Tone {
                frequency_hz,
                amplitude_v,
                phase_rad,
            }],
            noise_sigma_v: 0.0,
        }
    }

    /// Noise-free value at time `t` seconds.
    pub fn deterministic(&self, t: f64) -> f64 {
        self.tones
            .iter()
            .map(|tone| {
                tone.amplitude_v * (2.0 * PI * tone.frequency_hz * t + tone.phase_rad).sin()
            })
            .sum()
    }

    pub fn peak_amplitude(&self) -> f64 {
        self.tones.iter().map(|t| t.amplitude_v).sum()
    }
}

/// Synthetic input signals for every channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimWaveformSpec {
    pub channels: Vec<ChannelWaveform>,
    pub seed: u64,
    /// Lead-off status reported in every frame, `STATP << 8 | STATN`.
    pub lead_off: u16,
}

impl Default for SimWaveformSpec {
    fn default() -> Self {
        let channels = (0..CHANNELS)
            .map(|ch| {
                let mut w = ChannelWaveform::default();
                for tone in &mut w.tones {
                    tone.phase_rad = ch as f64 * PI / 8.0;
                }
                w
            })
            .collect();
        Self {
            channels,
            seed: 0x05EE_DEE6,
            lead_off: 0,
        }
    }
}

impl SimWaveformSpec {
    pub fn uniform(channel: ChannelWaveform, seed: u64) -> Self {
        Self {
            channels: vec![channel; CHANNELS],
            seed,
            lead_off: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.channels.len() != CHANNELS {
            return Err(format!(
                "waveform needs {CHANNELS} channels, got {}",
                self.channels.len()
            ));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if ch
                .tones
                .iter()
                .any(|t| !(t.amplitude_v >= 0.0) || !t.frequency_hz.is_finite())
            {
                return Err(format!("channel {}: amplitudes must be >= 0", i + 1));
            }
            if !(ch.noise_sigma_v >= 0.0) {
                return Err(format!("channel {}: noise sigma must be >= 0", i + 1));
            }
        }
        Ok(())
    }
}
