use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Biquad, BiquadCascade, DspError};
use crate::codec::CHANNELS;

/// Highest supported bandpass order (total poles).
pub const MAX_BANDPASS_ORDER: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterKind {
    /// Butterworth bandpass. `order` counts poles of the whole bandpass and
    /// must be even; it yields `order / 2` biquad sections.
    Bandpass {
        low_hz: f64,
        high_hz: f64,
        order: u8,
    },
    Notch {
        center_hz: f64,
        q: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub sample_rate_sps: f64,
}

impl FilterSpec {
    pub fn bandpass(low_hz: f64, high_hz: f64, order: u8, sample_rate_sps: f64) -> Self {
        Self {
            kind: FilterKind::Bandpass {
                low_hz,
                high_hz,
                order,
            },
            sample_rate_sps,
        }
    }

    pub fn notch(center_hz: f64, q: f64, sample_rate_sps: f64) -> Self {
        Self {
            kind: FilterKind::Notch { center_hz, q },
            sample_rate_sps,
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let fs = self.sample_rate_sps;
        if !(fs.is_finite() && fs > 0.0) {
            return Err(DspError::InvalidSpec(format!(
                "sample rate {fs} must be positive"
            )));
        }
        let nyquist = fs / 2.0;
        match self.kind {
            FilterKind::Bandpass {
                low_hz,
                high_hz,
                order,
            } => {
                if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
                    return Err(DspError::InvalidSpec(format!(
                        "bandpass needs 0 < low < high < {nyquist} Hz, got {low_hz}..{high_hz}"
                    )));
                }
                if order == 0 || order % 2 != 0 || order > MAX_BANDPASS_ORDER {
                    return Err(DspError::InvalidSpec(format!(
                        "bandpass order must be even and in 2..={MAX_BANDPASS_ORDER}, got {order}"
                    )));
                }
            }
            FilterKind::Notch { center_hz, q } => {
                if !(center_hz > 0.0 && center_hz < nyquist) {
                    return Err(DspError::InvalidSpec(format!(
                        "notch center {center_hz} Hz must lie in (0, {nyquist})"
                    )));
                }
                if !(q.is_finite() && q > 0.0) {
                    return Err(DspError::InvalidSpec(format!(
                        "notch q must be positive, got {q}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Designs the biquad sections for `spec`, with state for eight channels.
pub fn design_filter(spec: &FilterSpec) -> Result<BiquadCascade, DspError> {
    BiquadCascade::new(design_sections(spec)?, CHANNELS)
}

pub fn design_sections(spec: &FilterSpec) -> Result<Vec<Biquad>, DspError> {
    spec.validate()?;
    let fs = spec.sample_rate_sps;
    let sections = match spec.kind {
        FilterKind::Bandpass {
            low_hz,
            high_hz,
            order,
        } => butterworth_bandpass(low_hz, high_hz, usize::from(order / 2), fs),
        FilterKind::Notch { center_hz, q } => vec![rbj_notch(center_hz, q, fs)],
    };
    if let Some(bad) = sections.iter().position(|s| !s.is_stable()) {
        return Err(DspError::Unstable(bad));
    }
    Ok(sections)
}

/// RBJ cookbook notch.
fn rbj_notch(center_hz: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * PI * center_hz / fs;
    let alpha = w0.sin() / (2.0 * q);
    let cos_w0 = w0.cos();
    let a0 = 1.0 + alpha;
    Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * cos_w0 / a0,
        b2: 1.0 / a0,
        a1: -2.0 * cos_w0 / a0,
        a2: (1.0 - alpha) / a0,
    }
}

/// Analog Butterworth prototype of order `n`, lowpass-to-bandpass transformed
/// with prewarped edges, mapped through the bilinear transform.
fn butterworth_bandpass(low_hz: f64, high_hz: f64, n: usize, fs: f64) -> Vec<Biquad> {
    let k = 2.0 * fs;
    let w1 = k * (PI * low_hz / fs).tan();
    let w2 = k * (PI * high_hz / fs).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let mut z_poles = Vec::with_capacity(2 * n);
    for i in 0..n {
        let theta = PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        for s in [(pb + disc) / 2.0, (pb - disc) / 2.0] {
            z_poles.push((k + s) / (k - s));
        }
    }

    // Pair each upper-half pole with its conjugate; real poles pair together.
    const IM_EPS: f64 = 1e-12;
    let mut denominators = Vec::with_capacity(n);
    let mut reals = Vec::new();
    for z in &z_poles {
        if z.im > IM_EPS {
            denominators.push((-2.0 * z.re, z.norm_sqr()));
        } else if z.im.abs() <= IM_EPS {
            reals.push(z.re);
        }
    }
    for pair in reals.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        denominators.push((-(r1 + r2), r1 * r2));
    }

    let center = 2.0 * (w0_sq.sqrt() / k).atan();
    denominators
        .into_iter()
        .map(|(a1, a2)| {
            let unnormalized = Biquad {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1,
                a2,
            };
            let g = 1.0 / unnormalized.response(center).norm();
            Biquad {
                b0: g,
                b1: 0.0,
                b2: -g,
                a1,
                a2,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    fn omega(hz: f64, fs: f64) -> f64 {
        2.0 * PI * hz / fs
    }

    #[test]
    fn notch_attenuates_mains() {
        let c = design_filter(&FilterSpec::notch(50.0, 30.0, 250.0)).unwrap();
        assert!(db(c.magnitude(omega(50.0, 250.0))) <= -30.0);
        assert!(db(c.magnitude(omega(10.0, 250.0))).abs() < 0.1);
    }

    #[test]
    fn bandpass_passband_and_stopband() {
        let c = design_filter(&FilterSpec::bandpass(1.0, 40.0, 4, 250.0)).unwrap();
        assert_eq!(c.sections().len(), 2);
        assert!(db(c.magnitude(omega(10.0, 250.0))).abs() <= 1.0);
        assert!(db(c.magnitude(omega(0.1, 250.0))) <= -20.0);
        // Butterworth edges sit at -3 dB.
        assert!((db(c.magnitude(omega(1.0, 250.0))) + 3.0103).abs() < 0.05);
        assert!((db(c.magnitude(omega(40.0, 250.0))) + 3.0103).abs() < 0.05);
        assert!(c.magnitude(0.0) < 1e-12);
    }

    #[test]
    fn every_order_is_stable() {
        for order in [2u8, 4, 6, 8] {
            let c = design_filter(&FilterSpec::bandpass(0.5, 45.0, order, 250.0)).unwrap();
            assert_eq!(c.sections().len(), usize::from(order / 2));
            assert!(c.sections().iter().all(Biquad::is_stable));
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        for spec in [
            FilterSpec::bandpass(1.0, 200.0, 4, 250.0),
            FilterSpec::bandpass(40.0, 1.0, 4, 250.0),
            FilterSpec::bandpass(1.0, 40.0, 3, 250.0),
            FilterSpec::bandpass(1.0, 40.0, 10, 250.0),
            FilterSpec::notch(50.0, 0.0, 250.0),
            FilterSpec::notch(130.0, 30.0, 250.0),
        ] {
            assert!(
                matches!(design_filter(&spec), Err(DspError::InvalidSpec(_))),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn design_is_deterministic() {
        let spec = FilterSpec::bandpass(1.0, 40.0, 6, 500.0);
        assert_eq!(
            design_sections(&spec).unwrap(),
            design_sections(&spec).unwrap()
        );
    }
}
