use std::fmt;

use serde::{Deserialize, Serialize};

use super::CodecError;

/// Full-scale code magnitude, 2^23.
pub const FULL_SCALE_CODE: f64 = 8_388_608.0;
pub const CODE_MAX: i32 = (1 << 23) - 1;
pub const CODE_MIN: i32 = -(1 << 23);

/// Internal reference voltage selected by CONFIG3 PD_REFBUF.
pub const DEFAULT_VREF: f64 = 4.5;

/// Programmable-gain-amplifier setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Gain {
    X1,
    X2,
    X4,
    X6,
    X8,
    X12,
    X24,
}

impl Gain {
    pub const ALL: [Gain; 7] = [
        Gain::X1,
        Gain::X2,
        Gain::X4,
        Gain::X6,
        Gain::X8,
        Gain::X12,
        Gain::X24,
    ];

    pub fn factor(self) -> u32 {
        match self {
            Gain::X1 => 1,
            Gain::X2 => 2,
            Gain::X4 => 4,
            Gain::X6 => 6,
            Gain::X8 => 8,
            Gain::X12 => 12,
            Gain::X24 => 24,
        }
    }

    /// CHnSET GAIN field code.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Gain> {
        Gain::ALL.get(code as usize).copied()
    }
}

impl TryFrom<u32> for Gain {
    type Error = CodecError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Gain::ALL
            .into_iter()
            .find(|g| g.factor() == value)
            .ok_or(CodecError::InvalidGain(value))
    }
}

impl From<Gain> for u32 {
    fn from(g: Gain) -> u32 {
        g.factor()
    }
}

impl fmt::Display for Gain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.factor())
    }
}

/// Output data rate (CONFIG1 DR field).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum SampleRate {
    Sps16000,
    Sps8000,
    Sps4000,
    Sps2000,
    Sps1000,
    Sps500,
    Sps250,
}

impl SampleRate {
    pub const ALL: [SampleRate; 7] = [
        SampleRate::Sps250,
        SampleRate::Sps500,
        SampleRate::Sps1000,
        SampleRate::Sps2000,
        SampleRate::Sps4000,
        SampleRate::Sps8000,
        SampleRate::Sps16000,
    ];

    pub fn sps(self) -> u32 {
        16_000 >> self.code()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<SampleRate> {
        SampleRate::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn period_ns(self) -> u64 {
        1_000_000_000 / u64::from(self.sps())
    }

    pub fn allowed_list() -> String {
        SampleRate::ALL
            .iter()
            .map(|r| r.sps().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

impl TryFrom<u32> for SampleRate {
    type Error = CodecError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        SampleRate::ALL
            .into_iter()
            .find(|r| r.sps() == value)
            .ok_or(CodecError::InvalidSampleRate(value))
    }
}

impl From<SampleRate> for u32 {
    fn from(r: SampleRate) -> u32 {
        r.sps()
    }
}

impl fmt::Display for SampleRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} SPS", self.sps())
    }
}

/// Reference voltage and PGA gain used to turn codes into volts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConversionParams {
    vref: f64,
    gain: Gain,
}

impl Default for ConversionParams {
    fn default() -> Self {
        Self {
            vref: DEFAULT_VREF,
            gain: Gain::X24,
        }
    }
}

impl ConversionParams {
    pub fn new(vref: f64, gain: Gain) -> Result<Self, CodecError> {
        if vref.is_finite() && vref > 0.0 {
            Ok(Self { vref, gain })
        } else {
            Err(CodecError::InvalidVref(vref))
        }
    }

    pub fn with_gain(gain: Gain) -> Self {
        Self {
            vref: DEFAULT_VREF,
            gain,
        }
    }

    pub fn vref(&self) -> f64 {
        self.vref
    }

    pub fn gain(&self) -> Gain {
        self.gain
    }

    /// Input-referred full-scale magnitude, `vref / gain`.
    pub fn full_scale_volts(&self) -> f64 {
        self.vref / f64::from(self.gain.factor())
    }

    /// Volts per code.
    pub fn lsb_volts(&self) -> f64 {
        self.full_scale_volts() / FULL_SCALE_CODE
    }
}

/// `raw × vref / (gain × 2^23)`.
#[inline]
pub fn raw_to_volts(raw: i32, params: &ConversionParams) -> f64 {
    f64::from(raw) * params.vref / (f64::from(params.gain.factor()) * FULL_SCALE_CODE)
}

/// Inverse of [`raw_to_volts`], rounded to the nearest code. The flag is set
/// when the input lies outside the representable range and was saturated.
pub fn volts_to_raw(volts: f64, params: &ConversionParams) -> (i32, bool) {
    let code = (volts * f64::from(params.gain.factor()) * FULL_SCALE_CODE / params.vref).round();
    if code > f64::from(CODE_MAX) {
        (CODE_MAX, true)
    } else if code < f64::from(CODE_MIN) {
        (CODE_MIN, true)
    } else {
        (code as i32, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_points() {
        let g24 = ConversionParams::with_gain(Gain::X24);
        let g1 = ConversionParams::with_gain(Gain::X1);
        assert_eq!(raw_to_volts(0, &g24), 0.0);
        assert_eq!(raw_to_volts(CODE_MIN, &g1), -4.5);
        let v = raw_to_volts(CODE_MAX, &g24);
        assert!((v - 0.187_499_977_648_258_2).abs() / v < 1e-12);
    }

    #[test]
    fn saturation_is_flagged() {
        let p = ConversionParams::with_gain(Gain::X24);
        assert_eq!(volts_to_raw(1.0, &p), (CODE_MAX, true));
        assert_eq!(volts_to_raw(-1.0, &p), (CODE_MIN, true));
        assert_eq!(volts_to_raw(0.0, &p), (0, false));
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ConversionParams::new(0.0, Gain::X1).is_err());
        assert!(ConversionParams::new(f64::NAN, Gain::X1).is_err());
        assert_eq!(Gain::try_from(3), Err(CodecError::InvalidGain(3)));
        assert_eq!(
            SampleRate::try_from(300),
            Err(CodecError::InvalidSampleRate(300))
        );
    }

    #[test]
    fn rate_and_gain_tables() {
        let rates: Vec<u32> = SampleRate::ALL.iter().map(|r| r.sps()).collect();
        assert_eq!(rates, [250, 500, 1000, 2000, 4000, 8000, 16000]);
        assert_eq!(SampleRate::Sps250.code(), 0b110);
        assert_eq!(SampleRate::Sps16000.code(), 0b000);
        assert_eq!(SampleRate::Sps250.period_ns(), 4_000_000);
        assert_eq!(Gain::X1.code(), 0b000);
        assert_eq!(Gain::X24.code(), 0b110);
        assert_eq!(Gain::from_code(7), None);
    }
}
