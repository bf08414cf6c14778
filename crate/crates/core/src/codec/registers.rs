//! ADS1299 register file: addresses, bit-field layouts and a typed image.

use std::fmt;

use super::{CodecError, Gain, SampleRate};

/// Number of addressable registers (0x00..=0x17).
pub const REGISTER_COUNT: usize = 24;

pub mod addr {
    pub const ID: u8 = 0x00;
    pub const CONFIG1: u8 = 0x01;
    pub const CONFIG2: u8 = 0x02;
    pub const CONFIG3: u8 = 0x03;
    pub const LOFF: u8 = 0x04;
    pub const CH1SET: u8 = 0x05;
    pub const CH8SET: u8 = 0x0C;
    pub const BIAS_SENSP: u8 = 0x0D;
    pub const BIAS_SENSN: u8 = 0x0E;
    pub const LOFF_SENSP: u8 = 0x0F;
    pub const LOFF_SENSN: u8 = 0x10;
    pub const LOFF_FLIP: u8 = 0x11;
    pub const LOFF_STATP: u8 = 0x12;
    pub const LOFF_STATN: u8 = 0x13;
    pub const GPIO: u8 = 0x14;
    pub const MISC1: u8 = 0x15;
    pub const MISC2: u8 = 0x16;
    pub const CONFIG4: u8 = 0x17;
}

const NAMES: [&str; REGISTER_COUNT] = [
    "ID",
    "CONFIG1",
    "CONFIG2",
    "CONFIG3",
    "LOFF",
    "CH1SET",
    "CH2SET",
    "CH3SET",
    "CH4SET",
    "CH5SET",
    "CH6SET",
    "CH7SET",
    "CH8SET",
    "BIAS_SENSP",
    "BIAS_SENSN",
    "LOFF_SENSP",
    "LOFF_SENSN",
    "LOFF_FLIP",
    "LOFF_STATP",
    "LOFF_STATN",
    "GPIO",
    "MISC1",
    "MISC2",
    "CONFIG4",
];

/// Datasheet power-on values.
const POWER_ON: [u8; REGISTER_COUNT] = [
    0x3E, 0x96, 0xC0, 0x60, 0x00, 0x61, 0x61, 0x61, 0x61, 0x61, 0x61, 0x61, 0x61, 0x00, 0x00, 0x00,
    0x00, 0x00, 0x00, 0x00, 0x0F, 0x00, 0x00, 0x00,
];

/// A validated register address in `0x00..=0x17`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegisterAddress(u8);

impl RegisterAddress {
    pub fn new(address: u8) -> Result<Self, CodecError> {
        if (address as usize) < REGISTER_COUNT {
            Ok(Self(address))
        } else {
            Err(CodecError::AddressOutOfRange(address))
        }
    }

    /// Address of `CHnSET` for a zero-based channel index.
    pub fn channel_set(channel: usize) -> Result<Self, CodecError> {
        if channel < 8 {
            Ok(Self(addr::CH1SET + channel as u8))
        } else {
            Err(CodecError::ChannelOutOfRange(channel))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        NAMES[self.0 as usize]
    }

    /// Looks an address up by its datasheet name (case-insensitive).
    pub fn from_name(name: &str) -> Option<Self> {
        NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| Self(i as u8))
    }

    pub fn all() -> impl Iterator<Item = RegisterAddress> {
        (0..REGISTER_COUNT as u8).map(RegisterAddress)
    }
}

impl fmt::Display for RegisterAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (0x{:02X})", self.name(), self.0)
    }
}

impl TryFrom<u8> for RegisterAddress {
    type Error = CodecError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

/// A named bit field inside a register.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub shift: u8,
    pub width: u8,
}

impl FieldSpec {
    const fn new(name: &'static str, shift: u8, width: u8) -> Self {
        Self { name, shift, width }
    }

    pub fn mask(&self) -> u8 {
        (((1u16 << self.width) - 1) as u8) << self.shift
    }

    pub fn extract(&self, value: u8) -> u8 {
        (value & self.mask()) >> self.shift
    }
}

/// Field layout of one register, including the bits the datasheet pins.
#[derive(Clone, Copy, Debug)]
pub struct RegisterLayout {
    pub fields: &'static [FieldSpec],
    pub reserved_mask: u8,
    pub reserved_value: u8,
}

const F_ID: &[FieldSpec] = &[
    FieldSpec::new("rev_id", 5, 3),
    FieldSpec::new("dev_id", 2, 2),
    FieldSpec::new("nu_ch", 0, 2),
];
const F_CONFIG1: &[FieldSpec] = &[
    FieldSpec::new("daisy_en", 6, 1),
    FieldSpec::new("clk_en", 5, 1),
    FieldSpec::new("dr", 0, 3),
];
const F_CONFIG2: &[FieldSpec] = &[
    FieldSpec::new("int_cal", 4, 1),
    FieldSpec::new("cal_amp0", 2, 1),
    FieldSpec::new("cal_freq", 0, 2),
];
const F_CONFIG3: &[FieldSpec] = &[
    FieldSpec::new("pd_refbuf", 7, 1),
    FieldSpec::new("bias_meas", 4, 1),
    FieldSpec::new("biasref_int", 3, 1),
    FieldSpec::new("pd_bias", 2, 1),
    FieldSpec::new("bias_loff_sens", 1, 1),
    FieldSpec::new("bias_stat", 0, 1),
];
const F_LOFF: &[FieldSpec] = &[
    FieldSpec::new("comp_th", 5, 3),
    FieldSpec::new("ilead_off", 2, 2),
    FieldSpec::new("flead_off", 0, 2),
];
const F_CHSET: &[FieldSpec] = &[
    FieldSpec::new("pd", 7, 1),
    FieldSpec::new("gain", 4, 3),
    FieldSpec::new("srb2", 3, 1),
    FieldSpec::new("mux", 0, 3),
];
const F_CHANNEL_MASK: &[FieldSpec] = &[FieldSpec::new("channels", 0, 8)];
const F_GPIO: &[FieldSpec] = &[FieldSpec::new("gpiod", 4, 4), FieldSpec::new("gpioc", 0, 4)];
const F_MISC1: &[FieldSpec] = &[FieldSpec::new("srb1", 5, 1)];
const F_CONFIG4: &[FieldSpec] = &[
    FieldSpec::new("single_shot", 3, 1),
    FieldSpec::new("pd_loff_comp", 1, 1),
];

impl RegisterLayout {
    pub fn of(address: RegisterAddress) -> RegisterLayout {
        let (fields, reserved_mask, reserved_value) = match address.get() {
            addr::ID => (F_ID, 0x10, 0x10),
            addr::CONFIG1 => (F_CONFIG1, 0x98, 0x90),
            addr::CONFIG2 => (F_CONFIG2, 0xE8, 0xC0),
            addr::CONFIG3 => (F_CONFIG3, 0x60, 0x60),
            addr::LOFF => (F_LOFF, 0x10, 0x00),
            addr::CH1SET..=addr::CH8SET => (F_CHSET, 0x00, 0x00),
            addr::BIAS_SENSP..=addr::LOFF_STATN => (F_CHANNEL_MASK, 0x00, 0x00),
            addr::GPIO => (F_GPIO, 0x00, 0x00),
            addr::MISC1 => (F_MISC1, 0xDF, 0x00),
            addr::MISC2 => (&[][..], 0xFF, 0x00),
            addr::CONFIG4 => (F_CONFIG4, 0xF5, 0x00),
            _ => unreachable!("RegisterAddress is range-checked"),
        };
        RegisterLayout {
            fields,
            reserved_mask,
            reserved_value,
        }
    }
}

/// Generic field-level view of any register value.
///
/// Keeps the reserved bits as read so that `encode` reproduces the input byte.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedRegister {
    pub address: RegisterAddress,
    pub fields: Vec<(&'static str, u8)>,
    pub reserved_bits: u8,
    pub reserved_mismatch: bool,
}

impl DecodedRegister {
    pub fn decode(address: RegisterAddress, value: u8) -> Self {
        let layout = RegisterLayout::of(address);
        let reserved_bits = value & layout.reserved_mask;
        Self {
            address,
            fields: layout
                .fields
                .iter()
                .map(|f| (f.name, f.extract(value)))
                .collect(),
            reserved_bits,
            reserved_mismatch: reserved_bits != layout.reserved_value,
        }
    }

    pub fn encode(&self) -> u8 {
        let layout = RegisterLayout::of(self.address);
        layout
            .fields
            .iter()
            .zip(&self.fields)
            .fold(self.reserved_bits, |acc, (spec, (_, v))| {
                acc | ((v << spec.shift) & spec.mask())
            })
    }

    pub fn field(&self, name: &str) -> Option<u8> {
        self.fields
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, v)| *v)
    }
}

/// CONFIG1 (0x01).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Config1 {
    /// DAISY_EN bit clear: daisy-chain readback mode; set: multiple-readback mode.
    pub daisy_enabled: bool,
    pub clock_out_enabled: bool,
    pub data_rate_code: u8,
    pub reserved_bits: u8,
}

impl Config1 {
    const RESERVED_MASK: u8 = 0x98;
    const RESERVED_VALUE: u8 = 0x90;

    pub fn new(rate: SampleRate) -> Self {
        Self {
            daisy_enabled: true,
            clock_out_enabled: false,
            data_rate_code: rate.code(),
            reserved_bits: Self::RESERVED_VALUE,
        }
    }

    pub fn decode(value: u8) -> Self {
        Self {
            daisy_enabled: value & 0x40 == 0,
            clock_out_enabled: value & 0x20 != 0,
            data_rate_code: value & 0x07,
            reserved_bits: value & Self::RESERVED_MASK,
        }
    }

    pub fn encode(&self) -> u8 {
        self.reserved_bits
            | if self.daisy_enabled { 0 } else { 0x40 }
            | if self.clock_out_enabled { 0x20 } else { 0 }
            | (self.data_rate_code & 0x07)
    }

    /// `None` for the reserved DR code 0b111.
    pub fn data_rate_sps(&self) -> Option<u32> {
        SampleRate::from_code(self.data_rate_code).map(SampleRate::sps)
    }

    pub fn reserved_mismatch(&self) -> bool {
        self.reserved_bits != Self::RESERVED_VALUE
    }
}

/// Test-signal frequency selection (CONFIG2 CAL_FREQ).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestFrequency {
    /// f_clk / 2^21
    Slow,
    /// f_clk / 2^20
    Fast,
    NotUsed,
    Dc,
}

impl TestFrequency {
    pub fn from_code(code: u8) -> Self {
        match code & 0x03 {
            0 => TestFrequency::Slow,
            1 => TestFrequency::Fast,
            2 => TestFrequency::NotUsed,
            _ => TestFrequency::Dc,
        }
    }

    /// Square-wave frequency for a given master clock; `None` for DC or unused codes.
    pub fn hz(self, f_clk_hz: f64) -> Option<f64> {
        match self {
            TestFrequency::Slow => Some(f_clk_hz / (1u32 << 21) as f64),
            TestFrequency::Fast => Some(f_clk_hz / (1u32 << 20) as f64),
            TestFrequency::NotUsed | TestFrequency::Dc => None,
        }
    }
}

/// CONFIG2 (0x02).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Config2 {
    pub test_source_internal: bool,
    pub test_amp_high: bool,
    pub test_freq_code: u8,
    pub reserved_bits: u8,
}

impl Config2 {
    const RESERVED_MASK: u8 = 0xE8;
    const RESERVED_VALUE: u8 = 0xC0;

    pub fn decode(value: u8) -> Self {
        Self {
            test_source_internal: value & 0x10 != 0,
            test_amp_high: value & 0x04 != 0,
            test_freq_code: value & 0x03,
            reserved_bits: value & Self::RESERVED_MASK,
        }
    }

    pub fn encode(&self) -> u8 {
        self.reserved_bits
            | if self.test_source_internal { 0x10 } else { 0 }
            | if self.test_amp_high { 0x04 } else { 0 }
            | (self.test_freq_code & 0x03)
    }

    pub fn test_frequency(&self) -> TestFrequency {
        TestFrequency::from_code(self.test_freq_code)
    }

    /// Test-signal amplitude in volts: `vref / 2400`, doubled when CAL_AMP0 is set.
    pub fn test_amplitude(&self, vref: f64) -> f64 {
        let scale = if self.test_amp_high { 2.0 } else { 1.0 };
        scale * vref / 2400.0
    }

    pub fn reserved_mismatch(&self) -> bool {
        self.reserved_bits != Self::RESERVED_VALUE
    }
}

/// CONFIG3 (0x03).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Config3 {
    pub internal_reference: bool,
    pub bias_meas: bool,
    pub biasref_internal: bool,
    pub bias_powered: bool,
    pub bias_loff_sense: bool,
    pub bias_stat: bool,
    pub reserved_bits: u8,
}

impl Config3 {
    pub fn decode(value: u8) -> Self {
        Self {
            internal_reference: value & 0x80 != 0,
            bias_meas: value & 0x10 != 0,
            biasref_internal: value & 0x08 != 0,
            bias_powered: value & 0x04 != 0,
            bias_loff_sense: value & 0x02 != 0,
            bias_stat: value & 0x01 != 0,
            reserved_bits: value & 0x60,
        }
    }

    pub fn encode(&self) -> u8 {
        let bit = |b: bool, m: u8| if b { m } else { 0 };
        self.reserved_bits
            | bit(self.internal_reference, 0x80)
            | bit(self.bias_meas, 0x10)
            | bit(self.biasref_internal, 0x08)
            | bit(self.bias_powered, 0x04)
            | bit(self.bias_loff_sense, 0x02)
            | bit(self.bias_stat, 0x01)
    }
}

/// Channel input multiplexer (CHnSET MUX).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMux {
    Normal,
    Shorted,
    BiasMeas,
    Mvdd,
    Temperature,
    TestSignal,
    BiasDrp,
    BiasDrn,
}

impl InputMux {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Self {
        match code & 0x07 {
            0 => InputMux::Normal,
            1 => InputMux::Shorted,
            2 => InputMux::BiasMeas,
            3 => InputMux::Mvdd,
            4 => InputMux::Temperature,
            5 => InputMux::TestSignal,
            6 => InputMux::BiasDrp,
            _ => InputMux::BiasDrn,
        }
    }
}

/// CHnSET (0x05..=0x0C).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelSettings {
    pub powered_down: bool,
    /// Raw GAIN code; 0b111 is reserved.
    pub gain_code: u8,
    pub srb2: bool,
    pub mux: InputMux,
}

impl ChannelSettings {
    pub fn new(gain: Gain, mux: InputMux) -> Self {
        Self {
            powered_down: false,
            gain_code: gain.code(),
            srb2: false,
            mux,
        }
    }

    pub fn decode(value: u8) -> Self {
        Self {
            powered_down: value & 0x80 != 0,
            gain_code: (value >> 4) & 0x07,
            srb2: value & 0x08 != 0,
            mux: InputMux::from_code(value),
        }
    }

    pub fn encode(&self) -> u8 {
        (if self.powered_down { 0x80 } else { 0 })
            | ((self.gain_code & 0x07) << 4)
            | (if self.srb2 { 0x08 } else { 0 })
            | self.mux.code()
    }

    pub fn gain(&self) -> Option<Gain> {
        Gain::from_code(self.gain_code)
    }
}

/// MISC1 (0x15).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Misc1 {
    /// SRB1 routes every channel's negative input to the common reference pin.
    pub srb1: bool,
    pub reserved_bits: u8,
}

impl Misc1 {
    pub fn decode(value: u8) -> Self {
        Self {
            srb1: value & 0x20 != 0,
            reserved_bits: value & 0xDF,
        }
    }

    pub fn encode(&self) -> u8 {
        self.reserved_bits | if self.srb1 { 0x20 } else { 0 }
    }
}

/// The full 24-register file.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct RegisterImage {
    values: [u8; REGISTER_COUNT],
}

impl Default for RegisterImage {
    fn default() -> Self {
        Self::power_on()
    }
}

impl fmt::Debug for RegisterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut map = f.debug_map();
        for a in RegisterAddress::all() {
            map.entry(&a.name(), &format_args!("0x{:02X}", self.get(a)));
        }
        map.finish()
    }
}

impl RegisterImage {
    pub fn power_on() -> Self {
        Self { values: POWER_ON }
    }

    pub fn from_values(values: [u8; REGISTER_COUNT]) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[u8; REGISTER_COUNT] {
        &self.values
    }

    pub fn get(&self, address: RegisterAddress) -> u8 {
        self.values[address.get() as usize]
    }

    pub fn set(&mut self, address: RegisterAddress, value: u8) {
        self.values[address.get() as usize] = value;
    }

    /// Raw read by numeric address.
    pub fn read(&self, address: u8) -> Result<u8, CodecError> {
        RegisterAddress::new(address).map(|a| self.get(a))
    }

    /// Raw write by numeric address.
    pub fn write(&mut self, address: u8, value: u8) -> Result<(), CodecError> {
        RegisterAddress::new(address).map(|a| self.set(a, value))
    }

    fn at(&self, address: u8) -> u8 {
        self.values[address as usize]
    }

    pub fn config1(&self) -> Config1 {
        Config1::decode(self.at(addr::CONFIG1))
    }

    pub fn config2(&self) -> Config2 {
        Config2::decode(self.at(addr::CONFIG2))
    }

    pub fn config3(&self) -> Config3 {
        Config3::decode(self.at(addr::CONFIG3))
    }

    pub fn misc1(&self) -> Misc1 {
        Misc1::decode(self.at(addr::MISC1))
    }

    pub fn channel(&self, channel: usize) -> Result<ChannelSettings, CodecError> {
        RegisterAddress::channel_set(channel).map(|a| ChannelSettings::decode(self.get(a)))
    }

    pub fn sample_rate(&self) -> Option<SampleRate> {
        SampleRate::from_code(self.config1().data_rate_code)
    }

    /// Sets the DR field, leaving every other CONFIG1 bit untouched.
    pub fn set_sample_rate(&mut self, rate: SampleRate) {
        let mut c1 = self.config1();
        c1.data_rate_code = rate.code();
        self.values[addr::CONFIG1 as usize] = c1.encode();
    }

    pub fn set_test_source(&mut self, internal: bool) {
        let mut c2 = self.config2();
        c2.test_source_internal = internal;
        self.values[addr::CONFIG2 as usize] = c2.encode();
    }

    pub fn set_channel_gain(&mut self, channel: usize, gain: Gain) -> Result<(), CodecError> {
        let a = RegisterAddress::channel_set(channel)?;
        let mut ch = ChannelSettings::decode(self.get(a));
        ch.gain_code = gain.code();
        self.set(a, ch.encode());
        Ok(())
    }

    pub fn set_channel_mux(&mut self, channel: usize, mux: InputMux) -> Result<(), CodecError> {
        let a = RegisterAddress::channel_set(channel)?;
        let mut ch = ChannelSettings::decode(self.get(a));
        ch.mux = mux;
        self.set(a, ch.encode());
        Ok(())
    }

    pub fn decode_all(&self) -> Vec<DecodedRegister> {
        RegisterAddress::all()
            .map(|a| DecodedRegister::decode(a, self.get(a)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn address_range_is_enforced() {
        assert!(RegisterAddress::new(0x17).is_ok());
        assert_eq!(
            RegisterAddress::new(0x18),
            Err(CodecError::AddressOutOfRange(0x18))
        );
        assert_eq!(RegisterAddress::from_name("misc1").unwrap().get(), 0x15);
    }

    #[test]
    fn config1_hand_decoded() {
        // 1001_0110: reserved 1, DAISY_EN 0, CLK_EN 0, reserved 10, DR 110
        let c = Config1::decode(0x96);
        assert!(c.daisy_enabled);
        assert!(!c.clock_out_enabled);
        assert_eq!(c.data_rate_sps(), Some(250));
        assert!(!c.reserved_mismatch());
        assert_eq!(c.encode(), 0x96);
        assert_eq!(Config1::decode(0x90).data_rate_sps(), Some(16_000));
        assert_eq!(Config1::decode(0x97).data_rate_sps(), None);
        assert!(Config1::decode(0x16).reserved_mismatch());
    }

    #[test]
    fn config1_rate_table() {
        let expected = [16_000, 8_000, 4_000, 2_000, 1_000, 500, 250];
        for (code, sps) in expected.iter().enumerate() {
            assert_eq!(
                Config1::decode(0x90 | code as u8).data_rate_sps(),
                Some(*sps)
            );
        }
    }

    #[test]
    fn config2_hand_decoded() {
        // 1101_0100: reserved 110, INT_CAL 1, reserved 0, CAL_AMP0 1, CAL_FREQ 00
        let c = Config2::decode(0xD4);
        assert!(c.test_source_internal);
        assert!(c.test_amp_high);
        assert_eq!(c.test_freq_code, 0);
        assert_eq!(c.encode(), 0xD4);
        assert!(!Config2::decode(0xC0).test_source_internal);
        assert!((c.test_amplitude(4.5) - 0.00375).abs() < 1e-15);
        assert!((c.test_frequency().hz(2.048e6).unwrap() - 0.9765625).abs() < 1e-12);
    }

    #[test]
    fn config3_and_misc1() {
        let c3 = Config3::decode(0xE0);
        assert!(c3.internal_reference);
        assert!(!c3.bias_powered);
        assert_eq!(c3.encode(), 0xE0);
        let m = Misc1::decode(0x20);
        assert!(m.srb1);
        assert_eq!(m.reserved_bits, 0);
    }

    #[test]
    fn typed_decoders_round_trip_every_value() {
        for v in 0..=255u8 {
            assert_eq!(Config1::decode(v).encode(), v);
            assert_eq!(Config2::decode(v).encode(), v);
            assert_eq!(Config3::decode(v).encode(), v);
            assert_eq!(ChannelSettings::decode(v).encode(), v);
            assert_eq!(Misc1::decode(v).encode(), v);
        }
    }

    #[test]
    fn setters_preserve_reserved_bits() {
        let mut img = RegisterImage::power_on();
        img.set_sample_rate(SampleRate::Sps16000);
        assert_eq!(img.get(RegisterAddress(addr::CONFIG1)) & 0x80, 0x80);
        assert_eq!(img.get(RegisterAddress(addr::CONFIG1)), 0x90);
        img.set_test_source(true);
        assert_eq!(img.get(RegisterAddress(addr::CONFIG2)), 0xD0);
        img.set_channel_gain(2, Gain::X1).unwrap();
        assert_eq!(img.get(RegisterAddress(0x07)), 0x01);
    }

    #[test]
    fn layouts_cover_all_bits_once() {
        for a in RegisterAddress::all() {
            let l = RegisterLayout::of(a);
            let mut covered = l.reserved_mask;
            for f in l.fields {
                assert_eq!(covered & f.mask(), 0, "{a} overlaps at {}", f.name);
                covered |= f.mask();
            }
            assert_eq!(covered, 0xFF, "{a} leaves bits unassigned");
            assert_eq!(l.reserved_value & !l.reserved_mask, 0);
        }
    }

    #[test]
    fn power_on_reserved_bits_match_layout() {
        let img = RegisterImage::power_on();
        for d in img.decode_all() {
            assert!(!d.reserved_mismatch, "{}", d.address);
        }
    }
}
