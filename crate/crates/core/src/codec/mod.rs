//! Hardware-free model of the ADS1299 SPI protocol.
//!
//! Everything here is a pure function over bytes or register values, so it is
//! shared by the real SPI backend, the simulator and the acquisition engine.

mod command;
mod convert;
mod frame;
mod init;
pub mod registers;

use thiserror::Error;

pub use command::{encode_register_read, encode_register_write, Command, RREG, WREG};
pub use convert::{
    raw_to_volts, volts_to_raw, ConversionParams, Gain, SampleRate, CODE_MAX, CODE_MIN,
    DEFAULT_VREF, FULL_SCALE_CODE,
};
pub use frame::{parse_frame, sample_from_be24, DataFrame, FrameError, CHANNELS, FRAME_LEN};
pub use init::{
    build_init_sequence, channel_register, sequence_bytes, InitMode, InitStep,
    CONFIG2_TEST_INTERNAL, CONFIG3_INTERNAL_REF, MISC1_SRB1,
};
pub use registers::{
    ChannelSettings, Config1, Config2, Config3, DecodedRegister, InputMux, Misc1, RegisterAddress,
    RegisterImage, TestFrequency, REGISTER_COUNT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("register address 0x{0:02X} is outside 0x00..=0x17")]
    AddressOutOfRange(u8),
    #[error("channel index {0} is outside 0..8")]
    ChannelOutOfRange(usize),
    #[error("gain {0} is not one of 1, 2, 4, 6, 8, 12, 24")]
    InvalidGain(u32),
    #[error("sample rate {0} SPS is not one of {allowed}", allowed = SampleRate::allowed_list())]
    InvalidSampleRate(u32),
    #[error("reference voltage must be positive and finite, got {0}")]
    InvalidVref(f64),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Decodes CONFIG1. Reserved-bit violations are reported through
/// [`Config1::reserved_mismatch`] rather than an error.
pub fn decode_config1(value: u8) -> Config1 {
    Config1::decode(value)
}

pub fn decode_config2(value: u8) -> Config2 {
    Config2::decode(value)
}
