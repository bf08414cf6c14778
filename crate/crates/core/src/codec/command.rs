use std::fmt;

use super::{CodecError, RegisterAddress};

/// WREG opcode prefix, OR'ed with the start address.
pub const WREG: u8 = 0x40;
/// RREG opcode prefix, OR'ed with the start address.
pub const RREG: u8 = 0x20;

/// Single-byte system and data-read commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Wakeup,
    Standby,
    Reset,
    Start,
    Stop,
    /// Read data continuously.
    Rdatac,
    /// Stop reading data continuously.
    Sdatac,
    Rdata,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Wakeup,
        Command::Standby,
        Command::Reset,
        Command::Start,
        Command::Stop,
        Command::Rdatac,
        Command::Sdatac,
        Command::Rdata,
    ];

    pub fn opcode(self) -> u8 {
        match self {
            Command::Wakeup => 0x02,
            Command::Standby => 0x04,
            Command::Reset => 0x06,
            Command::Start => 0x08,
            Command::Stop => 0x0A,
            Command::Rdatac => 0x10,
            Command::Sdatac => 0x11,
            Command::Rdata => 0x12,
        }
    }

    pub fn from_opcode(opcode: u8) -> Option<Command> {
        Command::ALL.into_iter().find(|c| c.opcode() == opcode)
    }

    pub fn name(self) -> &'static str {
        match self {
            Command::Wakeup => "WAKEUP",
            Command::Standby => "STANDBY",
            Command::Reset => "RESET",
            Command::Start => "START",
            Command::Stop => "STOP",
            Command::Rdatac => "RDATAC",
            Command::Sdatac => "SDATAC",
            Command::Rdata => "RDATA",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (0x{:02X})", self.name(), self.opcode())
    }
}

/// Frames a single-register write: `[WREG | addr, count - 1, value]`.
pub fn encode_register_write(address: u8, value: u8) -> Result<[u8; 3], CodecError> {
    let a = RegisterAddress::new(address)?;
    Ok([WREG | a.get(), 0x00, value])
}

/// Frames a single-register read. The value is clocked out on the third byte.
pub fn encode_register_read(address: u8) -> Result<[u8; 3], CodecError> {
    let a = RegisterAddress::new(address)?;
    Ok([RREG | a.get(), 0x00, 0x00])
}
