//! DRDY-paced acquisition engine.

mod block;
mod broadcast;
mod session;
mod stats;

pub use block::{Sample, SampleBlock, MAX_BLOCK_LEN};
pub use broadcast::{Broadcaster, RecvError, SubscribeHandle, Subscriber};
pub use session::{Session, SessionError, SessionEvent};
pub use stats::{LogHistogram, SessionState, SessionStats};
