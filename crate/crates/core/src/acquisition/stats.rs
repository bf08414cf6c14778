use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};

use serde::{Deserialize, Serialize};

const SUB_BITS: u32 = 5;
const SUB: u64 = 1 << SUB_BITS;
const BUCKETS: usize = ((64 - SUB_BITS as usize) + 1) * SUB as usize;

/// Lock-free log-linear histogram of u64 values, about 3% relative
/// resolution.
pub struct LogHistogram {
    counts: Box<[AtomicU64]>,
    total: AtomicU64,
    max: AtomicU64,
}

impl Default for LogHistogram {
    fn default() -> Self {
        Self {
            counts: (0..BUCKETS).map(|_| AtomicU64::new(0)).collect(),
            total: AtomicU64::new(0),
            max: AtomicU64::new(0),
        }
    }
}

fn bucket_of(v: u64) -> usize {
    if v < SUB {
        return v as usize;
    }
    let msb = 63 - v.leading_zeros();
    let shift = msb - SUB_BITS;
    let mantissa = (v >> shift) - SUB;
    ((shift as u64 + 1) * SUB + mantissa) as usize
}

/// Largest value that maps to `bucket`.
fn bucket_upper(bucket: usize) -> u64 {
    let b = bucket as u64;
    if b < SUB {
        return b;
    }
    let shift = b / SUB - 1;
    let mantissa = b % SUB + SUB;
    (((u128::from(mantissa) + 1) << shift) - 1).min(u128::from(u64::MAX)) as u64
}

impl LogHistogram {
    pub fn record(&self, v: u64) {
        self.counts[bucket_of(v)].fetch_add(1, Ordering::Relaxed);
        self.total.fetch_add(1, Ordering::Relaxed);
        self.max.fetch_max(v, Ordering::Relaxed);
    }

    pub fn count(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn max(&self) -> u64 {
        self.max.load(Ordering::Relaxed)
    }

    /// Upper bound of the bucket holding quantile `q`; 0 when empty.
    pub fn quantile(&self, q: f64) -> u64 {
        let total = self.count();
        if total == 0 {
            return 0;
        }
        let rank = ((q.clamp(0.0, 1.0) * total as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, c) in self.counts.iter().enumerate() {
            seen += c.load(Ordering::Relaxed);
            if seen >= rank {
                return bucket_upper(i).min(self.max());
            }
        }
        self.max()
    }

    pub fn reset(&self) {
        for c in self.counts.iter() {
            c.store(0, Ordering::Relaxed);
        }
        self.total.store(0, Ordering::Relaxed);
        self.max.store(0, Ordering::Relaxed);
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    #[default]
    Running,
    Recovering,
    Stopped,
    Failed,
}

impl SessionState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => Self::Running,
            1 => Self::Recovering,
            2 => Self::Stopped,
            _ => Self::Failed,
        }
    }
}

/// Snapshot of a session's counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub state: SessionState,
    pub frames_ok: u64,
    pub frames_desync: u64,
    pub drops: u64,
    pub watchdog_restarts: u64,
    pub blocks_published: u64,
    /// |interval between consecutive DRDY edges - sample period|.
    pub jitter_p50_ns: u64,
    pub jitter_p99_ns: u64,
    /// From the DRDY edge that completed a block to its publication.
    pub latency_p50_ns: u64,
    pub latency_p99_ns: u64,
    pub latency_max_ns: u64,
}

impl SessionStats {
    /// Frames the device produced as far as the host can tell.
    pub fn frames_accounted(&self) -> u64 {
        self.frames_ok + self.frames_desync + self.drops
    }
}

#[derive(Default)]
pub(crate) struct LiveStats {
    pub state: AtomicU8,
    pub frames_ok: AtomicU64,
    pub frames_desync: AtomicU64,
    pub drops: AtomicU64,
    pub watchdog_restarts: AtomicU64,
    pub blocks_published: AtomicU64,
    pub jitter: LogHistogram,
    pub latency: LogHistogram,
}

impl LiveStats {
    pub fn set_state(&self, s: SessionState) {
        self.state.store(s as u8, Ordering::SeqCst);
    }

    pub fn bump(counter: &AtomicU64, n: u64) {
        counter.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> SessionStats {
        SessionStats {
            state: SessionState::from_u8(self.state.load(Ordering::SeqCst)),
            frames_ok: self.frames_ok.load(Ordering::Relaxed),
            frames_desync: self.frames_desync.load(Ordering::Relaxed),
            drops: self.drops.load(Ordering::Relaxed),
            watchdog_restarts: self.watchdog_restarts.load(Ordering::Relaxed),
            blocks_published: self.blocks_published.load(Ordering::Relaxed),
            jitter_p50_ns: self.jitter.quantile(0.5),
            jitter_p99_ns: self.jitter.quantile(0.99),
            latency_p50_ns: self.latency.quantile(0.5),
            latency_p99_ns: self.latency.quantile(0.99),
            latency_max_ns: self.latency.max(),
        }
    }
}
