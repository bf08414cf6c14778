use serde::{Deserialize, Serialize};

use crate::codec::CHANNELS;

/// Frames per block when batching at high rates.
pub const MAX_BLOCK_LEN: usize = 8;

/// One converted frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Host monotonic time of the DRDY edge.
    pub timestamp_ns: u64,
    pub volts: [f64; CHANNELS],
    pub raw: [i32; CHANNELS],
    pub loff_flags: u16,
}

/// Consecutive frames published together; `seq` is the frame index of the
/// first one, and the rest follow without gaps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleBlock {
    seq: u64,
    len: usize,
    samples: [Sample; MAX_BLOCK_LEN],
}

impl Default for SampleBlock {
    fn default() -> Self {
        Self::new(0)
    }
}

impl SampleBlock {
    pub fn new(seq: u64) -> Self {
        Self {
            seq,
            len: 0,
            samples: [Sample::default(); MAX_BLOCK_LEN],
        }
    }

    pub fn single(seq: u64, sample: Sample) -> Self {
        let mut b = Self::new(seq);
        b.push_sample(sample);
        b
    }

    /// Builds a block from up to [`MAX_BLOCK_LEN`] samples.
    pub fn from_samples(seq: u64, samples: &[Sample]) -> Option<Self> {
        if samples.len() > MAX_BLOCK_LEN {
            return None;
        }
        let mut b = Self::new(seq);
        b.samples[..samples.len()].copy_from_slice(samples);
        b.len = samples.len();
        Some(b)
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Sequence number one past the last sample.
    pub fn next_seq(&self) -> u64 {
        self.seq + self.len as u64
    }

    pub fn block_len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_full(&self) -> bool {
        self.len == MAX_BLOCK_LEN
    }

    /// Timestamp of the first sample.
    pub fn host_timestamp_ns(&self) -> u64 {
        self.samples[0].timestamp_ns
    }

    /// Union of the lead-off flags of every sample.
    pub fn loff_flags(&self) -> u16 {
        self.samples().iter().fold(0, |acc, s| acc | s.loff_flags)
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples[..self.len]
    }

    pub fn samples_mut(&mut self) -> &mut [Sample] {
        &mut self.samples[..self.len]
    }

    /// Appends a sample; returns false when the block is already full.
    pub fn push_sample(&mut self, sample: Sample) -> bool {
        if self.is_full() {
            return false;
        }
        self.samples[self.len] = sample;
        self.len += 1;
        true
    }

    /// Empties the block and restarts it at `seq`.
    pub fn reset(&mut self, seq: u64) {
        self.seq = seq;
        self.len = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn push_until_full() {
        let mut b = SampleBlock::new(10);
        for i in 0..MAX_BLOCK_LEN {
            assert!(b.push_sample(Sample {
                timestamp_ns: i as u64,
                ..Default::default()
            }));
        }
        assert!(!b.push_sample(Sample::default()));
        assert_eq!(b.next_seq(), 18);
        assert_eq!(b.host_timestamp_ns(), 0);
    }

    #[test]
    fn loff_union() {
        let a = Sample {
            loff_flags: 0x0100,
            ..Default::default()
        };
        let b = Sample {
            loff_flags: 0x0002,
            ..Default::default()
        };
        assert_eq!(
            SampleBlock::from_samples(0, &[a, b]).unwrap().loff_flags(),
            0x0102
        );
        assert!(SampleBlock::from_samples(0, &[a; 9]).is_none());
    }
}
