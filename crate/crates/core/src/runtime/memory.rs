//! Off-chip memory model: word-addressed channels with access counters and
//! the two-channel ping-pong binding.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("out-of-bounds access on channel {channel}: [{base}, {end}) exceeds capacity {capacity}")]
    OutOfBounds {
        channel: usize,
        base: u64,
        end: u64,
        capacity: usize,
    },
    #[error("write to read-side channel {channel} of a double binding")]
    WriteToReadSide { channel: usize },
}

/// Access totals in 64-bit words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessCounters {
    pub read_words: u64,
    pub write_words: u64,
    /// Vector-level reads, one per memory instruction with `rd` set.
    pub vector_reads: u64,
    /// Vector-level writes, one per memory instruction with `wr` set.
    pub vector_writes: u64,
}

impl std::ops::AddAssign for AccessCounters {
    fn add_assign(&mut self, o: Self) {
        self.read_words += o.read_words;
        self.write_words += o.write_words;
        self.vector_reads += o.vector_reads;
        self.vector_writes += o.vector_writes;
    }
}

#[derive(Debug, Clone)]
pub struct MemoryChannelModel {
    pub id: usize,
    words: Vec<f64>,
    read_count: u64,
    write_count: u64,
}

impl MemoryChannelModel {
    pub fn new(id: usize, capacity: usize) -> Self {
        Self {
            id,
            words: vec![0.0; capacity],
            read_count: 0,
            write_count: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.words.len()
    }

    pub fn read_count(&self) -> u64 {
        self.read_count
    }

    pub fn write_count(&self) -> u64 {
        self.write_count
    }

    pub fn reset_counters(&mut self) {
        self.read_count = 0;
        self.write_count = 0;
    }

    fn range(&self, base: u64, len: usize) -> Result<std::ops::Range<usize>, MemoryError> {
        let end = base.checked_add(len as u64);
        match end {
            Some(end) if end <= self.words.len() as u64 => Ok(base as usize..end as usize),
            _ => Err(MemoryError::OutOfBounds {
                channel: self.id,
                base,
                end: end.unwrap_or(u64::MAX),
                capacity: self.words.len(),
            }),
        }
    }

    pub fn check(&self, base: u64, len: usize) -> Result<(), MemoryError> {
        self.range(base, len).map(|_| ())
    }

    /// Reads one word and counts it.
    pub fn read_word(&mut self, addr: u64) -> Result<f64, MemoryError> {
        let r = self.range(addr, 1)?;
        self.read_count += 1;
        Ok(self.words[r.start])
    }

    /// Writes one word and counts it.
    pub fn write_word(&mut self, addr: u64, v: f64) -> Result<(), MemoryError> {
        let r = self.range(addr, 1)?;
        self.write_count += 1;
        self.words[r.start] = v;
        Ok(())
    }

    pub fn read(&mut self, base: u64, len: usize) -> Result<Vec<f64>, MemoryError> {
        let r = self.range(base, len)?;
        self.read_count += len as u64;
        Ok(self.words[r].to_vec())
    }

    pub fn write(&mut self, base: u64, data: &[f64]) -> Result<(), MemoryError> {
        let r = self.range(base, data.len())?;
        self.write_count += data.len() as u64;
        self.words[r].copy_from_slice(data);
        Ok(())
    }

    /// Host DMA: not counted.
    pub fn preload(&mut self, base: u64, data: &[f64]) -> Result<(), MemoryError> {
        let r = self.range(base, data.len())?;
        self.words[r].copy_from_slice(data);
        Ok(())
    }

    /// Host inspection: not counted.
    pub fn snapshot(&self, base: u64, len: usize) -> Result<Vec<f64>, MemoryError> {
        let r = self.range(base, len)?;
        Ok(self.words[r].to_vec())
    }
}

/// Two channels alternating read and write roles once per iteration.
#[derive(Debug, Clone)]
pub struct DoubleChannelBinding {
    channels: [MemoryChannelModel; 2],
    parity: usize,
    flips: u64,
}

impl DoubleChannelBinding {
    pub fn new(a: MemoryChannelModel, b: MemoryChannelModel) -> Self {
        Self {
            channels: [a, b],
            parity: 0,
            flips: 0,
        }
    }

    /// Index (0 or 1) of the current read side.
    pub fn parity(&self) -> usize {
        self.parity
    }

    pub fn flips(&self) -> u64 {
        self.flips
    }

    pub fn flip(&mut self) {
        self.parity ^= 1;
        self.flips += 1;
    }

    pub fn channel(&self, side: usize) -> &MemoryChannelModel {
        &self.channels[side]
    }

    pub fn read_side(&mut self) -> &mut MemoryChannelModel {
        &mut self.channels[self.parity]
    }

    pub fn write_side(&mut self) -> &mut MemoryChannelModel {
        &mut self.channels[self.parity ^ 1]
    }

    /// Writes to an explicitly chosen side; the read side is refused.
    pub fn write_to(&mut self, side: usize, base: u64, data: &[f64]) -> Result<(), MemoryError> {
        if side == self.parity {
            return Err(MemoryError::WriteToReadSide {
                channel: self.channels[side].id,
            });
        }
        self.channels[side].write(base, data)
    }
}

/// Storage behind one vector: a single channel or a ping-pong pair.
#[derive(Debug, Clone)]
pub enum VectorStore {
    Single(MemoryChannelModel),
    Double(DoubleChannelBinding),
}

impl VectorStore {
    pub fn single(id: usize, capacity: usize) -> Self {
        VectorStore::Single(MemoryChannelModel::new(id, capacity))
    }

    pub fn double(id_a: usize, id_b: usize, capacity: usize) -> Self {
        VectorStore::Double(DoubleChannelBinding::new(
            MemoryChannelModel::new(id_a, capacity),
            MemoryChannelModel::new(id_b, capacity),
        ))
    }

    pub fn read_channel(&mut self) -> &mut MemoryChannelModel {
        match self {
            VectorStore::Single(c) => c,
            VectorStore::Double(d) => d.read_side(),
        }
    }

    pub fn write_channel(&mut self) -> &mut MemoryChannelModel {
        match self {
            VectorStore::Single(c) => c,
            VectorStore::Double(d) => d.write_side(),
        }
    }

    pub fn read_channel_id(&self) -> usize {
        match self {
            VectorStore::Single(c) => c.id,
            VectorStore::Double(d) => d.channels[d.parity].id,
        }
    }

    pub fn write_channel_id(&self) -> usize {
        match self {
            VectorStore::Single(c) => c.id,
            VectorStore::Double(d) => d.channels[d.parity ^ 1].id,
        }
    }

    /// Called once a write instruction completes.
    pub fn finish_write(&mut self) {
        if let VectorStore::Double(d) = self {
            d.flip();
        }
    }

    pub fn flips(&self) -> u64 {
        match self {
            VectorStore::Single(_) => 0,
            VectorStore::Double(d) => d.flips,
        }
    }

    /// Host DMA into the current read side.
    pub fn preload(&mut self, base: u64, data: &[f64]) -> Result<(), MemoryError> {
        self.read_channel().preload(base, data)
    }

    /// Uncounted copy of the current read side.
    pub fn snapshot(&self, base: u64, len: usize) -> Result<Vec<f64>, MemoryError> {
        match self {
            VectorStore::Single(c) => c.snapshot(base, len),
            VectorStore::Double(d) => d.channels[d.parity].snapshot(base, len),
        }
    }

    pub fn words(&self) -> (u64, u64) {
        match self {
            VectorStore::Single(c) => (c.read_count, c.write_count),
            VectorStore::Double(d) => (
                d.channels.iter().map(|c| c.read_count).sum(),
                d.channels.iter().map(|c| c.write_count).sum(),
            ),
        }
    }

    pub fn reset_counters(&mut self) {
        match self {
            VectorStore::Single(c) => c.reset_counters(),
            VectorStore::Double(d) => d.channels.iter_mut().for_each(|c| c.reset_counters()),
        }
    }
}
