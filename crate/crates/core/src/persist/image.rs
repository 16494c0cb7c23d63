use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::hierarchy::cache::{block_of, LINE_BYTES};

/// Identifies one transaction in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TxKey {
    pub kernel: u32,
    pub cta: u32,
    pub tx: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PersistSource {
    Log,
    Data,
    Flag,
    Plain,
}

/// Who last wrote a byte that is being persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Writer {
    pub source: PersistSource,
    pub tx: Option<TxKey>,
}

/// One durable write: a masked block image accepted into a WPQ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistRecord {
    pub timestamp: f64,
    pub seq: u64,
    pub block: u64,
    pub mask: u128,
    #[serde(with = "block_bytes")]
    pub data: [u8; 128],
    /// Distinct writers of the bytes in `mask`.
    pub writers: Vec<Writer>,
}

mod block_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8; 128], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_bytes(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 128], D::Error> {
        let v: Vec<u8> = Vec::deserialize(d)?;
        v.try_into().map_err(|_| serde::de::Error::custom("expected 128 bytes"))
    }
}

impl PersistRecord {
    pub fn has_source(&self, source: PersistSource, tx: TxKey) -> bool {
        self.writers.iter().any(|w| w.source == source && w.tx == Some(tx))
    }

    pub fn bytes(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        (0..LINE_BYTES).filter(|i| self.mask >> i & 1 == 1).map(|i| (self.block + i, self.data[i as usize]))
    }
}

/// Globally ordered log of durable writes, sorted by (timestamp, seq).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PersistTrace {
    pub records: Vec<PersistRecord>,
}

impl PersistTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn sort(&mut self) {
        self.records
            .sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.seq.cmp(&b.seq)));
    }

    pub fn is_ordered(&self) -> bool {
        self.records.windows(2).all(|w| {
            w[0].timestamp < w[1].timestamp || (w[0].timestamp == w[1].timestamp && w[0].seq < w[1].seq)
        })
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.mask.count_ones() as u64).sum()
    }
}

/// Byte-addressable persistent-memory contents. Unwritten bytes read as 0.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PmImage {
    blocks: BTreeMap<u64, [u8; 128]>,
}

impl PmImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn read(&self, addr: u64) -> u8 {
        let b = block_of(addr);
        self.blocks.get(&b).map_or(0, |d| d[(addr - b) as usize])
    }

    pub fn write(&mut self, addr: u64, value: u8) {
        let b = block_of(addr);
        self.blocks.entry(b).or_insert([0; 128])[(addr - b) as usize] = value;
    }

    pub fn apply(&mut self, rec: &PersistRecord) {
        let d = self.blocks.entry(rec.block).or_insert([0; 128]);
        for (i, (dst, src)) in d.iter_mut().zip(rec.data).enumerate() {
            if rec.mask >> i & 1 == 1 {
                *dst = src;
            }
        }
    }

    pub fn read_range(&self, addrs: impl IntoIterator<Item = u64>) -> Vec<u8> {
        addrs.into_iter().map(|a| self.read(a)).collect()
    }

    /// Non-zero bytes, in address order.
    pub fn nonzero(&self) -> impl Iterator<Item = (u64, u8)> + '_ {
        self.blocks
            .iter()
            .flat_map(|(b, d)| d.iter().enumerate().filter(|(_, v)| **v != 0).map(move |(i, v)| (b + i as u64, *v)))
    }

    /// Two images are equivalent when every byte reads the same.
    pub fn same_contents(&self, other: &PmImage) -> bool {
        self.nonzero().eq(other.nonzero())
    }
}
