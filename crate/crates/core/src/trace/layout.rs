//! Fixed address map and undo-log record layout.
//!
//! PM and DRAM occupy disjoint 1 TiB windows. The top 64 GiB of the PM
//! window holds transaction flags, one byte per (kernel, cta, tx).
//!
//! An undo record is a sequence of entries, one per maximal contiguous range
//! of a transaction's data write set:
//!
//! ```text
//! target: u64 LE | len: u32 LE | old bytes (len) | crc32: u32 LE
//! ```
//!
//! The record is laid over the transaction's log bytes in ascending address
//! order; unused trailing log bytes are zero, and an all-zero header ends
//! the record.

use std::collections::BTreeMap;

pub const PM_BASE: u64 = 0x1000_0000_0000;
pub const PM_SIZE: u64 = 1 << 40;
pub const DRAM_BASE: u64 = 0x2000_0000_0000;
pub const DRAM_SIZE: u64 = 1 << 40;

pub const FLAG_BASE: u64 = PM_BASE + 0xF0_0000_0000;
pub const MAX_FLAG_KERNELS: u32 = 16;
pub const MAX_FLAG_CTAS: u32 = 1 << 16;
pub const MAX_FLAG_TXS: u32 = 1 << 16;

pub const ENTRY_HEADER_BYTES: u64 = 12;
pub const ENTRY_CHECKSUM_BYTES: u64 = 4;
pub const ENTRY_OVERHEAD: u64 = ENTRY_HEADER_BYTES + ENTRY_CHECKSUM_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FlagState {
    None = 0,
    InTx = 1,
    Complete = 2,
}

impl FlagState {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(FlagState::None),
            1 => Some(FlagState::InTx),
            2 => Some(FlagState::Complete),
            _ => None,
        }
    }
}

pub fn is_pm(addr: u64) -> bool {
    (PM_BASE..PM_BASE + PM_SIZE).contains(&addr)
}

pub fn is_dram(addr: u64) -> bool {
    (DRAM_BASE..DRAM_BASE + DRAM_SIZE).contains(&addr)
}

/// Address of the flag byte for a transaction, or `None` if the ids do not
/// fit the flag region. A CTA's flags for 128 consecutive transactions share
/// one block; neighbouring CTAs use neighbouring blocks, so flag persists
/// spread over every channel.
pub fn flag_addr(kernel: u32, cta: u32, tx: u32) -> Option<u64> {
    if kernel >= MAX_FLAG_KERNELS || cta >= MAX_FLAG_CTAS || tx >= MAX_FLAG_TXS {
        return None;
    }
    let block = (tx as u64 / 128) * MAX_FLAG_CTAS as u64 + cta as u64;
    Some(FLAG_BASE + ((kernel as u64) << 32) + block * 128 + tx as u64 % 128)
}

/// Maximal contiguous ranges `(start, len)` of a sorted byte set.
pub fn ranges<I: IntoIterator<Item = u64>>(sorted_bytes: I) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for b in sorted_bytes {
        match out.last_mut() {
            Some((start, len)) if *start + *len == b => *len += 1,
            Some((start, len)) if b < *start + *len => {}
            _ => out.push((b, 1)),
        }
    }
    out
}

/// Bytes needed to hold the undo record for a data write set.
pub fn undo_record_len<I: IntoIterator<Item = u64>>(sorted_data_bytes: I) -> u64 {
    ranges(sorted_data_bytes).iter().map(|(_, len)| ENTRY_OVERHEAD + len).sum()
}

pub fn entry_checksum(target: u64, old: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&target.to_le_bytes());
    h.update(&(old.len() as u32).to_le_bytes());
    h.update(old);
    h.finalize()
}

/// Serializes the undo record for `old_values` (data address -> old byte).
pub fn encode_undo_record(old_values: &BTreeMap<u64, u8>) -> Vec<u8> {
    let mut out = Vec::new();
    for (start, len) in ranges(old_values.keys().copied()) {
        let old: Vec<u8> = (start..start + len).map(|a| old_values[&a]).collect();
        out.extend_from_slice(&start.to_le_bytes());
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.extend_from_slice(&old);
        out.extend_from_slice(&entry_checksum(start, &old).to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndoEntry {
    pub target: u64,
    pub old: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeError {
    /// Entry at the given record offset failed its checksum or overran the record.
    Corrupt { offset: usize },
}

/// Parses an undo record. Stops at an all-zero header or when fewer than a
/// header's worth of bytes remain.
pub fn decode_undo_record(bytes: &[u8]) -> Result<Vec<UndoEntry>, DecodeError> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    while bytes.len() - pos >= ENTRY_OVERHEAD as usize {
        let target = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        let len = u32::from_le_bytes(bytes[pos + 8..pos + 12].try_into().unwrap()) as usize;
        if target == 0 && len == 0 {
            break;
        }
        let body = pos + ENTRY_HEADER_BYTES as usize;
        let end = body.checked_add(len).filter(|e| e + 4 <= bytes.len());
        let Some(end) = end else { return Err(DecodeError::Corrupt { offset: pos }) };
        let old = &bytes[body..end];
        let sum = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
        if sum != entry_checksum(target, old) {
            return Err(DecodeError::Corrupt { offset: pos });
        }
        out.push(UndoEntry { target, old: old.to_vec() });
        pos = end + 4;
    }
    Ok(out)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Value a transactional data store writes to `addr`. Always differs from
/// `old`, so a torn transaction is always visible byte by byte.
pub fn data_value(kernel: u32, cta: u32, tx: u32, addr: u64, old: u8) -> u8 {
    let h = splitmix64(addr ^ ((kernel as u64) << 48) ^ ((cta as u64) << 24) ^ tx as u64);
    old.wrapping_add(1 + (h % 255) as u8)
}
