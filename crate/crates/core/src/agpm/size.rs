use serde::{Deserialize, Serialize};

/// Hardware geometry used for storage accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeConfig {
    pub tag_bits: u64,
    pub block_bytes: u64,
    pub counter_bits: u64,
    pub entries_per_buffer: u64,
    pub buffers: u64,
}

impl Default for SizeConfig {
    fn default() -> Self {
        SizeConfig { tag_bits: 57, block_bytes: 128, counter_bits: 5, entries_per_buffer: 1024, buffers: 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub bits_per_entry: u64,
    pub bytes_per_entry: u64,
    pub bytes_per_buffer: u64,
    pub total_bytes: u64,
    pub kb_per_buffer: f64,
    pub total_kb: f64,
}

/// Entry: tag plus one counter per byte, a block counter and the
/// path-change mark. KB here is 1024 bytes.
pub fn size_report(cfg: &SizeConfig) -> SizeReport {
    let bits = cfg.tag_bits + (cfg.block_bytes + 2) * cfg.counter_bits;
    let bytes = bits.div_ceil(8);
    let per_buffer = bytes * cfg.entries_per_buffer;
    let total = per_buffer * cfg.buffers;
    SizeReport {
        bits_per_entry: bits,
        bytes_per_entry: bytes,
        bytes_per_buffer: per_buffer,
        total_bytes: total,
        kb_per_buffer: per_buffer as f64 / 1024.0,
        total_kb: total as f64 / 1024.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_overhead() {
        let r = size_report(&SizeConfig::default());
        assert_eq!(r.bits_per_entry, 707);
        assert_eq!(r.bytes_per_entry, 89);
        assert_eq!(r.kb_per_buffer, 89.0);
        assert_eq!(r.total_kb, 178.0);
    }

    #[test]
    fn variants() {
        let half = size_report(&SizeConfig { entries_per_buffer: 512, ..Default::default() });
        assert_eq!(half.kb_per_buffer, 44.5);
        let four = size_report(&SizeConfig { counter_bits: 4, ..Default::default() });
        assert_eq!(four.bits_per_entry, 577);
    }
}
