use std::collections::BTreeMap;

use super::MemInstr;

pub const SEGMENT_BYTES: u64 = 128;

/// One coalesced memory transaction: an aligned segment and the bytes
/// requested inside it. Bit `i` of `mask` is byte `segment + i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentTx {
    pub segment: u64,
    pub mask: u128,
}

impl SegmentTx {
    pub fn bytes(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn byte_addrs(&self) -> impl Iterator<Item = u64> + '_ {
        (0..128u64).filter(|i| self.mask >> i & 1 == 1).map(|i| self.segment + i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoalescedInstr<'a> {
    pub source: &'a MemInstr,
    pub transactions: Vec<SegmentTx>,
}

impl CoalescedInstr<'_> {
    /// Un-coalescing degree N: the number of segment transactions.
    pub fn degree(&self) -> usize {
        self.transactions.len()
    }
}

/// Groups a warp's thread accesses by aligned 128-byte segment. Segments
/// are returned in ascending address order.
pub fn coalesce(instr: &MemInstr) -> CoalescedInstr<'_> {
    coalesce_with(instr, SEGMENT_BYTES)
}

pub(crate) fn coalesce_with(instr: &MemInstr, segment_bytes: u64) -> CoalescedInstr<'_> {
    assert!(segment_bytes.is_power_of_two() && segment_bytes <= 128);
    let mut segs: BTreeMap<u64, u128> = BTreeMap::new();
    for t in &instr.threads {
        for a in t.addr..t.end() {
            let seg = a & !(segment_bytes - 1);
            *segs.entry(seg).or_default() |= 1u128 << (a - seg);
        }
    }
    CoalescedInstr {
        source: instr,
        transactions: segs.into_iter().map(|(segment, mask)| SegmentTx { segment, mask }).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{MemOp, Role, Target, ThreadAccess};
    use proptest::prelude::*;

    fn instr(threads: Vec<ThreadAccess>) -> MemInstr {
        MemInstr { op: MemOp::Load, role: Role::Plain, warp_id: 0, target: Target::Pm, tx_id: None, threads }
    }

    #[test]
    fn perfectly_coalesced() {
        let base = 0x1000_0000_0000u64;
        let m = instr((0..32).map(|i| ThreadAccess::new(base + 4 * i, 4)).collect());
        let c = coalesce(&m);
        assert_eq!(c.degree(), 1);
        assert_eq!(c.transactions[0].mask, u128::MAX);
    }

    #[test]
    fn fully_uncoalesced() {
        let m = instr((0..32).map(|i| ThreadAccess::new(0x4000 + 128 * i + 8, 4)).collect());
        assert_eq!(coalesce(&m).degree(), 32);
    }

    #[test]
    fn stride_64() {
        // Two threads share each segment: 32 threads * 64 B / 128 B = 16.
        let m = instr((0..32).map(|i| ThreadAccess::new(0x8000 + 64 * i, 4)).collect());
        let c = coalesce(&m);
        assert_eq!(c.degree(), 16);
        assert!(c.transactions.iter().all(|t| t.bytes() == 8));
    }

    proptest! {
        #[test]
        fn masks_cover_exactly_the_thread_bytes(
            accesses in prop::collection::vec((0u64..4096, 0u32..5), 1..32)
        ) {
            let threads: Vec<_> = accesses
                .iter()
                .map(|&(a, s)| ThreadAccess::new(0x10_0000 + (a & !((1u64 << s) - 1)), 1 << s))
                .collect();
            let m = instr(threads);
            let c = coalesce(&m);
            let from_masks: std::collections::BTreeSet<u64> =
                c.transactions.iter().flat_map(|t| t.byte_addrs().collect::<Vec<_>>()).collect();
            prop_assert_eq!(&from_masks, &m.byte_set());
            let total: u32 = c.transactions.iter().map(|t| t.bytes()).sum();
            prop_assert_eq!(total as usize, m.byte_set().len());
            prop_assert!(c.degree() >= 1 && c.degree() <= m.threads.len());
        }
    }
}
