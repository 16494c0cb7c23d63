use super::cache::{sector_mask, Cache, Probe};
use super::config::HierarchyConfig;
use crate::trace::MemOp;

/// Tag-only copy of the cache hierarchy in which every request takes the
/// temporal path. Locality is observed here, so the statistics that drive
/// path selection do not depend on the paths already chosen.
#[derive(Debug, Clone)]
pub struct ShadowDirectory {
    l1: Vec<Cache>,
    l2: Vec<Cache>,
    partitions: u64,
    sector_bytes: u64,
}

/// What one segment request saw on its way down.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub l1_hit: bool,
    /// `None` when the request was satisfied by L1D and never reached L2.
    pub l2_hit: Option<bool>,
}

impl ShadowDirectory {
    pub fn new(cfg: &HierarchyConfig) -> Self {
        ShadowDirectory {
            l1: (0..cfg.sm_count).map(|_| Cache::new(cfg.l1d_sets() as usize, cfg.l1d.assoc as usize, 1)).collect(),
            l2: (0..cfg.l2.partitions)
                .map(|_| Cache::new(cfg.l2_sets_per_partition() as usize, cfg.l2.assoc as usize, cfg.l2.partitions))
                .collect(),
            partitions: cfg.l2.partitions,
            sector_bytes: cfg.sector_bytes,
        }
    }

    /// Loads hit when every requested byte is valid; stores hit when the
    /// line is resident (L1D then drops it, write-evict).
    pub fn observe(&mut self, sm: u32, block: u64, mask: u128, op: MemOp) -> Observation {
        let l1 = &mut self.l1[sm as usize];
        let l2 = &mut self.l2[((block / 128) % self.partitions) as usize];
        match op {
            MemOp::Load => {
                if l1.probe(block, mask) == Probe::Hit {
                    l1.touch(block);
                    return Observation { l1_hit: true, l2_hit: None };
                }
                let fetch = sector_mask(mask, self.sector_bytes);
                let l2_hit = l2.probe(block, fetch) == Probe::Hit;
                l2.fill(block, fetch, false);
                l1.fill(block, fetch, false);
                Observation { l1_hit: false, l2_hit: Some(l2_hit) }
            }
            MemOp::Store => {
                let l1_hit = l1.invalidate(block).is_some();
                let l2_hit = l2.contains(block);
                l2.fill(block, mask, false);
                Observation { l1_hit, l2_hit: Some(l2_hit) }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_then_store_hits_l1_then_evicts() {
        let mut d = ShadowDirectory::new(&HierarchyConfig::default());
        assert_eq!(d.observe(0, 0, 0xF, MemOp::Load), Observation { l1_hit: false, l2_hit: Some(false) });
        assert_eq!(d.observe(0, 0, 0xF, MemOp::Load), Observation { l1_hit: true, l2_hit: None });
        assert_eq!(d.observe(0, 0, 0xF0, MemOp::Store), Observation { l1_hit: true, l2_hit: Some(true) });
        assert_eq!(d.observe(0, 0, 0xF0, MemOp::Store), Observation { l1_hit: false, l2_hit: Some(true) });
    }

    #[test]
    fn l1_is_private() {
        let mut d = ShadowDirectory::new(&HierarchyConfig::default());
        d.observe(0, 0, 0xF, MemOp::Load);
        assert_eq!(d.observe(1, 0, 0xF, MemOp::Load), Observation { l1_hit: false, l2_hit: Some(true) });
    }
}
