use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::metrics::MetricFormula;

/// Which cache level a buffer observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
}

/// The two fixed-role ways of every set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Way {
    Log = 0,
    All = 1,
}

pub const WAYS: [Way; 2] = [Way::Log, Way::All];

/// Path-change mark bits. Bit 1 says whether bit 0 holds a path yet.
pub const MARK_TEMPORAL: u8 = 0b01;
pub const MARK_VALID: u8 = 0b10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgpmEntry {
    pub tag: u64,
    pub byte_counters: [u32; 128],
    pub block_counter: u32,
    pub mark: u8,
}

impl AgpmEntry {
    pub fn new(tag: u64) -> Self {
        AgpmEntry { tag, byte_counters: [0; 128], block_counter: 0, mark: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferGeometry {
    pub sets: usize,
    pub counter_bits: u32,
    /// Counters stop at their maximum; off only for exact-count testing.
    pub saturate: bool,
}

impl Default for BufferGeometry {
    fn default() -> Self {
        BufferGeometry { sets: 512, counter_bits: 5, saturate: true }
    }
}

impl BufferGeometry {
    pub fn counter_max(&self) -> u32 {
        if self.saturate {
            (1u32 << self.counter_bits) - 1
        } else {
            u32::MAX
        }
    }
}

/// Running metric sums for one way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct WaySums {
    temporal: u64,
    block: u64,
}

/// One level's AGPM buffer: `sets` x {log, all} entries, with conflicting
/// entries spilled to an unbounded reservation buffer.
#[derive(Debug, Clone)]
pub struct AgpmBuffer {
    pub level: Level,
    geom: BufferGeometry,
    formula: MetricFormula,
    sets: Vec<[Option<AgpmEntry>; 2]>,
    reservation: HashMap<(Way, u64), AgpmEntry>,
    sums: [WaySums; 2],
    pub spills: u64,
    pub refills: u64,
}

/// Contribution of a counter value to a metric sum.
fn weight(formula: MetricFormula, c: u32) -> u64 {
    match formula {
        MetricFormula::Rehit => c.saturating_sub(1) as u64,
        MetricFormula::Literal => {
            if c > 1 {
                c as u64
            } else {
                0
            }
        }
    }
}

impl AgpmBuffer {
    pub fn new(level: Level, geom: BufferGeometry, formula: MetricFormula) -> Self {
        assert!(geom.sets > 0 && (1..=16).contains(&geom.counter_bits));
        AgpmBuffer {
            level,
            geom,
            formula,
            sets: vec![[None, None]; geom.sets],
            reservation: HashMap::new(),
            sums: [WaySums::default(); 2],
            spills: 0,
            refills: 0,
        }
    }

    pub fn geometry(&self) -> BufferGeometry {
        self.geom
    }

    pub fn formula(&self) -> MetricFormula {
        self.formula
    }

    pub fn set_index(&self, block: u64) -> usize {
        ((block / 128) % self.geom.sets as u64) as usize
    }

    /// Looks an entry up in the set or the reservation buffer.
    pub fn entry(&self, way: Way, block: u64) -> Option<&AgpmEntry> {
        match &self.sets[self.set_index(block)][way as usize] {
            Some(e) if e.tag == block => Some(e),
            _ => self.reservation.get(&(way, block)),
        }
    }

    pub fn has_entry(&self, way: Way, block: u64) -> bool {
        self.entry(way, block).is_some()
    }

    /// Brings the entry for `block` into its set, spilling the occupant and
    /// refilling from the reservation buffer when needed.
    fn install(&mut self, way: Way, block: u64) -> (&mut AgpmEntry, bool) {
        let s = self.set_index(block);
        let slot_matches = matches!(&self.sets[s][way as usize], Some(e) if e.tag == block);
        let mut fresh = false;
        if !slot_matches {
            let incoming = match self.reservation.remove(&(way, block)) {
                Some(e) => {
                    self.refills += 1;
                    e
                }
                None => {
                    fresh = true;
                    AgpmEntry::new(block)
                }
            };
            if let Some(old) = self.sets[s][way as usize].replace(incoming) {
                self.spills += 1;
                self.reservation.insert((way, old.tag), old);
            }
        }
        (self.sets[s][way as usize].as_mut().expect("just installed"), fresh)
    }

    fn bump(&mut self, way: Way, block: u64, mask: u128, bytes_from_zero: bool) {
        let max = self.geom.counter_max();
        let formula = self.formula;
        let (e, _) = self.install(way, block);
        let mut dt = 0u64;
        for i in 0..128 {
            if mask >> i & 1 == 0 {
                continue;
            }
            let c = e.byte_counters[i];
            if (c > 0 || bytes_from_zero) && c < max {
                e.byte_counters[i] = c + 1;
                dt += weight(formula, c + 1) - weight(formula, c);
            }
        }
        let b = e.block_counter;
        let mut db = 0;
        if b < max {
            e.block_counter = b + 1;
            db = weight(formula, b + 1) - weight(formula, b);
        }
        let sums = &mut self.sums[way as usize];
        sums.temporal += dt;
        sums.block += db;
    }

    /// First sighting of a PM request at this level: creates the entry in
    /// every way the request belongs to that lacks one, counting the
    /// reference once.
    pub fn record_new(&mut self, block: u64, mask: u128, is_log: bool) {
        for way in [Way::All, Way::Log] {
            if way == Way::Log && !is_log {
                continue;
            }
            if !self.has_entry(way, block) {
                self.bump(way, block, mask, true);
            }
        }
    }

    /// A cache hit at this level. Bytes already referenced count a re-hit;
    /// bytes at zero only add to the block counter.
    pub fn notify_hit(&mut self, block: u64, mask: u128, is_pm: bool, is_log: bool) {
        for way in [Way::All, Way::Log] {
            if way == Way::Log && !(is_log && is_pm) {
                continue;
            }
            if self.has_entry(way, block) {
                self.bump(way, block, mask, false);
            } else if is_pm {
                self.bump(way, block, mask, true);
            }
        }
    }

    /// Reads and updates the path-change mark of a log block.
    pub fn mark(&self, block: u64) -> u8 {
        self.entry(Way::Log, block).map_or(0, |e| e.mark)
    }

    pub fn set_mark(&mut self, block: u64, mark: u8) {
        if self.has_entry(Way::Log, block) {
            self.install(Way::Log, block).0.mark = mark;
        }
    }

    /// Temporal and block-term sums of a way, maintained on every update.
    pub fn running_sums(&self, way: Way) -> (u64, u64) {
        let s = self.sums[way as usize];
        (s.temporal, s.block)
    }

    /// The same sums recomputed by scanning every entry.
    pub fn scan_sums(&self, way: Way) -> (u64, u64) {
        let resident = self.sets.iter().filter_map(|s| s[way as usize].as_ref());
        let spilled = self.reservation.iter().filter(|((w, _), _)| *w == way).map(|(_, e)| e);
        resident.chain(spilled).fold((0, 0), |(t, b), e| {
            let te: u64 = e.byte_counters.iter().map(|&c| weight(self.formula, c)).sum();
            (t + te, b + weight(self.formula, e.block_counter))
        })
    }

    pub fn entries(&self) -> usize {
        self.sets.iter().flatten().filter(|e| e.is_some()).count() + self.reservation.len()
    }

    pub fn reservation_len(&self) -> usize {
        self.reservation.len()
    }

    /// Flushes both the buffer and its reservation buffer.
    pub fn clear(&mut self) {
        for s in &mut self.sets {
            *s = [None, None];
        }
        self.reservation.clear();
        self.sums = [WaySums::default(); 2];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn buf() -> AgpmBuffer {
        AgpmBuffer::new(Level::L1, BufferGeometry::default(), MetricFormula::Rehit)
    }

    #[test]
    fn first_log_store_creates_both_ways() {
        let mut b = buf();
        b.record_new(0x1000, 0xF, true);
        for way in WAYS {
            let e = b.entry(way, 0x1000).unwrap();
            assert_eq!(&e.byte_counters[..5], &[1, 1, 1, 1, 0]);
        }
    }

    #[test]
    fn non_log_store_creates_all_way_only() {
        let mut b = buf();
        b.record_new(0x1000, 0xF, false);
        assert!(b.has_entry(Way::All, 0x1000));
        assert!(!b.has_entry(Way::Log, 0x1000));
    }

    #[test]
    fn hit_rules() {
        let mut b = buf();
        b.record_new(0, 1, false);
        b.notify_hit(0, 1, true, false);
        b.notify_hit(0, 1, true, false);
        let e = b.entry(Way::All, 0).unwrap();
        assert_eq!((e.byte_counters[0], e.block_counter), (3, 3));
        b.notify_hit(0, 2, true, false);
        let e = b.entry(Way::All, 0).unwrap();
        assert_eq!((e.byte_counters[1], e.block_counter), (0, 4));
    }

    #[test]
    fn dram_hit_without_entry_is_ignored() {
        let mut b = buf();
        b.notify_hit(0x40_0000, 1, false, false);
        assert_eq!(b.entries(), 0);
    }

    #[test]
    fn conflict_spills_and_refills() {
        let mut b = buf();
        let stride = 512 * 128;
        b.record_new(0, 1, false);
        b.record_new(stride, 1, false);
        assert_eq!(b.reservation_len(), 1);
        b.notify_hit(0, 1, true, false);
        assert_eq!(b.refills, 1);
        assert_eq!(b.entry(Way::All, 0).unwrap().byte_counters[0], 2);
        assert_eq!(b.entry(Way::All, stride).unwrap().byte_counters[0], 1);
    }

    #[test]
    fn counters_saturate() {
        let mut b = buf();
        b.record_new(0, 1, false);
        for _ in 0..100 {
            b.notify_hit(0, 1, true, false);
        }
        let e = b.entry(Way::All, 0).unwrap();
        assert_eq!((e.byte_counters[0], e.block_counter), (31, 31));
        assert_eq!(b.running_sums(Way::All), b.scan_sums(Way::All));
    }

    #[test]
    fn clear_empties_everything() {
        let mut b = buf();
        b.record_new(0, 1, true);
        b.record_new(512 * 128, 1, true);
        b.clear();
        assert_eq!(b.entries(), 0);
        assert_eq!(b.running_sums(Way::Log), (0, 0));
    }

    #[test]
    fn mark_survives_spill() {
        let mut b = buf();
        b.record_new(0, 1, true);
        b.set_mark(0, MARK_VALID | MARK_TEMPORAL);
        b.record_new(512 * 128, 1, true);
        assert_eq!(b.mark(0), MARK_VALID | MARK_TEMPORAL);
    }
}
