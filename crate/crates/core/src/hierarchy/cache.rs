//! Set-associative cache with byte-granular valid/dirty masks and LRU
//! replacement. Lines are 128 bytes; bit `i` of a mask is byte `i`.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheLine {
    pub tag: u64,
    pub valid: u128,
    pub dirty: u128,
    pub lru_stamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// All requested bytes are valid.
    Hit,
    /// The line is resident but some requested bytes are not.
    SectorMiss { missing: u128 },
    Miss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub set: usize,
    pub line: CacheLine,
}

#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<CacheLine>>,
    assoc: usize,
    /// Blocks are mapped as `(block / stride) % sets`.
    stride: u64,
    clock: u64,
    /// Every eviction in order, when recording is on.
    pub eviction_log: Option<Vec<Eviction>>,
}

pub const LINE_BYTES: u64 = 128;

pub fn block_of(addr: u64) -> u64 {
    addr & !(LINE_BYTES - 1)
}

/// Expands a byte mask to whole sectors.
pub fn sector_mask(mask: u128, sector_bytes: u64) -> u128 {
    let per = sector_bytes as u32;
    let full: u128 = if per >= 128 { u128::MAX } else { (1u128 << per) - 1 };
    let mut out = 0u128;
    for s in 0..(128 / per) {
        let m = full << (s * per);
        if mask & m != 0 {
            out |= m;
        }
    }
    out
}

impl Cache {
    pub fn new(sets: usize, assoc: usize, stride: u64) -> Self {
        assert!(sets > 0 && assoc > 0 && stride > 0);
        Cache { sets: vec![Vec::with_capacity(assoc); sets], assoc, stride, clock: 0, eviction_log: None }
    }

    pub fn with_eviction_log(mut self) -> Self {
        self.eviction_log = Some(Vec::new());
        self
    }

    pub fn set_index(&self, block: u64) -> usize {
        ((block / LINE_BYTES / self.stride) % self.sets.len() as u64) as usize
    }

    fn find(&self, block: u64) -> Option<(usize, usize)> {
        let s = self.set_index(block);
        self.sets[s].iter().position(|l| l.tag == block).map(|w| (s, w))
    }

    pub fn line(&self, block: u64) -> Option<&CacheLine> {
        self.find(block).map(|(s, w)| &self.sets[s][w])
    }

    pub fn contains(&self, block: u64) -> bool {
        self.find(block).is_some()
    }

    /// Classifies an access without changing any state.
    pub fn probe(&self, block: u64, mask: u128) -> Probe {
        match self.line(block) {
            Some(l) if l.valid & mask == mask => Probe::Hit,
            Some(l) => Probe::SectorMiss { missing: mask & !l.valid },
            None => Probe::Miss,
        }
    }

    /// Marks the line most recently used.
    pub fn touch(&mut self, block: u64) {
        if let Some((s, w)) = self.find(block) {
            self.clock += 1;
            self.sets[s][w].lru_stamp = self.clock;
        }
    }

    /// Makes `mask` valid in `block`, allocating the line (and evicting the
    /// LRU victim) if needed. Also marks the bytes dirty when `dirty`.
    pub fn fill(&mut self, block: u64, mask: u128, dirty: bool) -> Option<Eviction> {
        self.clock += 1;
        let stamp = self.clock;
        if let Some((s, w)) = self.find(block) {
            let l = &mut self.sets[s][w];
            l.valid |= mask;
            if dirty {
                l.dirty |= mask;
            }
            l.lru_stamp = stamp;
            return None;
        }
        let s = self.set_index(block);
        let new = CacheLine { tag: block, valid: mask, dirty: if dirty { mask } else { 0 }, lru_stamp: stamp };
        let set = &mut self.sets[s];
        if set.len() < self.assoc {
            set.push(new);
            return None;
        }
        let victim = set
            .iter()
            .enumerate()
            .min_by_key(|(_, l)| l.lru_stamp)
            .map(|(w, _)| w)
            .expect("full set is non-empty");
        let old = std::mem::replace(&mut set[victim], new);
        let ev = Eviction { set: s, line: old };
        if let Some(log) = &mut self.eviction_log {
            log.push(ev);
        }
        Some(ev)
    }

    pub fn invalidate(&mut self, block: u64) -> Option<CacheLine> {
        let (s, w) = self.find(block)?;
        Some(self.sets[s].swap_remove(w))
    }

    /// Clears and returns the dirty mask of a resident line.
    pub fn clean(&mut self, block: u64) -> u128 {
        match self.find(block) {
            Some((s, w)) => std::mem::take(&mut self.sets[s][w].dirty),
            None => 0,
        }
    }

    pub fn dirty_lines(&self) -> impl Iterator<Item = &CacheLine> {
        self.sets.iter().flatten().filter(|l| l.dirty != 0)
    }

    pub fn resident(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }
}
