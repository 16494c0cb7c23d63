//! Reference models the simulator is checked against. Each is the most
//! direct implementation of its rule, with no sets, spills or running sums.

#![allow(dead_code)]

use std::collections::HashMap;

use agpm_core::agpm::{Agpm, AgpmOptions, BufferGeometry, LocalityMetrics};
use agpm_core::hierarchy::{Cache, HierarchyConfig, Observation, ShadowDirectory};
use agpm_core::trace::MemOp;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// LRU as an explicit recency list per set; the front is the victim.
pub struct LruRef {
    sets: Vec<Vec<u64>>,
    assoc: usize,
}

impl LruRef {
    pub fn new(sets: usize, assoc: usize) -> Self {
        LruRef { sets: vec![Vec::new(); sets], assoc }
    }

    fn set(&self, block: u64) -> usize {
        ((block / 128) % self.sets.len() as u64) as usize
    }

    /// Allocates or refreshes `block`; returns the evicted block, if any.
    pub fn fill(&mut self, block: u64) -> Option<u64> {
        let assoc = self.assoc;
        let s = self.set(block);
        let set = &mut self.sets[s];
        if let Some(i) = set.iter().position(|&b| b == block) {
            set.remove(i);
            set.push(block);
            return None;
        }
        let victim = if set.len() == assoc { Some(set.remove(0)) } else { None };
        set.push(block);
        victim
    }

    pub fn touch(&mut self, block: u64) {
        let s = self.set(block);
        let set = &mut self.sets[s];
        if let Some(i) = set.iter().position(|&b| b == block) {
            set.remove(i);
            set.push(block);
        }
    }

    pub fn invalidate(&mut self, block: u64) {
        let s = self.set(block);
        self.sets[s].retain(|&b| b != block);
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CacheOp {
    Fill(u64),
    Touch(u64),
    Invalidate(u64),
}

pub fn random_cache_ops(seed: u64, n: usize, blocks: u64) -> Vec<CacheOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let b = rng.gen_range(0..blocks) * 128;
            match rng.gen_range(0..10) {
                0..=6 => CacheOp::Fill(b),
                7..=8 => CacheOp::Touch(b),
                _ => CacheOp::Invalidate(b),
            }
        })
        .collect()
}

/// Evicted tags from the simulator's cache and from the reference model.
pub fn eviction_sequences(ops: &[CacheOp], sets: usize, assoc: usize) -> (Vec<u64>, Vec<u64>) {
    let mut sim = Cache::new(sets, assoc, 1).with_eviction_log();
    let mut reference = LruRef::new(sets, assoc);
    let mut expected = Vec::new();
    for &op in ops {
        match op {
            CacheOp::Fill(b) => {
                sim.fill(b, 1, false);
                expected.extend(reference.fill(b));
            }
            CacheOp::Touch(b) => {
                sim.touch(b);
                reference.touch(b);
            }
            CacheOp::Invalidate(b) => {
                sim.invalidate(b);
                reference.invalidate(b);
            }
        }
    }
    let got = sim.eviction_log.unwrap().iter().map(|e| e.line.tag).collect();
    (got, expected)
}

/// Unbounded per-block counters, keyed by (level, is_log_way, block).
#[derive(Default)]
pub struct LocalityOracle {
    counters: HashMap<(u8, bool, u64), ([u64; 128], u64)>,
}

impl LocalityOracle {
    fn bump(&mut self, key: (u8, bool, u64), mask: u128, new_bytes_count: bool) {
        let (bytes, block) = self.counters.entry(key).or_insert(([0; 128], 0));
        for (i, c) in bytes.iter_mut().enumerate() {
            if mask >> i & 1 == 1 && (*c > 0 || new_bytes_count) {
                *c += 1;
            }
        }
        *block += 1;
    }

    /// A request that missed (creating) or hit at one level.
    fn level(&mut self, lvl: u8, hit: bool, block: u64, mask: u128, is_pm: bool, is_log: bool) {
        for log_way in [false, true] {
            if log_way && !(is_log && is_pm) {
                continue;
            }
            let key = (lvl, log_way, block);
            let present = self.counters.contains_key(&key);
            match (hit, present) {
                (true, true) => self.bump(key, mask, false),
                (_, false) if is_pm => self.bump(key, mask, true),
                _ => {}
            }
        }
    }

    pub fn observe(&mut self, obs: Observation, block: u64, mask: u128, is_pm: bool, is_log: bool) {
        self.level(1, obs.l1_hit, block, mask, is_pm, is_log);
        if let Some(hit) = obs.l2_hit {
            self.level(2, hit, block, mask, is_pm, is_log);
        }
    }

    /// Re-hit sums: a counter at `c` contributes `c - 1`.
    pub fn metrics(&self, all: u64, log: u64) -> LocalityMetrics {
        let mut t = [[0u64; 2]; 3];
        let mut s = [[0u64; 2]; 3];
        for (&(lvl, log_way, _), (bytes, block)) in &self.counters {
            let tb: u64 = bytes.iter().map(|&c| c.saturating_sub(1)).sum();
            t[lvl as usize][log_way as usize] += tb;
            s[lvl as usize][log_way as usize] += tb + block.saturating_sub(1);
        }
        LocalityMetrics {
            l1d_t_all: t[1][0],
            l1d_t_log: t[1][1],
            l1d_s_all: s[1][0],
            l1d_s_log: s[1][1],
            l2_t_all: t[2][0],
            l2_t_log: t[2][1],
            l2_s_all: s[2][0],
            l2_s_log: s[2][1],
            all,
            log,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Access {
    pub sm: u32,
    pub block: u64,
    pub mask: u128,
    pub op: MemOp,
    pub is_pm: bool,
    pub is_log: bool,
}

/// Random segment requests over a small block pool so hits are common.
pub fn random_accesses(seed: u64, n: usize) -> Vec<Access> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = rng.gen_range(8..512u64);
    (0..n)
        .map(|_| {
            let lo = rng.gen_range(0..128u32);
            let len = rng.gen_range(1..=(128 - lo));
            let mask = if len == 128 { u128::MAX } else { ((1u128 << len) - 1) << lo };
            let is_log = rng.gen_bool(0.3);
            Access {
                sm: rng.gen_range(0..4),
                block: rng.gen_range(0..pool) * 128,
                mask,
                op: if is_log || rng.gen_bool(0.3) { MemOp::Store } else { MemOp::Load },
                is_pm: is_log || rng.gen_bool(0.8),
                is_log,
            }
        })
        .collect()
}

/// Feeds the stream through a shadow directory into both the AGPM unit
/// (small, non-saturating buffers, so spills and refills happen) and the
/// oracle.
pub fn counters_vs_oracle(accesses: &[Access], sets: usize) -> (Agpm, LocalityOracle, u64, u64) {
    let geometry = BufferGeometry { sets, counter_bits: 5, saturate: false };
    let mut agpm = Agpm::new(AgpmOptions { geometry, ..AgpmOptions::default() });
    let mut oracle = LocalityOracle::default();
    let mut dir = ShadowDirectory::new(&HierarchyConfig::default());
    let (mut all, mut log) = (0, 0);
    for a in accesses {
        let obs = dir.observe(a.sm, a.block, a.mask, a.op);
        all += 1;
        log += a.is_log as u64;
        agpm.count_request(a.is_log);
        agpm.observe(obs, a.block, a.mask, a.is_pm, a.is_log);
        oracle.observe(obs, a.block, a.mask, a.is_pm, a.is_log);
    }
    (agpm, oracle, all, log)
}
