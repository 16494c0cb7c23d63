//! Per-SM L1D caches, interconnect ports, shared L2 partitions, DRAM
//! channels and the persistent-memory controller. Timing is queueing based:
//! each shared resource is a FIFO server and requests carry timestamps.

pub mod cache;
pub mod config;
mod shadow;
mod wpq;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{block_of, sector_mask, Cache, CacheLine, Eviction, Probe, LINE_BYTES};
pub use config::{ConfigError, HierarchyConfig, InterconnectConfig, L1dConfig, L2Config, MemoryConfig};
pub use shadow::{Observation, ShadowDirectory};
pub use wpq::{PmController, Server};

use crate::persist::{PersistRecord, PersistSource, PersistTrace, PmImage, Writer};
use crate::trace::layout;
use crate::trace::MemOp;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierError {
    #[error("address {0:#x} outside configured PM/DRAM ranges")]
    OutOfRange(u64),
    #[error("non-temporal path is PM-only in this model (block {0:#x})")]
    NonTemporalDram(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum HitLevel {
    L1d,
    L2,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessResult {
    pub hit_level: HitLevel,
    pub latency_cycles: f64,
    /// When the issuing warp may consume the result (loads) or the request
    /// is performed at its destination (stores).
    pub done_at: f64,
    pub bytes_s2m: u64,
    pub bytes_m2s: u64,
    /// WPQ acceptance time; `None` while the bytes are only cached.
    pub durable_at: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    S2m,
    M2s,
}

/// One L1D-L2 interconnect transfer, kept for recounting byte totals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transfer {
    pub sm: u32,
    pub dir: Direction,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HierStats {
    pub l1d_hits: u64,
    pub l1d_misses: u64,
    pub l2_hits: u64,
    pub l2_misses: u64,
    pub bytes_s2m: u64,
    pub bytes_m2s: u64,
    pub nt_stores: u64,
    pub clwbs: u64,
    pub clwb_noops: u64,
    pub writebacks: u64,
}

#[derive(Debug, Clone)]
struct ArchBlock {
    data: [u8; 128],
    writers: [Writer; 128],
}

const PLAIN: Writer = Writer { source: PersistSource::Plain, tx: None };

pub struct Hierarchy {
    cfg: HierarchyConfig,
    l1: Vec<Cache>,
    l2: Vec<Cache>,
    s2m: Vec<Server>,
    m2s: Vec<Server>,
    nt_port: Vec<Server>,
    partitions: Vec<Server>,
    channels: Vec<Server>,
    pmc: PmController,
    /// Architectural (most recent) PM contents, the source of persisted bytes.
    arch: HashMap<u64, ArchBlock>,
    /// Per-SM completion times of outstanding L1D load misses.
    mshr: Vec<Vec<f64>>,
    l2_internal: f64,
    pub stats: HierStats,
    pub transfers: Option<Vec<Transfer>>,
}

fn flits(bytes: u64, flit: u64) -> u64 {
    bytes.div_ceil(flit).max(1)
}

impl Hierarchy {
    pub fn new(cfg: &HierarchyConfig) -> Self {
        let sms = cfg.sm_count as usize;
        let parts = cfg.l2.partitions as usize;
        let chans = cfg.memory.channels as usize;
        let fc = cfg.flit_cycles();
        let l2_internal = (cfg.l2.hit_cycles - 2.0 * cfg.interconnect.hop_cycles - cfg.l2.service_cycles - 2.0 * fc).max(0.0);
        Hierarchy {
            l1: (0..sms).map(|_| Cache::new(cfg.l1d_sets() as usize, cfg.l1d.assoc as usize, 1)).collect(),
            l2: (0..parts)
                .map(|_| Cache::new(cfg.l2_sets_per_partition() as usize, cfg.l2.assoc as usize, cfg.l2.partitions))
                .collect(),
            s2m: vec![Server::default(); sms],
            m2s: vec![Server::default(); sms],
            nt_port: vec![Server::default(); sms],
            partitions: vec![Server::default(); parts],
            channels: vec![Server::default(); chans],
            pmc: PmController::new(chans, cfg.memory.wpq_capacity, cfg.wpq_drain_cycles()),
            arch: HashMap::new(),
            mshr: vec![Vec::new(); sms],
            l2_internal,
            stats: HierStats::default(),
            transfers: None,
            cfg: cfg.clone(),
        }
    }

    pub fn with_transfer_log(mut self) -> Self {
        self.transfers = Some(Vec::new());
        self
    }

    pub fn with_eviction_logs(mut self) -> Self {
        self.l1 = self.l1.into_iter().map(Cache::with_eviction_log).collect();
        self.l2 = self.l2.into_iter().map(Cache::with_eviction_log).collect();
        self
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.cfg
    }

    pub fn l1(&self, sm: u32) -> &Cache {
        &self.l1[sm as usize]
    }

    pub fn l2_for(&self, block: u64) -> &Cache {
        &self.l2[self.partition_of(block)]
    }

    pub fn l2_partitions(&self) -> &[Cache] {
        &self.l2
    }

    pub fn partition_of(&self, block: u64) -> usize {
        ((block / LINE_BYTES) % self.cfg.l2.partitions) as usize
    }

    fn channel_of(&self, block: u64) -> usize {
        ((block / LINE_BYTES) % self.cfg.memory.channels) as usize
    }

    pub fn pm_controller(&self) -> &PmController {
        &self.pmc
    }

    fn check_range(block: u64) -> Result<bool, HierError> {
        if layout::is_pm(block) {
            Ok(true)
        } else if layout::is_dram(block) {
            Ok(false)
        } else {
            Err(HierError::OutOfRange(block))
        }
    }

    /// Records an architectural write. Bytes reach PM only through the
    /// persist paths, which copy from this state.
    pub fn write_arch(&mut self, addr: u64, value: u8, writer: Writer) {
        let b = block_of(addr);
        let blk = self.arch.entry(b).or_insert(ArchBlock { data: [0; 128], writers: [PLAIN; 128] });
        blk.data[(addr - b) as usize] = value;
        blk.writers[(addr - b) as usize] = writer;
    }

    pub fn read_arch(&self, addr: u64) -> u8 {
        let b = block_of(addr);
        self.arch.get(&b).map_or(0, |blk| blk.data[(addr - b) as usize])
    }

    fn record(&self, block: u64, mask: u128) -> PersistRecord {
        let mut rec = PersistRecord { timestamp: 0.0, seq: 0, block, mask, data: [0; 128], writers: Vec::new() };
        if let Some(blk) = self.arch.get(&block) {
            for i in 0..128 {
                if mask >> i & 1 == 1 {
                    rec.data[i] = blk.data[i];
                    let w = blk.writers[i];
                    if !rec.writers.contains(&w) {
                        rec.writers.push(w);
                    }
                }
            }
            rec.writers.sort();
        } else {
            rec.writers.push(PLAIN);
        }
        rec
    }

    fn transfer(&mut self, sm: u32, dir: Direction, bytes: u64) {
        match dir {
            Direction::S2m => self.stats.bytes_s2m += bytes,
            Direction::M2s => self.stats.bytes_m2s += bytes,
        }
        if let Some(log) = &mut self.transfers {
            log.push(Transfer { sm, dir, bytes });
        }
    }

    fn write_back(&mut self, t: f64, ev: Eviction) {
        if ev.line.dirty == 0 {
            return;
        }
        self.stats.writebacks += 1;
        let block = ev.line.tag;
        if layout::is_pm(block) {
            let rec = self.record(block, ev.line.dirty);
            self.pmc.enqueue(t, rec);
        } else {
            let ch = self.channel_of(block);
            let busy = self.cfg.channel_cycles(ev.line.dirty.count_ones() as u64);
            self.channels[ch].serve(t, busy);
        }
    }

    /// Occupies a DRAM channel for one block read issued off the critical
    /// path, such as an AGPM reservation-buffer refill.
    pub fn background_dram_read(&mut self, t: f64, block: u64) {
        let ch = self.channel_of(block);
        let busy = self.cfg.channel_cycles(LINE_BYTES);
        self.channels[ch].serve(t, busy);
    }

    /// Zero-load lower bound on how soon any store issued now can become
    /// durable.
    pub fn min_persist_latency(&self) -> f64 {
        self.cfg.flit_cycles() + self.cfg.interconnect.hop_cycles
    }

    /// L1D MSHRs still free on `sm` at time `now`.
    pub fn mshr_free(&mut self, sm: u32, now: f64) -> u64 {
        let q = &mut self.mshr[sm as usize];
        q.retain(|&done| done > now);
        self.cfg.l1d.mshrs.saturating_sub(q.len() as u64)
    }

    /// A load or store through the cache hierarchy. `mask` selects bytes of
    /// the 128-byte `block`.
    pub fn access_temporal(&mut self, t: f64, sm: u32, block: u64, mask: u128, op: MemOp) -> Result<AccessResult, HierError> {
        let is_pm = Self::check_range(block)?;
        let fc = self.cfg.flit_cycles();
        let flit = self.cfg.interconnect.flit_bytes;
        let hop = self.cfg.interconnect.hop_cycles;
        let smi = sm as usize;
        let part = self.partition_of(block);
        match op {
            MemOp::Load => {
                let missing = match self.l1[smi].probe(block, mask) {
                    Probe::Hit => {
                        self.l1[smi].touch(block);
                        self.stats.l1d_hits += 1;
                        let done = t + self.cfg.l1d.hit_cycles;
                        return Ok(AccessResult {
                            hit_level: HitLevel::L1d,
                            latency_cycles: done - t,
                            done_at: done,
                            bytes_s2m: 0,
                            bytes_m2s: 0,
                            durable_at: None,
                        });
                    }
                    Probe::SectorMiss { missing } => missing,
                    Probe::Miss => mask,
                };
                self.stats.l1d_misses += 1;
                let fetch = sector_mask(missing, self.cfg.sector_bytes);
                let req_bytes = flit;
                let t1 = self.s2m[smi].serve(t, fc) + hop;
                self.transfer(sm, Direction::S2m, req_bytes);
                let t2 = self.partitions[part].serve(t1, self.cfg.l2.service_cycles);
                let (level, ready) = match self.l2[part].probe(block, fetch) {
                    Probe::Hit => {
                        self.l2[part].touch(block);
                        self.stats.l2_hits += 1;
                        (HitLevel::L2, t2 + self.l2_internal)
                    }
                    probe => {
                        self.stats.l2_misses += 1;
                        let need = match probe {
                            Probe::SectorMiss { missing } => missing,
                            _ => fetch,
                        };
                        let ch = self.channel_of(block);
                        let read_ns = if is_pm { self.cfg.memory.nvm_read_ns } else { self.cfg.memory.dram_read_ns };
                        let busy = self.cfg.channel_cycles(need.count_ones() as u64);
                        let ready = self.channels[ch].serve(t2, busy) + self.cfg.ns_to_cycles(read_ns);
                        if let Some(ev) = self.l2[part].fill(block, need, false) {
                            self.write_back(t2, ev);
                        }
                        (HitLevel::Memory, ready)
                    }
                };
                let reply = fetch.count_ones() as u64;
                let n = flits(reply, flit);
                let done = self.m2s[smi].serve(ready, n as f64 * fc) + hop;
                self.transfer(sm, Direction::M2s, n * flit);
                // WEWN lines are never dirty in L1D, so victims are dropped.
                self.l1[smi].fill(block, fetch, false);
                self.mshr[smi].push(done);
                Ok(AccessResult {
                    hit_level: level,
                    latency_cycles: done - t,
                    done_at: done,
                    bytes_s2m: req_bytes,
                    bytes_m2s: n * flit,
                    durable_at: None,
                })
            }
            MemOp::Store => {
                let l1_hit = self.l1[smi].invalidate(block).is_some();
                if l1_hit {
                    self.stats.l1d_hits += 1;
                } else {
                    self.stats.l1d_misses += 1;
                }
                let n = flits(mask.count_ones() as u64, flit);
                let t1 = self.s2m[smi].serve(t, n as f64 * fc) + hop;
                self.transfer(sm, Direction::S2m, n * flit);
                let t2 = self.partitions[part].serve(t1, self.cfg.l2.service_cycles);
                let level = if self.l2[part].contains(block) {
                    self.stats.l2_hits += 1;
                    HitLevel::L2
                } else {
                    self.stats.l2_misses += 1;
                    HitLevel::Memory
                };
                if let Some(ev) = self.l2[part].fill(block, mask, true) {
                    self.write_back(t2, ev);
                }
                Ok(AccessResult {
                    hit_level: if l1_hit { HitLevel::L1d } else { level },
                    latency_cycles: t2 - t,
                    done_at: t2,
                    bytes_s2m: n * flit,
                    bytes_m2s: 0,
                    durable_at: None,
                })
            }
        }
    }

    /// A store that bypasses both caches and goes straight to the WPQ. Any
    /// dirty L2 bytes of the block travel with it so a later write-back can
    /// never overwrite the newer value.
    pub fn store_nontemporal(&mut self, t: f64, sm: u32, block: u64, mask: u128) -> Result<AccessResult, HierError> {
        if !Self::check_range(block)? {
            return Err(HierError::NonTemporalDram(block));
        }
        let fc = self.cfg.flit_cycles();
        let flit = self.cfg.interconnect.flit_bytes;
        let n = flits(mask.count_ones() as u64, flit);
        let arrive = self.nt_port[sm as usize].serve(t, n as f64 * fc) + self.cfg.interconnect.hop_cycles;
        let part = self.partition_of(block);
        let absorbed = self.l2[part].clean(block);
        if self.cfg.nt_invalidate {
            self.l2[part].invalidate(block);
            for l1 in &mut self.l1 {
                l1.invalidate(block);
            }
        }
        self.stats.nt_stores += 1;
        let rec = self.record(block, mask | absorbed);
        let durable = self.pmc.enqueue(arrive, rec);
        Ok(AccessResult {
            hit_level: HitLevel::Memory,
            latency_cycles: durable - t,
            done_at: durable,
            bytes_s2m: 0,
            bytes_m2s: 0,
            durable_at: Some(durable),
        })
    }

    /// Writes back the dirty bytes of `block` (if any) to the WPQ, leaving
    /// the line resident and clean.
    pub fn clwb(&mut self, t: f64, sm: u32, block: u64) -> Result<AccessResult, HierError> {
        Self::check_range(block)?;
        let fc = self.cfg.flit_cycles();
        let flit = self.cfg.interconnect.flit_bytes;
        let t1 = self.s2m[sm as usize].serve(t, fc) + self.cfg.interconnect.hop_cycles;
        self.transfer(sm, Direction::S2m, flit);
        let part = self.partition_of(block);
        let t2 = self.partitions[part].serve(t1, self.cfg.l2.service_cycles);
        self.stats.clwbs += 1;
        let dirty = self.l2[part].clean(block);
        if dirty == 0 {
            self.stats.clwb_noops += 1;
            return Ok(AccessResult {
                hit_level: HitLevel::L2,
                latency_cycles: t2 - t,
                done_at: t2,
                bytes_s2m: flit,
                bytes_m2s: 0,
                durable_at: None,
            });
        }
        let durable = if layout::is_pm(block) {
            let rec = self.record(block, dirty);
            self.pmc.enqueue(t2, rec)
        } else {
            let ch = self.channel_of(block);
            let busy = self.cfg.channel_cycles(dirty.count_ones() as u64);
            self.channels[ch].serve(t2, busy)
        };
        Ok(AccessResult {
            hit_level: HitLevel::L2,
            latency_cycles: durable - t,
            done_at: durable,
            bytes_s2m: flit,
            bytes_m2s: 0,
            durable_at: Some(durable),
        })
    }

    /// Completion time of an sfence issued at `now` by a CTA whose
    /// outstanding persists become durable at the given times.
    pub fn sfence(&self, now: f64, pending: impl IntoIterator<Item = f64>) -> f64 {
        pending.into_iter().fold(now + self.cfg.fence_cycles, f64::max)
    }

    /// Bytes currently dirty in L2 for PM blocks.
    pub fn dirty_pm_bytes(&self) -> u64 {
        self.l2
            .iter()
            .flat_map(|c| c.dirty_lines())
            .filter(|l| layout::is_pm(l.tag))
            .map(|l| l.dirty.count_ones() as u64)
            .sum()
    }

    pub fn eviction_logs(&self) -> impl Iterator<Item = (&'static str, usize, &[Eviction])> {
        let l1 = self.l1.iter().enumerate().filter_map(|(i, c)| c.eviction_log.as_deref().map(|e| ("l1d", i, e)));
        let l2 = self.l2.iter().enumerate().filter_map(|(i, c)| c.eviction_log.as_deref().map(|e| ("l2", i, e)));
        l1.chain(l2)
    }

    /// Drains every WPQ. Returns the ordered persist trace, the drained
    /// image and the (entered, drained) byte counts.
    pub fn finish(self) -> (PersistTrace, PmImage, u64, u64) {
        self.pmc.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::TxKey;

    const A: u64 = layout::PM_BASE;

    fn h() -> Hierarchy {
        Hierarchy::new(&HierarchyConfig::default())
    }

    #[test]
    fn cold_store_allocates_dirty_in_l2() {
        let mut h = h();
        let r = h.access_temporal(0.0, 0, A, 0xF, MemOp::Store).unwrap();
        assert_eq!(r.durable_at, None);
        assert_eq!(h.l2_for(A).line(A).unwrap().dirty, 0xF);
        assert!(!h.l1(0).contains(A));
    }

    #[test]
    fn load_after_store_hits_l2_then_l1() {
        let mut h = h();
        h.access_temporal(0.0, 0, A, 0xF, MemOp::Store).unwrap();
        let r = h.access_temporal(1000.0, 0, A, 0xF, MemOp::Load).unwrap();
        assert_eq!(r.hit_level, HitLevel::Memory, "store wrote 4 bytes, the sector fetch needs 32");
        let r = h.access_temporal(5000.0, 1, A, 0xF, MemOp::Load).unwrap();
        assert_eq!(r.hit_level, HitLevel::L2);
        assert_eq!(r.bytes_m2s, 32);
        assert_eq!(r.latency_cycles.round(), 190.0);
        let r = h.access_temporal(9000.0, 1, A, 0xF, MemOp::Load).unwrap();
        assert_eq!(r.hit_level, HitLevel::L1d);
        assert_eq!(r.latency_cycles, 28.0);
    }

    #[test]
    fn latency_grows_with_depth() {
        let mut h = h();
        let mem = h.access_temporal(0.0, 0, A, 0xF, MemOp::Load).unwrap();
        let l1 = h.access_temporal(1e4, 0, A, 0xF, MemOp::Load).unwrap();
        let l2 = h.access_temporal(2e4, 1, A, 0xF, MemOp::Load).unwrap();
        assert!(l1.latency_cycles < l2.latency_cycles && l2.latency_cycles < mem.latency_cycles);
    }

    #[test]
    fn clwb_merges_two_stores() {
        let mut h = h();
        let w = Writer { source: PersistSource::Data, tx: Some(TxKey { kernel: 0, cta: 0, tx: 0 }) };
        h.write_arch(A, 1, w);
        h.write_arch(A + 64, 2, w);
        h.access_temporal(0.0, 0, A, 1, MemOp::Store).unwrap();
        h.access_temporal(1.0, 0, A, 1 << 64, MemOp::Store).unwrap();
        let r = h.clwb(10.0, 0, A).unwrap();
        assert!(r.durable_at.is_some());
        let (trace, img, _, _) = h.finish();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace.records[0].mask, 1 | 1 << 64);
        assert_eq!((img.read(A), img.read(A + 64)), (1, 2));
    }

    #[test]
    fn clwb_of_clean_block_is_noop() {
        let mut h = h();
        let r = h.clwb(0.0, 0, A).unwrap();
        assert_eq!(r.durable_at, None);
        assert_eq!(h.stats.clwb_noops, 1);
        assert!(h.finish().0.is_empty());
    }

    #[test]
    fn nt_store_bypasses_caches() {
        let mut h = h();
        let r = h.store_nontemporal(0.0, 0, A, 0xF).unwrap();
        assert!(r.durable_at.unwrap() > 0.0);
        assert!(!h.l2_for(A).contains(A));
        assert_eq!(h.stats.bytes_s2m + h.stats.bytes_m2s, 0);
    }

    #[test]
    fn nt_store_absorbs_dirty_l2_bytes() {
        let mut h = h();
        h.access_temporal(0.0, 0, A, 0xF0, MemOp::Store).unwrap();
        h.store_nontemporal(10.0, 0, A, 0xF).unwrap();
        assert_eq!(h.dirty_pm_bytes(), 0);
        let (trace, ..) = h.finish();
        assert_eq!(trace.records[0].mask, 0xFF);
    }

    #[test]
    fn nt_to_dram_rejected() {
        let mut h = h();
        assert!(matches!(h.store_nontemporal(0.0, 0, layout::DRAM_BASE, 1), Err(HierError::NonTemporalDram(_))));
        assert!(matches!(h.access_temporal(0.0, 0, 0x40, 1, MemOp::Load), Err(HierError::OutOfRange(_))));
    }

    #[test]
    fn sfence_rules() {
        let h = h();
        assert_eq!(h.sfence(100.0, []), 120.0);
        assert_eq!(h.sfence(100.0, [5000.0]), 5000.0);
    }

    #[test]
    fn transfer_log_recounts_totals() {
        let mut h = h().with_transfer_log();
        for i in 0..50u64 {
            let op = if i % 3 == 0 { MemOp::Store } else { MemOp::Load };
            h.access_temporal(i as f64 * 10.0, (i % 4) as u32, A + (i % 7) * 128, 0xFFFF << (i % 5 * 8), op).unwrap();
        }
        h.clwb(1e4, 0, A).unwrap();
        let log = h.transfers.as_ref().unwrap();
        let s2m: u64 = log.iter().filter(|t| t.dir == Direction::S2m).map(|t| t.bytes).sum();
        let m2s: u64 = log.iter().filter(|t| t.dir == Direction::M2s).map(|t| t.bytes).sum();
        assert_eq!((s2m, m2s), (h.stats.bytes_s2m, h.stats.bytes_m2s));
        assert!(log.iter().all(|t| t.bytes % 32 == 0));
    }
}
