//! Synthetic traces, one family per locality reason (and one per
//! performance type). Each family is built around the access pattern that
//! produces its reason's counter signature and its path preference.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::layout::{DRAM_BASE, PM_BASE};
use super::{KernelMeta, MemInstr, MemOp, Role, Target, ThreadAccess, Trace, TraceEvent};
use crate::agpm::{GpuType, Reason};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Reason(Reason),
    Type(GpuType),
}

impl Family {
    /// The reason family a type family is built from.
    pub fn reason(self) -> Reason {
        match self {
            Family::Reason(r) => r,
            Family::Type(GpuType::I) => Reason::A,
            Family::Type(GpuType::II) => Reason::B,
            Family::Type(GpuType::III) => Reason::F,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Reason(r) => write!(f, "{r}"),
            Family::Type(t) => write!(f, "{t}"),
        }
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<Reason>()
            .map(Family::Reason)
            .or_else(|_| s.parse::<GpuType>().map(Family::Type))
            .map_err(|_| format!("unknown family {s:?} (expected a..h or I, II, III)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub ctas: u32,
    pub warps: u32,
    /// Log-update segment requests in the whole trace.
    pub log_updates: u64,
    /// Data-update store instructions in the whole trace (spread over the
    /// transactions, capped by each one's log capacity).
    pub data_updates: u64,
    /// Distinct blocks a CTA cycles through before reusing one.
    pub reuse_distance: u32,
    /// Byte stride between threads of the plain streaming loads.
    pub stride: u32,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { ctas: 40, warps: 8, log_updates: 4000, data_updates: 1000, reuse_distance: 4, stride: 4 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GenError {
    #[error("unrealizable family {family}: {why}")]
    Unrealizable { family: Family, why: String },
    #[error("a phased trace needs at least one phase")]
    NoPhases,
}

const MAX_CTAS: u32 = 4096;
const MAX_REUSE: u32 = 256;
const INPUT_BASE: u64 = PM_BASE + 0x10_0000_0000;
const LOG_BASE: u64 = PM_BASE + 0x20_0000_0000;
const FRESH_BASE: u64 = PM_BASE + 0x40_0000_0000;

/// Per-family transaction shape.
struct Shape {
    /// Log segments per full transaction.
    logs_per_tx: u64,
    /// Plain streaming-load instructions per transaction.
    stream_per_tx: u32,
    min_warps: u32,
}

fn shape(r: Reason) -> Shape {
    match r {
        Reason::A | Reason::C => Shape { logs_per_tx: 8, stream_per_tx: 16, min_warps: 2 },
        Reason::D => Shape { logs_per_tx: 9, stream_per_tx: 16, min_warps: 2 },
        Reason::B | Reason::H => Shape { logs_per_tx: 4, stream_per_tx: 0, min_warps: 1 },
        Reason::E => Shape { logs_per_tx: 1, stream_per_tx: 64, min_warps: 1 },
        Reason::F => Shape { logs_per_tx: 4, stream_per_tx: 8, min_warps: 1 },
        Reason::G => Shape { logs_per_tx: 6, stream_per_tx: 16, min_warps: 2 },
    }
}

struct Builder {
    rng: ChaCha8Rng,
    events: Vec<TraceEvent>,
    ctas: u32,
    fresh: u64,
    dram: u64,
    stride: u32,
}

impl Builder {
    #[allow(clippy::too_many_arguments)]
    fn mem(&mut self, cta: u32, warp: u32, op: MemOp, role: Role, target: Target, tx: Option<u32>, threads: Vec<ThreadAccess>) {
        let instr = MemInstr { op, role, warp_id: warp, target, tx_id: tx, threads };
        self.events.push(TraceEvent::Mem { kernel_id: 0, cta_id: cta, instr });
    }

    /// Per-CTA block `i` of a region, interleaved so CTAs spread over sets.
    fn slot(&self, base: u64, cta: u32, i: u64) -> u64 {
        base + (i * self.ctas as u64 + cta as u64) * 128
    }

    fn fresh_block(&mut self) -> u64 {
        let b = self.fresh;
        self.fresh += 128;
        b
    }

    fn stream_load(&mut self, cta: u32, warp: u32) {
        let base = self.dram;
        let span = 32 * self.stride as u64;
        self.dram += span.div_ceil(128) * 128;
        self.mem(cta, warp, MemOp::Load, Role::Plain, Target::Dram, None, words(base, 32, 4, self.stride as u64));
    }

    /// `n` data updates of 16 bytes, each in its own fresh block.
    fn data(&mut self, cta: u32, tx: u32, n: u64) {
        for _ in 0..n {
            let off = self.rng.gen_range(0..8u64) * 16;
            let b = self.fresh_block();
            self.mem(cta, 0, MemOp::Store, Role::DataUpdate, Target::Pm, Some(tx), words(b + off, 4, 4, 4));
        }
    }
}

/// `n` threads of `size` bytes starting at `base`, `stride` apart.
fn words(base: u64, n: u64, size: u8, stride: u64) -> Vec<ThreadAccess> {
    (0..n).map(|i| ThreadAccess::new(base + i * stride, size)).collect()
}

fn unrealizable(family: Family, why: impl Into<String>) -> GenError {
    GenError::Unrealizable { family, why: why.into() }
}

/// Generates a one-kernel trace for `family`. Deterministic in `seed`.
pub fn gen_synthetic(family: Family, params: &GenParams, seed: u64) -> Result<Trace, GenError> {
    gen_phased(&[(family, *params)], seed)
}

/// Generates one kernel in which every CTA runs each phase's transactions
/// in turn. All phases must use the same CTA count.
pub fn gen_phased(phases: &[(Family, GenParams)], seed: u64) -> Result<Trace, GenError> {
    let Some(&(_, p0)) = phases.first() else {
        return Err(GenError::NoPhases);
    };
    let mut plans: Vec<Plan> = Vec::with_capacity(phases.len());
    for &(family, p) in phases {
        let plan = check(family, &p)?;
        if plans.first().is_some_and(|f| f.ctas != plan.ctas) {
            return Err(unrealizable(family, "every phase needs the same effective CTA count"));
        }
        plans.push(plan);
    }
    let ctas = plans[0].ctas;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        events: Vec::new(),
        ctas,
        fresh: FRESH_BASE,
        dram: DRAM_BASE,
        stride: p0.stride,
    };
    let shared = phases.iter().any(|(f, _)| f.reason() == Reason::H);
    let mut meta = KernelMeta::new(0, shared, ctas);
    meta.name = phases.iter().fold(String::from("synthetic"), |n, (f, _)| format!("{n}_{f}"));
    meta.log_hint = Some(phases.iter().map(|(_, p)| p.log_updates).sum());
    b.events.push(TraceEvent::KernelBegin(meta));

    for cta in 0..ctas {
        let mut t0 = 0;
        for (&(_, p), pl) in phases.iter().zip(&plans) {
            b.stride = p.stride;
            let lo = cta as u64 * pl.per_cta;
            let hi = ((cta as u64 + 1) * pl.per_cta).min(pl.txs);
            for g in lo..hi {
                let logs = (p.log_updates - g * pl.shape.logs_per_tx).min(pl.shape.logs_per_tx);
                let t = t0 + g - lo;
                let tx = t as u32;
                b.events.push(TraceEvent::TxBegin { kernel_id: 0, cta_id: cta, tx_id: tx });
                for i in 0..pl.shape.stream_per_tx {
                    b.stream_load(cta, i % p.warps);
                }
                let log_bytes = body(&mut b, pl.reason, cta, t, logs, &p);
                b.events.push(TraceEvent::SyncThreads { kernel_id: 0, cta_id: cta });
                // Each 16-byte update needs a 32-byte undo entry.
                b.data(cta, tx, pl.dpt.min(log_bytes / 32));
                b.events.push(TraceEvent::TxCommit { kernel_id: 0, cta_id: cta, tx_id: tx });
            }
            t0 += hi.saturating_sub(lo);
        }
    }
    b.events.push(TraceEvent::KernelEnd { kernel_id: 0 });
    Ok(Trace { events: b.events })
}

struct Plan {
    reason: Reason,
    shape: Shape,
    txs: u64,
    ctas: u32,
    per_cta: u64,
    dpt: u64,
}

fn check(family: Family, p: &GenParams) -> Result<Plan, GenError> {
    let reason = family.reason();
    let sh = shape(reason);
    if p.ctas == 0 || p.warps == 0 || p.log_updates == 0 || p.reuse_distance == 0 || p.stride == 0 {
        return Err(unrealizable(family, "ctas, warps, log_updates, reuse_distance and stride must be positive"));
    }
    if p.ctas > MAX_CTAS || p.reuse_distance > MAX_REUSE || p.warps > 64 || p.stride > 128 {
        return Err(unrealizable(
            family,
            format!("limits: ctas <= {MAX_CTAS}, warps <= 64, reuse_distance <= {MAX_REUSE}, stride <= 128"),
        ));
    }
    if p.warps < sh.min_warps {
        return Err(unrealizable(family, format!("needs at least {} warps per CTA", sh.min_warps)));
    }
    if reason == Reason::E && p.log_updates > 100 {
        return Err(unrealizable(family, "reason e needs at most 100 log updates"));
    }
    if reason != Reason::E && p.log_updates <= 100 {
        return Err(unrealizable(family, "more than 100 log updates are needed to leave reason e"));
    }
    let txs = p.log_updates.div_ceil(sh.logs_per_tx);
    let ctas = (p.ctas as u64).min(txs) as u32;
    Ok(Plan { reason, txs, ctas, per_cta: txs.div_ceil(ctas as u64), dpt: (p.data_updates / txs).max(1), shape: sh })
}

/// Emits the loads and `logs` log segments of one transaction and returns
/// the log capacity in bytes.
fn body(b: &mut Builder, r: Reason, cta: u32, t: u64, logs: u64, p: &GenParams) -> u64 {
    let tx = Some(t as u32);
    let w = p.warps;
    let rd = p.reuse_distance as u64;
    let log = |b: &mut Builder, warp: u32, threads: Vec<ThreadAccess>| {
        b.mem(cta, warp, MemOp::Store, Role::LogUpdate, Target::Pm, tx, threads)
    };
    match r {
        // Data reuse in L1D; logs are partial stores that merge in L2 and
        // never touch a line L1D holds.
        Reason::A | Reason::C | Reason::D => {
            if r != Reason::C {
                for k in 0..2 {
                    let x = b.slot(INPUT_BASE, cta, (2 * t + k) % (2 * rd));
                    let bytes = if r == Reason::D { 16 } else { 32 };
                    for _ in 0..2 {
                        b.mem(cta, 1, MemOp::Load, Role::Plain, Target::Pm, None, words(x, bytes, 4, 4));
                    }
                }
            }
            let slot = b.slot(LOG_BASE, cta, t % rd);
            let merged = logs.min(8);
            for i in 0..merged {
                // Reason c closes its log by rewriting the header entry.
                let off = if r == Reason::C && i > 0 && i + 1 == merged { 0 } else { i * 16 };
                log(b, (i % w as u64) as u32, words(slot + off, 4, 4, 4));
            }
            // Capacity counts distinct bytes; c's closing rewrite adds none.
            let distinct = if r == Reason::C && merged > 1 { merged - 1 } else { merged };
            let mut bytes = distinct * 16;
            // A small share of logs land in a block L1D holds, re-written
            // every eighth transaction.
            if r == Reason::D && logs > merged {
                if t.is_multiple_of(8) {
                    let x = b.slot(INPUT_BASE, cta, 0);
                    log(b, 1, words(x + 64, 8, 4, 4));
                } else {
                    let s = b.slot(LOG_BASE, cta, rd + t % rd);
                    log(b, 1, words(s, 8, 4, 4));
                }
                bytes += 32;
            }
            bytes
        }
        // Log slots share lines with data the warp re-reads right after the
        // log store, which a temporal store evicts from L1D. Each round
        // also waits on two streaming loads, so the WPQ stays unsaturated
        // and the reload latency is what separates the paths.
        Reason::B | Reason::H => {
            for k in 0..logs {
                let x = b.slot(INPUT_BASE, cta, (logs * t + k) % (2 * rd));
                b.stream_load(cta, 0);
                b.stream_load(cta, 0);
                b.mem(cta, 0, MemOp::Load, Role::Plain, Target::Pm, None, words(x, 16, 4, 4));
                log(b, 0, words(x + 64, 16, 4, 4));
                b.mem(cta, 0, MemOp::Load, Role::Plain, Target::Pm, None, words(x, 16, 4, 4));
            }
            logs * 64
        }
        // A few logs into fresh full blocks.
        Reason::E => {
            for _ in 0..logs {
                let s = b.fresh_block();
                log(b, 0, words(s, 32, 4, 4));
            }
            logs * 128
        }
        // Every block touched exactly once.
        Reason::F => {
            for i in 0..logs {
                let s = b.fresh_block();
                log(b, (i % w as u64) as u32, words(s, 32, 4, 4));
            }
            logs * 128
        }
        // A loader warp reads the head of a fresh line; logs fill the rest
        // of that line piece by piece, each after a reload.
        Reason::G => {
            let mut done = 0;
            while done < logs {
                let x = b.fresh_block();
                for j in 0..3.min(logs - done) {
                    b.mem(cta, 1, MemOp::Load, Role::Plain, Target::Pm, None, words(x, 8, 4, 4));
                    log(b, 0, words(x + 32 + 32 * j, 8, 4, 4));
                    done += 1;
                }
            }
            logs * 32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::validate;

    fn small() -> GenParams {
        GenParams { ctas: 4, log_updates: 400, data_updates: 100, ..GenParams::default() }
    }

    #[test]
    fn every_family_validates() {
        for r in Reason::ALL {
            let p = if r == Reason::E { GenParams { log_updates: 50, ..small() } } else { small() };
            let t = gen_synthetic(Family::Reason(r), &p, 1).unwrap();
            assert!(validate(&t).is_empty(), "{r}: {:?}", validate(&t));
            let logs: usize = t.mem_instrs().filter(|i| i.is_log()).count();
            assert_eq!(logs as u64, p.log_updates, "{r}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let f = Family::Reason(Reason::A);
        assert_eq!(gen_synthetic(f, &small(), 3).unwrap(), gen_synthetic(f, &small(), 3).unwrap());
        assert_ne!(gen_synthetic(f, &small(), 3).unwrap(), gen_synthetic(f, &small(), 4).unwrap());
    }

    #[test]
    fn unrealizable_params() {
        let b = Family::Reason(Reason::B);
        assert!(matches!(gen_synthetic(b, &GenParams { log_updates: 0, ..small() }, 0), Err(GenError::Unrealizable { .. })));
        let e = Family::Reason(Reason::E);
        assert!(gen_synthetic(e, &small(), 0).is_err());
        let g = Family::Reason(Reason::G);
        assert!(gen_synthetic(g, &GenParams { warps: 1, ..small() }, 0).is_err());
    }

    #[test]
    fn family_names() {
        assert_eq!("b".parse::<Family>().unwrap(), Family::Reason(Reason::B));
        assert_eq!("II".parse::<Family>().unwrap(), Family::Type(GpuType::II));
        assert!("z".parse::<Family>().is_err());
    }
}
