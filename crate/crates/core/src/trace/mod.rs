//! Workload trace model: kernels, CTAs, transactions and warp-level memory
//! instructions, plus parsing, coalescing, validation and synthetic
//! generation.

mod coalesce;
mod gen;
pub mod layout;
mod parse;
mod validate;

pub use coalesce::{coalesce, CoalescedInstr, SegmentTx, SEGMENT_BYTES};
pub use gen::{gen_phased, gen_synthetic, Family, GenError, GenParams};
pub use parse::{parse_str, parse_trace, serialize, ParseError};
pub use validate::{validate, Violation};

use serde::{Deserialize, Serialize};

pub const DEFAULT_WARP_SIZE: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub kernel_id: u32,
    pub name: String,
    pub uses_shared_memory: bool,
    pub cta_count: u32,
    pub warp_size: u32,
    /// Expected number of log updates, used to size the first AGPM period.
    pub log_hint: Option<u64>,
}

impl KernelMeta {
    pub fn new(kernel_id: u32, uses_shared_memory: bool, cta_count: u32) -> Self {
        KernelMeta {
            kernel_id,
            name: format!("k{kernel_id}"),
            uses_shared_memory,
            cta_count,
            warp_size: DEFAULT_WARP_SIZE,
            log_hint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MemOp {
    Load,
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    LogUpdate,
    DataUpdate,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Target {
    Pm,
    Dram,
}

/// One thread's access: byte address and size in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ThreadAccess {
    pub addr: u64,
    pub size: u8,
}

impl ThreadAccess {
    pub fn new(addr: u64, size: u8) -> Self {
        ThreadAccess { addr, size }
    }

    pub fn end(&self) -> u64 {
        self.addr + self.size as u64
    }
}

/// A warp-level memory instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemInstr {
    pub op: MemOp,
    pub role: Role,
    pub warp_id: u32,
    pub target: Target,
    pub tx_id: Option<u32>,
    pub threads: Vec<ThreadAccess>,
}

impl MemInstr {
    pub fn is_log(&self) -> bool {
        self.role == Role::LogUpdate
    }

    pub fn is_pm(&self) -> bool {
        self.target == Target::Pm
    }

    /// Bytes touched, deduplicated.
    pub fn byte_set(&self) -> std::collections::BTreeSet<u64> {
        self.threads.iter().flat_map(|t| t.addr..t.end()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    KernelBegin(KernelMeta),
    KernelEnd { kernel_id: u32 },
    TxBegin { kernel_id: u32, cta_id: u32, tx_id: u32 },
    TxCommit { kernel_id: u32, cta_id: u32, tx_id: u32 },
    Fence { kernel_id: u32, cta_id: u32 },
    SyncThreads { kernel_id: u32, cta_id: u32 },
    Mem { kernel_id: u32, cta_id: u32, instr: MemInstr },
}

impl TraceEvent {
    pub fn kernel_id(&self) -> u32 {
        match self {
            TraceEvent::KernelBegin(k) => k.kernel_id,
            TraceEvent::KernelEnd { kernel_id }
            | TraceEvent::TxBegin { kernel_id, .. }
            | TraceEvent::TxCommit { kernel_id, .. }
            | TraceEvent::Fence { kernel_id, .. }
            | TraceEvent::SyncThreads { kernel_id, .. }
            | TraceEvent::Mem { kernel_id, .. } => *kernel_id,
        }
    }

    pub fn cta_id(&self) -> Option<u32> {
        match self {
            TraceEvent::KernelBegin(_) | TraceEvent::KernelEnd { .. } => None,
            TraceEvent::TxBegin { cta_id, .. }
            | TraceEvent::TxCommit { cta_id, .. }
            | TraceEvent::Fence { cta_id, .. }
            | TraceEvent::SyncThreads { cta_id, .. }
            | TraceEvent::Mem { cta_id, .. } => Some(*cta_id),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn kernels(&self) -> impl Iterator<Item = &KernelMeta> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::KernelBegin(k) => Some(k),
            _ => None,
        })
    }

    pub fn mem_instrs(&self) -> impl Iterator<Item = &MemInstr> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Mem { instr, .. } => Some(instr),
            _ => None,
        })
    }

    /// Appends another trace's events, renumbering its kernels to follow ours.
    pub fn concat(mut self, other: Trace) -> Trace {
        let offset = self.kernels().map(|k| k.kernel_id + 1).max().unwrap_or(0);
        for mut ev in other.events {
            match &mut ev {
                TraceEvent::KernelBegin(k) => k.kernel_id += offset,
                TraceEvent::KernelEnd { kernel_id }
                | TraceEvent::TxBegin { kernel_id, .. }
                | TraceEvent::TxCommit { kernel_id, .. }
                | TraceEvent::Fence { kernel_id, .. }
                | TraceEvent::SyncThreads { kernel_id, .. }
                | TraceEvent::Mem { kernel_id, .. } => *kernel_id += offset,
            }
            self.events.push(ev);
        }
        self
    }
}
