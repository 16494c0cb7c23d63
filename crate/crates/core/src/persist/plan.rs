use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::image::TxKey;
use crate::trace::layout;
use crate::trace::{MemOp, Role, Trace, TraceEvent};

/// Static description of one transaction: where its flag, log and data
/// live, and the values it logs and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxLayout {
    pub key: TxKey,
    pub flag: u64,
    pub log_bytes: Vec<u64>,
    pub data_bytes: Vec<u64>,
    /// Data values just before the transaction.
    pub old: BTreeMap<u64, u8>,
    /// Data values when the transaction commits.
    pub new: BTreeMap<u64, u8>,
    /// Undo record padded with zeros to the log size.
    pub record: Vec<u8>,
}

impl TxLayout {
    pub fn log_blocks(&self) -> BTreeSet<u64> {
        self.log_bytes.iter().map(|a| a & !127).collect()
    }

    pub fn data_blocks(&self) -> BTreeSet<u64> {
        self.data_bytes.iter().map(|a| a & !127).collect()
    }
}

/// Byte values every store in a trace writes, fixed by program order.
///
/// Transactional bytes are private to one CTA within a kernel, so these
/// values do not depend on how the timing model interleaves CTAs.
#[derive(Debug, Clone, Default)]
pub struct ValuePlan {
    /// Event index -> (address, value) for each PM store byte.
    pub stores: HashMap<usize, Vec<(u64, u8)>>,
    /// Transactions in commit order.
    pub txs: Vec<TxLayout>,
    index: HashMap<TxKey, usize>,
}

impl ValuePlan {
    pub fn tx(&self, key: TxKey) -> Option<&TxLayout> {
        self.index.get(&key).map(|&i| &self.txs[i])
    }

    pub fn tx_index(&self, key: TxKey) -> Option<usize> {
        self.index.get(&key).copied()
    }
}

/// Transaction id used when deriving values of plain (non-transactional) stores.
const PLAIN_TX: u32 = u32::MAX;

/// Builds the value plan of a validated trace.
pub fn plan_values(trace: &Trace) -> ValuePlan {
    // Pass 1: log and data byte sets per transaction.
    let mut sets: HashMap<TxKey, (BTreeSet<u64>, BTreeSet<u64>)> = HashMap::new();
    let mut open: HashMap<(u32, u32), u32> = HashMap::new();
    for ev in &trace.events {
        match ev {
            TraceEvent::TxBegin { kernel_id, cta_id, tx_id } => {
                open.insert((*kernel_id, *cta_id), *tx_id);
            }
            TraceEvent::TxCommit { kernel_id, cta_id, .. } => {
                open.remove(&(*kernel_id, *cta_id));
            }
            TraceEvent::Mem { kernel_id, cta_id, instr } if matches!(instr.role, Role::LogUpdate | Role::DataUpdate) => {
                if let Some(&tx) = open.get(&(*kernel_id, *cta_id)) {
                    let key = TxKey { kernel: *kernel_id, cta: *cta_id, tx };
                    let entry = sets.entry(key).or_default();
                    let set = if instr.role == Role::LogUpdate { &mut entry.0 } else { &mut entry.1 };
                    set.extend(instr.byte_set());
                }
            }
            _ => {}
        }
    }

    // Pass 2: replay values in program order.
    let mut plan = ValuePlan::default();
    let mut arch: HashMap<u64, u8> = HashMap::new();
    let mut log_pos: HashMap<TxKey, HashMap<u64, usize>> = HashMap::new();
    let mut records: HashMap<TxKey, (Vec<u8>, BTreeMap<u64, u8>)> = HashMap::new();
    open.clear();
    for (i, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::TxBegin { kernel_id, cta_id, tx_id } => {
                open.insert((*kernel_id, *cta_id), *tx_id);
                let key = TxKey { kernel: *kernel_id, cta: *cta_id, tx: *tx_id };
                let (logs, data) = sets.get(&key).cloned().unwrap_or_default();
                let old: BTreeMap<u64, u8> = data.iter().map(|&a| (a, arch.get(&a).copied().unwrap_or(0))).collect();
                let mut rec = layout::encode_undo_record(&old);
                rec.resize(rec.len().max(logs.len()), 0);
                log_pos.insert(key, logs.iter().enumerate().map(|(p, &a)| (a, p)).collect());
                records.insert(key, (rec, old));
            }
            TraceEvent::TxCommit { kernel_id, cta_id, tx_id } => {
                open.remove(&(*kernel_id, *cta_id));
                let key = TxKey { kernel: *kernel_id, cta: *cta_id, tx: *tx_id };
                let (logs, data) = sets.remove(&key).unwrap_or_default();
                let (record, old) = records.remove(&key).unwrap_or_default();
                log_pos.remove(&key);
                let new = data.iter().map(|&a| (a, arch.get(&a).copied().unwrap_or(0))).collect();
                plan.index.insert(key, plan.txs.len());
                plan.txs.push(TxLayout {
                    key,
                    flag: layout::flag_addr(key.kernel, key.cta, key.tx).expect("validated trace"),
                    log_bytes: logs.into_iter().collect(),
                    data_bytes: data.into_iter().collect(),
                    old,
                    new,
                    record,
                });
            }
            TraceEvent::Mem { kernel_id, cta_id, instr } if instr.op == MemOp::Store && instr.is_pm() => {
                let tx = open.get(&(*kernel_id, *cta_id)).copied();
                let key = tx.map(|tx| TxKey { kernel: *kernel_id, cta: *cta_id, tx });
                let mut vals = Vec::new();
                for a in instr.byte_set() {
                    let old = arch.get(&a).copied().unwrap_or(0);
                    let v = match (instr.role, key) {
                        (Role::LogUpdate, Some(k)) => {
                            let pos = log_pos[&k][&a];
                            records[&k].0[pos]
                        }
                        (Role::DataUpdate, Some(k)) => layout::data_value(k.kernel, k.cta, k.tx, a, old),
                        _ => layout::data_value(*kernel_id, *cta_id, PLAIN_TX, a, old),
                    };
                    arch.insert(a, v);
                    vals.push((a, v));
                }
                plan.stores.insert(i, vals);
            }
            _ => {}
        }
    }
    plan
}
