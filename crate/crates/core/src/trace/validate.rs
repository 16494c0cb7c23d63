use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::layout;
use super::{MemOp, Role, Target, Trace, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: {} ({})", self.index, self.rule, self.detail)
    }
}

#[derive(Default)]
struct OpenTx {
    tx_id: u32,
    begin: usize,
    log_bytes: BTreeSet<u64>,
    data_bytes: BTreeSet<u64>,
    saw_data: bool,
}

/// Checks every trace invariant and returns all violations found. An empty
/// list means the trace can be simulated.
pub fn validate(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |index, rule, detail: String| out.push(Violation { index, rule, detail });

    let mut kernels_seen = HashSet::new();
    let mut open_kernel: Option<u32> = None;
    let mut open_tx: HashMap<u32, OpenTx> = HashMap::new();
    // Per kernel: bytes written transactionally by each CTA.
    let mut data_owner: HashMap<u64, u32> = HashMap::new();
    let mut log_owner: HashMap<u64, u32> = HashMap::new();

    for (i, ev) in trace.events.iter().enumerate() {
        match ev {
            TraceEvent::KernelBegin(k) => {
                if !kernels_seen.insert(k.kernel_id) {
                    push(i, "duplicate kernel id", format!("kernel {}", k.kernel_id));
                }
                if k.warp_size == 0 {
                    push(i, "warp size must be positive", format!("kernel {}", k.kernel_id));
                }
                if k.cta_count == 0 {
                    push(i, "cta count must be positive", format!("kernel {}", k.kernel_id));
                }
                if let Some(open) = open_kernel {
                    push(i, "nested kernel", format!("kernel {} begins inside kernel {open}", k.kernel_id));
                }
                open_kernel = Some(k.kernel_id);
                data_owner.clear();
                log_owner.clear();
            }
            TraceEvent::KernelEnd { kernel_id } => {
                if open_kernel != Some(*kernel_id) {
                    push(i, "kernel end without begin", format!("kernel {kernel_id}"));
                }
                for (cta, tx) in open_tx.drain() {
                    push(tx.begin, "unterminated transaction", format!("cta {cta} tx {}", tx.tx_id));
                }
                open_kernel = None;
            }
            other => {
                let kernel = other.kernel_id();
                let cta = other.cta_id().unwrap_or(0);
                if open_kernel != Some(kernel) {
                    push(i, "event outside kernel", format!("kernel {kernel}"));
                    continue;
                }
                match other {
                    TraceEvent::TxBegin { tx_id, .. } => {
                        if let Some(prev) = open_tx.get(&cta) {
                            push(i, "nested transaction", format!("cta {cta} tx {tx_id} inside tx {}", prev.tx_id));
                        }
                        if layout::flag_addr(kernel, cta, *tx_id).is_none() {
                            push(i, "transaction id exceeds flag region", format!("kernel {kernel} cta {cta} tx {tx_id}"));
                        }
                        open_tx.insert(cta, OpenTx { tx_id: *tx_id, begin: i, ..Default::default() });
                    }
                    TraceEvent::TxCommit { tx_id, .. } => match open_tx.remove(&cta) {
                        Some(tx) if tx.tx_id == *tx_id => {
                            let need = layout::undo_record_len(tx.data_bytes.iter().copied());
                            if (tx.log_bytes.len() as u64) < need {
                                push(
                                    i,
                                    "log capacity below undo record size",
                                    format!("cta {cta} tx {tx_id}: {} log bytes, record needs {need}", tx.log_bytes.len()),
                                );
                            }
                            if let Some(b) = tx.log_bytes.intersection(&tx.data_bytes).next() {
                                push(i, "log overlaps data", format!("cta {cta} tx {tx_id} byte {b:#x}"));
                            }
                        }
                        _ => push(i, "commit without begin", format!("cta {cta} tx {tx_id}")),
                    },
                    TraceEvent::Mem { instr, .. } => {
                        if instr.threads.is_empty() {
                            push(i, "no active threads", String::new());
                        }
                        for t in &instr.threads {
                            if !t.size.is_power_of_two() || t.size > 16 {
                                push(i, "access size must be a power of two in 1..=16", format!("{}", t.size));
                            } else if t.addr % t.size as u64 != 0 {
                                push(i, "misaligned access", format!("{:#x}:{}", t.addr, t.size));
                            }
                            let in_range = match instr.target {
                                Target::Pm => layout::is_pm(t.addr) && layout::is_pm(t.end() - 1),
                                Target::Dram => layout::is_dram(t.addr) && layout::is_dram(t.end() - 1),
                            };
                            if !in_range {
                                push(i, "address outside target range", format!("{:#x}", t.addr));
                            }
                            if instr.target == Target::Pm && t.end() > layout::FLAG_BASE && t.addr < layout::PM_BASE + layout::PM_SIZE {
                                push(i, "access inside flag region", format!("{:#x}", t.addr));
                            }
                        }
                        let transactional = matches!(instr.role, Role::LogUpdate | Role::DataUpdate);
                        if instr.role == Role::LogUpdate && instr.target != Target::Pm {
                            push(i, "log must target PM", String::new());
                        }
                        if instr.role == Role::DataUpdate && instr.target != Target::Pm {
                            push(i, "data update must target PM", String::new());
                        }
                        if transactional && instr.op != MemOp::Store {
                            push(i, "log and data updates must be stores", String::new());
                        }
                        if !transactional {
                            if let Some(tx) = instr.tx_id {
                                if open_tx.get(&cta).map(|t| t.tx_id) != Some(tx) {
                                    push(i, "tagged instruction outside its transaction", format!("tx {tx}"));
                                }
                            }
                            continue;
                        }
                        let Some(tx) = open_tx.get_mut(&cta) else {
                            push(i, "transactional update outside transaction", format!("cta {cta}"));
                            continue;
                        };
                        if instr.tx_id != Some(tx.tx_id) {
                            push(i, "transactional update must carry its tx tag", format!("open tx {}", tx.tx_id));
                        }
                        let bytes = instr.byte_set();
                        let owners = if instr.role == Role::LogUpdate { &mut log_owner } else { &mut data_owner };
                        for &b in &bytes {
                            if let Some(&o) = owners.get(&b) {
                                if o != cta {
                                    push(i, "conflicting writes across CTAs", format!("byte {b:#x} shared by cta {o} and cta {cta}"));
                                    break;
                                }
                            }
                        }
                        for &b in &bytes {
                            owners.insert(b, cta);
                        }
                        match instr.role {
                            Role::LogUpdate => {
                                if tx.saw_data {
                                    push(i, "data precedes log", format!("cta {cta} tx {}: log update after data updates", tx.tx_id));
                                }
                                tx.log_bytes.extend(bytes);
                            }
                            _ => {
                                if tx.log_bytes.is_empty() {
                                    push(i, "data precedes log", format!("cta {cta} tx {}: data update before any log update", tx.tx_id));
                                }
                                tx.saw_data = true;
                                tx.data_bytes.extend(bytes);
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some(k) = open_kernel {
        push(trace.events.len(), "kernel without end", format!("kernel {k}"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::parse::parse_str;

    const FIXTURE: &str = include_str!("../../fixtures/mini_undo.trc");

    #[test]
    fn fixture_is_clean() {
        let t = parse_str(FIXTURE).unwrap();
        assert_eq!(validate(&t), vec![]);
    }

    #[test]
    fn data_before_log() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=1\nTXB 0 0 0\n\
                   MEM 0 0 0 ST data pm tx=0 100000000000:4\n\
                   MEM 0 0 0 ST log pm tx=0 100000010000:16,100000010010:16\n\
                   TXC 0 0 0\nK 0 END\n";
        let v = validate(&parse_str(src).unwrap());
        assert!(v.iter().any(|v| v.rule == "data precedes log" && v.index == 3), "{v:?}");
    }

    #[test]
    fn log_to_dram() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=1\nTXB 0 0 0\n\
                   MEM 0 0 0 ST log dram tx=0 200000000000:4\nTXC 0 0 0\nK 0 END\n";
        let v = validate(&parse_str(src).unwrap());
        assert!(v.iter().any(|v| v.rule == "log must target PM" && v.index == 2), "{v:?}");
    }

    #[test]
    fn small_log_region() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=1\nTXB 0 0 0\n\
                   MEM 0 0 0 ST log pm tx=0 100000010000:4\n\
                   MEM 0 0 0 ST data pm tx=0 100000000000:4\nTXC 0 0 0\nK 0 END\n";
        let v = validate(&parse_str(src).unwrap());
        assert!(v.iter().any(|v| v.rule == "log capacity below undo record size"), "{v:?}");
    }

    #[test]
    fn cross_cta_conflict() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=2\n\
                   TXB 0 0 0\nMEM 0 0 0 ST log pm tx=0 100000010000:16,100000010010:16\nMEM 0 0 0 ST data pm tx=0 100000000000:4\nTXC 0 0 0\n\
                   TXB 0 1 0\nMEM 0 1 0 ST log pm tx=0 100000020000:16,100000020010:16\nMEM 0 1 0 ST data pm tx=0 100000000000:4\nTXC 0 1 0\n\
                   K 0 END\n";
        let v = validate(&parse_str(src).unwrap());
        assert!(v.iter().any(|v| v.rule == "conflicting writes across CTAs"), "{v:?}");
    }

    #[test]
    fn misaligned() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=1\nMEM 0 0 0 LD plain pm 100000000002:4\nK 0 END\n";
        let v = validate(&parse_str(src).unwrap());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, "misaligned access");
    }
}
