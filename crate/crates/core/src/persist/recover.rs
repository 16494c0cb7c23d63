use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::image::{PersistSource, PersistTrace, PmImage, TxKey};
use super::plan::TxLayout;
use crate::trace::layout::{self, FlagState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CrashError {
    #[error("crash point {point} out of range 0..={len}")]
    OutOfRange { point: usize, len: usize },
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryError {
    #[error("unrecoverable log for {tx:?}: corrupt entry at record offset {offset}")]
    UnrecoverableLog { tx: TxKey, offset: usize },
    #[error("unrecoverable log for {tx:?}: flag byte holds {value}")]
    BadFlag { tx: TxKey, value: u8 },
}

/// PM contents after a crash that keeps exactly the first `point` durable
/// writes.
pub fn crash_at(trace: &PersistTrace, point: usize) -> Result<PmImage, CrashError> {
    if point > trace.len() {
        return Err(CrashError::OutOfRange { point, len: trace.len() });
    }
    let mut img = PmImage::new();
    for rec in &trace.records[..point] {
        img.apply(rec);
    }
    Ok(img)
}

/// Rolls back every transaction whose flag says it was in flight, then
/// clears that flag. Committed and never-started transactions are left as
/// they are.
pub fn recover(image: &PmImage, txs: &[TxLayout]) -> Result<PmImage, RecoveryError> {
    let mut out = image.clone();
    for tx in txs.iter().rev() {
        let flag = image.read(tx.flag);
        match FlagState::from_byte(flag) {
            Some(FlagState::InTx) => {
                let log = image.read_range(tx.log_bytes.iter().copied());
                let entries = layout::decode_undo_record(&log).map_err(|layout::DecodeError::Corrupt { offset }| {
                    RecoveryError::UnrecoverableLog { tx: tx.key, offset }
                })?;
                for e in entries {
                    for (i, v) in e.old.iter().enumerate() {
                        out.write(e.target + i as u64, *v);
                    }
                }
                out.write(tx.flag, FlagState::None as u8);
            }
            Some(_) => {}
            None => return Err(RecoveryError::BadFlag { tx: tx.key, value: flag }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteMismatch {
    pub addr: u64,
    pub expected: u8,
    pub actual: u8,
    pub pre: u8,
    pub post: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxViolation {
    pub tx: TxKey,
    pub committed: bool,
    /// Bytes holding the transaction's new value and bytes holding its old one.
    pub new_bytes: usize,
    pub old_bytes: usize,
    pub mismatches: Vec<ByteMismatch>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicityReport {
    pub ok: bool,
    pub violations: Vec<TxViolation>,
}

/// All-or-nothing check. A transaction counts as committed when its
/// complete flag survived; the expected image applies exactly the committed
/// transactions, in commit order, on top of `pre`.
pub fn check_atomicity(pre: &PmImage, recovered: &PmImage, txs: &[TxLayout]) -> AtomicityReport {
    let mut expected = pre.clone();
    let committed: Vec<bool> =
        txs.iter().map(|tx| FlagState::from_byte(recovered.read(tx.flag)) == Some(FlagState::Complete)).collect();
    for (tx, &c) in txs.iter().zip(&committed) {
        if c {
            for (&a, &v) in &tx.new {
                expected.write(a, v);
            }
        }
    }
    let mut violations = Vec::new();
    for (tx, &c) in txs.iter().zip(&committed) {
        let mut v = TxViolation { tx: tx.key, committed: c, new_bytes: 0, old_bytes: 0, mismatches: Vec::new() };
        for &a in &tx.data_bytes {
            let actual = recovered.read(a);
            let (pre_v, post_v) = (tx.old[&a], tx.new[&a]);
            if actual == post_v {
                v.new_bytes += 1;
            } else if actual == pre_v {
                v.old_bytes += 1;
            }
            let exp = expected.read(a);
            if actual != exp {
                v.mismatches.push(ByteMismatch { addr: a, expected: exp, actual, pre: pre_v, post: post_v });
            }
        }
        if !v.mismatches.is_empty() {
            violations.push(v);
        }
    }
    AtomicityReport { ok: violations.is_empty(), violations }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderViolation {
    pub tx: TxKey,
    pub rule: String,
    pub index: usize,
}

/// Checks log-before-data and flag ordering directly on a persist trace.
pub fn check_order(trace: &PersistTrace, txs: &[TxLayout]) -> Vec<OrderViolation> {
    use std::collections::HashMap;
    #[derive(Default)]
    struct Seen {
        last_log: Option<usize>,
        first_data: Option<usize>,
        last_data: Option<usize>,
        in_tx: Option<usize>,
        complete: Option<usize>,
    }
    let flags: HashMap<TxKey, u64> = txs.iter().map(|t| (t.key, t.flag)).collect();
    let mut seen: HashMap<TxKey, Seen> = HashMap::new();
    for (i, rec) in trace.records.iter().enumerate() {
        for w in &rec.writers {
            let Some(key) = w.tx else { continue };
            let s = seen.entry(key).or_default();
            match w.source {
                PersistSource::Log => s.last_log = Some(i),
                PersistSource::Data => {
                    s.first_data.get_or_insert(i);
                    s.last_data = Some(i);
                }
                PersistSource::Flag => {
                    let Some(&fa) = flags.get(&key) else { continue };
                    if fa & !127 != rec.block || rec.mask >> (fa - rec.block) & 1 == 0 {
                        continue;
                    }
                    match FlagState::from_byte(rec.data[(fa - rec.block) as usize]) {
                        Some(FlagState::InTx) => {
                            s.in_tx.get_or_insert(i);
                        }
                        Some(FlagState::Complete) => {
                            s.complete.get_or_insert(i);
                        }
                        _ => {}
                    }
                }
                PersistSource::Plain => {}
            }
        }
    }
    let mut out = Vec::new();
    let mut keys: Vec<_> = seen.keys().copied().collect();
    keys.sort();
    for key in keys {
        let s = &seen[&key];
        let mut bad = |rule: &str, index: usize| out.push(OrderViolation { tx: key, rule: rule.into(), index });
        if let (Some(l), Some(d)) = (s.last_log, s.first_data) {
            if l >= d {
                bad("log persisted after data", l);
            }
        }
        if let Some(d) = s.first_data {
            match s.in_tx {
                Some(f) if f < d => {}
                _ => bad("data persisted before inTx flag", d),
            }
        }
        if let (Some(d), Some(c)) = (s.last_data, s.complete) {
            if d >= c {
                bad("complete flag persisted before data", c);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::image::{PersistRecord, Writer};
    use std::collections::BTreeMap;

    const LOG: u64 = layout::PM_BASE + 0x1000;
    const DATA: u64 = layout::PM_BASE;

    fn tx() -> TxLayout {
        let key = TxKey { kernel: 0, cta: 0, tx: 0 };
        let old: BTreeMap<u64, u8> = [(DATA, 0), (DATA + 1, 0)].into();
        let new: BTreeMap<u64, u8> = [(DATA, 5), (DATA + 1, 6)].into();
        let mut record = layout::encode_undo_record(&old);
        record.resize(64, 0);
        TxLayout {
            key,
            flag: layout::flag_addr(0, 0, 0).unwrap(),
            log_bytes: (LOG..LOG + 64).collect(),
            data_bytes: vec![DATA, DATA + 1],
            old,
            new,
            record,
        }
    }

    fn with(img: &mut PmImage, t: &TxLayout, log: bool, flag: FlagState, data: &[u64]) {
        if log {
            for (a, v) in t.log_bytes.iter().zip(&t.record) {
                img.write(*a, *v);
            }
        }
        img.write(t.flag, flag as u8);
        for a in data {
            img.write(*a, t.new[a]);
        }
    }

    #[test]
    fn crash_endpoints() {
        let rec = PersistRecord { timestamp: 1.0, seq: 0, block: DATA, mask: 1, data: [9; 128], writers: vec![] };
        let pt = PersistTrace { records: vec![rec] };
        assert_eq!(crash_at(&pt, 0).unwrap(), PmImage::new());
        assert_eq!(crash_at(&pt, 1).unwrap().read(DATA), 9);
        assert_eq!(crash_at(&pt, 2), Err(CrashError::OutOfRange { point: 2, len: 1 }));
    }

    #[test]
    fn in_tx_rolls_back() {
        let t = tx();
        let mut img = PmImage::new();
        with(&mut img, &t, true, FlagState::InTx, &[DATA]);
        let r = recover(&img, std::slice::from_ref(&t)).unwrap();
        assert_eq!((r.read(DATA), r.read(DATA + 1), r.read(t.flag)), (0, 0, 0));
        assert_eq!(recover(&r, std::slice::from_ref(&t)).unwrap(), r);
        assert!(check_atomicity(&PmImage::new(), &r, &[t]).ok);
    }

    #[test]
    fn complete_is_kept() {
        let t = tx();
        let mut img = PmImage::new();
        with(&mut img, &t, true, FlagState::Complete, &[DATA, DATA + 1]);
        let r = recover(&img, std::slice::from_ref(&t)).unwrap();
        assert_eq!(r, img);
        assert!(check_atomicity(&PmImage::new(), &r, &[t]).ok);
    }

    #[test]
    fn torn_state_is_reported() {
        let t = tx();
        let mut img = PmImage::new();
        with(&mut img, &t, false, FlagState::None, &[DATA]);
        let r = recover(&img, std::slice::from_ref(&t)).unwrap();
        let rep = check_atomicity(&PmImage::new(), &r, &[t]);
        assert!(!rep.ok);
        assert_eq!(rep.violations[0].new_bytes, 1);
        assert_eq!(rep.violations[0].old_bytes, 1);
        assert_eq!(rep.violations[0].mismatches[0].addr, DATA);
    }

    #[test]
    fn partial_log_with_in_tx_is_unrecoverable() {
        let t = tx();
        let mut img = PmImage::new();
        with(&mut img, &t, true, FlagState::InTx, &[]);
        img.write(LOG + 13, 0xEE);
        assert!(matches!(recover(&img, &[t]), Err(RecoveryError::UnrecoverableLog { offset: 0, .. })));
    }

    #[test]
    fn order_check_flags_data_first() {
        let t = tx();
        let w = |source| Writer { source, tx: Some(t.key) };
        let mk = |block, data: [u8; 128], source| PersistRecord { timestamp: 0.0, seq: 0, block, mask: 1, data, writers: vec![w(source)] };
        let mut flag_in = [0u8; 128];
        flag_in[(t.flag & 127) as usize] = 1;
        let flag_block = t.flag & !127;
        let flag_rec = PersistRecord { mask: 1 << (t.flag & 127), ..mk(flag_block, flag_in, PersistSource::Flag) };
        let good = PersistTrace {
            records: vec![mk(LOG, [0; 128], PersistSource::Log), flag_rec.clone(), mk(DATA, [5; 128], PersistSource::Data)],
        };
        assert!(check_order(&good, std::slice::from_ref(&t)).is_empty());
        let bad = PersistTrace {
            records: vec![mk(DATA, [5; 128], PersistSource::Data), mk(LOG, [0; 128], PersistSource::Log), flag_rec],
        };
        let v = check_order(&bad, &[t]);
        assert!(v.iter().any(|v| v.rule == "log persisted after data"));
    }
}
