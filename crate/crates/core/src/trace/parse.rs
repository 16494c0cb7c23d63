use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;

use thiserror::Error;

use super::{KernelMeta, MemInstr, MemOp, Role, Target, ThreadAccess, Trace, TraceEvent};

pub const HEADER: &str = "TRCv1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("line {line}, column {column}: {msg}")]
    Malformed { line: usize, column: usize, msg: String },
    #[error("line {line}: unterminated transaction (kernel {kernel}, cta {cta}, tx {tx})")]
    UnterminatedTx { line: usize, kernel: u32, cta: u32, tx: u32 },
    #[error("line {line}: commit without matching begin (kernel {kernel}, cta {cta}, tx {tx})")]
    UnmatchedCommit { line: usize, kernel: u32, cta: u32, tx: u32 },
    #[error("line {line}: event outside of any kernel")]
    OutsideKernel { line: usize },
    #[error("line {line}: memory instruction tagged tx={tx} outside that transaction")]
    TxTagOutsideTx { line: usize, tx: u32 },
    #[error("line {line}: duplicate kernel id {kernel}")]
    DuplicateKernel { line: usize, kernel: u32 },
    #[error("io error: {0}")]
    Io(String),
}

struct Cursor<'a> {
    line_no: usize,
    line: &'a str,
    tokens: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(line_no: usize, line: &'a str) -> Self {
        let mut tokens = Vec::new();
        let mut start = None;
        for (i, c) in line.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    tokens.push((s, &line[s..i]));
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            tokens.push((s, &line[s..]));
        }
        Cursor { line_no, line, tokens, pos: 0 }
    }

    fn err(&self, column: usize, msg: impl Into<String>) -> ParseError {
        ParseError::Malformed { line: self.line_no, column: column + 1, msg: msg.into() }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str), ParseError> {
        let tok = self
            .tokens
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(self.line.len(), format!("expected {what}")))?;
        self.pos += 1;
        Ok(tok)
    }

    fn peek(&self) -> Option<(usize, &'a str)> {
        self.tokens.get(self.pos).copied()
    }

    fn u32(&mut self, what: &str) -> Result<u32, ParseError> {
        let (col, tok) = self.next(what)?;
        tok.parse().map_err(|_| self.err(col, format!("invalid {what} `{tok}`")))
    }

    fn finish(&self) -> Result<(), ParseError> {
        match self.peek() {
            Some((col, tok)) => Err(self.err(col, format!("unexpected token `{tok}`"))),
            None => Ok(()),
        }
    }
}

fn parse_hex(s: &str) -> Option<u64> {
    let s = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u64::from_str_radix(s, 16).ok()
}

fn parse_mem(cur: &mut Cursor<'_>) -> Result<TraceEvent, ParseError> {
    let kernel_id = cur.u32("kernel id")?;
    let cta_id = cur.u32("cta id")?;
    let warp_id = cur.u32("warp id")?;
    let (col, op) = cur.next("LD|ST")?;
    let op = match op {
        "LD" => MemOp::Load,
        "ST" => MemOp::Store,
        _ => return Err(cur.err(col, format!("expected LD or ST, found `{op}`"))),
    };
    let (col, role) = cur.next("role")?;
    let role = match role {
        "log" => Role::LogUpdate,
        "data" => Role::DataUpdate,
        "plain" => Role::Plain,
        _ => return Err(cur.err(col, format!("expected log|data|plain, found `{role}`"))),
    };
    let (col, target) = cur.next("target")?;
    let target = match target {
        "pm" => Target::Pm,
        "dram" => Target::Dram,
        _ => return Err(cur.err(col, format!("expected pm|dram, found `{target}`"))),
    };
    let mut tx_id = None;
    if let Some((col, tok)) = cur.peek() {
        if let Some(v) = tok.strip_prefix("tx=") {
            cur.pos += 1;
            tx_id = Some(v.parse().map_err(|_| cur.err(col, format!("invalid tx tag `{tok}`")))?);
        }
    }
    let (col, list) = cur.next("thread accesses")?;
    let mut threads = Vec::new();
    let mut offset = col;
    for item in list.split(',') {
        let (addr, size) = item
            .split_once(':')
            .ok_or_else(|| cur.err(offset, format!("expected <addr>:<size>, found `{item}`")))?;
        let addr = parse_hex(addr).ok_or_else(|| cur.err(offset, format!("invalid hex address `{addr}`")))?;
        let size_col = offset + item.find(':').unwrap_or(0) + 1;
        let size: u8 = size.parse().map_err(|_| cur.err(size_col, format!("invalid size `{size}`")))?;
        if !(1..=16).contains(&size) || !size.is_power_of_two() {
            return Err(cur.err(size_col, format!("access size {size} is not a power of two in 1..=16")));
        }
        if addr.checked_add(size as u64).is_none() {
            return Err(cur.err(offset, "access wraps the address space"));
        }
        threads.push(ThreadAccess { addr, size });
        offset += item.len() + 1;
    }
    cur.finish()?;
    Ok(TraceEvent::Mem {
        kernel_id,
        cta_id,
        instr: MemInstr { op, role, warp_id, target, tx_id, threads },
    })
}

fn parse_kernel(cur: &mut Cursor<'_>) -> Result<TraceEvent, ParseError> {
    let kernel_id = cur.u32("kernel id")?;
    let (col, what) = cur.next("BEGIN|END")?;
    match what {
        "END" => {
            cur.finish()?;
            Ok(TraceEvent::KernelEnd { kernel_id })
        }
        "BEGIN" => {
            let mut meta = KernelMeta::new(kernel_id, false, 1);
            let mut saw_shared = false;
            let mut saw_ctas = false;
            while let Some((col, tok)) = cur.peek() {
                cur.pos += 1;
                let (key, val) = tok
                    .split_once('=')
                    .ok_or_else(|| cur.err(col, format!("expected key=value, found `{tok}`")))?;
                let bad = || cur.err(col, format!("invalid value for `{key}`"));
                match key {
                    "shared" => {
                        meta.uses_shared_memory = match val {
                            "0" => false,
                            "1" => true,
                            _ => return Err(bad()),
                        };
                        saw_shared = true;
                    }
                    "ctas" => {
                        meta.cta_count = val.parse().map_err(|_| bad())?;
                        if meta.cta_count == 0 {
                            return Err(bad());
                        }
                        saw_ctas = true;
                    }
                    "warp" => {
                        meta.warp_size = val.parse().map_err(|_| bad())?;
                        if meta.warp_size == 0 {
                            return Err(bad());
                        }
                    }
                    "logs" => meta.log_hint = Some(val.parse().map_err(|_| bad())?),
                    "name" => meta.name = val.to_string(),
                    _ => return Err(cur.err(col, format!("unknown kernel attribute `{key}`"))),
                }
            }
            if !saw_shared || !saw_ctas {
                return Err(cur.err(cur.line.len(), "kernel BEGIN requires shared= and ctas="));
            }
            Ok(TraceEvent::KernelBegin(meta))
        }
        _ => Err(cur.err(col, format!("expected BEGIN or END, found `{what}`"))),
    }
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<TraceEvent>, ParseError> {
    let content = line.split('#').next().unwrap_or("");
    let mut cur = Cursor::new(line_no, content);
    let Some((col, kw)) = cur.peek() else { return Ok(None) };
    cur.pos += 1;
    let ev = match kw {
        "K" => parse_kernel(&mut cur)?,
        "TXB" | "TXC" => {
            let kernel_id = cur.u32("kernel id")?;
            let cta_id = cur.u32("cta id")?;
            let tx_id = cur.u32("tx id")?;
            cur.finish()?;
            if kw == "TXB" {
                TraceEvent::TxBegin { kernel_id, cta_id, tx_id }
            } else {
                TraceEvent::TxCommit { kernel_id, cta_id, tx_id }
            }
        }
        "FEN" | "SYN" => {
            let kernel_id = cur.u32("kernel id")?;
            let cta_id = cur.u32("cta id")?;
            cur.finish()?;
            if kw == "FEN" {
                TraceEvent::Fence { kernel_id, cta_id }
            } else {
                TraceEvent::SyncThreads { kernel_id, cta_id }
            }
        }
        "MEM" => parse_mem(&mut cur)?,
        _ => return Err(cur.err(col, format!("unknown record `{kw}`"))),
    };
    Ok(Some(ev))
}

/// Checks the structural invariants: kernel nesting, balanced transactions
/// and transaction tags.
fn check_structure(events: &[(usize, TraceEvent)], last_line: usize) -> Result<(), ParseError> {
    let mut open_kernels: HashMap<u32, ()> = HashMap::new();
    let mut seen_kernels = BTreeSet::new();
    // (kernel, cta) -> open tx
    let mut open_tx: HashMap<(u32, u32), (u32, usize)> = HashMap::new();
    for (line, ev) in events {
        let line = *line;
        match ev {
            TraceEvent::KernelBegin(k) => {
                if !seen_kernels.insert(k.kernel_id) {
                    return Err(ParseError::DuplicateKernel { line, kernel: k.kernel_id });
                }
                open_kernels.insert(k.kernel_id, ());
            }
            TraceEvent::KernelEnd { kernel_id } => {
                if open_kernels.remove(kernel_id).is_none() {
                    return Err(ParseError::OutsideKernel { line });
                }
                if let Some((&(kernel, cta), &(tx, _))) =
                    open_tx.iter().filter(|((k, _), _)| k == kernel_id).min()
                {
                    return Err(ParseError::UnterminatedTx { line, kernel, cta, tx });
                }
            }
            other => {
                let kernel_id = other.kernel_id();
                if !open_kernels.contains_key(&kernel_id) {
                    return Err(ParseError::OutsideKernel { line });
                }
                let cta = other.cta_id().unwrap_or(0);
                match other {
                    TraceEvent::TxBegin { tx_id, .. } => {
                        if let Some(&(tx, _)) = open_tx.get(&(kernel_id, cta)) {
                            return Err(ParseError::UnterminatedTx { line, kernel: kernel_id, cta, tx });
                        }
                        open_tx.insert((kernel_id, cta), (*tx_id, line));
                    }
                    TraceEvent::TxCommit { tx_id, .. } => match open_tx.get(&(kernel_id, cta)) {
                        Some((tx, _)) if tx == tx_id => {
                            open_tx.remove(&(kernel_id, cta));
                        }
                        _ => {
                            return Err(ParseError::UnmatchedCommit { line, kernel: kernel_id, cta, tx: *tx_id })
                        }
                    },
                    TraceEvent::Mem { instr, .. } => {
                        if let Some(tx) = instr.tx_id {
                            match open_tx.get(&(kernel_id, cta)) {
                                Some((open, _)) if *open == tx => {}
                                _ => return Err(ParseError::TxTagOutsideTx { line, tx }),
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    if let Some((&(kernel, cta), &(tx, _))) = open_tx.iter().min() {
        return Err(ParseError::UnterminatedTx { line: last_line, kernel, cta, tx });
    }
    if !open_kernels.is_empty() {
        return Err(ParseError::Malformed { line: last_line, column: 1, msg: "kernel without END".into() });
    }
    Ok(())
}

/// Parses a trace from a line-oriented byte stream.
pub fn parse_trace<R: BufRead>(input: R) -> Result<Trace, ParseError> {
    let mut events = Vec::new();
    let mut saw_header = false;
    let mut last_line = 0;
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = line.map_err(|e| ParseError::Io(e.to_string()))?;
        if !saw_header {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content != HEADER {
                return Err(ParseError::Malformed {
                    line: line_no,
                    column: 1,
                    msg: format!("missing `{HEADER}` header"),
                });
            }
            saw_header = true;
            continue;
        }
        if let Some(ev) = parse_line(line_no, &line)? {
            events.push((line_no, ev));
        }
    }
    if !saw_header {
        return Err(ParseError::Malformed { line: last_line.max(1), column: 1, msg: format!("missing `{HEADER}` header") });
    }
    check_structure(&events, last_line)?;
    Ok(Trace { events: events.into_iter().map(|(_, e)| e).collect() })
}

pub fn parse_str(s: &str) -> Result<Trace, ParseError> {
    parse_trace(s.as_bytes())
}

fn write_event(out: &mut String, ev: &TraceEvent) {
    match ev {
        TraceEvent::KernelBegin(k) => {
            let _ = write!(out, "K {} BEGIN shared={} ctas={}", k.kernel_id, k.uses_shared_memory as u8, k.cta_count);
            if k.warp_size != super::DEFAULT_WARP_SIZE {
                let _ = write!(out, " warp={}", k.warp_size);
            }
            if let Some(h) = k.log_hint {
                let _ = write!(out, " logs={h}");
            }
            if k.name != format!("k{}", k.kernel_id) {
                let _ = write!(out, " name={}", k.name);
            }
        }
        TraceEvent::KernelEnd { kernel_id } => {
            let _ = write!(out, "K {kernel_id} END");
        }
        TraceEvent::TxBegin { kernel_id, cta_id, tx_id } => {
            let _ = write!(out, "TXB {kernel_id} {cta_id} {tx_id}");
        }
        TraceEvent::TxCommit { kernel_id, cta_id, tx_id } => {
            let _ = write!(out, "TXC {kernel_id} {cta_id} {tx_id}");
        }
        TraceEvent::Fence { kernel_id, cta_id } => {
            let _ = write!(out, "FEN {kernel_id} {cta_id}");
        }
        TraceEvent::SyncThreads { kernel_id, cta_id } => {
            let _ = write!(out, "SYN {kernel_id} {cta_id}");
        }
        TraceEvent::Mem { kernel_id, cta_id, instr } => {
            let op = match instr.op {
                MemOp::Load => "LD",
                MemOp::Store => "ST",
            };
            let role = match instr.role {
                Role::LogUpdate => "log",
                Role::DataUpdate => "data",
                Role::Plain => "plain",
            };
            let target = match instr.target {
                Target::Pm => "pm",
                Target::Dram => "dram",
            };
            let _ = write!(out, "MEM {kernel_id} {cta_id} {} {op} {role} {target} ", instr.warp_id);
            if let Some(tx) = instr.tx_id {
                let _ = write!(out, "tx={tx} ");
            }
            for (i, t) in instr.threads.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{:x}:{}", t.addr, t.size);
            }
        }
    }
    out.push('\n');
}

/// Renders a trace in the line-oriented text format.
pub fn serialize(trace: &Trace) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for ev in &trace.events {
        write_event(&mut out, ev);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_kernel() {
        let t = parse_str("TRCv1\nK 0 BEGIN shared=0 ctas=1\nK 0 END\n").unwrap();
        assert_eq!(t.events.len(), 2);
        assert!(matches!(t.events[1], TraceEvent::KernelEnd { kernel_id: 0 }));
    }

    #[test]
    fn unterminated_transaction() {
        let err = parse_str("TRCv1\nK 0 BEGIN shared=0 ctas=1\nTXB 0 0 1\nK 0 END\n").unwrap_err();
        assert!(err.to_string().contains("unterminated transaction"), "{err}");
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_str("TRCv1\nK 0 BEGIN shared=0 ctas=1\nMEM 0 0 0 LD plain pm zz:4\nK 0 END\n").unwrap_err();
        match err {
            ParseError::Malformed { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, 23);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_access_size() {
        let err = parse_str("TRCv1\nK 0 BEGIN shared=0 ctas=1\nMEM 0 0 0 LD plain pm 10:3\nK 0 END\n").unwrap_err();
        assert!(matches!(err, ParseError::Malformed { line: 3, .. }));
    }

    #[test]
    fn mem_outside_kernel() {
        let err = parse_str("TRCv1\nMEM 0 0 0 LD plain pm 10:4\n").unwrap_err();
        assert_eq!(err, ParseError::OutsideKernel { line: 2 });
    }

    #[test]
    fn missing_header() {
        assert!(parse_str("K 0 BEGIN shared=0 ctas=1\nK 0 END\n").is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let src = "# leading\nTRCv1 # header\n\nK 3 BEGIN shared=1 ctas=2 logs=50 # k\nSYN 3 1\nK 3 END\n";
        let t = parse_str(src).unwrap();
        let k = t.kernels().next().unwrap();
        assert!(k.uses_shared_memory);
        assert_eq!(k.log_hint, Some(50));
        assert_eq!(serialize(&parse_str(&serialize(&t)).unwrap()), serialize(&t));
    }

    #[test]
    fn tagged_mem_must_be_inside_its_tx() {
        let src = "TRCv1\nK 0 BEGIN shared=0 ctas=1\nMEM 0 0 0 ST log pm tx=4 100:4\nK 0 END\n";
        assert_eq!(parse_str(src).unwrap_err(), ParseError::TxTagOutsideTx { line: 3, tx: 4 });
    }
}
