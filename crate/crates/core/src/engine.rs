//! Event-driven simulation loop: schedules CTAs onto SMs, issues warp
//! memory instructions through the hierarchy, runs the undo-logging
//! protocol and routes each PM store along the path its strategy picks.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agpm::{Agpm, AgpmOptions, LocalityMetrics, PathChange, PathDecision, PeriodSummary};
use crate::hierarchy::{HierError, HierStats, Hierarchy, HierarchyConfig, Server, ShadowDirectory};
use crate::persist::{plan_values, PersistSource, PersistTrace, PmImage, TxKey, ValuePlan, Writer};
use crate::strategy::{decide, RequestCtx, Route, StrategyKind};
use crate::trace::layout::FlagState;
use crate::trace::{coalesce, validate, KernelMeta, MemOp, Role, Trace, TraceEvent, Violation};

/// Coalescing-degree bucket labels, in histogram order.
pub const DEGREE_BUCKETS: [&str; 4] = ["[1,2]", "(2,8]", "(8,16]", "(16,32]"];

pub fn degree_bucket(degree: usize) -> usize {
    match degree {
        0..=2 => 0,
        3..=8 => 1,
        9..=16 => 2,
        _ => 3,
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("trace failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("protocol violation at event {index}: {detail}")]
    Protocol { index: usize, detail: String },
    #[error(transparent)]
    Hierarchy(#[from] HierError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub hierarchy: HierarchyConfig,
    pub strategy: StrategyKind,
    pub agpm: AgpmOptions,
    /// Strip persistency: no logs, flags, clwbs or fences.
    pub base: bool,
}

impl SimConfig {
    pub fn new(hierarchy: HierarchyConfig, strategy: StrategyKind) -> Self {
        SimConfig { hierarchy, strategy, agpm: AgpmOptions::default(), base: false }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimOutput {
    pub total_cycles: f64,
    pub kernel_cycles: Vec<f64>,
    pub hier: HierStats,
    pub coalescing: [u64; 4],
    pub mem_instrs: u64,
    /// Segment requests issued, and the log-update share of them.
    pub all_requests: u64,
    pub log_requests: u64,
    pub log_paths: BTreeMap<PathDecision, u64>,
    pub fences: u64,
    pub fences_elided: u64,
    /// Mean cycles a log update waited to become durable, over the run.
    pub cwppr: f64,
    pub periods: Vec<PeriodSummary>,
    pub kernel_metrics: Vec<(u32, LocalityMetrics)>,
    pub wpq_bytes_in: u64,
    pub wpq_bytes_drained: u64,
    pub wpq_stall_cycles: f64,
    pub agpm_spills: u64,
    pub agpm_refills: u64,
    #[serde(skip)]
    pub persist: PersistTrace,
    #[serde(skip)]
    pub image: PmImage,
    #[serde(skip)]
    pub plan: ValuePlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Logging,
    Updating,
}

/// Protocol steps a CTA runs between trace events, each scheduled at the
/// time the previous one completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Micro {
    Flush,
    Fence,
    Flag(FlagState),
    EndTx,
}

struct Cta {
    sm: u32,
    warps: u32,
    events: Vec<usize>,
    pos: usize,
    warp_ready: Vec<f64>,
    floor: f64,
    max_ready: f64,
    last_done: f64,
    tx: Option<(TxKey, Phase)>,
    /// Temporal blocks awaiting a clwb: store issue times, log or not.
    flush: BTreeMap<u64, Vec<(f64, bool)>>,
    /// Durable times of persists the next fence must wait for.
    pending: Vec<f64>,
    last_log_path: PathDecision,
    micro: VecDeque<Micro>,
}

impl Cta {
    fn settle(&mut self, t: f64) {
        self.floor = self.floor.max(t);
        self.max_ready = self.max_ready.max(t);
    }

    fn all_ready(&self) -> f64 {
        self.floor.max(self.max_ready)
    }

    fn finish_time(&self) -> f64 {
        self.pending.iter().copied().fold(self.all_ready().max(self.last_done), f64::max)
    }
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    plan: &'a ValuePlan,
    hier: Hierarchy,
    shadow: ShadowDirectory,
    agpm: Agpm,
    lsu: Vec<Server>,
    out: SimOutput,
    wait_sum: f64,
    wait_n: u64,
}

/// Validates, plans values for and simulates a trace.
pub fn simulate(trace: &Trace, cfg: &SimConfig) -> Result<SimOutput, EngineError> {
    let violations = validate(trace);
    if let Some(v) = violations.iter().find(|v| v.rule == "data precedes log") {
        return Err(EngineError::Protocol { index: v.index, detail: v.detail.clone() });
    }
    if !violations.is_empty() {
        return Err(EngineError::Invalid(violations));
    }
    let plan = plan_values(trace);
    let mut sim = Sim {
        cfg,
        plan: &plan,
        hier: Hierarchy::new(&cfg.hierarchy),
        shadow: ShadowDirectory::new(&cfg.hierarchy),
        agpm: Agpm::new(cfg.agpm),
        lsu: vec![Server::default(); cfg.hierarchy.sm_count as usize],
        out: SimOutput::default(),
        wait_sum: 0.0,
        wait_n: 0,
    };
    let mut t = 0.0;
    let mut i = 0;
    while i < trace.events.len() {
        if let TraceEvent::KernelBegin(meta) = &trace.events[i] {
            let end = trace.events[i..]
                .iter()
                .position(|e| matches!(e, TraceEvent::KernelEnd { kernel_id } if *kernel_id == meta.kernel_id))
                .map_or(trace.events.len(), |p| i + p);
            let done = sim.run_kernel(trace, meta, i + 1..end, t)?;
            sim.out.kernel_cycles.push(done - t);
            t = done;
            i = end + 1;
        } else {
            i += 1;
        }
    }
    let Sim { hier, agpm, mut out, wait_sum, wait_n, .. } = sim;
    out.total_cycles = t;
    out.hier = hier.stats.clone();
    out.cwppr = if wait_n == 0 { 0.0 } else { wait_sum / wait_n as f64 };
    out.agpm_spills = agpm.l1.spills + agpm.l2.spills;
    out.agpm_refills = agpm.l1.refills + agpm.l2.refills;
    out.periods = agpm.periods;
    out.kernel_metrics = agpm.kernel_metrics;
    out.wpq_stall_cycles = hier.pm_controller().stall_cycles;
    let (persist, image, bytes_in, drained) = hier.finish();
    out.persist = persist;
    out.image = image;
    out.wpq_bytes_in = bytes_in;
    out.wpq_bytes_drained = drained;
    out.plan = plan;
    Ok(out)
}

fn time_key(t: f64) -> u64 {
    // Non-negative floats order like their bit patterns.
    t.max(0.0).to_bits()
}

impl Sim<'_> {
    fn run_kernel(&mut self, trace: &Trace, meta: &KernelMeta, range: std::ops::Range<usize>, start: f64) -> Result<f64, EngineError> {
        if !self.cfg.base {
            self.agpm.begin_kernel(meta.kernel_id, meta.uses_shared_memory, meta.log_hint);
        }
        let mut by_cta: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for i in range {
            if let Some(c) = trace.events[i].cta_id() {
                by_cta.entry(c).or_default().push(i);
            }
        }
        let sms = self.cfg.hierarchy.sm_count;
        let mut ctas: Vec<Cta> = by_cta
            .into_iter()
            .map(|(id, events)| {
                let warps = events
                    .iter()
                    .filter_map(|&i| match &trace.events[i] {
                        TraceEvent::Mem { instr, .. } => Some(instr.warp_id + 1),
                        _ => None,
                    })
                    .max()
                    .unwrap_or(1);
                Cta {
                    sm: id % sms,
                    warps,
                    events,
                    pos: 0,
                    warp_ready: vec![start; warps as usize],
                    floor: start,
                    max_ready: start,
                    last_done: start,
                    tx: None,
                    flush: BTreeMap::new(),
                    pending: Vec::new(),
                    last_log_path: PathDecision::NonTemporal,
                    micro: VecDeque::new(),
                }
            })
            .collect();
        let cap = self.cfg.hierarchy.warps_per_sm;
        let mut waiting: Vec<VecDeque<usize>> = vec![VecDeque::new(); sms as usize];
        for (ci, c) in ctas.iter().enumerate() {
            waiting[c.sm as usize].push_back(ci);
        }
        let mut used = vec![0u32; sms as usize];
        let mut heap = BinaryHeap::new();
        let admit = |sm: usize, at: f64, used: &mut [u32], waiting: &mut [VecDeque<usize>], ctas: &mut [Cta], heap: &mut BinaryHeap<_>| {
            while let Some(&ci) = waiting[sm].front() {
                let w = ctas[ci].warps;
                if used[sm] > 0 && used[sm] + w > cap {
                    break;
                }
                waiting[sm].pop_front();
                used[sm] += w;
                let c = &mut ctas[ci];
                c.warp_ready.iter_mut().for_each(|r| *r = at);
                c.floor = at;
                c.max_ready = at;
                c.last_done = at;
                heap.push(Reverse((time_key(at), ci)));
            }
        };
        for sm in 0..sms as usize {
            admit(sm, start, &mut used, &mut waiting, &mut ctas, &mut heap);
        }
        let mut end = start;
        while let Some(Reverse((_, ci))) = heap.pop() {
            let c = &mut ctas[ci];
            if let Some(op) = c.micro.pop_front() {
                self.micro(c, op)?;
            } else if self.step(trace, c, c.events[c.pos])? {
                c.pos += 1;
            }
            if !c.micro.is_empty() {
                heap.push(Reverse((time_key(c.all_ready()), ci)));
            } else if c.pos < c.events.len() {
                let t = ready_time(c, &trace.events[c.events[c.pos]]);
                heap.push(Reverse((time_key(t), ci)));
            } else {
                let done = c.finish_time();
                end = end.max(done);
                let sm = c.sm as usize;
                used[sm] -= c.warps;
                admit(sm, done, &mut used, &mut waiting, &mut ctas, &mut heap);
            }
        }
        if !self.cfg.base {
            self.agpm.end_kernel();
        }
        Ok(end)
    }

    /// Handles one trace event. Returns false when the event must run
    /// again after the protocol steps it queued.
    fn step(&mut self, trace: &Trace, c: &mut Cta, idx: usize) -> Result<bool, EngineError> {
        let ev = &trace.events[idx];
        let t = ready_time(c, ev);
        let base = self.cfg.base;
        match ev {
            TraceEvent::TxBegin { kernel_id, cta_id, tx_id } if !base => {
                c.tx = Some((TxKey { kernel: *kernel_id, cta: *cta_id, tx: *tx_id }, Phase::Logging));
            }
            TraceEvent::TxCommit { .. } if !base => {
                let Some((_, phase)) = c.tx else {
                    return Err(EngineError::Protocol { index: idx, detail: "commit outside a transaction".into() });
                };
                if phase == Phase::Logging {
                    self.begin_updates(c);
                }
                let mutant = self.cfg.strategy == StrategyKind::DataFirstMutant;
                c.micro.extend([Micro::Flush, Micro::Fence]);
                if mutant {
                    c.micro.extend([Micro::Flag(FlagState::InTx), Micro::Fence]);
                }
                c.micro.extend([Micro::Flag(FlagState::Complete), Micro::Fence, Micro::EndTx]);
            }
            TraceEvent::Fence { .. } if !base => c.micro.extend([Micro::Flush, Micro::Fence]),
            TraceEvent::SyncThreads { .. } => c.settle(c.all_ready()),
            TraceEvent::Mem { instr, .. } => {
                if !base && instr.role == Role::DataUpdate && matches!(c.tx, Some((_, Phase::Logging))) {
                    self.begin_updates(c);
                    return Ok(false);
                }
                self.mem(c, t, idx, instr)?;
            }
            _ => {}
        }
        Ok(true)
    }

    fn micro(&mut self, c: &mut Cta, op: Micro) -> Result<(), EngineError> {
        let t = c.all_ready();
        match op {
            Micro::Flush => {
                let done = self.flush(c, t)?;
                c.settle(done);
            }
            Micro::Fence => {
                self.fence(c, t);
            }
            Micro::Flag(state) => {
                let Some((key, _)) = c.tx else { return Ok(()) };
                let done = self.write_flag(c, t, key, state)?;
                c.settle(done);
            }
            Micro::EndTx => c.tx = None,
        }
        Ok(())
    }

    fn mem(&mut self, c: &mut Cta, t0: f64, idx: usize, instr: &crate::trace::MemInstr) -> Result<(), EngineError> {
        let base = self.cfg.base;
        if base && instr.role == Role::LogUpdate {
            return Ok(());
        }
        let co = coalesce(instr);
        self.out.mem_instrs += 1;
        self.out.coalescing[degree_bucket(co.degree())] += 1;
        let role = if base { Role::Plain } else { instr.role };
        let mut t = t0;
        let key = c.tx.map(|(k, _)| k);
        let pm_store = instr.op == MemOp::Store && instr.is_pm();
        if pm_store && !base {
            let source = match role {
                Role::LogUpdate => PersistSource::Log,
                Role::DataUpdate => PersistSource::Data,
                Role::Plain => PersistSource::Plain,
            };
            let tx = if role == Role::Plain { None } else { key };
            for &(a, v) in self.plan.stores.get(&idx).map(Vec::as_slice).unwrap_or(&[]) {
                self.hier.write_arch(a, v, Writer { source, tx });
            }
        }
        let is_log = role == Role::LogUpdate;
        let sm = c.sm;
        let w = instr.warp_id as usize;
        let mut ready = t;
        for seg in &co.transactions {
            let ti = self.lsu[sm as usize].serve(t, self.cfg.hierarchy.issue_cycles);
            t = ti;
            self.out.all_requests += 1;
            if is_log {
                self.out.log_requests += 1;
            }
            if !base {
                let obs = self.shadow.observe(sm, seg.segment, seg.mask, instr.op);
                let refills = self.agpm.l1.refills + self.agpm.l2.refills;
                self.agpm.observe(obs, seg.segment, seg.mask, instr.is_pm(), is_log);
                for _ in refills..self.agpm.l1.refills + self.agpm.l2.refills {
                    self.hier.background_dram_read(ti, seg.segment);
                }
                self.agpm.count_request(is_log);
            }
            if !pm_store {
                let r = self.hier.access_temporal(ti, sm, seg.segment, seg.mask, instr.op)?;
                if instr.op == MemOp::Load {
                    ready = ready.max(r.done_at);
                }
                c.last_done = c.last_done.max(r.done_at);
                continue;
            }
            let ctx = RequestCtx {
                op: instr.op,
                role,
                degree: co.degree(),
                mshr_exhausted: matches!(self.cfg.strategy, StrategyKind::Bucl { .. }) && self.hier.mshr_free(sm, ti) == 0,
            };
            let path = if base {
                PathDecision::Temporal
            } else {
                match decide(self.cfg.strategy, &ctx) {
                    Route::Fixed(p) => p,
                    Route::Adaptive => self.agpm.select_path().0,
                }
            };
            if is_log {
                *self.out.log_paths.entry(path).or_default() += 1;
                c.last_log_path = path;
            }
            let change = if is_log && self.cfg.strategy == StrategyKind::Agpm {
                self.agpm.path_change(seg.segment, path)
            } else {
                None
            };
            let done = self.persist_store(c, ti, seg.segment, seg.mask, path, role, change)?;
            c.last_done = c.last_done.max(done);
            if is_log && !base {
                self.agpm.after_log();
            }
        }
        let slot = &mut c.warp_ready[w];
        *slot = slot.max(ready).max(t);
        c.max_ready = c.max_ready.max(*slot);
        Ok(())
    }

    fn log_wait(&mut self, wait: f64) {
        self.wait_sum += wait;
        self.wait_n += 1;
        if !self.cfg.base {
            self.agpm.log_done(wait);
        }
    }

    /// Issues one PM store segment on `path`; returns when it is performed.
    #[allow(clippy::too_many_arguments)]
    fn persist_store(
        &mut self,
        c: &mut Cta,
        t: f64,
        block: u64,
        mask: u128,
        path: PathDecision,
        role: Role,
        change: Option<PathChange>,
    ) -> Result<f64, EngineError> {
        let is_log = role == Role::LogUpdate;
        match path {
            PathDecision::NonTemporal => {
                let r = self.hier.store_nontemporal(t, c.sm, block, mask)?;
                let d = r.durable_at.unwrap_or(r.done_at);
                c.pending.push(d);
                if change == Some(PathChange::SuppressClwb) {
                    // The nt-store carried the block's dirty bytes.
                    for (iss, log) in c.flush.remove(&block).unwrap_or_default() {
                        if log {
                            self.log_wait(d - iss);
                        }
                    }
                }
                if is_log {
                    self.log_wait(d - t);
                }
                Ok(d)
            }
            PathDecision::Temporal => {
                let r = self.hier.access_temporal(t, c.sm, block, mask, MemOp::Store)?;
                if role == Role::Plain || self.cfg.base {
                    return Ok(r.done_at);
                }
                c.flush.entry(block).or_default().push((t, is_log));
                if change == Some(PathChange::AppendClwb) {
                    let tt = self.lsu[c.sm as usize].serve(t, self.cfg.hierarchy.issue_cycles);
                    self.clwb_block(c, tt, block)?;
                }
                Ok(r.done_at)
            }
        }
    }

    fn clwb_block(&mut self, c: &mut Cta, t: f64, block: u64) -> Result<(), EngineError> {
        let issues = c.flush.remove(&block).unwrap_or_default();
        let r = self.hier.clwb(t, c.sm, block)?;
        let d = r.durable_at.unwrap_or(r.done_at);
        if r.durable_at.is_some() {
            c.pending.push(d);
        }
        for (iss, log) in issues {
            if log {
                self.log_wait(d - iss);
            }
        }
        Ok(())
    }

    /// clwb every pending temporal block, in address order.
    fn flush(&mut self, c: &mut Cta, t: f64) -> Result<f64, EngineError> {
        let mut tt = t.max(c.all_ready());
        let blocks: Vec<u64> = c.flush.keys().copied().collect();
        for b in blocks {
            tt = self.lsu[c.sm as usize].serve(tt, self.cfg.hierarchy.issue_cycles);
            self.clwb_block(c, tt, b)?;
        }
        Ok(tt)
    }

    /// CTA-wide sfence; every warp resumes at its completion.
    fn fence(&mut self, c: &mut Cta, t: f64) -> f64 {
        let now = t.max(c.all_ready());
        if self.cfg.strategy == StrategyKind::ThemisSimplified {
            let bound = now + self.hier.min_persist_latency();
            if c.pending.iter().all(|&d| d <= bound) {
                self.out.fences_elided += 1;
                c.pending.clear();
                c.settle(now);
                return now;
            }
        }
        self.out.fences += 1;
        let done = self.hier.sfence(now, c.pending.drain(..));
        c.settle(done);
        done
    }

    fn flag_path(&self, c: &Cta) -> PathDecision {
        match self.cfg.strategy {
            // A one-byte flag store has degree 1, never above a BUCL threshold.
            StrategyKind::StaticTemporal | StrategyKind::DataFirstMutant | StrategyKind::Bucl { .. } => PathDecision::Temporal,
            StrategyKind::StaticNonTemporal | StrategyKind::PmSpec | StrategyKind::ThemisSimplified => PathDecision::NonTemporal,
            StrategyKind::Agpm => c.last_log_path,
        }
    }

    fn write_flag(&mut self, c: &mut Cta, t: f64, key: TxKey, state: FlagState) -> Result<f64, EngineError> {
        let tx = self
            .plan
            .tx(key)
            .ok_or_else(|| EngineError::Protocol { index: usize::MAX, detail: format!("no layout for {key:?}") })?;
        let addr = tx.flag;
        self.hier.write_arch(addr, state as u8, Writer { source: PersistSource::Flag, tx: Some(key) });
        let block = addr & !127;
        let mask = 1u128 << (addr - block);
        let sm = c.sm as usize;
        let ti = self.lsu[sm].serve(t, self.cfg.hierarchy.issue_cycles);
        match self.flag_path(c) {
            PathDecision::NonTemporal => {
                let r = self.hier.store_nontemporal(ti, c.sm, block, mask)?;
                c.pending.push(r.durable_at.unwrap_or(r.done_at));
            }
            PathDecision::Temporal => {
                self.hier.access_temporal(ti, c.sm, block, mask, MemOp::Store)?;
                let tc = self.lsu[sm].serve(ti, self.cfg.hierarchy.issue_cycles);
                c.flush.entry(block).or_default().push((ti, false));
                self.clwb_block(c, tc, block)?;
            }
        }
        Ok(ti)
    }

    /// Log phase to update phase: logs durable, then the in-flight flag.
    fn begin_updates(&mut self, c: &mut Cta) {
        if let Some((key, _)) = c.tx {
            c.tx = Some((key, Phase::Updating));
        }
        if self.cfg.strategy != StrategyKind::DataFirstMutant {
            c.micro.extend([Micro::Flush, Micro::Fence, Micro::Flag(FlagState::InTx), Micro::Fence]);
        }
    }
}

/// Earliest issue time of the CTA's next event.
fn ready_time(c: &Cta, ev: &TraceEvent) -> f64 {
    match ev {
        TraceEvent::Mem { instr, .. } => c.floor.max(c.warp_ready[instr.warp_id as usize]),
        TraceEvent::TxBegin { .. } => c.floor,
        _ => c.all_ready(),
    }
}
