use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::buffer::{AgpmBuffer, BufferGeometry, Level, MARK_TEMPORAL, MARK_VALID};
use super::classify::{classify_reason, reason_to_path, PathDecision, Reason};
use super::metrics::{compute_metrics, running_metrics, LocalityMetrics, MetricFormula};
use super::period::{PeriodRecord, PeriodState};
use crate::hierarchy::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgpmOptions {
    pub geometry: BufferGeometry,
    pub metric_formula: MetricFormula,
    /// Log updates at the start of each kernel routed non-temporally before
    /// the counters are trusted.
    pub warmup: u64,
}

impl Default for AgpmOptions {
    fn default() -> Self {
        AgpmOptions { geometry: BufferGeometry::default(), metric_formula: MetricFormula::Rehit, warmup: 100 }
    }
}

/// Side effect required when a log block changes path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathChange {
    /// Drop the block's pending clwb; the nt-store carries its bytes.
    SuppressClwb,
    /// Follow the store with an immediate clwb.
    AppendClwb,
}

/// Per-period histograms of classifier output and chosen paths.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodSummary {
    #[serde(flatten)]
    pub record: Option<PeriodRecord>,
    pub reasons: BTreeMap<Reason, u64>,
    pub paths: BTreeMap<PathDecision, u64>,
    pub warmup_decisions: u64,
    /// Metrics just before the period's flush.
    pub metrics: LocalityMetrics,
}

/// Both AGPM buffers plus the period controller for the running kernel.
#[derive(Debug, Clone)]
pub struct Agpm {
    opts: AgpmOptions,
    pub l1: AgpmBuffer,
    pub l2: AgpmBuffer,
    period: PeriodState,
    kernel: u32,
    shared: bool,
    all: u64,
    log: u64,
    current: PeriodSummary,
    pub periods: Vec<PeriodSummary>,
    /// Per kernel, the metrics of its period with the most log updates.
    pub kernel_metrics: Vec<(u32, LocalityMetrics)>,
    longest: Option<(u64, LocalityMetrics)>,
}

impl Agpm {
    pub fn new(opts: AgpmOptions) -> Self {
        Agpm {
            l1: AgpmBuffer::new(Level::L1, opts.geometry, opts.metric_formula),
            l2: AgpmBuffer::new(Level::L2, opts.geometry, opts.metric_formula),
            period: PeriodState::new(None),
            kernel: 0,
            shared: false,
            all: 0,
            log: 0,
            current: PeriodSummary::default(),
            periods: Vec::new(),
            kernel_metrics: Vec::new(),
            longest: None,
            opts,
        }
    }

    pub fn options(&self) -> &AgpmOptions {
        &self.opts
    }

    pub fn period(&self) -> &PeriodState {
        &self.period
    }

    pub fn begin_kernel(&mut self, kernel: u32, uses_shared_memory: bool, log_hint: Option<u64>) {
        self.kernel = kernel;
        self.shared = uses_shared_memory;
        self.all = 0;
        self.log = 0;
        self.period = PeriodState::new(log_hint);
        self.l1.clear();
        self.l2.clear();
        self.current = PeriodSummary::default();
        self.longest = None;
    }

    pub fn end_kernel(&mut self) {
        self.close_period();
        let m = self.longest.take().map_or_else(|| self.metrics(), |(_, m)| m);
        self.kernel_metrics.push((self.kernel, m));
    }

    fn close_period(&mut self) {
        let metrics = self.metrics();
        let rec = self.period.end_period(self.kernel);
        if self.longest.is_none_or(|(n, _)| rec.logs > n) {
            self.longest = Some((rec.logs, metrics));
        }
        let mut summary = std::mem::take(&mut self.current);
        summary.metrics = metrics;
        summary.record = Some(rec);
        self.periods.push(summary);
        self.l1.clear();
        self.l2.clear();
    }

    /// Counts one segment request toward the kernel totals.
    pub fn count_request(&mut self, is_log: bool) {
        self.all += 1;
        if is_log {
            self.log += 1;
        }
    }

    /// Feeds what a request saw in the (temporal-path) cache directory.
    pub fn observe(&mut self, obs: Observation, block: u64, mask: u128, is_pm: bool, is_log: bool) {
        fn apply(b: &mut AgpmBuffer, hit: bool, block: u64, mask: u128, is_pm: bool, is_log: bool) {
            if hit {
                b.notify_hit(block, mask, is_pm, is_log);
            } else if is_pm {
                b.record_new(block, mask, is_log);
            }
        }
        apply(&mut self.l1, obs.l1_hit, block, mask, is_pm, is_log);
        if let Some(hit) = obs.l2_hit {
            apply(&mut self.l2, hit, block, mask, is_pm, is_log);
        }
    }

    pub fn metrics(&self) -> LocalityMetrics {
        running_metrics(&self.l1, &self.l2, self.all, self.log)
    }

    pub fn scanned_metrics(&self) -> LocalityMetrics {
        compute_metrics(&self.l1, &self.l2, self.all, self.log)
    }

    fn in_warmup(&self) -> bool {
        self.period.period_index == 0 && self.period.log_count < self.opts.warmup
    }

    /// Chooses the path of one log update and reports the classifier's
    /// reason (none during warm-up).
    pub fn select_path(&mut self) -> (PathDecision, Option<Reason>) {
        let (path, reason) = if self.in_warmup() {
            self.current.warmup_decisions += 1;
            (PathDecision::NonTemporal, None)
        } else {
            let r = classify_reason(&self.metrics(), self.shared);
            *self.current.reasons.entry(r).or_default() += 1;
            (reason_to_path(r), Some(r))
        };
        *self.current.paths.entry(path).or_default() += 1;
        (path, reason)
    }

    /// Updates the block's path-change mark and returns the required side
    /// effect when the path differs from the block's last one.
    pub fn path_change(&mut self, block: u64, path: PathDecision) -> Option<PathChange> {
        let mark = self.l1.mark(block);
        let temporal = path == PathDecision::Temporal;
        let new = MARK_VALID | if temporal { MARK_TEMPORAL } else { 0 };
        self.l1.set_mark(block, new);
        if mark & MARK_VALID == 0 || mark == new {
            return None;
        }
        Some(if temporal { PathChange::AppendClwb } else { PathChange::SuppressClwb })
    }

    /// Records a completed log update; closes the period at the threshold.
    pub fn log_done(&mut self, wait: f64) {
        self.period.observe(wait);
    }

    pub fn after_log(&mut self) {
        if self.period.count_log() {
            self.close_period();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn miss() -> Observation {
        Observation { l1_hit: false, l2_hit: Some(false) }
    }

    #[test]
    fn warmup_is_non_temporal() {
        let mut a = Agpm::new(AgpmOptions::default());
        a.begin_kernel(0, false, None);
        for _ in 0..5 {
            a.count_request(true);
            assert_eq!(a.select_path(), (PathDecision::NonTemporal, None));
            a.after_log();
        }
    }

    #[test]
    fn flip_to_temporal_appends_clwb() {
        let mut a = Agpm::new(AgpmOptions::default());
        a.begin_kernel(0, false, None);
        a.observe(miss(), 0, 1, true, true);
        assert_eq!(a.path_change(0, PathDecision::NonTemporal), None);
        assert_eq!(a.path_change(0, PathDecision::NonTemporal), None);
        assert_eq!(a.path_change(0, PathDecision::Temporal), Some(PathChange::AppendClwb));
        assert_eq!(a.path_change(0, PathDecision::NonTemporal), Some(PathChange::SuppressClwb));
    }

    #[test]
    fn threshold_closes_period_and_flushes() {
        let mut a = Agpm::new(AgpmOptions::default());
        a.begin_kernel(0, false, Some(200));
        for i in 0..200u64 {
            a.count_request(true);
            a.observe(miss(), i * 128, 1, true, true);
            a.log_done(10.0);
            a.after_log();
        }
        assert_eq!(a.periods.len(), 1);
        assert_eq!(a.l1.entries(), 0);
        assert_eq!(a.periods[0].record.as_ref().unwrap().cwppr, 10.0);
    }

    #[test]
    fn running_equals_scan() {
        let mut a = Agpm::new(AgpmOptions::default());
        a.begin_kernel(0, false, None);
        for i in 0..3000u64 {
            let block = (i * 7919 % 1500) * 128;
            let obs = Observation { l1_hit: i % 3 == 0, l2_hit: (i % 3 != 0).then_some(i % 2 == 0) };
            a.observe(obs, block, 0xFF << (i % 15 * 8), true, i % 4 == 0);
        }
        assert_eq!(a.metrics(), a.scanned_metrics());
    }
}
