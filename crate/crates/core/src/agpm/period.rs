use serde::{Deserialize, Serialize};

pub const INITIAL_THRESHOLD: u64 = 10_000;
pub const MIN_THRESHOLD: u64 = 100;

/// Grows the threshold by 10% when waiting per PM request got worse over
/// the last period, shrinks it by 10% otherwise.
pub fn update_threshold(threshold: u64, cwppr_prev: f64, cwppr_sampling: f64) -> u64 {
    let factor = if cwppr_sampling > cwppr_prev { 1.1 } else { 0.9 };
    ((threshold as f64 * factor).round() as u64).max(MIN_THRESHOLD)
}

/// Mean wait per completed PM request, or `previous` when none completed.
pub fn cwppr_sample(completed: u64, cycles_waited: f64, previous: f64) -> f64 {
    if completed == 0 {
        previous
    } else {
        cycles_waited / completed as f64
    }
}

/// What one finished period looked like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub kernel: u32,
    pub index: u32,
    pub threshold: u64,
    pub logs: u64,
    pub cwppr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodState {
    pub threshold: u64,
    pub log_count: u64,
    /// `None` until a first period has closed.
    pub cwppr_prev: Option<f64>,
    pub cwppr_current: f64,
    pub period_index: u32,
    wait_cycles: f64,
    completed: u64,
}

impl PeriodState {
    /// A kernel announcing fewer expected logs than the default starts with
    /// a correspondingly short first period.
    pub fn new(log_hint: Option<u64>) -> Self {
        let threshold = log_hint.map_or(INITIAL_THRESHOLD, |h| h.clamp(MIN_THRESHOLD, INITIAL_THRESHOLD));
        PeriodState {
            threshold,
            log_count: 0,
            cwppr_prev: None,
            cwppr_current: 0.0,
            period_index: 0,
            wait_cycles: 0.0,
            completed: 0,
        }
    }

    /// Adds one completed log request that waited `wait` cycles.
    pub fn observe(&mut self, wait: f64) {
        self.wait_cycles += wait;
        self.completed += 1;
    }

    pub fn count_log(&mut self) -> bool {
        self.log_count += 1;
        self.log_count >= self.threshold
    }

    /// Closes the period and returns its record. The caller flushes the
    /// buffers.
    pub fn end_period(&mut self, kernel: u32) -> PeriodRecord {
        let sample = cwppr_sample(self.completed, self.wait_cycles, self.cwppr_current);
        let rec = PeriodRecord { kernel, index: self.period_index, threshold: self.threshold, logs: self.log_count, cwppr: sample };
        if let Some(prev) = self.cwppr_prev {
            self.threshold = update_threshold(self.threshold, prev, sample);
        }
        self.cwppr_current = sample;
        self.cwppr_prev = Some(sample);
        self.log_count = 0;
        self.wait_cycles = 0.0;
        self.completed = 0;
        self.period_index += 1;
        rec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        assert_eq!(update_threshold(10_000, 5.0, 6.0), 11_000);
        assert_eq!(update_threshold(10_000, 6.0, 5.0), 9_000);
        assert_eq!(update_threshold(11_000, 5.0, 6.0), 12_100);
        assert_eq!(update_threshold(100, 6.0, 5.0), 100);
    }

    #[test]
    fn sampling() {
        assert_eq!(cwppr_sample(2, 300.0, 9.0), 150.0);
        assert_eq!(cwppr_sample(0, 0.0, 9.0), 9.0);
    }

    #[test]
    fn small_kernels_start_short() {
        assert_eq!(PeriodState::new(Some(2_000)).threshold, 2_000);
        assert_eq!(PeriodState::new(Some(50_000)).threshold, 10_000);
        assert_eq!(PeriodState::new(None).threshold, 10_000);
    }

    #[test]
    fn periods_adapt_threshold() {
        let mut p = PeriodState::new(None);
        for _ in 0..9_999 {
            assert!(!p.count_log());
        }
        assert!(p.count_log());
        p.observe(5.0);
        let r = p.end_period(0);
        assert_eq!((r.logs, r.cwppr, p.threshold), (10_000, 5.0, 10_000));
        p.observe(6.0);
        p.end_period(0);
        assert_eq!(p.threshold, 11_000);
        assert_eq!(p.period_index, 2);
        assert_eq!(p.log_count, 0);
    }
}
