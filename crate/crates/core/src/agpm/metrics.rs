use serde::{Deserialize, Serialize};

use super::buffer::{AgpmBuffer, Way};

/// How counters become metric sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFormula {
    /// Re-hits: a byte referenced `c` times contributes `c - 1`.
    #[default]
    Rehit,
    /// Every counter above 1 contributes its full value.
    Literal,
}

impl std::str::FromStr for MetricFormula {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rehit" => Ok(MetricFormula::Rehit),
            "literal" => Ok(MetricFormula::Literal),
            other => Err(format!("unknown metric formula {other:?} (expected rehit or literal)")),
        }
    }
}

/// The ten locality variables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LocalityMetrics {
    pub l1d_t_all: u64,
    pub l1d_t_log: u64,
    pub l1d_s_all: u64,
    pub l1d_s_log: u64,
    pub l2_t_all: u64,
    pub l2_t_log: u64,
    pub l2_s_all: u64,
    pub l2_s_log: u64,
    pub all: u64,
    pub log: u64,
}

impl LocalityMetrics {
    pub fn l1d(&self) -> [u64; 4] {
        [self.l1d_t_all, self.l1d_t_log, self.l1d_s_all, self.l1d_s_log]
    }

    pub fn l2(&self) -> [u64; 4] {
        [self.l2_t_all, self.l2_t_log, self.l2_s_all, self.l2_s_log]
    }
}

fn level_metrics(b: &AgpmBuffer, scan: bool) -> [u64; 4] {
    let sums = |w| if scan { b.scan_sums(w) } else { b.running_sums(w) };
    let (t_all, blk_all) = sums(Way::All);
    let (t_log, blk_log) = sums(Way::Log);
    [t_all, t_log, t_all + blk_all, t_log + blk_log]
}

fn assemble(l1: [u64; 4], l2: [u64; 4], all: u64, log: u64) -> LocalityMetrics {
    LocalityMetrics {
        l1d_t_all: l1[0],
        l1d_t_log: l1[1],
        l1d_s_all: l1[2],
        l1d_s_log: l1[3],
        l2_t_all: l2[0],
        l2_t_log: l2[1],
        l2_s_all: l2[2],
        l2_s_log: l2[3],
        all,
        log,
    }
}

/// Metrics by a full scan of both buffers (including spilled entries).
pub fn compute_metrics(l1: &AgpmBuffer, l2: &AgpmBuffer, all: u64, log: u64) -> LocalityMetrics {
    assemble(level_metrics(l1, true), level_metrics(l2, true), all, log)
}

/// Same result as [`compute_metrics`], read from the running sums.
pub fn running_metrics(l1: &AgpmBuffer, l2: &AgpmBuffer, all: u64, log: u64) -> LocalityMetrics {
    assemble(level_metrics(l1, false), level_metrics(l2, false), all, log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agpm::buffer::{BufferGeometry, Level};

    fn pair(f: MetricFormula) -> (AgpmBuffer, AgpmBuffer) {
        (AgpmBuffer::new(Level::L1, BufferGeometry::default(), f), AgpmBuffer::new(Level::L2, BufferGeometry::default(), f))
    }

    #[test]
    fn empty_is_zero() {
        let (a, b) = pair(MetricFormula::Rehit);
        assert_eq!(compute_metrics(&a, &b, 0, 0), LocalityMetrics::default());
    }

    #[test]
    fn three_references_give_two_rehits() {
        let (mut a, b) = pair(MetricFormula::Rehit);
        a.record_new(0, 1, true);
        a.notify_hit(0, 1, true, true);
        a.notify_hit(0, 1, true, true);
        let m = compute_metrics(&a, &b, 3, 3);
        assert_eq!(m.l1d_t_log, 2);
        assert_eq!(m.l1d_s_log, 4);
        assert_eq!(m, running_metrics(&a, &b, 3, 3));
    }

    #[test]
    fn literal_formula_counts_whole_counter() {
        let (mut a, b) = pair(MetricFormula::Literal);
        a.record_new(0, 1, true);
        a.notify_hit(0, 1, true, true);
        let m = compute_metrics(&a, &b, 2, 2);
        assert_eq!(m.l1d_t_log, 2);
        assert_eq!(m, running_metrics(&a, &b, 2, 2));
    }

    #[test]
    fn parses_formula_names() {
        assert_eq!("literal".parse::<MetricFormula>().unwrap(), MetricFormula::Literal);
        assert!("sum".parse::<MetricFormula>().is_err());
    }
}
