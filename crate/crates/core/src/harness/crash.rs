use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, RunConfig};
use crate::engine::simulate;
use crate::persist::{check_atomicity, recover, PmImage, TxViolation};
use crate::strategy::StrategyKind;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashPoint {
    /// Durable writes that survived the crash.
    pub point: usize,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<TxViolation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrashReport {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub persist_len: usize,
    pub transactions: usize,
    pub passed: usize,
    pub failed: usize,
    /// Sorted by crash point; duplicates from sampling are kept.
    pub points: Vec<CrashPoint>,
}

impl CrashReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

/// Crashes the run at `n_points` uniformly drawn points plus both ends,
/// recovers each image and checks all-or-nothing.
pub fn crash_test(cfg: &RunConfig, trace: &Trace, n_points: usize, seed: u64) -> Result<CrashReport, HarnessError> {
    if n_points == 0 {
        return Err(HarnessError::NoCrashPoints);
    }
    cfg.check()?;
    let out = simulate(trace, &cfg.sim(cfg.strategy, false))?;
    let len = out.persist.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at: Vec<usize> = (0..n_points).map(|_| rng.gen_range(0..=len)).collect();
    at.push(0);
    at.push(len);
    at.sort_unstable();

    // Points are sorted, so one image is replayed forward once.
    let pre = PmImage::new();
    let mut img = pre.clone();
    let mut applied = 0;
    let mut points = Vec::with_capacity(at.len());
    for p in at {
        for rec in &out.persist.records[applied..p] {
            img.apply(rec);
        }
        applied = p;
        points.push(match recover(&img, &out.plan.txs) {
            Ok(rec) => {
                let r = check_atomicity(&pre, &rec, &out.plan.txs);
                CrashPoint { point: p, ok: r.ok, violations: r.violations, recovery_error: None }
            }
            Err(e) => CrashPoint { point: p, ok: false, violations: Vec::new(), recovery_error: Some(e.to_string()) },
        });
    }
    let failed = points.iter().filter(|p| !p.ok).count();
    Ok(CrashReport {
        strategy: cfg.strategy,
        seed,
        persist_len: len,
        transactions: out.plan.txs.len(),
        passed: points.len() - failed,
        failed,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persist::crash_at;

    fn fixture() -> Trace {
        crate::trace::parse_trace(&include_bytes!("../../fixtures/mini_undo.trc")[..]).unwrap()
    }

    #[test]
    fn endpoints_always_present() {
        let r = crash_test(&RunConfig::new(StrategyKind::Agpm), &fixture(), 5, 1).unwrap();
        assert_eq!(r.points.len(), 7);
        assert_eq!(r.points.first().unwrap().point, 0);
        assert_eq!(r.points.last().unwrap().point, r.persist_len);
        assert!(r.all_passed());
    }

    #[test]
    fn incremental_replay_matches_fresh_images() {
        let cfg = RunConfig::new(StrategyKind::StaticTemporal);
        let out = simulate(&fixture(), &cfg.sim(cfg.strategy, false)).unwrap();
        let r = crash_test(&cfg, &fixture(), 40, 9).unwrap();
        for p in &r.points {
            let rec = recover(&crash_at(&out.persist, p.point).unwrap(), &out.plan.txs).unwrap();
            assert_eq!(check_atomicity(&PmImage::new(), &rec, &out.plan.txs).ok, p.ok);
        }
    }

    #[test]
    fn mutant_is_caught() {
        let r = crash_test(&RunConfig::new(StrategyKind::DataFirstMutant), &fixture(), 200, 2).unwrap();
        assert!(r.failed >= 1);
    }

    #[test]
    fn zero_points_rejected() {
        assert!(matches!(
            crash_test(&RunConfig::new(StrategyKind::Agpm), &fixture(), 0, 0),
            Err(HarnessError::NoCrashPoints)
        ));
    }
}
