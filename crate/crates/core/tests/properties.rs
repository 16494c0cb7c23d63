mod support;

use agpm_core::agpm::{update_threshold, Reason, MIN_THRESHOLD};
use agpm_core::engine::{simulate, SimConfig};
use agpm_core::hierarchy::{HierarchyConfig, PmController};
use agpm_core::persist::{check_atomicity, check_order, crash_at, recover, PersistRecord, PmImage};
use agpm_core::strategy::StrategyKind;
use agpm_core::trace::{gen_synthetic, parse_str, serialize, validate, Family, GenParams, Trace};
use proptest::prelude::*;

/// Every family except e needs enough log updates to leave reason e.
fn small_trace(r: Reason, ctas: u32, logs: u64, seed: u64) -> Trace {
    let logs = if r == Reason::E { logs.min(100) } else { logs + 120 };
    let p = GenParams { ctas, log_updates: logs, data_updates: logs / 2, ..GenParams::default() };
    gen_synthetic(Family::Reason(r), &p, seed).unwrap()
}

fn reason() -> impl Strategy<Value = Reason> {
    prop::sample::select(Reason::ALL.to_vec())
}

fn strategy() -> impl Strategy<Value = StrategyKind> {
    prop::sample::select(StrategyKind::COMPARED.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_traces_round_trip_and_validate(r in reason(), ctas in 1u32..6, logs in 20u64..200, seed: u64) {
        let t = small_trace(r, ctas, logs, seed);
        prop_assert!(validate(&t).is_empty());
        let text = serialize(&t);
        let back = parse_str(&text).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(serialize(&back), text);
    }

    #[test]
    fn every_crash_point_recovers_atomically(
        r in reason(), k in strategy(), logs in 20u64..160, seed: u64, frac in 0.0f64..=1.0,
    ) {
        let t = small_trace(r, 4, logs, seed);
        let out = simulate(&t, &SimConfig::new(HierarchyConfig::default(), k)).unwrap();
        prop_assert!(check_order(&out.persist, &out.plan.txs).is_empty());
        let point = (frac * out.persist.len() as f64) as usize;
        let img = crash_at(&out.persist, point).unwrap();
        let rec = recover(&img, &out.plan.txs).unwrap();
        prop_assert!(check_atomicity(&PmImage::new(), &rec, &out.plan.txs).ok);
        // Recovering an already recovered image changes nothing.
        let again = recover(&rec, &out.plan.txs).unwrap();
        prop_assert!(again.same_contents(&rec));
    }

    #[test]
    fn full_replay_equals_final_image(r in reason(), k in strategy(), seed: u64) {
        let t = small_trace(r, 2, 60, seed);
        let out = simulate(&t, &SimConfig::new(HierarchyConfig::default(), k)).unwrap();
        prop_assert!(crash_at(&out.persist, out.persist.len()).unwrap().same_contents(&out.image));
        prop_assert!(crash_at(&out.persist, out.persist.len() + 1).is_err());
    }

    #[test]
    fn lru_matches_reference(sets in 1usize..16, assoc in 1usize..8, seed: u64) {
        let ops = support::random_cache_ops(seed, 2_000, (sets * assoc * 2) as u64);
        let (got, want) = support::eviction_sequences(&ops, sets, assoc);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn wpq_conserves_bytes(
        writes in prop::collection::vec((0u64..64, any::<u128>(), 0.0f64..50.0), 1..300),
        channels in 1usize..9, capacity in 1usize..16,
    ) {
        let mut c = PmController::new(channels, capacity, 108.0);
        let mut now = 0.0;
        let mut sent = 0u64;
        let mut image = PmImage::new();
        for (seq, &(b, mask, gap)) in writes.iter().enumerate() {
            let mask = mask | 1;
            now += gap;
            let rec = PersistRecord { timestamp: now, seq: seq as u64, block: b * 128, mask, data: [seq as u8; 128], writers: vec![] };
            image.apply(&rec);
            sent += u64::from(mask.count_ones());
            let accepted = c.enqueue(now, rec);
            prop_assert!(accepted >= now);
        }
        let (trace, img, bytes_in, drained) = c.finish();
        prop_assert_eq!(bytes_in, sent);
        prop_assert_eq!(drained, sent);
        prop_assert_eq!(trace.total_bytes(), sent);
        prop_assert!(img.same_contents(&image));
    }

    #[test]
    fn counters_match_oracle(seed: u64, n in 100usize..3_000, sets in prop::sample::select(vec![1usize, 2, 4, 8, 64])) {
        let (agpm, oracle, all, log) = support::counters_vs_oracle(&support::random_accesses(seed, n), sets);
        let want = oracle.metrics(all, log);
        prop_assert_eq!(agpm.scanned_metrics(), want);
        prop_assert_eq!(agpm.metrics(), want);
    }

    #[test]
    fn threshold_moves_ten_percent(thr in MIN_THRESHOLD..1_000_000, prev in 0.0f64..100.0, cur in 0.0f64..100.0) {
        let next = update_threshold(thr, prev, cur);
        prop_assert!(next >= MIN_THRESHOLD);
        if cur > prev {
            prop_assert_eq!(next, (thr as f64 * 1.1).round() as u64);
        } else {
            prop_assert_eq!(next, ((thr as f64 * 0.9).round() as u64).max(MIN_THRESHOLD));
        }
    }
}
