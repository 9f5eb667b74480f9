use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use spotarc::analysis::{pearson, value_distribution, AlignedSeriesPair, Correlation};
use spotarc::model::{
    interruption_band_to_score, timestamp_from_secs, ArchiveRecord, InstanceType, InterruptionBand,
    InterruptionFreeScore, Location, Metric, RequestStatus,
};
use spotarc::planner::{
    first_fit_decreasing, optimal_bin_count_oracle, pack, plan_queries, shard_accounts, SupportMap,
};
use spotarc::sim::{Universe, VendorSim};
use spotarc::store::{forward_fill, KeyFilter, SeriesKey, Store};

const T0: i64 = 1_640_995_200;

fn two_pass(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx.sqrt() * syy.sqrt()))
}

fn series_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn band_score_round_trip(i in 0usize..5) {
        let band = InterruptionBand::ALL[i];
        let score = interruption_band_to_score(band);
        prop_assert_eq!(score.to_band(), band);
        prop_assert_eq!(InterruptionFreeScore::from_value(score.value()).unwrap(), score);
    }

    #[test]
    fn terminal_absorbs(i in 0usize..4) {
        let next = RequestStatus::ALL[i];
        prop_assert_eq!(
            RequestStatus::Terminal.can_transition(next),
            next == RequestStatus::Terminal
        );
    }

    #[test]
    fn pearson_matches_two_pass((x, y) in series_pair()) {
        let got = pearson(&AlignedSeriesPair::new(x.clone(), y.clone()).unwrap()).value();
        let want = two_pass(&x, &y);
        match (got, want) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b),
            (None, None) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn pearson_symmetric_and_affine_invariant(
        (x, y) in series_pair(),
        a in 0.01f64..50.0,
        b in -1000.0f64..1000.0,
    ) {
        let r = |x: &[f64], y: &[f64]| pearson(&AlignedSeriesPair::new(x.to_vec(), y.to_vec()).unwrap());
        let base = r(&x, &y);
        let swapped = r(&y, &x);
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let affine = r(&scaled, &y);
        match (base, swapped, affine) {
            (Correlation::Defined(p), Correlation::Defined(q), Correlation::Defined(s)) => {
                prop_assert!((p - q).abs() < 1e-12);
                prop_assert!((p - s).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&p));
            }
            (Correlation::Undefined, Correlation::Undefined, _) => {}
            other => prop_assert!(false, "{:?}", other),
        }
    }

    #[test]
    fn packing_is_a_valid_partition(weights in prop::collection::vec(1u32..=10, 0..40)) {
        let bins = pack(&weights, 10).unwrap();
        let mut seen: Vec<usize> = bins.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..weights.len()).collect::<Vec<_>>());
        for bin in &bins {
            prop_assert!(bin.iter().map(|&i| weights[i]).sum::<u32>() <= 10);
        }
        prop_assert!(bins.len() <= first_fit_decreasing(&weights, 10).len());
    }

    #[test]
    fn packing_is_optimal_on_small_inputs(weights in prop::collection::vec(1u32..=6, 0..=12)) {
        prop_assert_eq!(pack(&weights, 10).unwrap().len(), optimal_bin_count_oracle(&weights, 10).unwrap());
    }

    #[test]
    fn plan_covers_each_pair_once(seed in 0u64..1000, n_types in 1usize..20, n_regions in 1usize..10) {
        let u = Universe::generate(seed, n_types, n_regions, 6);
        let map: SupportMap = u.support_map();
        let queries = plan_queries(&map, 10).unwrap();
        let plan = shard_accounts(queries, 50).unwrap();
        let multiset = plan.pair_multiset();
        prop_assert!(multiset.values().all(|&n| n == 1));
        prop_assert_eq!(multiset.keys().cloned().collect::<BTreeSet<_>>(), map.pairs());
        for (_, q) in plan.queries() {
            let azs: u32 = q.regions.iter().map(|r| map.az_count(&q.instance_types[0], r).unwrap()).sum();
            prop_assert!(azs <= 10);
        }
        prop_assert!(plan.assignments.iter().all(|a| a.queries.len() <= 50));
    }

    #[test]
    fn store_round_trip(values in prop::collection::vec((0usize..3, 0i64..50, 1u8..=3), 0..120)) {
        let azs = ["us-east-1a", "us-east-1b", "eu-west-1a"];
        let records: Vec<ArchiveRecord> = values
            .iter()
            .map(|&(z, t, v)| {
                ArchiveRecord::new(
                    timestamp_from_secs(T0 + t * 600),
                    "m5.large".parse().unwrap(),
                    Location::zone(azs[z].parse().unwrap()),
                    Metric::PlacementScore,
                    f64::from(v),
                )
                .unwrap()
            })
            .collect();
        let store = Store::in_memory();
        let report = store.append(&records).unwrap();
        // first occurrence of each (series, ts) wins
        let mut expect: BTreeMap<(SeriesKey, i64), f64> = BTreeMap::new();
        for r in &records {
            expect.entry((SeriesKey::of(r), r.timestamp.timestamp())).or_insert(r.value);
        }
        prop_assert_eq!(report.accepted, expect.len());
        prop_assert_eq!(report.accepted + report.duplicates, records.len());
        let got = store.query(&KeyFilter::all(), timestamp_from_secs(T0), timestamp_from_secs(T0 + 50 * 600)).unwrap();
        let got: Vec<((SeriesKey, i64), f64)> = got.iter().map(|r| ((SeriesKey::of(r), r.timestamp.timestamp()), r.value)).collect();
        prop_assert_eq!(got, expect.into_iter().collect::<Vec<_>>());

        let h = value_distribution(&store, Metric::PlacementScore, timestamp_from_secs(T0), timestamp_from_secs(T0 + 50 * 600)).unwrap();
        if h.total > 0 {
            prop_assert!((h.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(h.fraction_of(1.5) + h.fraction_of(2.5), 0.0);
    }

    #[test]
    fn change_events_bound_distinct_values(values in prop::collection::vec(1u8..=3, 1..80)) {
        let records: Vec<ArchiveRecord> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                ArchiveRecord::new(
                    timestamp_from_secs(T0 + i as i64 * 600),
                    "c5.large".parse().unwrap(),
                    Location::zone("us-east-1a".parse().unwrap()),
                    Metric::PlacementScore,
                    f64::from(v),
                )
                .unwrap()
            })
            .collect();
        let store = Store::in_memory();
        store.append(&records).unwrap();
        let key = SeriesKey::of(&records[0]);
        let events = store.change_events(&key, timestamp_from_secs(T0), timestamp_from_secs(T0 + 100 * 600)).unwrap();
        let distinct = values.iter().collect::<BTreeSet<_>>().len();
        prop_assert!(events.len() + 1 >= distinct);
        prop_assert!(events.windows(2).all(|w| w[1].at > w[0].at));
        prop_assert!(events.iter().all(|e| e.old_value != e.new_value));
    }

    #[test]
    fn forward_fill_hits_the_grid(
        times in prop::collection::btree_set(0i64..5000, 1..40),
        grid in 1i64..700,
        from in 0i64..3000,
        len in 0i64..4000,
    ) {
        let samples: Vec<(i64, f64)> = times.iter().map(|&t| (t, t as f64)).collect();
        let out = forward_fill(&samples, grid, from, from + len);
        for (t, v) in &out {
            prop_assert_eq!((t - from) % grid, 0);
            // the value is the last sample at or before the grid point
            let expect = samples.iter().rev().find(|s| s.0 <= *t).unwrap().1;
            prop_assert_eq!(*v, expect);
        }
        let first_sample = samples[0].0;
        let expected_points = (0..=len / grid).filter(|k| from + k * grid >= first_sample).count();
        prop_assert_eq!(out.len(), expected_points);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulator_invariants(seed in 0u64..10_000, capacity in 1u32..300, steps in 1usize..6) {
        let mut sim = VendorSim::new(Universe::generate(seed, 12, 4, 4), seed).unwrap();
        let catalog = sim.catalog();
        let types: Vec<InstanceType> = catalog.types.iter().map(|t| t.instance.clone()).collect();
        let regions: Vec<_> = catalog.regions.iter().map(|r| r.region.clone()).collect();
        for _ in 0..steps {
            for t in &types {
                for single_az in [true, false] {
                    let q = |c| spotarc::planner::PlacementQuery {
                        instance_types: vec![t.clone()],
                        regions: regions.clone(),
                        target_capacity: c,
                        single_az,
                    }
                    .key();
                    let low = sim.scores(&q(capacity), single_az);
                    let high = sim.scores(&q(capacity + 37), single_az);
                    prop_assert!(low.len() <= 10);
                    for e in &high {
                        if let Some(l) = low.iter().find(|x| x.region == e.region && x.az == e.az) {
                            prop_assert!(l.score >= e.score);
                        }
                    }
                }
            }
            sim.advance_clock(5 * 3600).unwrap();
        }
    }

    #[test]
    fn budget_never_exceeds_fifty(seed in 0u64..1000, keys in prop::collection::vec(1u32..80, 1..200)) {
        let mut sim = VendorSim::new(Universe::full(&["m5.large"], &[("us-east-1", 2)]), seed).unwrap();
        let mut accepted = BTreeSet::new();
        for (i, c) in keys.iter().enumerate() {
            let q = spotarc::planner::PlacementQuery {
                instance_types: vec!["m5.large".parse().unwrap()],
                regions: vec!["us-east-1".parse().unwrap()],
                target_capacity: *c,
                single_az: true,
            };
            match sim.placement_score_query("a", &q) {
                Ok(_) => {
                    accepted.insert(*c);
                }
                Err(_) => prop_assert!(accepted.len() == 50 && !accepted.contains(c)),
            }
            if i % 17 == 16 {
                sim.advance_clock(3600).unwrap();
            }
            prop_assert!(sim.budget_used("a") <= 50);
        }
    }
}
