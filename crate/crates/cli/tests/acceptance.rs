//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration as Elapsed, Instant};

use chrono::{DateTime, Duration, Utc};
use clap::Parser;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use spotarc::analysis::{
    correlation_cdf, pearson, score_difference_histogram, update_frequency_cdf, AlignedSeriesPair,
};
use spotarc::collector::{totals, CollectionSchedule, Collector};
use spotarc::experiment::{calibration_cases, summarize, OutcomeLabel, Stratum};
use spotarc::model::{
    format_timestamp, interruption_band_to_score, known_families, ArchiveRecord, InstanceType, InterruptionBand,
    Location, Metric, Region,
};
use spotarc::planner::{
    naive_query_count, optimal_bin_count_oracle, plan_queries, shard_accounts, AccountAssignment, QueryPlan,
    SupportMap, DAILY_UNIQUE_QUERIES, RESULT_CAP,
};
use spotarc::predictor::campaign::{run_campaign, CampaignConfig};
use spotarc::predictor::{build_dataset, compare, evaluate, ForestParams};
use spotarc::sim::{Universe, VendorSim};
use spotarc::store::{KeyFilter, SeriesKey, Store};
use spotarc_cli::cli::Cli;
use spotarc_cli::config::DEFAULT_SEED;
use spotarc_server::{router, ApiState, Background};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    // `cargo test -- --list` and friends expect no work
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let started = Instant::now();
    let demo = catch_unwind(Demo::run).map_err(panic_text);
    let with_demo = |f: fn(&Demo) -> Outcome| -> Outcome {
        match &demo {
            Ok(d) => f(d),
            Err(e) => Err(format!("demo pipeline failed: {e}")),
        }
    };
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "planner optimality", guarded(planner_optimality)),
        (2, "planner reduction at full scale", guarded(planner_reduction)),
        (3, "query budget enforcement", guarded(budget_enforcement)),
        (4, "interruption band mapping", guarded(score_mapping)),
        (5, "pearson against two-pass oracle", guarded(pearson_oracle)),
        (6, "simulator calibration", guarded(calibration)),
        (7, "end-to-end integrity", guarded(|| with_demo(integrity))),
        (8, "analysis ordering on the demo archive", guarded(|| with_demo(analysis_ordering))),
        (9, "predictor ordering", guarded(predictor_ordering)),
        (10, "api fidelity", guarded(|| with_demo(api_fidelity))),
    ];
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
            Err(reason) => {
                failed += 1;
                println!("criterion {n:>2} {name}: FAIL ({reason})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed in {:.1?}", results.len() - failed, started.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Err(format!("panicked: {}", panic_text(e))))
}

fn within(started: Instant, limit: Elapsed) -> Result<Elapsed, String> {
    let t = started.elapsed();
    ensure!(t < limit, "took {t:.1?}, limit {limit:?}");
    Ok(t)
}

// 1

fn planner_optimality() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instance: InstanceType = "m5.large".parse().unwrap();
    let mut total_bins = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=12);
        let weights: Vec<u32> = (0..n).map(|_| rng.random_range(1..=6)).collect();
        let mut map = SupportMap::new();
        for (i, &w) in weights.iter().enumerate() {
            map.insert(instance.clone(), format!("xx-test-{i}").parse().unwrap(), w).unwrap();
        }
        let planned = plan_queries(&map, RESULT_CAP).map_err(|e| e.to_string())?.len();
        let optimal = optimal_bin_count_oracle(&weights, RESULT_CAP).map_err(|e| e.to_string())?;
        ensure!(planned == optimal, "case {case}: {planned} queries, optimum {optimal} for {weights:?}");
        total_bins += planned;
    }
    let t = within(started, Elapsed::from_secs(60))?;
    Ok(format!("1000/1000 optimal, {total_bins} queries, {t:.1?}"))
}

// 2

const REGIONS_17: [(&str, u32); 17] = [
    ("us-east-1", 6),
    ("us-east-2", 3),
    ("us-west-1", 2),
    ("us-west-2", 4),
    ("ca-central-1", 3),
    ("sa-east-1", 3),
    ("eu-west-1", 3),
    ("eu-west-2", 3),
    ("eu-west-3", 3),
    ("eu-central-1", 3),
    ("eu-north-1", 3),
    ("ap-south-1", 3),
    ("ap-northeast-1", 3),
    ("ap-northeast-2", 4),
    ("ap-northeast-3", 3),
    ("ap-southeast-1", 3),
    ("ap-southeast-2", 3),
];

const SIZES: [&str; 8] = ["large", "xlarge", "2xlarge", "4xlarge", "8xlarge", "12xlarge", "16xlarge", "24xlarge"];

/// 547 types over 17 regions. Each type is offered in most regions, usually
/// in every AZ of the region.
fn full_scale_map(seed: u64) -> SupportMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = SupportMap::new();
    let types = known_families()
        .flat_map(|(f, _)| SIZES.iter().map(move |s| InstanceType::new(f, s).unwrap()))
        .take(547);
    for t in types {
        let mut offered = 0;
        for (code, azs) in REGIONS_17 {
            let region: Region = code.parse().unwrap();
            if rng.random_bool(0.8) || offered == 0 && code == "ap-southeast-2" {
                let n = if rng.random_bool(0.8) { azs } else { rng.random_range(1..=azs) };
                map.insert(t.clone(), region, n).unwrap();
                offered += 1;
            }
        }
    }
    map
}

fn planner_reduction() -> Outcome {
    let map = full_scale_map(547);
    let naive = naive_query_count(&map);
    ensure!(map.types().count() == 547, "{} types", map.types().count());
    ensure!(map.regions().len() == 17, "{} regions", map.regions().len());
    let queries = plan_queries(&map, RESULT_CAP).map_err(|e| e.to_string())?;
    let plan = shard_accounts(queries, DAILY_UNIQUE_QUERIES).map_err(|e| e.to_string())?;
    let planned = plan.query_count();
    ensure!(planned * 3 <= naive.upper_bound, "{planned} queries against a naive {}", naive.upper_bound);
    for (_, q) in plan.queries() {
        let t = &q.instance_types[0];
        let sum: u32 = q.regions.iter().map(|r| map.az_count(t, r).unwrap_or(0)).sum();
        ensure!(q.instance_types.len() == 1 && sum <= RESULT_CAP, "query {q:?} spans {sum} AZs");
    }
    let covered = plan.pair_multiset();
    ensure!(covered.values().all(|&n| n == 1), "a pair is queried more than once");
    let pairs: BTreeSet<_> = covered.into_keys().collect();
    ensure!(pairs == map.pairs(), "plan covers {} of {} pairs", pairs.len(), map.pair_count());
    Ok(format!(
        "{} pairs, naive {} -> {planned} queries ({:.2}x) over {} accounts",
        naive.pair_count,
        naive.upper_bound,
        naive.upper_bound as f64 / planned as f64,
        plan.assignments.len()
    ))
}

// 3

fn budget_enforcement() -> Outcome {
    let mut sim = VendorSim::new(Universe::default_with_seed(DEFAULT_SEED), DEFAULT_SEED).map_err(|e| e.to_string())?;
    let queries = plan_queries(&sim.universe().support_map(), RESULT_CAP).map_err(|e| e.to_string())?;
    ensure!(queries.len() >= 51, "only {} planned queries", queries.len());
    let single = QueryPlan {
        assignments: vec![AccountAssignment {
            account: "solo".into(),
            queries: queries[..51].to_vec(),
        }],
    };
    let sharded = shard_accounts(queries, DAILY_UNIQUE_QUERIES).map_err(|e| e.to_string())?;

    let store = Store::in_memory();
    let until = sim.start() + Duration::hours(48);
    let mut c = Collector::new(CollectionSchedule::every(600, sharded.clone()), &mut sim).map_err(|e| e.to_string())?;
    let reports = c.run_loop(&mut sim, &store, until).map_err(|e| e.to_string())?;
    let sum = totals(&reports);
    ensure!(reports.len() == 288, "{} ticks", reports.len());
    ensure!(sum.budget_exhaustions == 0, "{} exhaustions with a sharded plan", sum.budget_exhaustions);

    let mut sim = VendorSim::new(Universe::default_with_seed(DEFAULT_SEED), DEFAULT_SEED).map_err(|e| e.to_string())?;
    let mut c = Collector::new(CollectionSchedule::every(600, single), &mut sim).map_err(|e| e.to_string())?;
    let report = c.run_tick(&mut sim, &Store::in_memory()).map_err(|e| e.to_string())?;
    ensure!(report.budget_exhaustions >= 1, "the unsharded plan never exhausted its budget");
    Ok(format!(
        "sharded: {} accounts, 288 ticks, 0 exhaustions; unsharded 51 queries: {} exhaustion(s)",
        sharded.assignments.len(),
        report.budget_exhaustions
    ))
}

// 4

fn score_mapping() -> Outcome {
    let table = [
        (InterruptionBand::Lt5, 3.0),
        (InterruptionBand::B5To10, 2.5),
        (InterruptionBand::B10To15, 2.0),
        (InterruptionBand::B15To20, 1.5),
        (InterruptionBand::Gt20, 1.0),
    ];
    for (band, expected) in table {
        let got = interruption_band_to_score(band);
        ensure!(got.value() == expected, "{} -> {}, expected {expected}", band.as_str(), got.value());
        ensure!(got.to_band() == band, "{} does not round-trip", band.as_str());
    }
    Ok("5/5 bands exact".into())
}

// 5

fn two_pass(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx.sqrt() * syy.sqrt()))
}

fn r(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&AlignedSeriesPair::new(x.to_vec(), y.to_vec()).unwrap()).value()
}

fn pearson_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut worst_sym, mut worst_affine) = (0f64, 0f64, 0f64);
    for case in 0..1000 {
        let n = rng.random_range(2..=300);
        let scale = [1.0, 3.0, 1e3][case % 3];
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
        if case % 4 == 0 {
            // correlated pairs as well as independent ones
            y.iter_mut().zip(&x).for_each(|(b, a)| *b = 0.8 * a + 0.2 * *b);
        }
        let (got, want) = (r(&x, &y), two_pass(&x, &y));
        ensure!(got.is_some() == want.is_some(), "case {case}: defined mismatch");
        let (Some(got), Some(want)) = (got, want) else { continue };
        worst = worst.max((got - want).abs());
        worst_sym = worst_sym.max((got - r(&y, &x).unwrap()).abs());
        let (a, b, c, d) = (rng.random_range(0.1..50.0), rng.random_range(-100.0..100.0), rng.random_range(0.1..50.0), rng.random_range(-100.0..100.0));
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let ys: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        worst_affine = worst_affine.max((got - r(&xs, &ys).unwrap()).abs());
    }
    ensure!(worst <= 1e-12, "oracle deviation {worst:e}");
    ensure!(worst_sym <= 1e-9, "symmetry deviation {worst_sym:e}");
    ensure!(worst_affine <= 1e-9, "affine deviation {worst_affine:e}");
    Ok(format!("1000 pairs, max deviation {worst:.1e}, symmetry {worst_sym:.1e}, affine {worst_affine:.1e}"))
}

// 6

const REFERENCE: [(&str, f64, f64); 5] = [
    ("HH", 0.0, 14.71),
    ("HL", 0.0, 40.52),
    ("MM", 25.49, 39.22),
    ("LH", 58.18, 30.91),
    ("LL", 45.61, 45.61),
];

fn calibration() -> Outcome {
    let started = Instant::now();
    let mut cells = Vec::new();
    let mut ll_median = None;
    for (i, (code, nf, int)) in REFERENCE.into_iter().enumerate() {
        let s: Stratum = code.parse().unwrap();
        let cases = calibration_cases(s, 10_000, 600 + i as u64);
        let sum = &summarize(&cases).map_err(|e| e.to_string())?[0];
        ensure!(sum.cases == 10_000, "{code}: {} cases", sum.cases);
        ensure!((sum.not_fulfilled_pct - nf).abs() <= 2.0, "{code} not fulfilled {:.2}%, reference {nf}%", sum.not_fulfilled_pct);
        ensure!((sum.interrupted_pct - int).abs() <= 2.0, "{code} interrupted {:.2}%, reference {int}%", sum.interrupted_pct);
        cells.push(format!("{code} {:.2}/{:.2}", sum.not_fulfilled_pct, sum.interrupted_pct));
        if code == "LL" {
            ll_median = sum.median_fulfill_secs();
        }
    }
    let median = ll_median.ok_or("no LL case was fulfilled")?;
    ensure!((median / 1322.0 - 1.0).abs() <= 0.15, "LL median fulfillment {median:.0} s");
    let t = within(started, Elapsed::from_secs(300))?;
    Ok(format!("{}; LL median {median:.0} s; {t:.1?}", cells.join(", ")))
}

// 7, 8, 10 share one demo run

struct Demo {
    _dirs: [tempfile::TempDir; 2],
    out: [PathBuf; 2],
    store: Arc<Store>,
}

fn run_demo(out: &Path) {
    let cli = Cli::try_parse_from(["spotarc", "demo", "--out", out.to_str().unwrap()]).unwrap();
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    spotarc_cli::run(cli, &mut stdout, &mut stderr).unwrap_or_else(|e| panic!("{e}"));
}

impl Demo {
    fn run() -> Demo {
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let out = [dirs[0].path().join("demo"), dirs[1].path().join("demo")];
        std::thread::scope(|s| {
            for o in &out {
                s.spawn(|| run_demo(o));
            }
        });
        let store = Arc::new(Store::open(out[0].join("store")).unwrap());
        Demo { _dirs: dirs, out, store }
    }
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn integrity(demo: &Demo) -> Outcome {
    let store = &demo.store;
    let ticks: Vec<i64> = fs::read_to_string(demo.out[0].join("collect.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            v["tick"].as_str().unwrap().parse::<DateTime<Utc>>().unwrap().timestamp()
        })
        .collect();
    ensure!(ticks.len() == 288, "{} ticks", ticks.len());
    ensure!(ticks.windows(2).all(|w| w[1] - w[0] == 600), "ticks are not 10 minutes apart");

    let sim = VendorSim::new(Universe::default_with_seed(DEFAULT_SEED), DEFAULT_SEED).unwrap();
    let pairs = sim.catalog().pairs();
    let sps = store.series(&KeyFilter::metric(Metric::PlacementScore));
    ensure!(sps.len() == pairs.len(), "{} placement series for {} (type, AZ) pairs", sps.len(), pairs.len());
    for (instance, az) in &pairs {
        let key = SeriesKey::new(instance.clone(), Location::zone(az.clone()), Metric::PlacementScore);
        let (from, to) = store.span().unwrap();
        let stamps: Vec<i64> = store.samples(&key, from, to).into_iter().map(|(t, _)| t).collect();
        ensure!(stamps == ticks, "{} in {az}: {} samples over {} ticks", instance.code(), stamps.len(), ticks.len());
    }

    let (from, to) = store.span().unwrap();
    let mut exported = Vec::new();
    let n = store.export(&KeyFilter::all(), from, to, &mut exported).map_err(|e| e.to_string())?;
    let copy = Store::in_memory();
    let report = copy.import(exported.as_slice()).map_err(|e| e.to_string())?;
    ensure!(report.accepted == n && report.duplicates == 0, "import accepted {} of {n}", report.accepted);
    let all = KeyFilter::all();
    ensure!(
        copy.query(&all, from, to).unwrap() == store.query(&all, from, to).unwrap(),
        "imported archive differs"
    );
    let mut again = Vec::new();
    copy.export(&all, from, to, &mut again).unwrap();
    ensure!(again == exported, "re-export differs");

    let (a, b) = (tree(&demo.out[0]), tree(&demo.out[1]));
    ensure!(a.keys().eq(b.keys()), "runs wrote different file sets");
    for (path, bytes) in &a {
        ensure!(&b[path] == bytes, "{} differs between runs", path.display());
    }
    Ok(format!(
        "{} pairs x 288 ticks, {n} records round-trip, {} files byte-identical across runs",
        pairs.len(),
        a.len()
    ))
}

// 8

fn analysis_ordering(demo: &Demo) -> Outcome {
    let store = &demo.store;
    let (from, to) = store.span().unwrap();
    let fail = |e: spotarc::analysis::AnalysisError| e.to_string();
    let sps = update_frequency_cdf(store, Metric::PlacementScore, from, to).map_err(fail)?;
    let if_ = update_frequency_cdf(store, Metric::InterruptionFree, from, to).map_err(fail)?;
    let (ms, mi) = (sps.median_hours.ok_or("no placement changes")?, if_.median_hours.ok_or("no IF changes")?);
    ensure!(ms < mi, "placement median gap {ms:.2} h is not below IF {mi:.2} h");

    let diff = score_difference_histogram(store, 600, from, to).map_err(fail)?;
    let opposite = diff.histogram.fraction_of(2.0);
    ensure!(opposite > 0.0, "no grid point at difference 2.0");
    let total: f64 = diff.histogram.fractions.iter().sum();
    ensure!((total - 1.0).abs() < 1e-9, "difference fractions sum to {total}");

    let c = correlation_cdf(store, Metric::PlacementScore, Metric::InterruptionFree, 600, from, to).map_err(fail)?;
    ensure!(c.undefined > 0, "the demo archive has no undefined series to exclude");
    ensure!(c.defined() + c.undefined == c.keys, "{} defined + {} undefined != {} keys", c.defined(), c.undefined, c.keys);
    ensure!(c.coefficients.iter().all(|r| r.is_finite() && r.abs() <= 1.0 + 1e-12), "a coefficient is out of range");
    ensure!(c.coefficients.windows(2).all(|w| w[0] <= w[1]), "coefficients are not ascending");
    let below = |t: f64| c.coefficients.iter().filter(|r| r.abs() < t).count() as f64 / c.defined() as f64;
    ensure!((c.fraction_abs_below_025 - below(0.25)).abs() < 1e-12, "|r| < 0.25 fraction {}", c.fraction_abs_below_025);
    ensure!((c.fraction_abs_below_05 - below(0.5)).abs() < 1e-12, "|r| < 0.5 fraction {}", c.fraction_abs_below_05);
    let split = c.defined() as f64 / c.keys as f64 + c.undefined_fraction();
    ensure!((split - 1.0).abs() < 1e-12, "defined and undefined fractions sum to {split}");
    Ok(format!(
        "median gap placement {ms:.2} h < IF {mi:.2} h; 2.0 bin {opposite:.4}; {} defined + {} undefined = {} series",
        c.defined(),
        c.undefined,
        c.keys
    ))
}

// 9

fn predictor_ordering() -> Outcome {
    use OutcomeLabel::{Interrupted as B, NoFulfill as C, NoInterrupt as A};
    let e = evaluate(&[A, A, B, C], &[A, B, B, C]).map_err(|e| e.to_string())?;
    ensure!(e.accuracy == 0.75, "hand example accuracy {}", e.accuracy);
    ensure!(e.confusion == [[1, 1, 0], [0, 1, 0], [0, 0, 1]], "hand example confusion {:?}", e.confusion);
    let f1 = (2.0 / 3.0 + 2.0 / 3.0 + 1.0) / 3.0;
    ensure!((e.macro_f1 - f1).abs() < 1e-12, "hand example macro-F1 {}", e.macro_f1);

    let campaign = run_campaign(&CampaignConfig::default()).map_err(|e| e.to_string())?;
    ensure!(campaign.cases.len() == 5000, "{} cases", campaign.cases.len());
    let examples = build_dataset(&campaign.store, &campaign.cases);
    let cmp = compare(&examples, ForestParams::default(), DEFAULT_SEED).map_err(|e| e.to_string())?;
    ensure!(cmp.train_size + cmp.test_size == examples.len(), "split loses examples");
    let split = cmp.test_size as f64 / examples.len() as f64;
    ensure!((split - 0.3).abs() < 0.01, "test share {split:.3}");
    let acc = |m: &str| cmp.accuracy(m).ok_or(format!("no {m} row"));
    let (rf, sps, cost) = (acc("RF")?, acc("SPS")?, acc("CostSave")?);
    ensure!(rf >= sps, "RF {rf:.4} < SPS {sps:.4}");
    ensure!(sps >= cost, "SPS {sps:.4} < CostSave {cost:.4}");
    Ok(format!(
        "hand example exact; RF {rf:.4} >= SPS {sps:.4} >= CostSave {cost:.4} on {} test cases",
        cmp.test_size
    ))
}

// 10

fn api_fidelity(demo: &Demo) -> Outcome {
    let store = demo.store.clone();
    let server = Background::spawn(router(Arc::new(ApiState::new(store.clone())))).map_err(|e| e.to_string())?;
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let keys = store.series_keys(&KeyFilter::all());
    let instances: Vec<InstanceType> = keys.iter().map(|k| k.instance.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let regions: Vec<Region> = keys.iter().map(|k| k.region.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let azs: Vec<_> = keys.iter().filter_map(|k| k.az.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let (lo, hi) = store.span().unwrap();
    let minutes = (hi - lo).num_minutes();

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut records, mut pages, mut empty) = (0, 0, 0);
    for case in 0..100 {
        let mut filter = KeyFilter::all();
        let mut params: Vec<(String, String)> = Vec::new();
        fn pick<T: Clone>(rng: &mut ChaCha8Rng, from: &[T], max: usize) -> Vec<T> {
            let n = rng.random_range(1..=max);
            from.choose_multiple(rng, n).cloned().collect()
        }
        let join = |v: Vec<String>| v.join(",");
        if rng.random_bool(0.6) {
            filter.instances = pick(&mut rng, &instances, 4);
            params.push(("instanceTypes".into(), join(filter.instances.iter().map(InstanceType::code).collect())));
        }
        if rng.random_bool(0.4) {
            filter.regions = pick(&mut rng, &regions, 3);
            params.push(("regions".into(), join(filter.regions.iter().map(|r| r.to_string()).collect())));
        }
        if rng.random_bool(0.3) {
            filter.azs = pick(&mut rng, &azs, 4);
            params.push(("azs".into(), join(filter.azs.iter().map(|z| z.to_string()).collect())));
        }
        if rng.random_bool(0.5) {
            filter.metrics = pick(&mut rng, &Metric::ALL, 2);
            params.push(("metrics".into(), join(filter.metrics.iter().map(|m| m.as_str().to_string()).collect())));
        }
        let mut from = lo;
        let mut to = hi;
        if rng.random_bool(0.8) {
            let a = rng.random_range(0..=minutes);
            let b = (a + rng.random_range(0..=12 * 60)).min(minutes);
            from = lo + Duration::minutes(a);
            to = lo + Duration::minutes(b);
            params.push(("from".into(), format_timestamp(from)));
            params.push(("to".into(), format_timestamp(to)));
        }
        let direct = store.query(&filter, from, to).map_err(|e| e.to_string())?;
        let limit = rng.random_range(1..=10_000).max(direct.len().div_ceil(40)).min(10_000);
        params.push(("limit".into(), limit.to_string()));

        let mut got: Vec<ArchiveRecord> = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            let mut req = agent.get(format!("{}/v1/records", server.url()));
            for (k, v) in &params {
                req = req.query(k, v);
            }
            if let Some(c) = &cursor {
                req = req.query("cursor", c);
            }
            let mut resp = req.call().map_err(|e| e.to_string())?;
            let status = resp.status().as_u16();
            let body: Value = resp.body_mut().read_json().map_err(|e| e.to_string())?;
            ensure!(status == 200, "case {case}: status {status}: {body}");
            let page: Vec<ArchiveRecord> = serde_json::from_value(body["records"].clone()).map_err(|e| e.to_string())?;
            ensure!(page.len() <= limit, "case {case}: page of {} over limit {limit}", page.len());
            pages += 1;
            got.extend(page);
            match body["nextCursor"].as_str() {
                Some(c) => cursor = Some(c.to_string()),
                None => break,
            }
        }
        let distinct: HashSet<String> = got
            .iter()
            .map(|r| format!("{}|{:?}|{}|{}", r.instance.code(), r.location, r.metric.as_str(), r.timestamp.timestamp()))
            .collect();
        ensure!(distinct.len() == got.len(), "case {case}: pages overlap");
        ensure!(got == direct, "case {case}: {} records over HTTP, {} direct", got.len(), direct.len());
        records += got.len();
        empty += direct.is_empty() as usize;
    }
    Ok(format!("100 requests, {records} records in {pages} pages, {empty} empty matches"))
}
