//! One function per subcommand. Each writes its report to `out`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde_json::json;
use spotarc::analysis::{
    aggregate_heatmap, archive_range, correlation_cdf, group_by_size, score_difference_histogram,
    update_frequency_cdf, value_distribution, ColDim, RowDim,
};
use spotarc::collector::{CollectionSchedule, Collector};
use spotarc::experiment::{
    candidates, run_cases, stratified_sample, summarize, table3_csv, validate_strata, ExperimentCase, Stratum,
};
use spotarc::model::{parse_timestamp, Metric};
use spotarc::planner::{naive_query_count, plan_queries, shard_accounts, QueryPlan, SupportMap};
use spotarc::predictor::{build_dataset, Comparison, ForestParams, LabeledExample, Model};
use spotarc::sim::{Universe, VendorSim};
use spotarc::store::{KeyFilter, Store};
use spotarc::vendor::Vendor;
use spotarc_server::{router, run_forever, vendor_router, ApiState, HttpVendor};

use crate::cli::*;
use crate::config::{Settings, DEFAULT_PORT};
use crate::error::{CliError, StageExt};

pub const FIXTURE_ARCHIVE: &str = include_str!("../fixtures/archive.jsonl");

pub fn write_file(path: &Path, content: &[u8], stage: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(stage, format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, content).map_err(|e| CliError::runtime(stage, format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, content: &str, stage: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, content.as_bytes(), stage),
        None => out.write_all(content.as_bytes()).runtime(stage),
    }
}

fn read(path: &Path, stage: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(stage, format!("{}: {e}", path.display())))
}

/// The universe file named by flag or settings, or the seeded default.
pub fn load_universe(settings: &Settings, flag: Option<PathBuf>, seed: u64, stage: &str) -> Result<Universe, CliError> {
    match settings.existing(flag, "universe", stage)? {
        Some(p) => Universe::load(&p).map_err(|e| CliError::config(stage, format!("{}: {e}", p.display()))),
        None => Ok(Universe::default_with_seed(seed)),
    }
}

pub fn open_store(settings: &Settings, flag: Option<PathBuf>, stage: &str) -> Result<Store, CliError> {
    let dir = settings.require(flag, "store", stage)?;
    Store::open(&dir).map_err(|e| CliError::runtime(stage, format!("{}: {e}", dir.display())))
}

fn time(raw: Option<&str>, stage: &str) -> Result<Option<DateTime<Utc>>, CliError> {
    raw.map(|r| parse_timestamp(r).config(stage)).transpose()
}

/// `[from, to]` defaulting to the archive span.
fn range(store: &Store, from: Option<&str>, to: Option<&str>, stage: &str) -> Result<(DateTime<Utc>, DateTime<Utc>), CliError> {
    let (lo, hi) = archive_range(store);
    let from = time(from, stage)?.unwrap_or(lo);
    let to = time(to, stage)?.unwrap_or(hi.max(from));
    if from > to {
        return Err(CliError::config(stage, "--from is after --to"));
    }
    Ok((from, to))
}

pub fn plan(settings: &Settings, a: PlanArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "plan";
    let map = match (a.support_map, settings.existing(a.universe, "universe", STAGE)?) {
        (Some(p), _) => SupportMap::from_json(&read(&p, STAGE)?).config(STAGE)?,
        (None, Some(u)) => Universe::load(&u).config(STAGE)?.support_map(),
        (None, None) => return Err(CliError::config(STAGE, "pass --support-map or --universe")),
    };
    let queries = plan_queries(&map, a.capacity).config(STAGE)?;
    let n = queries.len();
    let plan = shard_accounts(queries, a.per_account).config(STAGE)?;
    let accounts = plan.assignments.len();
    let naive = naive_query_count(&map);
    let target = settings.path(a.out, "plan");
    emit(out, target.as_deref(), &(plan.to_json() + "\n"), STAGE)?;
    if target.is_some() {
        let summary = json!({
            "queries": n,
            "accounts": accounts,
            "pairs": naive.pair_count,
            "naiveQueries": naive.upper_bound,
        });
        writeln!(out, "{summary}").runtime(STAGE)?;
    }
    Ok(())
}

fn plan_for(catalog_map: &SupportMap) -> Result<QueryPlan, CliError> {
    let queries = plan_queries(catalog_map, spotarc::planner::RESULT_CAP).runtime("plan")?;
    shard_accounts(queries, spotarc::planner::DAILY_UNIQUE_QUERIES).runtime("plan")
}

fn collect_with(
    vendor: &mut impl Vendor,
    plan: Option<QueryPlan>,
    store: &Store,
    ticks: u32,
    period: i64,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    const STAGE: &str = "collect";
    let plan = match plan {
        Some(p) => p,
        None => plan_for(&vendor.catalog().runtime(STAGE)?.support_map())?,
    };
    let mut collector = Collector::new(CollectionSchedule::every(period, plan), vendor).runtime(STAGE)?;
    for _ in 0..ticks {
        let report = collector.run_tick(vendor, store).runtime(STAGE)?;
        writeln!(out, "{}", serde_json::to_string(&report).expect("report serializes")).runtime(STAGE)?;
    }
    Ok(())
}

pub fn collect(settings: &Settings, a: CollectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "collect";
    let period = settings.period(a.period)?;
    let plan = settings
        .existing(a.plan, "plan", STAGE)?
        .map(|p| QueryPlan::load(&p).config(STAGE))
        .transpose()?;
    let vendor = settings.get::<String>(a.vendor, "vendor")?.unwrap_or_else(|| "sim".into());
    let seed = settings.seed(a.seed)?;
    let store = open_store(settings, a.store, STAGE)?;
    if vendor == "sim" {
        let universe = load_universe(settings, a.universe, seed, STAGE)?;
        let mut sim = VendorSim::new(universe, seed).config(STAGE)?;
        collect_with(&mut sim, plan, &store, a.ticks, period, out)
    } else if vendor.starts_with("http://") || vendor.starts_with("https://") {
        collect_with(&mut HttpVendor::new(&vendor), plan, &store, a.ticks, period, out)
    } else {
        Err(CliError::config(STAGE, format!("vendor `{vendor}` is neither `sim` nor an http(s) URL")))
    }
}

pub fn strata_counts(sim: &VendorSim) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = Stratum::all().iter().map(|s| (s.code(), 0)).collect();
    for c in candidates(sim) {
        *counts.entry(c.stratum.code()).or_default() += 1;
    }
    counts
}

pub fn simulate(settings: &Settings, a: SimulateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "simulate";
    let seed = settings.seed(a.seed)?;
    let universe = load_universe(settings, a.universe, seed, STAGE)?;
    if let Some(p) = &a.emit_universe {
        write_file(p, (universe.to_json() + "\n").as_bytes(), STAGE)?;
    }
    if a.hours < 0 {
        return Err(CliError::config(STAGE, "--hours must not be negative"));
    }
    let mut sim = VendorSim::new(universe, seed).config(STAGE)?;
    sim.advance_to(sim.start() + Duration::hours(a.hours)).runtime(STAGE)?;
    let catalog = sim.catalog();
    let summary = json!({
        "seed": seed,
        "start": catalog.start,
        "now": sim.now(),
        "types": catalog.types.len(),
        "regions": catalog.regions.len(),
        "zones": catalog.regions.iter().map(|r| r.zones.len()).sum::<usize>(),
        "pairs": catalog.pairs().len(),
        "strata": strata_counts(&sim),
    });
    emit(out, a.out.as_deref(), &(serde_json::to_string_pretty(&summary).expect("json") + "\n"), STAGE)
}

/// Up to `per_stratum` candidates from each stratum, equal counts across strata.
pub fn sample_cases(
    sim: &VendorSim,
    strata: &[Stratum],
    per_stratum: usize,
    seed: u64,
    stage: &str,
) -> Result<Vec<ExperimentCase>, CliError> {
    let picked = stratified_sample(&candidates(sim), strata, seed).runtime(stage)?;
    let per = picked.len() / strata.len().max(1);
    let take = per.min(per_stratum);
    let picked: Vec<_> = picked.chunks(per.max(1)).flat_map(|g| g.iter().take(take).cloned()).collect();
    run_cases(sim, &picked, 1, seed).runtime(stage)
}

fn cases_jsonl(cases: &[ExperimentCase]) -> String {
    cases.iter().map(|c| c.to_json_line() + "\n").collect()
}

pub fn experiment(settings: &Settings, a: ExperimentArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "experiment";
    let strata = Stratum::parse_list(&a.strata).config(STAGE)?;
    validate_strata(&strata, a.exploratory).config(STAGE)?;
    if a.per_stratum == 0 || a.warmup_hours < 0 {
        return Err(CliError::config(STAGE, "--per-stratum must be positive and --warmup-hours not negative"));
    }
    let seed = settings.seed(a.seed)?;
    let universe = load_universe(settings, a.universe, seed, STAGE)?;
    let mut sim = VendorSim::new(universe, seed).config(STAGE)?;
    sim.advance_to(sim.start() + Duration::hours(a.warmup_hours)).runtime(STAGE)?;
    let cases = sample_cases(&sim, &strata, a.per_stratum, seed, STAGE)?;
    let lines = cases_jsonl(&cases);
    match &a.out {
        Some(p) => {
            write_file(p, lines.as_bytes(), STAGE)?;
            out.write_all(table3_csv(&summarize(&cases).runtime(STAGE)?).as_bytes()).runtime(STAGE)
        }
        None => out.write_all(lines.as_bytes()).runtime(STAGE),
    }
}

pub fn fixture_store() -> Store {
    let store = Store::in_memory();
    store.import(FIXTURE_ARCHIVE.as_bytes()).expect("bundled fixture is valid");
    store
}

fn metric(raw: Option<&str>, default: Option<Metric>, stage: &str) -> Result<Metric, CliError> {
    match (raw, default) {
        (Some(r), _) => r.parse().config(stage),
        (None, Some(m)) => Ok(m),
        (None, None) => Err(CliError::config(stage, "--metric is required for this analysis")),
    }
}

/// The analysis output: CSV for histograms and matrices, JSON for CDFs.
pub fn analysis_output(store: &Store, a: &AnalyzeArgs) -> Result<String, CliError> {
    const STAGE: &str = "analyze";
    let (from, to) = range(store, a.from.as_deref(), a.to.as_deref(), STAGE)?;
    let m = a.metric.as_deref();
    let json = |v: serde_json::Value| serde_json::to_string_pretty(&v).expect("json") + "\n";
    let fail = |e: spotarc::analysis::AnalysisError| CliError::runtime(STAGE, e);
    Ok(match a.analysis {
        AnalysisName::Distribution => value_distribution(store, metric(m, None, STAGE)?, from, to).map_err(fail)?.to_csv(),
        AnalysisName::Difference => score_difference_histogram(store, a.grid, from, to).map_err(fail)?.histogram.to_csv(),
        AnalysisName::Heatmap => {
            let rows = match a.rows {
                Rows::Family => RowDim::Family,
                Rows::FamilyClass => RowDim::FamilyClass,
            };
            let cols = match a.cols {
                Cols::Day => ColDim::Day,
                Cols::Region => ColDim::Region,
            };
            aggregate_heatmap(store, rows, cols, metric(m, Some(Metric::PlacementScore), STAGE)?, from, to)
                .map_err(fail)?
                .to_csv()
        }
        AnalysisName::Size => {
            let groups = group_by_size(store, metric(m, Some(Metric::PlacementScore), STAGE)?, a.min_types, from, to)
                .map_err(fail)?;
            let mut csv = String::from("size,mean,type_count\n");
            for g in groups {
                csv.push_str(&format!("{},{:.4},{}\n", g.size, g.mean, g.type_count));
            }
            csv
        }
        AnalysisName::Correlation => {
            let (ma, mb) = (metric(Some(&a.a), None, STAGE)?, metric(Some(&a.b), None, STAGE)?);
            json(serde_json::to_value(correlation_cdf(store, ma, mb, a.grid, from, to).map_err(fail)?).expect("json"))
        }
        AnalysisName::Frequency => {
            json(serde_json::to_value(update_frequency_cdf(store, metric(m, None, STAGE)?, from, to).map_err(fail)?).expect("json"))
        }
    })
}

pub fn analyze(settings: &Settings, a: AnalyzeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let store = if a.fixture {
        fixture_store()
    } else {
        open_store(settings, a.store.clone(), "analyze")?
    };
    let text = analysis_output(&store, &a)?;
    emit(out, a.out.as_deref(), &text, "analyze")
}

pub fn read_cases(path: &Path, stage: &str) -> Result<Vec<ExperimentCase>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::config(stage, format!("{}: {e}", path.display())))?;
    let mut cases = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.runtime(stage)?;
        if line.trim().is_empty() {
            continue;
        }
        let case: ExperimentCase = serde_json::from_str(&line)
            .map_err(|e| CliError::config(stage, format!("{} line {}: {e}", path.display(), i + 1)))?;
        cases.push(case);
    }
    Ok(cases)
}

fn dataset(store: &Store, cases: &[ExperimentCase], stage: &str) -> Result<Vec<LabeledExample>, CliError> {
    let examples = build_dataset(store, cases);
    if examples.is_empty() {
        return Err(CliError::runtime(stage, "no case has archive history before its submission"));
    }
    Ok(examples)
}

pub fn train(settings: &Settings, a: TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "train";
    let cases = read_cases(&a.cases, STAGE)?;
    let store = open_store(settings, a.store, STAGE)?;
    let seed = settings.seed(a.seed)?;
    let target = settings.require(a.out, "model", STAGE)?;
    let examples = dataset(&store, &cases, STAGE)?;
    let params = ForestParams {
        trees: a.trees,
        ..ForestParams::default()
    };
    let model = Model::train(&examples, params, seed).runtime(STAGE)?;
    write_file(&target, &model.to_bytes(), STAGE)?;
    let summary = json!({
        "cases": cases.len(),
        "examples": examples.len(),
        "trees": model.forest.trees().len(),
        "baselines": model.baselines,
    });
    writeln!(out, "{summary}").runtime(STAGE)
}

/// Human-readable rendering of an evaluation table.
pub fn table4_text(c: &Comparison) -> String {
    let mut s = format!("{:<10}{:>10}{:>10}\n", "method", "accuracy", "macro-F1");
    for (name, e) in &c.rows {
        s.push_str(&format!("{name:<10}{:>10.4}{:>10.4}\n", e.accuracy, e.macro_f1));
    }
    s
}

pub fn evaluate(settings: &Settings, a: EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "evaluate";
    let model_path = settings
        .existing(a.model, "model", STAGE)?
        .ok_or_else(|| CliError::config(STAGE, "no model given"))?;
    let bytes = fs::read(&model_path).map_err(|e| CliError::config(STAGE, format!("{}: {e}", model_path.display())))?;
    let model = Model::from_bytes(&bytes).config(STAGE)?;
    let cases = read_cases(&a.cases, STAGE)?;
    let store = open_store(settings, a.store, STAGE)?;
    let examples = dataset(&store, &cases, STAGE)?;
    let refs: Vec<&LabeledExample> = examples.iter().collect();
    let comparison = Comparison {
        rows: model.evaluate_on(&refs).runtime(STAGE)?,
        train_size: 0,
        test_size: examples.len(),
    };
    let csv = comparison.to_csv();
    if let Some(p) = &a.out {
        write_file(p, csv.as_bytes(), STAGE)?;
    }
    write!(
        out,
        "{csv}\n{}test cases: {} ({} without history skipped)\n",
        table4_text(&comparison),
        examples.len(),
        cases.len() - examples.len()
    )
    .runtime(STAGE)
}

pub fn serve(settings: &Settings, a: ServeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "serve";
    let store = Arc::new(open_store(settings, a.store, STAGE)?);
    let port = settings.get(a.port, "port")?.unwrap_or(DEFAULT_PORT);
    let seed = settings.seed(a.seed)?;
    let mut state = ApiState::new(store);
    let mut bindings = Vec::new();
    let bind = |port: u16| {
        TcpListener::bind((a.host.as_str(), port)).map_err(|e| CliError::runtime(STAGE, format!("{}:{port}: {e}", a.host)))
    };
    let api = bind(port)?;
    writeln!(err, "api listening on http://{}", api.local_addr().runtime(STAGE)?).runtime(STAGE)?;
    if let Some(path) = settings.existing(a.sim_universe, "universe", STAGE)? {
        let universe = Universe::load(&path).config(STAGE)?;
        let sim = Arc::new(Mutex::new(VendorSim::new(universe, seed).config(STAGE)?));
        state = state.with_sim(sim.clone());
        let sim_port = match settings.get(a.sim_port, "sim_port")? {
            Some(p) => p,
            None if port == 0 => 0,
            None => port.checked_add(1).ok_or_else(|| CliError::config(STAGE, "no port above the API port"))?,
        };
        let listener = bind(sim_port)?;
        writeln!(err, "simulator listening on http://{}", listener.local_addr().runtime(STAGE)?).runtime(STAGE)?;
        bindings.push((listener, vendor_router(sim)));
    }
    if let Some(path) = settings.existing(a.model, "model", STAGE)? {
        let bytes = fs::read(&path).runtime(STAGE)?;
        state = state.with_model(Model::from_bytes(&bytes).config(STAGE)?);
    }
    bindings.insert(0, (api, router(Arc::new(state))));
    err.flush().runtime(STAGE)?;
    run_forever(bindings).runtime(STAGE)
}

fn parse_all<'a, T>(values: impl Iterator<Item = &'a str>, stage: &str) -> Result<Vec<T>, CliError>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    values.map(|v| v.parse::<T>().config(stage)).collect()
}

pub fn parse_filter(items: &[String], stage: &str) -> Result<KeyFilter, CliError> {
    let mut f = KeyFilter::all();
    for item in items {
        let (key, values) = item
            .split_once('=')
            .ok_or_else(|| CliError::config(stage, format!("filter `{item}` is not key=values")))?;
        let values = values.split(',').map(str::trim).filter(|v| !v.is_empty());
        match key {
            "instanceTypes" => f.instances.extend(parse_all(values, stage)?),
            "regions" => f.regions.extend(parse_all(values, stage)?),
            "azs" => f.azs.extend(parse_all(values, stage)?),
            "metrics" => f.metrics.extend(parse_all::<Metric>(values, stage)?),
            other => {
                return Err(CliError::config(
                    stage,
                    format!("unknown filter key `{other}`; use instanceTypes, regions, azs or metrics"),
                ))
            }
        }
    }
    Ok(f)
}

pub fn export(settings: &Settings, a: ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "export";
    let filter = parse_filter(&a.filter, STAGE)?;
    let store = open_store(settings, a.store, STAGE)?;
    let (from, to) = range(&store, a.from.as_deref(), a.to.as_deref(), STAGE)?;
    match &a.out {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| CliError::runtime(STAGE, format!("{}: {e}", p.display())))?;
            let n = store.export(&filter, from, to, file).runtime(STAGE)?;
            writeln!(out, "{}", json!({ "exported": n })).runtime(STAGE)
        }
        None => store.export(&filter, from, to, out).map(|_| ()).runtime(STAGE),
    }
}

pub fn import(settings: &Settings, a: ImportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    const STAGE: &str = "import";
    let file = fs::File::open(&a.file).map_err(|e| CliError::config(STAGE, format!("{}: {e}", a.file.display())))?;
    let store = open_store(settings, a.store, STAGE)?;
    let report = store.import(file).runtime(STAGE)?;
    writeln!(out, "{}", serde_json::to_string(&report).expect("json")).runtime(STAGE)
}
