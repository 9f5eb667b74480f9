//! The end-to-end pipeline: simulate, plan, collect, analyze, experiment,
//! train. Every output is a function of the seed and the flags.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde_json::json;
use spotarc::analysis::{correlation_cdf, score_difference_histogram, update_frequency_cdf, value_distribution};
use spotarc::collector::{totals, CollectionSchedule, Collector};
use spotarc::experiment::{summarize, table3_csv, StratumSummary, Stratum};
use spotarc::model::Metric;
use spotarc::predictor::campaign::{run_campaign, CampaignConfig};
use spotarc::predictor::{build_dataset, compare, ForestParams, Model};
use spotarc::planner::{plan_queries, shard_accounts, DAILY_UNIQUE_QUERIES, RESULT_CAP};
use spotarc::sim::VendorSim;
use spotarc::store::Store;

use crate::cli::DemoArgs;
use crate::commands::{load_universe, sample_cases, table4_text, write_file};
use crate::config::Settings;
use crate::error::{CliError, StageExt};

pub const DEFAULT_OUT: &str = "demo-out";

/// Report files the demo always writes.
pub const REPORTS: [&str; 5] = ["table3.csv", "table4.csv", "fig8.json", "fig9.csv", "fig10.json"];

fn json_text(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

pub fn table3_text(summary: &[StratumSummary]) -> String {
    let mut s = format!("{:<8}{:>7}{:>16}{:>14}{:>20}\n", "stratum", "cases", "not fulfilled %", "interrupted %", "median fulfill (s)");
    for row in summary {
        let median = row.median_fulfill_secs().map_or("-".to_string(), |m| format!("{m:.0}"));
        s.push_str(&format!(
            "{:<8}{:>7}{:>16.2}{:>14.2}{:>20}\n",
            row.stratum.to_string(),
            row.cases,
            row.not_fulfilled_pct,
            row.interrupted_pct,
            median
        ));
    }
    s
}

pub fn demo(settings: &Settings, a: DemoArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = settings.seed(a.seed)?;
    let period = settings.period(a.period)?;
    let dir = settings.path(a.out, "out").unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    if a.hours <= 0 || a.per_stratum == 0 || a.campaign_cases == 0 {
        return Err(CliError::config("config", "--hours, --per-stratum and --campaign-cases must be positive"));
    }
    let file = |name: &str| dir.join(name);

    let stage = "simulate";
    let universe = load_universe(settings, a.universe, seed, stage)?;
    let mut sim = VendorSim::new(universe, seed).config(stage)?;

    let stage = "plan";
    let queries = plan_queries(&sim.universe().support_map(), RESULT_CAP).runtime(stage)?;
    let plan = shard_accounts(queries, DAILY_UNIQUE_QUERIES).runtime(stage)?;
    write_file(&file("plan.json"), (plan.to_json() + "\n").as_bytes(), stage)?;

    let stage = "collect";
    let store_dir = file("store");
    if store_dir.exists() {
        fs::remove_dir_all(&store_dir).map_err(|e| CliError::runtime(stage, format!("{}: {e}", store_dir.display())))?;
    }
    let store = Store::open(&store_dir).runtime(stage)?;
    let mut collector = Collector::new(CollectionSchedule::every(period, plan), &mut sim).runtime(stage)?;
    let end = sim.start() + Duration::hours(a.hours);
    let reports = collector.run_loop(&mut sim, &store, end).runtime(stage)?;
    let lines: String = reports.iter().map(|r| serde_json::to_string(r).expect("json") + "\n").collect();
    write_file(&file("collect.jsonl"), lines.as_bytes(), stage)?;
    let total = totals(&reports);

    analyze_reports(&store, period, &dir)?;

    let stage = "experiment";
    let cases = sample_cases(&sim, &Stratum::STUDIED, a.per_stratum, seed, stage)?;
    let lines: String = cases.iter().map(|c| c.to_json_line() + "\n").collect();
    write_file(&file("cases.jsonl"), lines.as_bytes(), stage)?;
    let summary = summarize(&cases).runtime(stage)?;
    write_file(&file("table3.csv"), table3_csv(&summary).as_bytes(), stage)?;

    let stage = "train";
    let campaign = run_campaign(&CampaignConfig {
        seed,
        cases: a.campaign_cases,
        ..CampaignConfig::default()
    })
    .runtime(stage)?;
    let examples = build_dataset(&campaign.store, &campaign.cases);
    let comparison = compare(&examples, ForestParams::default(), seed).runtime(stage)?;
    write_file(&file("table4.csv"), comparison.to_csv().as_bytes(), stage)?;
    let model = Model::train(&examples, ForestParams::default(), seed).runtime(stage)?;
    write_file(&file("model.bin"), &model.to_bytes(), stage)?;

    let stage = "report";
    write!(
        out,
        "collected {} ticks, {} records, {} budget exhaustions into {}\n\n\
         outcomes per stratum ({} cases)\n{}\n\
         prediction accuracy ({} labeled cases, {} train / {} test)\n{}\n\
         reports in {}: {}\n",
        reports.len(),
        store.len(),
        total.budget_exhaustions,
        store_dir.display(),
        cases.len(),
        table3_text(&summary),
        examples.len(),
        comparison.train_size,
        comparison.test_size,
        table4_text(&comparison),
        dir.display(),
        REPORTS.join(", "),
    )
    .runtime(stage)
}

/// Writes the distribution, correlation, difference and update-frequency
/// reports for the whole archive.
pub fn analyze_reports(store: &Store, grid: i64, dir: &Path) -> Result<(), CliError> {
    let stage = "analyze";
    let (from, to) = store
        .span()
        .ok_or_else(|| CliError::runtime(stage, "the archive is empty"))?;
    let mut table2 = String::from("metric,bin,count,fraction\n");
    for m in [Metric::PlacementScore, Metric::InterruptionFree] {
        let h = value_distribution(store, m, from, to).runtime(stage)?;
        for ((b, c), f) in h.bins.iter().zip(&h.counts).zip(&h.fractions) {
            table2.push_str(&format!("{},{b:.1},{c},{f:.6}\n", m.as_str()));
        }
    }
    write_file(&dir.join("table2.csv"), table2.as_bytes(), stage)?;
    let fig8 = correlation_cdf(store, Metric::PlacementScore, Metric::InterruptionFree, grid, from, to).runtime(stage)?;
    write_file(&dir.join("fig8.json"), json_text(&fig8).as_bytes(), stage)?;
    let fig9 = score_difference_histogram(store, grid, from, to).runtime(stage)?;
    write_file(&dir.join("fig9.csv"), fig9.histogram.to_csv().as_bytes(), stage)?;
    let mut fig10 = serde_json::Map::new();
    for m in Metric::ALL {
        let cdf = update_frequency_cdf(store, m, from, to).runtime(stage)?;
        fig10.insert(m.as_str().to_string(), json!(cdf));
    }
    write_file(&dir.join("fig10.json"), json_text(&fig10).as_bytes(), stage)
}
