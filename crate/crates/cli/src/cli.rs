//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "spotarc",
    version,
    about = "Spot instance availability archive: plan, collect, analyze, experiment, predict and serve",
    after_help = "Settings may also come from a config file (--config or SPOTLAKE_CONFIG) holding `key = value` \
                  lines, or from SPOTLAKE_<KEY> environment variables. Keys: store, universe, plan, model, seed, \
                  period, port, sim_port, vendor, out. Flags win over the environment, which wins over the file.\n\n\
                  Exit codes: 0 success, 1 runtime failure, 2 configuration error."
)]
pub struct Cli {
    /// Key-value settings file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack (type, region) pairs into placement-score queries and shard them over accounts.
    Plan(PlanArgs),
    /// Poll a vendor on a fixed cadence and archive what it reports.
    Collect(CollectArgs),
    /// Run the vendor simulator and summarize its state.
    Simulate(SimulateArgs),
    /// Run stratified spot-request experiments.
    Experiment(ExperimentArgs),
    /// Run one analysis over an archive.
    Analyze(AnalyzeArgs),
    /// Train the outcome predictor from labeled cases and archive history.
    Train(TrainArgs),
    /// Score a trained model and its baselines on labeled cases.
    Evaluate(EvaluateArgs),
    /// Serve the query API, and optionally the simulator on a second port.
    Serve(ServeArgs),
    /// Write archive records as line-delimited JSON.
    Export(ExportArgs),
    /// Append line-delimited JSON records to an archive.
    Import(ImportArgs),
    /// Run the whole pipeline and write the report files.
    Demo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Support map JSON: {"<type>": {"<region>": azCount}}.
    #[arg(long, value_name = "FILE")]
    pub support_map: Option<PathBuf>,
    /// Derive the support map from a universe file instead.
    #[arg(long, value_name = "FILE", conflicts_with = "support_map")]
    pub universe: Option<PathBuf>,
    /// AZ results one query may return.
    #[arg(long, default_value_t = 10)]
    pub capacity: u32,
    /// Unique queries per account per day.
    #[arg(long, default_value_t = 50)]
    pub per_account: usize,
    /// Plan file to write; printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CollectArgs {
    /// Plan file; derived from the vendor catalog when omitted.
    #[arg(long, value_name = "FILE")]
    pub plan: Option<PathBuf>,
    /// `sim` for the in-process simulator, or the base URL of a simulator facade.
    #[arg(long)]
    pub vendor: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Universe file for the in-process simulator.
    #[arg(long, value_name = "FILE")]
    pub universe: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    pub ticks: u32,
    /// Tick spacing, e.g. `10m` or `600`.
    #[arg(long)]
    pub period: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_name = "FILE")]
    pub universe: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated hours to advance before summarizing.
    #[arg(long, default_value_t = 24)]
    pub hours: i64,
    /// Also write the universe definition in use.
    #[arg(long, value_name = "FILE")]
    pub emit_universe: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Comma-separated strata, e.g. HH,HL,MM,LH,LL.
    #[arg(long, default_value = "HH,HL,MM,LH,LL")]
    pub strata: String,
    /// Allow strata outside the studied five.
    #[arg(long)]
    pub exploratory: bool,
    #[arg(long, default_value_t = 20)]
    pub per_stratum: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "FILE")]
    pub universe: Option<PathBuf>,
    /// Simulated hours to run before sampling candidates.
    #[arg(long, default_value_t = 0)]
    pub warmup_hours: i64,
    /// Cases file (one JSON line per case); printed to stdout when omitted.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalysisName {
    Distribution,
    Correlation,
    Frequency,
    Heatmap,
    Difference,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Rows {
    Family,
    FamilyClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Cols {
    Day,
    Region,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    pub analysis: AnalysisName,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Use the bundled fixture archive instead of a store.
    #[arg(long)]
    pub fixture: bool,
    /// Metric for distribution, frequency, heatmap and size.
    #[arg(long)]
    pub metric: Option<String>,
    /// Correlation metrics.
    #[arg(long, default_value = "placementScore")]
    pub a: String,
    #[arg(long, default_value = "interruptionFree")]
    pub b: String,
    /// Alignment grid in seconds.
    #[arg(long, default_value_t = 600)]
    pub grid: i64,
    #[arg(long, value_enum, default_value = "family")]
    pub rows: Rows,
    #[arg(long, value_enum, default_value = "region")]
    pub cols: Cols,
    /// Smallest type count for a size group.
    #[arg(long, default_value_t = 1)]
    pub min_types: usize,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub cases: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub trees: usize,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub cases: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Also write the CSV here.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Attach a simulator built from this universe.
    #[arg(long, value_name = "FILE")]
    pub sim_universe: Option<PathBuf>,
    /// Simulator facade port; defaults to the API port plus one.
    #[arg(long)]
    pub sim_port: Option<u16>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Predictor model for /v1/predict.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// `instanceTypes=a,b`, `regions=..`, `azs=..` or `metrics=..`; repeatable.
    #[arg(long)]
    pub filter: Vec<String>,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    pub file: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    /// Output directory; its `store` subdirectory is recreated.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub universe: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulated hours of collection.
    #[arg(long, default_value_t = 48)]
    pub hours: i64,
    #[arg(long)]
    pub period: Option<String>,
    /// Experiment cases per stratum on the collected universe.
    #[arg(long, default_value_t = 100)]
    pub per_stratum: usize,
    /// Labeled cases in the predictor campaign.
    #[arg(long, default_value_t = 5000)]
    pub campaign_cases: usize,
}
