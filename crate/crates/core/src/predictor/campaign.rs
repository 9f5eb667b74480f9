//! Labeled-case campaigns: a month of collection, then rounds of stratified
//! experiments interleaved with further collection, so every case has
//! archive history at its submission time.

use chrono::Duration;

use crate::collector::{CollectionSchedule, Collector};
use crate::experiment::{candidates, run_cases, stratified_sample, ExperimentCase, ExperimentError, Stratum};
use crate::planner::{plan_queries, shard_accounts, DAILY_UNIQUE_QUERIES, RESULT_CAP};
use crate::sim::{derive_seed, Universe, VendorSim};
use crate::store::Store;

use super::PredictError;

const STREAM_ROUND: u64 = 41;

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub seed: u64,
    pub n_types: usize,
    pub n_regions: usize,
    pub max_az: u32,
    pub period_secs: i64,
    pub warmup_days: i64,
    pub round_secs: i64,
    pub cases: usize,
    pub strata: Vec<Stratum>,
    /// Upper bound on cases per stratum per round.
    pub per_round: usize,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            seed: 7,
            n_types: 30,
            n_regions: 6,
            max_az: 3,
            period_secs: 7200,
            warmup_days: 30,
            round_secs: 4 * 3600,
            cases: 5000,
            strata: Stratum::STUDIED.to_vec(),
            per_round: 8,
        }
    }
}

pub struct CampaignOutput {
    pub sim: VendorSim,
    pub store: Store,
    pub cases: Vec<ExperimentCase>,
}

/// Runs the campaign until `cases` cases are collected. Rounds in which a
/// stratum has no candidates are skipped.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignOutput, PredictError> {
    let collect = |e: crate::collector::CollectError| PredictError::Collect(e.to_string());
    let universe = Universe::generate(cfg.seed, cfg.n_types, cfg.n_regions, cfg.max_az);
    let mut sim = VendorSim::new(universe, cfg.seed).map_err(|e| PredictError::Collect(e.to_string()))?;
    let queries = plan_queries(&sim.universe().support_map(), RESULT_CAP).map_err(|e| PredictError::Collect(e.to_string()))?;
    let plan = shard_accounts(queries, DAILY_UNIQUE_QUERIES).map_err(|e| PredictError::Collect(e.to_string()))?;
    let store = Store::in_memory();
    let mut collector = Collector::new(CollectionSchedule::every(cfg.period_secs, plan), &mut sim).map_err(collect)?;

    let mut cases: Vec<ExperimentCase> = Vec::with_capacity(cfg.cases);
    let mut at = sim.start() + Duration::days(cfg.warmup_days);
    // bounded so a universe missing a stratum cannot loop forever
    let max_rounds = 20 * cfg.cases.max(1) + 100;
    for round in 0..max_rounds {
        if cases.len() >= cfg.cases {
            break;
        }
        collector.run_loop(&mut sim, &store, at + Duration::seconds(1)).map_err(collect)?;
        sim.advance_to(at + Duration::seconds(60)).map_err(|e| PredictError::Collect(e.to_string()))?;
        let pool = candidates(&sim);
        match stratified_sample(&pool, &cfg.strata, derive_seed(cfg.seed, STREAM_ROUND, round as u64)) {
            Ok(picked) => {
                let per = picked.len() / cfg.strata.len().max(1);
                let take = per.min(cfg.per_round);
                let picked: Vec<_> = picked
                    .chunks(per.max(1))
                    .flat_map(|group| group.iter().take(take).cloned())
                    .collect();
                let next_id = cases.len() as u64 + 1;
                cases.extend(run_cases(&sim, &picked, next_id, cfg.seed)?);
            }
            Err(ExperimentError::EmptyStratum(_)) => {}
            Err(e) => return Err(e.into()),
        }
        at += Duration::seconds(cfg.round_secs);
    }
    cases.truncate(cfg.cases);
    Ok(CampaignOutput { sim, store, cases })
}
