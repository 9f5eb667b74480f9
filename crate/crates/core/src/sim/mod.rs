//! Simulated cloud vendor.
//!
//! Serves the three spot data feeds (placement scores, advisor bands with
//! savings, price history) and the spot-request lifecycle from a hidden,
//! seeded world state. Placement bands re-draw on a fast schedule and
//! interruption bands on a slow one; each (type, AZ) and (type, region)
//! process owns its RNG stream, so advancing the clock in any number of
//! steps reaches the same state.

pub mod calibration;
pub mod lifecycle;
pub mod universe;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    timestamp_from_secs, Band3, InstanceType, InterruptionBand, Region, RequestStatus,
    SpotPlacementScore, SpotPriceRecord, Zone,
};
use crate::planner::{PlacementQuery, QueryKey, DAILY_UNIQUE_QUERIES, RESULT_CAP};

pub use calibration::{lifecycle_params, LifecycleParams, STUDIED};
pub use lifecycle::{Lifecycle, StatusEvent};
pub use universe::{InitialBand, RegionSpec, TypeSpec, Universe};

pub const BUDGET_WINDOW_SECS: i64 = 24 * 3600;
pub const SPS_MEAN_HOLD_SECS: f64 = 12.0 * 3600.0;
pub const IF_MEAN_HOLD_SECS: f64 = 7.0 * 24.0 * 3600.0;
pub const PRICE_MEAN_HOLD_SECS: f64 = 3.0 * 24.0 * 3600.0;

/// Probability that an AZ sits one band below its region's interruption band.
const AZ_IF_DEVIATION: f64 = 0.2;
const BONUS_PROBS: [f64; 3] = [0.39, 0.40, 0.21];

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail")]
pub enum VendorError {
    #[error("account {account} has used its {limit} unique queries for this 24 h window")]
    QueryBudgetExhausted { account: String, limit: usize },
    #[error("unknown region {0}")]
    UnknownRegion(String),
    #[error("unknown instance type {0}")]
    UnknownType(String),
    #[error("{instance} is not offered in {az}")]
    UnknownLocation { instance: String, az: String },
    #[error("range start is after range end")]
    RangeInverted,
    #[error("bid {0} must be positive")]
    InvalidBid(f64),
    #[error("clock advance must be positive")]
    NonPositiveAdvance,
    #[error("unknown spot request {0}")]
    UnknownRequest(u64),
    #[error("query must name at least one type and one region and a positive capacity")]
    EmptyQuery,
    #[error("invalid universe: {0}")]
    InvalidUniverse(String),
    #[error("vendor unavailable: {0}")]
    Transport(String),
}

pub type SimError = VendorError;

impl VendorError {
    pub fn code(&self) -> &'static str {
        match self {
            VendorError::QueryBudgetExhausted { .. } => "QueryBudgetExhausted",
            VendorError::UnknownRegion(_) => "UnknownRegion",
            VendorError::UnknownType(_) => "UnknownType",
            VendorError::UnknownLocation { .. } => "UnknownLocation",
            VendorError::RangeInverted => "RangeInverted",
            VendorError::InvalidBid(_) => "InvalidBid",
            VendorError::NonPositiveAdvance => "NonPositiveAdvance",
            VendorError::UnknownRequest(_) => "UnknownRequest",
            VendorError::EmptyQuery => "EmptyQuery",
            VendorError::InvalidUniverse(_) => "InvalidUniverse",
            VendorError::Transport(_) => "Transport",
        }
    }
}

/// One placement-score result row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub region: Region,
    pub az: Option<Zone>,
    pub score: SpotPlacementScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdvisorEntry {
    pub instance: InstanceType,
    pub region: Region,
    pub band: InterruptionBand,
    pub savings_ratio: f64,
}

/// Ground truth behind the published metrics for one (type, AZ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HiddenAvailability {
    pub sps_band: Band3,
    pub if_band: Band3,
    pub fulfill_prob: f64,
    pub hazard_per_hour: f64,
    pub price_usd_per_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpotRequest {
    pub id: u64,
    pub instance: InstanceType,
    pub az: Zone,
    pub bid_usd_per_hour: f64,
    pub persistent: bool,
    pub status: RequestStatus,
    pub submitted_at: DateTime<Utc>,
    pub fulfilled_at: Option<DateTime<Utc>>,
    pub interrupted_at: Option<DateTime<Utc>>,
}

/// Dimension catalog of the vendor universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Catalog {
    pub start: DateTime<Utc>,
    pub regions: Vec<CatalogRegion>,
    pub types: Vec<CatalogType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CatalogRegion {
    pub region: Region,
    pub zones: Vec<Zone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CatalogType {
    pub instance: InstanceType,
    pub on_demand_usd: f64,
    pub zones: Vec<Zone>,
}

impl Catalog {
    pub fn support_map(&self) -> crate::planner::SupportMap {
        let mut map = crate::planner::SupportMap::new();
        for t in &self.types {
            let mut counts: BTreeMap<Region, u32> = BTreeMap::new();
            for z in &t.zones {
                *counts.entry(z.region()).or_insert(0) += 1;
            }
            for (region, n) in counts {
                map.insert(t.instance.clone(), region, n)
                    .expect("positive count");
            }
        }
        map
    }

    /// All offered (type, AZ) pairs.
    pub fn pairs(&self) -> Vec<(InstanceType, Zone)> {
        self.types
            .iter()
            .flat_map(|t| t.zones.iter().map(move |z| (t.instance.clone(), z.clone())))
            .collect()
    }
}

/// Unique-query accounting for one account over a rolling 24 h window.
#[derive(Debug, Clone, Default)]
pub struct AccountBudget {
    pub account: String,
    first_seen: BTreeMap<QueryKey, i64>,
}

impl AccountBudget {
    fn new(account: &str) -> Self {
        Self {
            account: account.to_string(),
            first_seen: BTreeMap::new(),
        }
    }

    fn expire(&mut self, now: i64) {
        self.first_seen
            .retain(|_, &mut t| now - t < BUDGET_WINDOW_SECS);
    }

    /// Admits `key` at `now` if it is already counted or the window has room.
    fn admit(&mut self, key: &QueryKey, now: i64) -> bool {
        self.expire(now);
        if self.first_seen.contains_key(key) {
            return true;
        }
        if self.first_seen.len() >= DAILY_UNIQUE_QUERIES {
            return false;
        }
        self.first_seen.insert(key.clone(), now);
        true
    }

    pub fn used(&self, now: i64) -> usize {
        self.first_seen
            .values()
            .filter(|&&t| now - t < BUDGET_WINDOW_SECS)
            .count()
    }
}

struct ZoneState {
    sps: Band3,
    sps_flips: u64,
    next_sps_flip: i64,
    sps_rng: ChaCha8Rng,
    if_band: Band3,
    // fixed refinement of a Medium interruption band into one of three categories
    if_detail: u8,
    // volatile (+1) or stable (-1) capacity pool, equally likely
    fragility: f64,
    savings: f64,
    next_price_change: i64,
    prices: Vec<(i64, f64)>,
    price_rng: ChaCha8Rng,
}

struct RegionState {
    if_band: Band3,
    next_if_flip: i64,
    rng: ChaCha8Rng,
    zones: Vec<Zone>,
}

struct SimRequest {
    request: SpotRequest,
    lifecycle: Lifecycle,
    submitted: i64,
}

pub struct VendorSim {
    universe: Universe,
    seed: u64,
    start: i64,
    clock: i64,
    type_ids: BTreeMap<InstanceType, usize>,
    zone_ids: BTreeMap<Zone, usize>,
    zones: BTreeMap<(InstanceType, Zone), ZoneState>,
    regions: BTreeMap<(InstanceType, Region), RegionState>,
    accounts: BTreeMap<String, AccountBudget>,
    requests: BTreeMap<u64, SimRequest>,
    next_request: u64,
}

const STREAM_SPS: u64 = 1;
const STREAM_IF: u64 = 2;
const STREAM_PRICE: u64 = 3;
const STREAM_REQUEST: u64 = 4;
const STREAM_BONUS: u64 = 5;
const STREAM_INIT: u64 = 6;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for a sub-stream.
pub fn derive_seed(seed: u64, stream: u64, id: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream.wrapping_mul(0xA24B_AED4_963E_E407)) ^ id)
}

/// Fragile pools (positive fragility) change placement band more often.
fn sps_mean_hold(fragility: f64) -> f64 {
    SPS_MEAN_HOLD_SECS * 2f64.powf(-fragility)
}

fn hold_secs(rng: &mut ChaCha8Rng, mean: f64) -> i64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    ((-mean * u.ln()).round() as i64).max(1)
}

fn sps_weights(propensity: f64) -> [f64; 3] {
    let high = 0.25 + 0.6 * propensity;
    [high, (1.0 - high) / 2.0, (1.0 - high) / 2.0]
}

fn if_weights(propensity: f64) -> [f64; 3] {
    let high = 0.15 + 0.5 * propensity;
    let medium = 0.45 * (1.0 - high);
    [high, medium, 1.0 - high - medium]
}

fn draw_band(rng: &mut ChaCha8Rng, weights: [f64; 3], exclude: Option<Band3>) -> Band3 {
    let mut w = weights;
    if let Some(b) = exclude {
        w[band_index(b)] = 0.0;
    }
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &wi) in w.iter().enumerate() {
        if u < wi {
            return Band3::ALL[i];
        }
        u -= wi;
    }
    // rounding fallthrough: last band with positive weight
    let last = w.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    Band3::ALL[last]
}

fn band_index(b: Band3) -> usize {
    match b {
        Band3::High => 0,
        Band3::Medium => 1,
        Band3::Low => 2,
    }
}

fn five_level(band: Band3, detail: u8) -> InterruptionBand {
    match band {
        Band3::High => InterruptionBand::Lt5,
        Band3::Medium => [
            InterruptionBand::B5To10,
            InterruptionBand::B10To15,
            InterruptionBand::B15To20,
        ][usize::from(detail % 3)],
        Band3::Low => InterruptionBand::Gt20,
    }
}

fn capacity_pool(band: Band3) -> u64 {
    match band {
        Band3::High => 50,
        Band3::Medium => 10,
        Band3::Low => 2,
    }
}

fn degrade(base: u8, pool: u64, capacity: u32) -> u8 {
    let c = u64::from(capacity);
    let steps = if c <= pool {
        0
    } else if c <= 5 * pool {
        1
    } else {
        2
    };
    base.saturating_sub(steps).max(1)
}

impl VendorSim {
    pub fn new(universe: Universe, seed: u64) -> Result<Self, VendorError> {
        universe.validate()?;
        let start = universe.start.timestamp();
        let type_ids = universe
            .types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.instance.clone(), i))
            .collect();
        let mut zone_ids = BTreeMap::new();
        for r in &universe.regions {
            for z in r.zones() {
                let next = zone_ids.len();
                zone_ids.insert(z, next);
            }
        }
        let mut sim = VendorSim {
            seed,
            start,
            clock: start,
            type_ids,
            zone_ids,
            zones: BTreeMap::new(),
            regions: BTreeMap::new(),
            accounts: BTreeMap::new(),
            requests: BTreeMap::new(),
            next_request: 1,
            universe,
        };
        sim.initialize();
        Ok(sim)
    }

    fn initialize(&mut self) {
        let types = self.universe.types.clone();
        for spec in &types {
            let propensity = universe::propensity(&spec.instance);
            let tid = self.type_ids[&spec.instance] as u64;
            for (region, &n) in &spec.support {
                let zones: Vec<Zone> = (0..n as usize).map(|i| region.zone(i)).collect();
                let region_id = self.zone_ids[&zones[0]] as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.seed,
                    STREAM_IF,
                    tid << 20 | region_id,
                ));
                let if_band = draw_band(&mut rng, if_weights(propensity), None);
                let az_bands: Vec<Band3> = zones
                    .iter()
                    .map(|_| {
                        if rng.random_bool(AZ_IF_DEVIATION) {
                            if_band.worse()
                        } else {
                            if_band
                        }
                    })
                    .collect();
                let next_if_flip = self.start + hold_secs(&mut rng, IF_MEAN_HOLD_SECS);
                for (zone, az_if) in zones.iter().zip(az_bands) {
                    let zid = self.zone_ids[zone] as u64;
                    let id = tid << 20 | zid;
                    let mut init =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_INIT, id));
                    let mut sps_rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_SPS, id));
                    let mut price_rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(self.seed, STREAM_PRICE, id));
                    let sps = draw_band(&mut sps_rng, sps_weights(propensity), None);
                    let fragility = if init.random_bool(0.5) { 1.0 } else { -1.0 };
                    let next_sps_flip =
                        self.start + hold_secs(&mut sps_rng, sps_mean_hold(fragility));
                    let savings = draw_savings(&mut price_rng, propensity);
                    let next_price_change =
                        self.start + hold_secs(&mut price_rng, PRICE_MEAN_HOLD_SECS);
                    let price = spot_price(spec.on_demand_usd, savings);
                    self.zones.insert(
                        (spec.instance.clone(), zone.clone()),
                        ZoneState {
                            sps,
                            sps_flips: 0,
                            next_sps_flip,
                            sps_rng,
                            if_band: az_if,
                            if_detail: init.random_range(0..3),
                            fragility,
                            savings,
                            next_price_change,
                            prices: vec![(self.start, price)],
                            price_rng,
                        },
                    );
                }
                self.regions.insert(
                    (spec.instance.clone(), region.clone()),
                    RegionState {
                        if_band,
                        next_if_flip,
                        rng,
                        zones,
                    },
                );
            }
        }
        for pin in self.universe.initial_bands.clone() {
            if let Some(z) = self.zones.get_mut(&(pin.instance.clone(), pin.az.clone())) {
                z.sps = pin.sps;
                z.if_band = pin.if_band;
            }
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }

    pub fn now(&self) -> DateTime<Utc> {
        timestamp_from_secs(self.clock)
    }

    pub fn start(&self) -> DateTime<Utc> {
        timestamp_from_secs(self.start)
    }

    pub fn catalog(&self) -> Catalog {
        Catalog {
            start: self.start(),
            regions: self
                .universe
                .regions
                .iter()
                .map(|r| CatalogRegion {
                    region: r.code.clone(),
                    zones: r.zones(),
                })
                .collect(),
            types: self
                .universe
                .types
                .iter()
                .map(|t| CatalogType {
                    instance: t.instance.clone(),
                    on_demand_usd: t.on_demand_usd,
                    zones: self.universe.zones_of(t),
                })
                .collect(),
        }
    }

    pub fn on_demand_price(&self, instance: &InstanceType) -> Result<f64, VendorError> {
        self.type_spec(instance).map(|t| t.on_demand_usd)
    }

    fn type_spec(&self, instance: &InstanceType) -> Result<&TypeSpec, VendorError> {
        self.type_ids
            .get(instance)
            .map(|&i| &self.universe.types[i])
            .ok_or_else(|| VendorError::UnknownType(instance.to_string()))
    }

    fn zone_state(&self, instance: &InstanceType, az: &Zone) -> Result<&ZoneState, VendorError> {
        self.type_spec(instance)?;
        self.zones
            .get(&(instance.clone(), az.clone()))
            .ok_or_else(|| VendorError::UnknownLocation {
                instance: instance.to_string(),
                az: az.to_string(),
            })
    }

    pub fn hidden(
        &self,
        instance: &InstanceType,
        az: &Zone,
    ) -> Result<HiddenAvailability, VendorError> {
        let z = self.zone_state(instance, az)?;
        let params = lifecycle_params(z.sps, z.if_band).with_fragility(z.fragility);
        Ok(HiddenAvailability {
            sps_band: z.sps,
            if_band: z.if_band,
            fulfill_prob: params.fulfill_prob,
            hazard_per_hour: params.hazard_per_hour,
            price_usd_per_hour: z.prices.last().expect("initial price").1,
        })
    }

    /// Every offered (type, AZ) with its current (placement, interruption) bands.
    pub fn strata(&self) -> Vec<(InstanceType, Zone, Band3, Band3)> {
        self.zones
            .iter()
            .map(|((t, z), s)| (t.clone(), z.clone(), s.sps, s.if_band))
            .collect()
    }

    pub fn budget_used(&self, account: &str) -> usize {
        self.accounts.get(account).map_or(0, |b| b.used(self.clock))
    }

    pub fn budget_remaining(&self, account: &str) -> usize {
        DAILY_UNIQUE_QUERIES - self.budget_used(account).min(DAILY_UNIQUE_QUERIES)
    }

    /// Advances the clock by `dt_secs`, firing band flips, price changes and
    /// request transitions in between.
    pub fn advance_clock(&mut self, dt_secs: i64) -> Result<(), VendorError> {
        if dt_secs <= 0 {
            return Err(VendorError::NonPositiveAdvance);
        }
        self.advance_to_secs(self.clock + dt_secs);
        Ok(())
    }

    pub fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), VendorError> {
        let target = t.timestamp();
        if target > self.clock {
            self.advance_to_secs(target);
        }
        Ok(())
    }

    fn advance_to_secs(&mut self, target: i64) {
        let propensities: BTreeMap<InstanceType, f64> = self
            .universe
            .types
            .iter()
            .map(|t| (t.instance.clone(), universe::propensity(&t.instance)))
            .collect();
        for ((instance, _), region) in self.regions.iter_mut() {
            let p = propensities[instance];
            while region.next_if_flip <= target {
                region.if_band = draw_band(&mut region.rng, if_weights(p), Some(region.if_band));
                for zone in &region.zones {
                    let deviates = region.rng.random_bool(AZ_IF_DEVIATION);
                    let band = if deviates {
                        region.if_band.worse()
                    } else {
                        region.if_band
                    };
                    if let Some(z) = self.zones.get_mut(&(instance.clone(), zone.clone())) {
                        z.if_band = band;
                    }
                }
                region.next_if_flip += hold_secs(&mut region.rng, IF_MEAN_HOLD_SECS);
            }
        }
        for spec in &self.universe.types {
            let p = propensities[&spec.instance];
            for zone in self.universe.zones_of(spec) {
                let z = self
                    .zones
                    .get_mut(&(spec.instance.clone(), zone))
                    .expect("zone state per supported pair");
                while z.next_sps_flip <= target {
                    z.sps = draw_band(&mut z.sps_rng, sps_weights(p), Some(z.sps));
                    z.sps_flips += 1;
                    z.next_sps_flip += hold_secs(&mut z.sps_rng, sps_mean_hold(z.fragility));
                }
                while z.next_price_change <= target {
                    z.savings = draw_savings(&mut z.price_rng, p);
                    let price = spot_price(spec.on_demand_usd, z.savings);
                    z.prices.push((z.next_price_change, price));
                    z.next_price_change += hold_secs(&mut z.price_rng, PRICE_MEAN_HOLD_SECS);
                }
            }
        }
        self.clock = target;
        let clock = self.clock;
        for req in self.requests.values_mut() {
            refresh_request(req, clock);
        }
    }

    /// Placement scores for `query`, charged against `account`'s budget.
    pub fn placement_score_query(
        &mut self,
        account: &str,
        query: &PlacementQuery,
    ) -> Result<Vec<ScoreEntry>, VendorError> {
        if query.instance_types.is_empty() || query.regions.is_empty() || query.target_capacity == 0
        {
            return Err(VendorError::EmptyQuery);
        }
        for t in &query.instance_types {
            self.type_spec(t)?;
        }
        for r in &query.regions {
            if !self.universe.regions.iter().any(|spec| &spec.code == r) {
                return Err(VendorError::UnknownRegion(r.to_string()));
            }
        }
        let key = query.key();
        let now = self.clock;
        let budget = self
            .accounts
            .entry(account.to_string())
            .or_insert_with(|| AccountBudget::new(account));
        if !budget.admit(&key, now) {
            return Err(VendorError::QueryBudgetExhausted {
                account: account.to_string(),
                limit: DAILY_UNIQUE_QUERIES,
            });
        }
        Ok(self.scores(&key, query.single_az))
    }

    /// Scores without budget accounting.
    pub fn scores(&self, key: &QueryKey, single_az: bool) -> Vec<ScoreEntry> {
        let mut results = Vec::new();
        for region in &key.regions {
            let Some(spec) = self.universe.regions.iter().find(|r| &r.code == region) else {
                continue;
            };
            if single_az {
                for zone in spec.zones() {
                    let contributions: Vec<(u8, u64)> = key
                        .instance_types
                        .iter()
                        .filter_map(|t| self.zones.get(&(t.clone(), zone.clone())))
                        .map(|z| {
                            (
                                degrade(
                                    z.sps.value() as u8,
                                    capacity_pool(z.sps),
                                    key.target_capacity,
                                ),
                                z.sps_flips,
                            )
                        })
                        .collect();
                    if let Some(score) =
                        self.composite(key, self.zone_ids[&zone] as u64, &contributions)
                    {
                        results.push(ScoreEntry {
                            region: region.clone(),
                            az: Some(zone),
                            score,
                        });
                    }
                }
            } else {
                let contributions: Vec<(u8, u64)> = key
                    .instance_types
                    .iter()
                    .filter_map(|t| {
                        let states: Vec<&ZoneState> = spec
                            .zones()
                            .iter()
                            .filter_map(|zone| self.zones.get(&(t.clone(), zone.clone())))
                            .collect();
                        if states.is_empty() {
                            return None;
                        }
                        let base = states
                            .iter()
                            .map(|z| z.sps.value() as u8)
                            .max()
                            .unwrap_or(1);
                        let pool = states.iter().map(|z| capacity_pool(z.sps)).sum();
                        let flips = states.iter().map(|z| z.sps_flips).sum();
                        Some((degrade(base, pool, key.target_capacity), flips))
                    })
                    .collect();
                let location = self.zone_ids[&spec.code.zone(0)] as u64 | 1 << 40;
                if let Some(score) = self.composite(key, location, &contributions) {
                    results.push(ScoreEntry {
                        region: region.clone(),
                        az: None,
                        score,
                    });
                }
            }
        }
        results.sort_by(|a, b| {
            b.score
                .cmp(&a.score)
                .then_with(|| a.region.cmp(&b.region))
                .then_with(|| a.az.cmp(&b.az))
        });
        results.truncate(RESULT_CAP as usize);
        results
    }

    /// Sum of individual scores plus a state-seeded bonus when more than
    /// one type contributes; capped at 10.
    fn composite(
        &self,
        key: &QueryKey,
        location: u64,
        contributions: &[(u8, u64)],
    ) -> Option<SpotPlacementScore> {
        if contributions.is_empty() {
            return None;
        }
        let sum: u32 = contributions.iter().map(|&(s, _)| u32::from(s)).sum();
        let bonus = if contributions.len() > 1 {
            let mut h = derive_seed(self.seed, STREAM_BONUS, location);
            for t in &key.instance_types {
                h = splitmix64(h ^ self.type_ids[t] as u64);
            }
            for &(_, flips) in contributions {
                h = splitmix64(h ^ flips);
            }
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            if u < BONUS_PROBS[0] {
                0
            } else if u < BONUS_PROBS[0] + BONUS_PROBS[1] {
                1
            } else {
                2
            }
        } else {
            0
        };
        Some(SpotPlacementScore::new((sum + bonus).min(10) as u8).expect("score in 1..=10"))
    }

    /// Interruption band and savings ratio per supported (type, region).
    /// The band is the worst band among the region's supporting AZs.
    pub fn advisor_snapshot(&self) -> Vec<AdvisorEntry> {
        self.regions
            .iter()
            .map(|((instance, region), state)| {
                let zones: Vec<&ZoneState> = state
                    .zones
                    .iter()
                    .map(|z| &self.zones[&(instance.clone(), z.clone())])
                    .collect();
                let band = zones
                    .iter()
                    .map(|z| five_level(z.if_band, z.if_detail))
                    .max()
                    .expect("at least one zone");
                let savings = zones.iter().map(|z| z.savings).sum::<f64>() / zones.len() as f64;
                AdvisorEntry {
                    instance: instance.clone(),
                    region: region.clone(),
                    band,
                    savings_ratio: (savings * 100.0).round() / 100.0,
                }
            })
            .collect()
    }

    /// Price change points in `[from, to]`, led by the price in force at
    /// `from`. History is known up to the current clock.
    pub fn price_history(
        &self,
        instance: &InstanceType,
        az: &Zone,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<SpotPriceRecord>, VendorError> {
        if from > to {
            return Err(VendorError::RangeInverted);
        }
        let z = self.zone_state(instance, az)?;
        let (from_s, to_s) = (from.timestamp(), to.timestamp());
        let in_force = z.prices.partition_point(|&(t, _)| t <= from_s);
        let opening = z.prices[in_force.max(1) - 1].1;
        let mut out = vec![
            SpotPriceRecord::new(from, instance.clone(), az.clone(), opening)
                .expect("positive price"),
        ];
        out.extend(
            z.prices[in_force..]
                .iter()
                .take_while(|&&(t, _)| t <= to_s)
                .map(|&(t, p)| {
                    SpotPriceRecord::new(timestamp_from_secs(t), instance.clone(), az.clone(), p)
                        .expect("positive price")
                }),
        );
        Ok(out)
    }

    /// Current spot price of a pair.
    pub fn spot_price(&self, instance: &InstanceType, az: &Zone) -> Result<f64, VendorError> {
        Ok(self
            .zone_state(instance, az)?
            .prices
            .last()
            .expect("initial price")
            .1)
    }

    /// The lifecycle a request submitted now would follow, without
    /// registering it.
    pub fn lifecycle_for(
        &self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
        seed: u64,
    ) -> Result<Lifecycle, VendorError> {
        if !(bid > 0.0 && bid.is_finite()) {
            return Err(VendorError::InvalidBid(bid));
        }
        let z = self.zone_state(instance, az)?;
        let price = z.prices.last().expect("initial price").1;
        Ok(Lifecycle::new(
            lifecycle_params(z.sps, z.if_band).with_fragility(z.fragility),
            persistent,
            bid >= price,
            seed,
        ))
    }

    pub fn submit_spot_request(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
    ) -> Result<SpotRequest, VendorError> {
        let id = self.next_request;
        let seed = derive_seed(self.seed, STREAM_REQUEST, id);
        let lifecycle = self.lifecycle_for(instance, az, bid, persistent, seed)?;
        self.next_request += 1;
        let mut req = SimRequest {
            request: SpotRequest {
                id,
                instance: instance.clone(),
                az: az.clone(),
                bid_usd_per_hour: bid,
                persistent,
                status: RequestStatus::PendingEvaluation,
                submitted_at: self.now(),
                fulfilled_at: None,
                interrupted_at: None,
            },
            lifecycle,
            submitted: self.clock,
        };
        refresh_request(&mut req, self.clock);
        let snapshot = req.request.clone();
        self.requests.insert(id, req);
        Ok(snapshot)
    }

    pub fn spot_request(&self, id: u64) -> Result<SpotRequest, VendorError> {
        self.requests
            .get(&id)
            .map(|r| r.request.clone())
            .ok_or(VendorError::UnknownRequest(id))
    }
}

fn refresh_request(req: &mut SimRequest, clock: i64) {
    let elapsed = (clock - req.submitted) as f64;
    req.request.status = req.lifecycle.status_at(elapsed);
    let (fulfilled, interrupted) = req.lifecycle.milestones(elapsed);
    let at = |secs: f64| timestamp_from_secs(req.submitted + secs.floor() as i64);
    req.request.fulfilled_at = fulfilled.map(at);
    req.request.interrupted_at = interrupted.map(at);
}

fn draw_savings(rng: &mut ChaCha8Rng, propensity: f64) -> f64 {
    let base: f64 = rng.random_range(0.45..0.80);
    (base - 0.1 * (1.0 - propensity)).clamp(0.05, 0.95)
}

fn spot_price(on_demand: f64, savings: f64) -> f64 {
    let price = on_demand * (1.0 - savings);
    ((price * 10_000.0).round() / 10_000.0).max(0.0001)
}
