//! Periodic collection of the three feeds into the archive.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    interruption_band_to_score, timestamp_from_secs, ArchiveRecord, InstanceType, Location, Metric,
    Zone,
};
use crate::planner::QueryPlan;
use crate::sim::{Catalog, VendorError};
use crate::store::{Store, StoreError};
use crate::vendor::Vendor;

pub const DEFAULT_PERIOD_SECS: i64 = 600;

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("all collection periods must be positive")]
    InvalidPeriod,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("vendor catalog unavailable: {0}")]
    Catalog(VendorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionSchedule {
    pub placement_period_secs: i64,
    pub advisor_period_secs: i64,
    pub price_period_secs: i64,
    pub plan: QueryPlan,
}

impl CollectionSchedule {
    pub fn every(period_secs: i64, plan: QueryPlan) -> Self {
        CollectionSchedule {
            placement_period_secs: period_secs,
            advisor_period_secs: period_secs,
            price_period_secs: period_secs,
            plan,
        }
    }

    fn validate(&self) -> Result<(), CollectError> {
        if self.placement_period_secs > 0 && self.advisor_period_secs > 0 && self.price_period_secs > 0 {
            Ok(())
        } else {
            Err(CollectError::InvalidPeriod)
        }
    }

    /// Spacing of ticks: the largest step that lands on every feed's period.
    pub fn tick_secs(&self) -> i64 {
        gcd(
            gcd(self.placement_period_secs, self.advisor_period_secs),
            self.price_period_secs,
        )
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectionReport {
    pub tick: Option<DateTime<Utc>>,
    pub attempted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub budget_exhaustions: usize,
    pub records_written: usize,
    pub duplicates: usize,
}

/// Drives one vendor into one store on a fixed tick grid starting at `start`.
pub struct Collector {
    schedule: CollectionSchedule,
    catalog: Catalog,
    start: i64,
    next_tick: i64,
    // last instant covered by the price feed
    price_polled_to: Option<i64>,
}

impl Collector {
    pub fn new(schedule: CollectionSchedule, vendor: &mut impl Vendor) -> Result<Self, CollectError> {
        schedule.validate()?;
        let catalog = vendor.catalog().map_err(CollectError::Catalog)?;
        let start = vendor.now().map_err(CollectError::Catalog)?.timestamp();
        Ok(Collector {
            schedule,
            catalog,
            start,
            next_tick: start,
            price_polled_to: None,
        })
    }

    pub fn next_tick(&self) -> DateTime<Utc> {
        timestamp_from_secs(self.next_tick)
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// Runs ticks on the grid while the tick time is before `until`.
    pub fn run_loop(
        &mut self,
        vendor: &mut impl Vendor,
        store: &Store,
        until: DateTime<Utc>,
    ) -> Result<Vec<CollectionReport>, CollectError> {
        let mut reports = Vec::new();
        while self.next_tick < until.timestamp() {
            reports.push(self.run_tick(vendor, store)?);
        }
        Ok(reports)
    }

    /// Polls every feed due at the next tick and appends the results as one
    /// batch. A store failure aborts the tick with nothing written, and the
    /// same tick runs again on the next call.
    pub fn run_tick(&mut self, vendor: &mut impl Vendor, store: &Store) -> Result<CollectionReport, CollectError> {
        let t = self.next_tick;
        let tick = timestamp_from_secs(t);
        let elapsed = t - self.start;
        let due = |period: i64| elapsed % period == 0;
        let mut report = CollectionReport {
            tick: Some(tick),
            ..CollectionReport::default()
        };
        let mut records = Vec::new();
        // the vendor clock may already be ahead; advancing is best-effort
        let _ = vendor.advance_to(tick);

        if due(self.schedule.placement_period_secs) {
            for (account, query) in self.schedule.plan.queries() {
                let Some(entries) = attempt(&mut report, || vendor.placement_scores(account, query)) else {
                    continue;
                };
                // composite scores describe no single type and are not archived
                let [instance] = query.instance_types.as_slice() else {
                    continue;
                };
                for e in entries {
                    let location = Location::new(e.region, e.az).expect("vendor returns consistent locations");
                    let instance = instance.clone();
                    records.push(record(tick, instance, location, Metric::PlacementScore, f64::from(e.score.value())));
                }
            }
        }

        if due(self.schedule.advisor_period_secs) {
            if let Some(entries) = attempt(&mut report, || vendor.advisor()) {
                for e in entries {
                    let location = Location::region(e.region);
                    let score = interruption_band_to_score(e.band).value();
                    records.push(record(tick, e.instance.clone(), location.clone(), Metric::InterruptionFree, score));
                    records.push(record(tick, e.instance, location, Metric::Savings, e.savings_ratio));
                }
            }
        }

        let mut price_ok = true;
        if due(self.schedule.price_period_secs) {
            let from = self.price_polled_to.unwrap_or(t);
            for (instance, az) in self.catalog.pairs() {
                let got = attempt(&mut report, || vendor.price_history(&instance, &az, timestamp_from_secs(from), tick));
                let Some(history) = got else {
                    price_ok = false;
                    continue;
                };
                // the leading row is the price in force at `from`, already archived after the first poll
                let skip = usize::from(self.price_polled_to.is_some());
                for p in history.into_iter().skip(skip) {
                    records.push(price_record(p.timestamp, &instance, &az, p.price_usd_per_hour));
                }
            }
        }

        let appended = store.append(&records)?;
        report.records_written = appended.accepted;
        report.duplicates = appended.duplicates;
        if due(self.schedule.price_period_secs) && price_ok {
            self.price_polled_to = Some(t);
        }
        self.next_tick = t + self.schedule.tick_secs();
        Ok(report)
    }
}

/// One call with a single retry; failures are tallied on the report.
fn attempt<T>(report: &mut CollectionReport, mut call: impl FnMut() -> Result<T, VendorError>) -> Option<T> {
    report.attempted += 1;
    let result = call().or_else(|_| call());
    match result {
        Ok(v) => {
            report.succeeded += 1;
            Some(v)
        }
        Err(e) => {
            report.failed += 1;
            if matches!(e, VendorError::QueryBudgetExhausted { .. }) {
                report.budget_exhaustions += 1;
            }
            None
        }
    }
}

fn record(ts: DateTime<Utc>, instance: InstanceType, location: Location, metric: Metric, value: f64) -> ArchiveRecord {
    ArchiveRecord {
        timestamp: ts,
        instance,
        location,
        metric,
        value,
    }
}

fn price_record(ts: DateTime<Utc>, instance: &InstanceType, az: &Zone, price: f64) -> ArchiveRecord {
    record(ts, instance.clone(), Location::zone(az.clone()), Metric::SpotPrice, price)
}

/// Sums a run's reports.
pub fn totals(reports: &[CollectionReport]) -> CollectionReport {
    let mut sum = CollectionReport::default();
    for r in reports {
        sum.attempted += r.attempted;
        sum.succeeded += r.succeeded;
        sum.failed += r.failed;
        sum.budget_exhaustions += r.budget_exhaustions;
        sum.records_written += r.records_written;
        sum.duplicates += r.duplicates;
    }
    sum.tick = reports.last().and_then(|r| r.tick);
    sum
}

/// Records per metric in a batch; handy for reports and tests.
pub fn count_by_metric(records: &[ArchiveRecord]) -> BTreeMap<Metric, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        *counts.entry(r.metric).or_insert(0) += 1;
    }
    counts
}
