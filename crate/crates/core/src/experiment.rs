//! Spot request experiments: stratified sampling over (placement,
//! interruption) bands, persistent requests sampled every 5 s for 24 h, and
//! per-stratum outcome summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::analysis::median;
use crate::model::{Band3, InstanceType, RequestStatus, Zone};
use crate::sim::{derive_seed, lifecycle_params, Lifecycle, StatusEvent, VendorError, VendorSim};
use crate::vendor::Vendor;

pub const SAMPLE_SECS: i64 = 5;
pub const WINDOW_SAMPLES: u32 = (24 * 3600 / SAMPLE_SECS) as u32;

const STREAM_CASE: u64 = 11;
const STREAM_SAMPLE: u64 = 12;
const STREAM_FRAGILITY: u64 = 13;

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("no candidates in stratum {0}")]
    EmptyStratum(Stratum),
    #[error("stratum {0} is outside the studied set")]
    UnstudiedStratum(Stratum),
    #[error("unknown (instance, az) pair: {0}")]
    UnknownPair(String),
    #[error("invalid stratum: {0:?}")]
    InvalidStratum(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("no cases")]
    NoCases,
    #[error(transparent)]
    Vendor(VendorError),
}

impl From<VendorError> for ExperimentError {
    fn from(e: VendorError) -> Self {
        match e {
            VendorError::UnknownType(_) | VendorError::UnknownLocation { .. } | VendorError::UnknownRegion(_) => {
                ExperimentError::UnknownPair(e.to_string())
            }
            other => ExperimentError::Vendor(other),
        }
    }
}

/// A (placement band, interruption band) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stratum {
    pub sps: Band3,
    pub if_: Band3,
}

impl Stratum {
    pub const fn new(sps: Band3, if_: Band3) -> Self {
        Stratum { sps, if_ }
    }

    /// The five strata of the reference protocol, in report order.
    pub const STUDIED: [Stratum; 5] = [
        Stratum::new(Band3::High, Band3::High),
        Stratum::new(Band3::High, Band3::Low),
        Stratum::new(Band3::Medium, Band3::Medium),
        Stratum::new(Band3::Low, Band3::High),
        Stratum::new(Band3::Low, Band3::Low),
    ];

    pub fn all() -> Vec<Stratum> {
        Band3::ALL
            .iter()
            .flat_map(|&s| Band3::ALL.iter().map(move |&i| Stratum::new(s, i)))
            .collect()
    }

    pub fn is_studied(self) -> bool {
        Stratum::STUDIED.contains(&self)
    }

    /// Compact form, e.g. "HL".
    pub fn code(self) -> String {
        format!("{}{}", self.sps.letter(), self.if_.letter())
    }

    /// Parses a comma-separated list such as "HH,HL,MM".
    pub fn parse_list(raw: &str) -> Result<Vec<Stratum>, ExperimentError> {
        raw.split(',').map(|s| s.trim().parse()).collect()
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.sps.letter(), self.if_.letter())
    }
}

impl FromStr for Stratum {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters: Vec<char> = s.chars().filter(|&c| c != '-').collect();
        match letters.as_slice() {
            [a, b] => match (Band3::from_letter(*a), Band3::from_letter(*b)) {
                (Some(sps), Some(if_)) => Ok(Stratum::new(sps, if_)),
                _ => Err(ExperimentError::InvalidStratum(s.to_string())),
            },
            _ => Err(ExperimentError::InvalidStratum(s.to_string())),
        }
    }
}

impl Serialize for Stratum {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for Stratum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks a stratum list; only the studied strata are allowed unless the
/// run is exploratory.
pub fn validate_strata(strata: &[Stratum], exploratory: bool) -> Result<(), ExperimentError> {
    match strata.iter().find(|s| !exploratory && !s.is_studied()) {
        Some(&s) => Err(ExperimentError::UnstudiedStratum(s)),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeLabel {
    NoInterrupt,
    Interrupted,
    NoFulfill,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 3] = [
        OutcomeLabel::NoInterrupt,
        OutcomeLabel::Interrupted,
        OutcomeLabel::NoFulfill,
    ];

    pub fn index(self) -> usize {
        match self {
            OutcomeLabel::NoInterrupt => 0,
            OutcomeLabel::Interrupted => 1,
            OutcomeLabel::NoFulfill => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<OutcomeLabel> {
        OutcomeLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeLabel::NoInterrupt => "NoInterrupt",
            OutcomeLabel::Interrupted => "Interrupted",
            OutcomeLabel::NoFulfill => "NoFulfill",
        }
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sampled status sequence, stored run-length encoded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StatusTrace {
    runs: Vec<(RequestStatus, u32)>,
}

impl StatusTrace {
    pub fn from_samples(samples: &[RequestStatus]) -> Self {
        let mut trace = StatusTrace::default();
        for &s in samples {
            trace.push(s, 1);
        }
        trace
    }

    /// Builds the trace of a request observed every `step` seconds, `n`
    /// samples starting at submission.
    pub fn sample_events(events: &[StatusEvent], step: f64, n: u32) -> Self {
        let mut trace = StatusTrace::default();
        let mut idx = 0;
        let mut current = RequestStatus::PendingEvaluation;
        for k in 0..n {
            let t = f64::from(k) * step;
            while idx < events.len() && events[idx].at_secs <= t {
                current = events[idx].status;
                idx += 1;
            }
            trace.push(current, 1);
        }
        trace
    }

    fn push(&mut self, status: RequestStatus, count: u32) {
        if count == 0 {
            return;
        }
        match self.runs.last_mut() {
            Some((s, n)) if *s == status => *n += count,
            _ => self.runs.push((status, count)),
        }
    }

    pub fn runs(&self) -> &[(RequestStatus, u32)] {
        &self.runs
    }

    pub fn len(&self) -> u32 {
        self.runs.iter().map(|r| r.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn expand(&self) -> Vec<RequestStatus> {
        self.runs
            .iter()
            .flat_map(|&(s, n)| std::iter::repeat_n(s, n as usize))
            .collect()
    }

    /// Label implied by the observed statuses.
    pub fn label(&self) -> OutcomeLabel {
        if !self.runs.iter().any(|r| r.0 == RequestStatus::Fulfilled) {
            return OutcomeLabel::NoFulfill;
        }
        let interrupted = self.runs.windows(2).any(|w| {
            w[0].0 == RequestStatus::Fulfilled
                && matches!(w[1].0, RequestStatus::PendingEvaluation | RequestStatus::Terminal)
        });
        if interrupted {
            OutcomeLabel::Interrupted
        } else {
            OutcomeLabel::NoInterrupt
        }
    }

    /// Every consecutive pair of runs is a legal status transition.
    pub fn is_legal(&self) -> bool {
        self.runs.windows(2).all(|w| w[0].0.can_transition(w[1].0))
    }
}

impl Serialize for StatusTrace {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&str, u32)> = self.runs.iter().map(|&(st, n)| (st.code(), n)).collect();
        pairs.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StatusTrace {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let pairs: Vec<(String, u32)> = Vec::deserialize(d)?;
        let mut trace = StatusTrace::default();
        for (code, n) in pairs {
            let status = RequestStatus::ALL
                .into_iter()
                .find(|s| s.code() == code)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown status code {code:?}")))?;
            trace.push(status, n);
        }
        Ok(trace)
    }
}

/// A pair eligible for an experiment, with its bands at sampling time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub instance: InstanceType,
    pub az: Zone,
    pub stratum: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentCase {
    pub id: u64,
    pub instance: InstanceType,
    pub az: Zone,
    pub stratum: Stratum,
    pub submitted_at: DateTime<Utc>,
    pub bid_usd_per_hour: f64,
    pub status_trace: StatusTrace,
    pub label: OutcomeLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_fulfill_sec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_to_first_interrupt_sec: Option<f64>,
}

impl ExperimentCase {
    /// Builds a case from a request's event history. The label comes from
    /// the sampled trace; latencies are exact event times from submission.
    fn from_events(
        id: u64,
        candidate: &Candidate,
        submitted_at: DateTime<Utc>,
        bid: f64,
        events: &[StatusEvent],
    ) -> Self {
        let trace = StatusTrace::sample_events(events, SAMPLE_SECS as f64, WINDOW_SAMPLES);
        let label = trace.label();
        let horizon = f64::from(WINDOW_SAMPLES - 1) * SAMPLE_SECS as f64;
        let in_window = || events.iter().take_while(|e| e.at_secs <= horizon);
        let fulfilled = in_window().find(|e| e.status == RequestStatus::Fulfilled).map(|e| e.at_secs);
        let interrupted = in_window()
            .zip(in_window().skip(1))
            .find(|(a, b)| {
                a.status == RequestStatus::Fulfilled
                    && matches!(b.status, RequestStatus::PendingEvaluation | RequestStatus::Terminal)
            })
            .map(|(_, b)| b.at_secs);
        ExperimentCase {
            id,
            instance: candidate.instance.clone(),
            az: candidate.az.clone(),
            stratum: candidate.stratum,
            submitted_at,
            bid_usd_per_hour: bid,
            status_trace: trace,
            label,
            time_to_fulfill_sec: fulfilled.filter(|_| label != OutcomeLabel::NoFulfill),
            time_to_first_interrupt_sec: interrupted.filter(|_| label == OutcomeLabel::Interrupted),
        }
    }

    /// Checks the label and latency invariants.
    pub fn is_consistent(&self) -> bool {
        self.status_trace.label() == self.label
            && self.time_to_fulfill_sec.is_some() == (self.label != OutcomeLabel::NoFulfill)
            && self.time_to_first_interrupt_sec.is_some() == (self.label == OutcomeLabel::Interrupted)
            && self.status_trace.is_legal()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("case serializes")
    }
}

/// Every offered pair with its current bands.
pub fn candidates(sim: &VendorSim) -> Vec<Candidate> {
    sim.strata()
        .into_iter()
        .map(|(instance, az, sps, if_)| Candidate {
            instance,
            az,
            stratum: Stratum::new(sps, if_),
        })
        .collect()
}

/// Under-samples every stratum in `strata` to the size of the smallest one,
/// uniformly and reproducibly. Output is grouped by stratum in the given
/// order.
pub fn stratified_sample(
    candidates: &[Candidate],
    strata: &[Stratum],
    seed: u64,
) -> Result<Vec<Candidate>, ExperimentError> {
    let mut groups: BTreeMap<Stratum, Vec<&Candidate>> = BTreeMap::new();
    for c in candidates {
        groups.entry(c.stratum).or_default().push(c);
    }
    let mut size = usize::MAX;
    for s in strata {
        let n = groups.get(s).map_or(0, Vec::len);
        if n == 0 {
            return Err(ExperimentError::EmptyStratum(*s));
        }
        size = size.min(n);
    }
    let mut out = Vec::with_capacity(size * strata.len());
    for (i, s) in strata.iter().enumerate() {
        let mut group = groups[s].clone();
        group.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SAMPLE, i as u64));
        group.shuffle(&mut rng);
        out.extend(group.into_iter().take(size).cloned());
    }
    Ok(out)
}

/// Seed of the request behind case `id` in a run seeded with `seed`.
pub fn case_seed(seed: u64, id: u64) -> u64 {
    derive_seed(seed, STREAM_CASE, id)
}

/// Runs one case against the simulator's current state: a persistent
/// request bidding the on-demand price, observed for 24 h.
pub fn run_case(sim: &VendorSim, id: u64, candidate: &Candidate, seed: u64) -> Result<ExperimentCase, ExperimentError> {
    let bid = sim.on_demand_price(&candidate.instance)?;
    let mut lifecycle = sim.lifecycle_for(&candidate.instance, &candidate.az, bid, true, case_seed(seed, id))?;
    lifecycle.extend_to(f64::from(WINDOW_SAMPLES) * SAMPLE_SECS as f64);
    Ok(ExperimentCase::from_events(id, candidate, sim.now(), bid, lifecycle.events()))
}

/// Runs cases in parallel; ids are `first_id` onwards in input order.
pub fn run_cases(
    sim: &VendorSim,
    candidates: &[Candidate],
    first_id: u64,
    seed: u64,
) -> Result<Vec<ExperimentCase>, ExperimentError> {
    candidates
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_case(sim, first_id + i as u64, c, seed))
        .collect()
}

/// Runs one case through the vendor interface, polling the request every
/// 5 s of vendor time. The vendor clock advances by 24 h.
pub fn run_case_polled(vendor: &mut impl Vendor, id: u64, candidate: &Candidate) -> Result<ExperimentCase, ExperimentError> {
    let catalog = vendor.catalog()?;
    let bid = catalog
        .types
        .iter()
        .find(|t| t.instance == candidate.instance)
        .map(|t| t.on_demand_usd)
        .ok_or_else(|| ExperimentError::UnknownPair(candidate.instance.to_string()))?;
    let submitted = vendor.submit_spot_request(&candidate.instance, &candidate.az, bid, true)?;
    let start = submitted.submitted_at;
    let mut samples = Vec::with_capacity(WINDOW_SAMPLES as usize);
    let mut last = submitted.clone();
    for k in 0..WINDOW_SAMPLES {
        if k > 0 {
            vendor.advance_to(start + chrono::Duration::seconds(i64::from(k) * SAMPLE_SECS))?;
            last = vendor.spot_request(submitted.id)?;
        }
        samples.push(last.status);
    }
    let trace = StatusTrace::from_samples(&samples);
    let label = trace.label();
    let secs = |t: Option<DateTime<Utc>>| t.map(|t| (t - start).num_seconds() as f64);
    Ok(ExperimentCase {
        id,
        instance: candidate.instance.clone(),
        az: candidate.az.clone(),
        stratum: candidate.stratum,
        submitted_at: start,
        bid_usd_per_hour: bid,
        status_trace: trace,
        label,
        time_to_fulfill_sec: secs(last.fulfilled_at).filter(|_| label != OutcomeLabel::NoFulfill),
        time_to_first_interrupt_sec: secs(last.interrupted_at).filter(|_| label == OutcomeLabel::Interrupted),
    })
}

/// Cases for one stratum drawn straight from its calibrated lifecycle, each
/// on a fresh pool with its own fragility. Used to check calibration
/// without a simulated universe.
pub fn calibration_cases(stratum: Stratum, n: usize, seed: u64) -> Vec<ExperimentCase> {
    let candidate = Candidate {
        instance: "m5.large".parse().expect("valid type"),
        az: "us-east-1a".parse().expect("valid zone"),
        stratum,
    };
    let base = lifecycle_params(stratum.sps, stratum.if_);
    let submitted = crate::model::timestamp_from_secs(0);
    (0..n as u64)
        .into_par_iter()
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_FRAGILITY, id));
            let fragility = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut lifecycle = Lifecycle::new(base.with_fragility(fragility), true, true, case_seed(seed, id));
            lifecycle.extend_to(f64::from(WINDOW_SAMPLES) * SAMPLE_SECS as f64);
            ExperimentCase::from_events(id, &candidate, submitted, 1.0, lifecycle.events())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StratumSummary {
    pub stratum: Stratum,
    pub cases: usize,
    pub not_fulfilled_pct: f64,
    pub interrupted_pct: f64,
    pub no_interrupt_pct: f64,
    /// Sorted fulfillment latencies; the empirical CDF.
    pub fulfill_latency_secs: Vec<f64>,
    /// Sorted times to first interruption.
    pub interrupt_latency_secs: Vec<f64>,
}

impl StratumSummary {
    pub fn median_fulfill_secs(&self) -> Option<f64> {
        median(&self.fulfill_latency_secs)
    }

    pub fn median_interrupt_secs(&self) -> Option<f64> {
        median(&self.interrupt_latency_secs)
    }

    /// Share of fulfilled cases with latency at or below `secs`.
    pub fn fulfilled_within(&self, secs: f64) -> f64 {
        let n = self.fulfill_latency_secs.partition_point(|&t| t <= secs);
        n as f64 / self.fulfill_latency_secs.len().max(1) as f64
    }
}

/// Per-stratum outcome rates and latency distributions, in stratum order.
pub fn summarize(cases: &[ExperimentCase]) -> Result<Vec<StratumSummary>, ExperimentError> {
    if cases.is_empty() {
        return Err(ExperimentError::NoCases);
    }
    let mut groups: BTreeMap<Stratum, Vec<&ExperimentCase>> = BTreeMap::new();
    for c in cases {
        groups.entry(c.stratum).or_default().push(c);
    }
    Ok(groups
        .into_iter()
        .map(|(stratum, group)| {
            let n = group.len();
            let pct = |label| 100.0 * group.iter().filter(|c| c.label == label).count() as f64 / n as f64;
            let sorted = |f: fn(&ExperimentCase) -> Option<f64>| {
                let mut v: Vec<f64> = group.iter().filter_map(|c| f(c)).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            StratumSummary {
                stratum,
                cases: n,
                not_fulfilled_pct: pct(OutcomeLabel::NoFulfill),
                interrupted_pct: pct(OutcomeLabel::Interrupted),
                no_interrupt_pct: pct(OutcomeLabel::NoInterrupt),
                fulfill_latency_secs: sorted(|c| c.time_to_fulfill_sec),
                interrupt_latency_secs: sorted(|c| c.time_to_first_interrupt_sec),
            }
        })
        .collect())
}

/// Outcome table as CSV.
pub fn table3_csv(summary: &[StratumSummary]) -> String {
    let mut out = String::from("stratum,cases,not_fulfilled_pct,interrupted_pct\n");
    for s in summary {
        out.push_str(&format!(
            "{},{},{:.2},{:.2}\n",
            s.stratum, s.cases, s.not_fulfilled_pct, s.interrupted_pct
        ));
    }
    out
}
