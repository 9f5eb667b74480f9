//! Spot request lifecycle.
//!
//! A request's whole future is a deterministic function of its parameters
//! and its seed: events are generated lazily, segment by segment, from a
//! private RNG stream. Times are seconds since submission.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::model::RequestStatus;

use super::calibration::LifecycleParams;

/// Time a fresh request spends in evaluation before it is held.
pub const EVALUATION_SECS: f64 = 2.0;
/// Delay before an interrupted persistent request is evaluated again.
pub const REOPEN_SECS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub at_secs: f64,
    pub status: RequestStatus,
}

#[derive(Debug, Clone)]
pub struct Lifecycle {
    params: LifecycleParams,
    persistent: bool,
    bid_ok: bool,
    rng: ChaCha8Rng,
    events: Vec<StatusEvent>,
    next_segment: Option<f64>,
}

impl Lifecycle {
    pub fn new(params: LifecycleParams, persistent: bool, bid_ok: bool, seed: u64) -> Self {
        Self {
            params,
            persistent,
            bid_ok,
            rng: ChaCha8Rng::seed_from_u64(seed),
            events: vec![StatusEvent {
                at_secs: 0.0,
                status: RequestStatus::PendingEvaluation,
            }],
            next_segment: Some(0.0),
        }
    }

    pub fn params(&self) -> &LifecycleParams {
        &self.params
    }

    /// Generates events until every event at or before `t` is known.
    pub fn extend_to(&mut self, t: f64) {
        while let Some(start) = self.next_segment {
            if start > t {
                break;
            }
            self.next_segment = self.segment(start);
        }
    }

    /// Generated events; complete up to the last `extend_to` horizon.
    pub fn events(&self) -> &[StatusEvent] {
        &self.events
    }

    pub fn status_at(&mut self, t: f64) -> RequestStatus {
        self.extend_to(t);
        let idx = self.events.partition_point(|e| e.at_secs <= t);
        self.events[idx.max(1) - 1].status
    }

    /// Runs one evaluation-to-outcome segment starting at `start`. Returns
    /// the start of the next segment, if the request re-opens.
    fn segment(&mut self, start: f64) -> Option<f64> {
        let first = start == 0.0;
        let fulfillable = self
            .rng
            .random_bool(self.params.fulfill_prob.clamp(0.0, 1.0));
        let latency = draw_latency(&mut self.rng, &self.params);
        let interrupted = self
            .rng
            .random_bool(self.params.interrupt_prob.clamp(0.0, 1.0));
        let running = LogNormal::new(
            self.params.interrupt_median_secs.ln(),
            self.params.interrupt_sigma,
        )
        .expect("valid log-normal")
        .sample(&mut self.rng);

        // a re-opened request stays pending for the re-open delay
        let delay = if first { 0.0 } else { REOPEN_SECS };
        if !(fulfillable && self.bid_ok) {
            self.push(start + delay + EVALUATION_SECS, RequestStatus::Holding);
            return None;
        }
        if latency > EVALUATION_SECS {
            self.push(start + delay + EVALUATION_SECS, RequestStatus::Holding);
        }
        let fulfilled_at = start + delay + latency;
        self.push(fulfilled_at, RequestStatus::Fulfilled);
        if !interrupted {
            return None;
        }
        let interrupted_at = fulfilled_at + running;
        if self.persistent {
            self.push(interrupted_at, RequestStatus::PendingEvaluation);
            Some(interrupted_at)
        } else {
            self.push(interrupted_at, RequestStatus::Terminal);
            None
        }
    }

    fn push(&mut self, at_secs: f64, status: RequestStatus) {
        debug_assert!(self.events.last().is_none_or(|e| e.at_secs <= at_secs));
        debug_assert!(self
            .events
            .last()
            .is_none_or(|e| e.status.can_transition(status)));
        self.events.push(StatusEvent { at_secs, status });
    }

    /// First fulfillment and first interruption times, limited to `until`.
    pub fn milestones(&mut self, until: f64) -> (Option<f64>, Option<f64>) {
        self.extend_to(until);
        let mut fulfilled = None;
        let mut interrupted = None;
        let mut prev = RequestStatus::PendingEvaluation;
        for e in self.events.iter().take_while(|e| e.at_secs <= until) {
            if e.status == RequestStatus::Fulfilled && fulfilled.is_none() {
                fulfilled = Some(e.at_secs);
            }
            if prev == RequestStatus::Fulfilled
                && matches!(
                    e.status,
                    RequestStatus::PendingEvaluation | RequestStatus::Terminal
                )
                && interrupted.is_none()
            {
                interrupted = Some(e.at_secs);
            }
            prev = e.status;
        }
        (fulfilled, interrupted)
    }
}

fn draw_latency(rng: &mut ChaCha8Rng, params: &LifecycleParams) -> f64 {
    let instant = rng.random_bool(params.latency.instant_fraction.clamp(0.0, 1.0));
    let uniform: f64 = rng.random();
    let tail = LogNormal::new(
        params.latency.tail_median_secs.ln(),
        params.latency.tail_sigma,
    )
    .expect("valid log-normal")
    .sample(rng);
    if instant {
        uniform
    } else {
        tail
    }
}
