//! Request-outcome calibration per (placement band, interruption band)
//! stratum.
//!
//! Target rates are the 24 h not-fulfilled and interrupted-at-least-once
//! fractions observed for the five studied strata; the four remaining
//! strata are interpolated. Fulfillment and interruption probabilities are
//! derived from the targets so that the rates hold for a request observed
//! over the full window, including the time spent waiting for fulfillment.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::model::Band3;

/// Observation window of one experiment case, up to its last 5 s sample.
pub const WINDOW_SECS: f64 = 24.0 * 3600.0 - 5.0;

/// Fulfillment latency: a point mass of near-instant fulfillments (within
/// one second) plus a log-normal tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub instant_fraction: f64,
    pub tail_median_secs: f64,
    pub tail_sigma: f64,
}

impl LatencyModel {
    pub fn log_normal(median_secs: f64, sigma: f64) -> Self {
        Self {
            instant_fraction: 0.0,
            tail_median_secs: median_secs,
            tail_sigma: sigma,
        }
    }

    /// Solves the tail parameters so the overall distribution has the given
    /// median and 90th percentile.
    pub fn from_anchors(instant_fraction: f64, median_secs: f64, p90_secs: f64) -> Self {
        let std = Normal::standard();
        let q50 = std.inverse_cdf((0.5 - instant_fraction) / (1.0 - instant_fraction));
        let q90 = std.inverse_cdf((0.9 - instant_fraction) / (1.0 - instant_fraction));
        let sigma = (p90_secs / median_secs).ln() / (q90 - q50);
        let tail_median_secs = (median_secs.ln() - q50 * sigma).exp();
        Self {
            instant_fraction,
            tail_median_secs,
            tail_sigma: sigma,
        }
    }

    /// P(latency <= t).
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let instant = self.instant_fraction * t.min(1.0);
        instant
            + (1.0 - self.instant_fraction)
                * log_normal_cdf(t, self.tail_median_secs, self.tail_sigma)
    }

    /// Median of the full distribution, by bisection.
    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0e9f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// E[g(L) | L <= limit] · P(L <= limit), by quadrature.
    fn expect_below(&self, limit: f64, g: impl Fn(f64) -> f64) -> f64 {
        // instant part: uniform on [0, 1]
        let steps = 64;
        let mut instant = 0.0;
        for i in 0..steps {
            let t = (i as f64 + 0.5) / steps as f64;
            instant += g(t) / steps as f64;
        }
        instant *= self.instant_fraction;

        // tail part in log space, Simpson's rule
        let mu = self.tail_median_secs.ln();
        let sigma = self.tail_sigma;
        let lo = mu - 10.0 * sigma;
        let hi = limit.ln();
        if hi <= lo {
            return instant;
        }
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let std = Normal::standard();
        let f = |x: f64| std.pdf((x - mu) / sigma) / sigma * g(x.exp());
        let mut sum = f(lo) + f(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * f(lo + i as f64 * h);
        }
        instant + (1.0 - self.instant_fraction) * sum * h / 3.0
    }
}

pub fn log_normal_cdf(t: f64, median: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    Normal::standard().cdf((t / median).ln() / sigma)
}

/// Target outcome rates and latency shapes for one stratum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StratumTargets {
    pub sps: Band3,
    pub if_band: Band3,
    pub not_fulfilled: f64,
    pub interrupted: f64,
    pub latency: LatencyModel,
    /// Median running time before an interruption, for interrupted runs.
    pub interrupt_median_secs: f64,
    pub interrupt_sigma: f64,
}

/// Studied strata, in report order.
pub const STUDIED: [(Band3, Band3); 5] = [
    (Band3::High, Band3::High),
    (Band3::High, Band3::Low),
    (Band3::Medium, Band3::Medium),
    (Band3::Low, Band3::High),
    (Band3::Low, Band3::Low),
];

pub fn targets(sps: Band3, if_band: Band3) -> StratumTargets {
    use Band3::*;
    let fast = |instant, median, p90| LatencyModel::from_anchors(instant, median, p90);
    let slow = |median| LatencyModel::log_normal(median, 1.2);
    let (not_fulfilled, interrupted, latency, interrupt_median_secs) = match (sps, if_band) {
        (High, High) => (0.0, 0.1471, fast(0.28, 30.0, 135.0), 12_000.0),
        (High, Medium) => (0.0, 0.28, fast(0.25, 35.0, 160.0), 9_000.0),
        (High, Low) => (0.0, 0.4052, fast(0.20, 45.0, 200.0), 6_872.0),
        (Medium, High) => (0.20, 0.22, slow(240.0), 5_000.0),
        (Medium, Medium) => (0.2549, 0.3922, slow(300.0), 4_000.0),
        (Medium, Low) => (0.30, 0.45, slow(360.0), 3_500.0),
        (Low, High) => (0.5818, 0.3091, slow(900.0), 2_859.0),
        (Low, Medium) => (0.52, 0.38, slow(1_100.0), 2_300.0),
        (Low, Low) => (0.4561, 0.4561, slow(1_322.0), 1_800.0),
    };
    StratumTargets {
        sps,
        if_band,
        not_fulfilled,
        interrupted,
        latency,
        interrupt_median_secs,
        interrupt_sigma: 1.0,
    }
}

/// Per-request lifecycle probabilities derived from the stratum targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifecycleParams {
    /// Probability that a request (or a re-opened persistent request) can
    /// be fulfilled at all.
    pub fulfill_prob: f64,
    pub latency: LatencyModel,
    /// Probability that a running instance is eventually interrupted.
    pub interrupt_prob: f64,
    pub interrupt_median_secs: f64,
    pub interrupt_sigma: f64,
    /// Equivalent constant hazard (per hour) of interruption within the
    /// observation window.
    pub hazard_per_hour: f64,
}

impl LifecycleParams {
    pub fn derive(t: &StratumTargets) -> Self {
        let fulfilled_in_window = t.latency.cdf(WINDOW_SECS);
        let fulfill_prob = ((1.0 - t.not_fulfilled) / fulfilled_in_window).min(1.0);
        let p_fulfilled = 1.0 - t.not_fulfilled;
        let interrupt_prob = if p_fulfilled <= 0.0 || t.interrupted <= 0.0 {
            0.0
        } else {
            let conditional = t.interrupted / p_fulfilled;
            // P(interrupt time <= window - latency | fulfilled in window)
            let reach = t.latency.expect_below(WINDOW_SECS, |l| {
                log_normal_cdf(WINDOW_SECS - l, t.interrupt_median_secs, t.interrupt_sigma)
            }) / fulfilled_in_window;
            (conditional / reach).min(1.0)
        };
        let conditional = if p_fulfilled > 0.0 {
            t.interrupted / p_fulfilled
        } else {
            0.0
        };
        Self {
            fulfill_prob,
            latency: t.latency,
            interrupt_prob,
            interrupt_median_secs: t.interrupt_median_secs,
            interrupt_sigma: t.interrupt_sigma,
            hazard_per_hour: -(1.0 - conditional.min(0.999_999)).ln() / 24.0,
        }
    }
}

/// Largest relative shift of the interruption probability at unit fragility.
pub const FRAGILITY_SPREAD: f64 = 1.0;

impl LifecycleParams {
    /// Shifts the interruption probability by `fragility` in [-1, 1] times a
    /// step that is symmetric inside [0, 1], so zero-mean fragility keeps the
    /// stratum rates on average.
    pub fn with_fragility(mut self, fragility: f64) -> Self {
        let p = self.interrupt_prob;
        let step = (FRAGILITY_SPREAD * p).min(1.0 - p);
        self.interrupt_prob = (p + fragility.clamp(-1.0, 1.0) * step).clamp(0.0, 1.0);
        self
    }
}

pub fn lifecycle_params(sps: Band3, if_band: Band3) -> LifecycleParams {
    LifecycleParams::derive(&targets(sps, if_band))
}
