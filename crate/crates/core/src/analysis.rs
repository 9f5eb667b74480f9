//! Statistics over the archive: value distributions, correlations between
//! metrics, score differences, update frequencies and aggregations.
//!
//! Cross-metric analyses align series on a forward-filled grid. The
//! interruption-free and savings metrics are region-level in the archive;
//! when joined with an AZ-level metric they are fanned out to every AZ of
//! the region that carries an AZ-level series for the same type.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{timestamp_from_secs, FamilyClass, InstanceType, Metric, Region, Zone};
use crate::store::{change_points, forward_fill, KeyFilter, SeriesKey, Store, StoreError};

pub const DEFAULT_GRID_SECS: i64 = 600;
pub const SCORE_BINS: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];
pub const DIFFERENCE_BINS: [f64; 5] = [0.0, 0.5, 1.0, 1.5, 2.0];

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least two points are needed, got {0}")]
    TooShort(usize),
    #[error("metric {0} is not supported by this analysis")]
    UnsupportedMetric(Metric),
    #[error("value {value} of {metric} falls outside the score bins")]
    OffGrid { metric: Metric, value: f64 },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Two equal-length series on a shared time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeriesPair {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl AlignedSeriesPair {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, AnalysisError> {
        if x.len() != y.len() {
            return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(AnalysisError::TooShort(x.len()));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Defined(r) => Some(r),
            Correlation::Undefined => None,
        }
    }
}

/// Pearson correlation in one pass over running co-moments. Undefined when
/// either series is constant.
pub fn pearson(pair: &AlignedSeriesPair) -> Correlation {
    let (mut mx, mut my) = (0.0, 0.0);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (i, (&x, &y)) in pair.x.iter().zip(&pair.y).enumerate() {
        let n = (i + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Defined((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Histogram {
    pub bins: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
    pub fractions: Vec<f64>,
}

impl Histogram {
    fn new(bins: &[f64], counts: Vec<usize>) -> Self {
        let total = counts.iter().sum();
        let fractions = counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect();
        Histogram {
            bins: bins.to_vec(),
            counts,
            total,
            fractions,
        }
    }

    pub fn fraction_of(&self, bin: f64) -> f64 {
        self.bins
            .iter()
            .position(|&b| b == bin)
            .map_or(0.0, |i| self.fractions[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,count,fraction\n");
        for ((b, c), f) in self.bins.iter().zip(&self.counts).zip(&self.fractions) {
            out.push_str(&format!("{b:.1},{c},{f:.6}\n"));
        }
        out
    }
}

fn bin_index(bins: &[f64], value: f64) -> Option<usize> {
    bins.iter().position(|&b| (b - value).abs() < 1e-9)
}

/// Share of placement-score and interruption-free values per score level.
pub fn value_distribution(
    store: &Store,
    metric: Metric,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<Histogram, AnalysisError> {
    if !matches!(metric, Metric::PlacementScore | Metric::InterruptionFree) {
        return Err(AnalysisError::UnsupportedMetric(metric));
    }
    let mut counts = vec![0; SCORE_BINS.len()];
    for r in store.query(&KeyFilter::metric(metric), from, to)? {
        let i = bin_index(&SCORE_BINS, r.value).ok_or(AnalysisError::OffGrid {
            metric,
            value: r.value,
        })?;
        counts[i] += 1;
    }
    Ok(Histogram::new(&SCORE_BINS, counts))
}

/// Empirical distribution of per-series correlation coefficients.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CorrelationCdf {
    pub metric_a: Metric,
    pub metric_b: Metric,
    /// Defined coefficients, ascending.
    pub coefficients: Vec<f64>,
    pub keys: usize,
    pub undefined: usize,
    pub fraction_abs_below_025: f64,
    pub fraction_abs_below_05: f64,
}

impl CorrelationCdf {
    pub fn defined(&self) -> usize {
        self.coefficients.len()
    }

    pub fn undefined_fraction(&self) -> f64 {
        if self.keys == 0 {
            0.0
        } else {
            self.undefined as f64 / self.keys as f64
        }
    }
}

/// An AZ-level join target: (type, AZ).
type PairKey = (InstanceType, Zone);
type SeriesPair = (PairKey, Vec<(i64, f64)>, Vec<(i64, f64)>);

/// Series of `metric` per (type, AZ). Region-level series are copied to
/// each AZ in `azs` for their (type, region).
fn per_az(
    store: &Store,
    metric: Metric,
    azs: &BTreeMap<(InstanceType, Region), BTreeSet<Zone>>,
) -> BTreeMap<PairKey, Vec<(i64, f64)>> {
    let mut out = BTreeMap::new();
    for (key, samples) in store.series(&KeyFilter::metric(metric)) {
        match key.az {
            Some(az) => {
                out.insert((key.instance, az), samples);
            }
            None => {
                if let Some(zones) = azs.get(&(key.instance.clone(), key.region)) {
                    for z in zones {
                        out.entry((key.instance.clone(), z.clone())).or_insert_with(|| samples.clone());
                    }
                }
            }
        }
    }
    out
}

/// AZs that carry any AZ-level series, per (type, region).
fn zone_sets(store: &Store) -> BTreeMap<(InstanceType, Region), BTreeSet<Zone>> {
    let mut out: BTreeMap<(InstanceType, Region), BTreeSet<Zone>> = BTreeMap::new();
    for key in store.series_keys(&KeyFilter::all()) {
        if let Some(az) = key.az {
            out.entry((key.instance, key.region)).or_default().insert(az);
        }
    }
    out
}

/// Aligns two sample lists on `from + k * grid`, keeping only grid points
/// where both have a value.
pub fn align(a: &[(i64, f64)], b: &[(i64, f64)], grid: i64, from: i64, to: i64) -> (Vec<f64>, Vec<f64>) {
    let fa = forward_fill(a, grid, from, to);
    let fb = forward_fill(b, grid, from, to);
    let start = fa.first().map_or(i64::MAX, |p| p.0).max(fb.first().map_or(i64::MAX, |p| p.0));
    let xs = fa.iter().filter(|p| p.0 >= start).map(|p| p.1).collect();
    let ys = fb.iter().filter(|p| p.0 >= start).map(|p| p.1).collect();
    (xs, ys)
}

fn paired_series(
    store: &Store,
    a: Metric,
    b: Metric,
) -> Vec<SeriesPair> {
    let zones = zone_sets(store);
    let sa = per_az(store, a, &zones);
    let mut sb = per_az(store, b, &zones);
    sa.into_iter()
        .filter_map(|(k, xs)| sb.remove(&k).map(|ys| (k, xs, ys)))
        .collect()
}

pub fn correlation_cdf(
    store: &Store,
    metric_a: Metric,
    metric_b: Metric,
    grid_secs: i64,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<CorrelationCdf, AnalysisError> {
    if from > to {
        return Err(StoreError::RangeInverted.into());
    }
    if grid_secs <= 0 {
        return Err(StoreError::ZeroGrid.into());
    }
    let (lo, hi) = (from.timestamp(), to.timestamp());
    let pairs = paired_series(store, metric_a, metric_b);
    let results: Vec<Correlation> = pairs
        .par_iter()
        .map(|(_, xs, ys)| {
            let (x, y) = align(xs, ys, grid_secs, lo, hi);
            AlignedSeriesPair::new(x, y).map_or(Correlation::Undefined, |p| pearson(&p))
        })
        .collect();
    let mut coefficients: Vec<f64> = results.iter().filter_map(|c| c.value()).collect();
    coefficients.sort_by(f64::total_cmp);
    let n = coefficients.len();
    let share = |limit: f64| {
        if n == 0 {
            0.0
        } else {
            coefficients.iter().filter(|r| r.abs() < limit).count() as f64 / n as f64
        }
    };
    Ok(CorrelationCdf {
        metric_a,
        metric_b,
        keys: results.len(),
        undefined: results.len() - n,
        fraction_abs_below_025: share(0.25),
        fraction_abs_below_05: share(0.5),
        coefficients,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DifferenceHistogram {
    #[serde(flatten)]
    pub histogram: Histogram,
    /// Share at 2.0, where the two scores point in opposite directions.
    pub opposite_fraction: f64,
    pub at_least_1_5_fraction: f64,
}

/// |placement score - interruption-free score| per (type, AZ) per grid point.
pub fn score_difference_histogram(
    store: &Store,
    grid_secs: i64,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<DifferenceHistogram, AnalysisError> {
    if from > to {
        return Err(StoreError::RangeInverted.into());
    }
    if grid_secs <= 0 {
        return Err(StoreError::ZeroGrid.into());
    }
    let (lo, hi) = (from.timestamp(), to.timestamp());
    let pairs = paired_series(store, Metric::PlacementScore, Metric::InterruptionFree);
    let partial: Result<Vec<Vec<usize>>, AnalysisError> = pairs
        .par_iter()
        .map(|(_, sps, ifs)| {
            let (x, y) = align(sps, ifs, grid_secs, lo, hi);
            let mut counts = vec![0; DIFFERENCE_BINS.len()];
            for (a, b) in x.iter().zip(&y) {
                let d = (a - b).abs();
                let i = bin_index(&DIFFERENCE_BINS, d).ok_or(AnalysisError::OffGrid {
                    metric: Metric::PlacementScore,
                    value: *a,
                })?;
                counts[i] += 1;
            }
            Ok(counts)
        })
        .collect();
    let mut counts = vec![0; DIFFERENCE_BINS.len()];
    for c in partial? {
        for (acc, v) in counts.iter_mut().zip(c) {
            *acc += v;
        }
    }
    let histogram = Histogram::new(&DIFFERENCE_BINS, counts);
    Ok(DifferenceHistogram {
        opposite_fraction: histogram.fraction_of(2.0),
        at_least_1_5_fraction: histogram.fraction_of(1.5) + histogram.fraction_of(2.0),
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FrequencyCdf {
    pub metric: Metric,
    /// Hours between consecutive changes, pooled over series, ascending.
    pub gaps_hours: Vec<f64>,
    pub series: usize,
    pub median_hours: Option<f64>,
}

pub fn update_frequency_cdf(
    store: &Store,
    metric: Metric,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<FrequencyCdf, AnalysisError> {
    if from > to {
        return Err(StoreError::RangeInverted.into());
    }
    let (lo, hi) = (from.timestamp(), to.timestamp());
    let series = store.series(&KeyFilter::metric(metric));
    let mut gaps_hours: Vec<f64> = series
        .par_iter()
        .flat_map_iter(|(_, samples)| {
            let inside: Vec<(i64, f64)> = samples.iter().copied().filter(|p| p.0 >= lo && p.0 <= hi).collect();
            let events = change_points(&inside);
            events
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) as f64 / 3600.0)
                .collect::<Vec<_>>()
        })
        .collect();
    gaps_hours.sort_by(f64::total_cmp);
    let median_hours = median(&gaps_hours);
    Ok(FrequencyCdf {
        metric,
        series: series.len(),
        gaps_hours,
        median_hours,
    })
}

/// Median of sorted values.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RowDim {
    Family,
    FamilyClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ColDim {
    Day,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Heatmap {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Mean per cell; `None` where no data exists.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row");
        for c in &self.cols {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, row) in self.rows.iter().zip(&self.cells) {
            out.push_str(r);
            for cell in row {
                match cell {
                    Some(v) => out.push_str(&format!(",{v:.4}")),
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }
}

fn row_label(instance: &InstanceType, dim: RowDim) -> String {
    match dim {
        RowDim::Family => instance.family().to_string(),
        RowDim::FamilyClass => instance.family_class().as_str().to_string(),
    }
}

fn row_order(label: &str, dim: RowDim) -> (usize, String) {
    match dim {
        RowDim::Family => (0, label.to_string()),
        RowDim::FamilyClass => (
            FamilyClass::ALL
                .iter()
                .position(|c| c.as_str() == label)
                .unwrap_or(usize::MAX),
            label.to_string(),
        ),
    }
}

/// Mean `metric` per (row, column). Rows and region columns span every
/// family and region present in the archive; day columns span the range.
pub fn aggregate_heatmap(
    store: &Store,
    row_dim: RowDim,
    col_dim: ColDim,
    metric: Metric,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<Heatmap, AnalysisError> {
    let records = store.query(&KeyFilter::metric(metric), from, to)?;
    let all_keys = store.series_keys(&KeyFilter::all());
    let mut rows: Vec<String> = all_keys
        .iter()
        .map(|k| row_label(&k.instance, row_dim))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    rows.sort_by_key(|r| row_order(r, row_dim));
    let cols: Vec<String> = match col_dim {
        ColDim::Region => all_keys
            .iter()
            .map(|k| k.region.to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
        ColDim::Day => {
            let first = records.iter().map(|r| r.timestamp.date_naive()).min();
            let last = records.iter().map(|r| r.timestamp.date_naive()).max();
            let mut days = Vec::new();
            if let (Some(mut d), Some(last)) = (first, last) {
                while d <= last {
                    days.push(d.format("%Y-%m-%d").to_string());
                    d = d.succ_opt().expect("date in range");
                }
            }
            days
        }
    };
    let mut sums: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for r in &records {
        let row = rows
            .iter()
            .position(|x| *x == row_label(&r.instance, row_dim))
            .expect("row set covers the archive");
        let col_label = match col_dim {
            ColDim::Region => r.location.region_code().to_string(),
            ColDim::Day => r.timestamp.date_naive().format("%Y-%m-%d").to_string(),
        };
        let col = cols.iter().position(|c| *c == col_label).expect("column set covers the records");
        let cell = sums.entry((row, col)).or_insert((0.0, 0));
        cell.0 += r.value;
        cell.1 += 1;
    }
    let cells = (0..rows.len())
        .map(|i| {
            (0..cols.len())
                .map(|j| sums.get(&(i, j)).map(|&(s, n)| s / n as f64))
                .collect()
        })
        .collect();
    Ok(Heatmap { rows, cols, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SizeGroup {
    pub size: String,
    pub mean: f64,
    pub type_count: usize,
}

/// Mean `metric` per instance size, for sizes with at least
/// `min_types_per_size` types, in size order.
pub fn group_by_size(
    store: &Store,
    metric: Metric,
    min_types_per_size: usize,
    from: DateTime<Utc>,
    to: DateTime<Utc>,
) -> Result<Vec<SizeGroup>, AnalysisError> {
    let mut groups: BTreeMap<(u32, String), (f64, usize, BTreeSet<InstanceType>)> = BTreeMap::new();
    for r in store.query(&KeyFilter::metric(metric), from, to)? {
        let g = groups
            .entry((r.instance.size_rank(), r.instance.size().to_string()))
            .or_insert_with(|| (0.0, 0, BTreeSet::new()));
        g.0 += r.value;
        g.1 += 1;
        g.2.insert(r.instance);
    }
    Ok(groups
        .into_iter()
        .filter(|(_, (_, _, types))| types.len() >= min_types_per_size)
        .map(|((_, size), (sum, n, types))| SizeGroup {
            size,
            mean: sum / n as f64,
            type_count: types.len(),
        })
        .collect())
}

/// First and last archive instant, or a degenerate range at the epoch.
pub fn archive_range(store: &Store) -> (DateTime<Utc>, DateTime<Utc>) {
    store
        .span()
        .unwrap_or((timestamp_from_secs(0), timestamp_from_secs(0)))
}

/// Series keys of one metric; exposed for reports.
pub fn metric_keys(store: &Store, metric: Metric) -> Vec<SeriesKey> {
    store.series_keys(&KeyFilter::metric(metric))
}
