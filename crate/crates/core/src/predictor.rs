//! Three-class spot outcome prediction from archive history, the
//! current-value baselines, and evaluation metrics.

use std::fmt;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::median;
use crate::experiment::{ExperimentCase, ExperimentError, OutcomeLabel};
use crate::model::{Band3, InstanceType, Location, Metric, Zone};
use crate::sim::derive_seed;
use crate::store::{SeriesKey, Store, StoreError};

pub mod campaign;
pub mod forest;

pub use forest::{ForestParams, RandomForest};

pub const HISTORY_DAYS: i64 = 30;
pub const TRAIN_FRACTION: f64 = 0.7;
const STREAM_SPLIT: u64 = 31;
const MODEL_HEADER: &str = "spotarc-predictor 1";

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("no history in the feature window")]
    NoHistory,
    #[error("training data has fewer than two classes")]
    DegenerateTraining,
    #[error("no test cases")]
    EmptyTest,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("feature values must be finite after imputation")]
    NonFiniteFeature,
    #[error("invalid model file: {0}")]
    ModelFormat(String),
    #[error("missing current value for the {0} baseline")]
    MissingValue(BaselineKind),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("collection failed: {0}")]
    Collect(String),
}

/// Names of the features, in vector order.
pub const FEATURE_NAMES: [&str; 9] = [
    "sps_mean",
    "sps_min",
    "sps_last",
    "sps_changes",
    "if_mean",
    "if_min",
    "if_last",
    "if_changes",
    "savings",
];

const SPS_LAST: usize = 2;
const IF_LAST: usize = 6;
const SAVINGS: usize = 8;

/// Month-long aggregates of one (instance, AZ); missing entries are NaN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| self.0[i])
            .filter(|v| !v.is_nan())
    }
}

fn aggregates(samples: &[(i64, f64)]) -> [f64; 4] {
    if samples.is_empty() {
        return [f64::NAN; 4];
    }
    let n = samples.len() as f64;
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let min = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let last = samples[samples.len() - 1].1;
    let changes = samples.windows(2).filter(|w| w[0].1 != w[1].1).count() as f64;
    [mean, min, last, changes]
}

/// Samples of `metric` for the AZ, falling back to its region-level series.
fn history(store: &Store, instance: &InstanceType, az: &Zone, metric: Metric, from: DateTime<Utc>, to: DateTime<Utc>) -> Vec<(i64, f64)> {
    let zone = SeriesKey::new(instance.clone(), Location::zone(az.clone()), metric);
    let got = store.samples(&zone, from, to);
    if !got.is_empty() {
        return got;
    }
    store.samples(&SeriesKey::new(instance.clone(), Location::region(az.region()), metric), from, to)
}

/// Aggregates over `[as_of - 30 days, as_of)`.
pub fn featurize(store: &Store, instance: &InstanceType, az: &Zone, as_of: DateTime<Utc>) -> Result<FeatureVector, PredictError> {
    let from = as_of - Duration::days(HISTORY_DAYS);
    let to = as_of - Duration::seconds(1);
    let sps = history(store, instance, az, Metric::PlacementScore, from, to);
    let ifs = history(store, instance, az, Metric::InterruptionFree, from, to);
    let savings = history(store, instance, az, Metric::Savings, from, to);
    if sps.is_empty() && ifs.is_empty() && savings.is_empty() {
        return Err(PredictError::NoHistory);
    }
    let mut v = Vec::with_capacity(FEATURE_NAMES.len());
    v.extend(aggregates(&sps));
    v.extend(aggregates(&ifs));
    v.push(savings.last().map_or(f64::NAN, |s| s.1));
    Ok(FeatureVector(v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub case_id: u64,
    pub features: FeatureVector,
    pub label: OutcomeLabel,
}

/// Joins cases to their features at submission time. Cases without any
/// history are dropped.
pub fn build_dataset(store: &Store, cases: &[ExperimentCase]) -> Vec<LabeledExample> {
    cases
        .iter()
        .filter_map(|c| {
            featurize(store, &c.instance, &c.az, c.submitted_at)
                .ok()
                .map(|features| LabeledExample {
                    case_id: c.id,
                    features,
                    label: c.label,
                })
        })
        .collect()
}

/// Seeded split, stratified by label: each class contributes
/// round(fraction · n) examples to the training side.
pub fn stratified_split(labels: &[OutcomeLabel], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in OutcomeLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SPLIT, label.index() as u64));
        idx.shuffle(&mut rng);
        let k = (fraction * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Random forest over imputed feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Per-feature training median used for missing values.
    pub imputation: Vec<f64>,
    pub forest: RandomForest,
    /// Baselines fitted on the same training examples.
    pub baselines: Vec<Baseline>,
}

impl Model {
    pub fn train(examples: &[LabeledExample], params: ForestParams, seed: u64) -> Result<Model, PredictError> {
        if examples.is_empty() {
            return Err(PredictError::DegenerateTraining);
        }
        let arity = FEATURE_NAMES.len();
        let imputation: Vec<f64> = (0..arity)
            .map(|f| {
                let mut col: Vec<f64> = examples.iter().map(|e| e.features.0[f]).filter(|v| !v.is_nan()).collect();
                col.sort_by(f64::total_cmp);
                median(&col).unwrap_or(0.0)
            })
            .collect();
        let x: Vec<Vec<f64>> = examples.iter().map(|e| impute(&e.features, &imputation)).collect();
        let y: Vec<usize> = examples.iter().map(|e| e.label.index()).collect();
        let forest = RandomForest::fit(&x, &y, OutcomeLabel::ALL.len(), params, seed)?;
        let baselines = BaselineKind::ALL.iter().map(|&k| Baseline::fit(k, examples)).collect();
        Ok(Model {
            imputation,
            forest,
            baselines,
        })
    }

    pub fn predict(&self, features: &FeatureVector) -> OutcomeLabel {
        let x = impute(features, &self.imputation);
        OutcomeLabel::from_index(self.forest.predict(&x)).expect("class index in range")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let imputation: Vec<String> = self.imputation.iter().map(|v| format!("{v:?}")).collect();
        let baselines: Vec<String> = self
            .baselines
            .iter()
            .map(|b| format!("{}:{:?}:{:?}", b.kind, b.thresholds.high, b.thresholds.low))
            .collect();
        format!(
            "{MODEL_HEADER}\nfeature_names {}\nimpute {}\nbaselines {}\n{}",
            FEATURE_NAMES.join(","),
            imputation.join(" "),
            baselines.join(" "),
            self.forest.dump()
        )
        .into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, PredictError> {
        let bad = |m: &str| PredictError::ModelFormat(m.to_string());
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not utf-8"))?;
        let mut lines = text.splitn(5, '\n');
        if lines.next() != Some(MODEL_HEADER) {
            return Err(bad("unknown header or version"));
        }
        let names = lines.next().and_then(|l| l.strip_prefix("feature_names ")).ok_or_else(|| bad("missing feature names"))?;
        if names != FEATURE_NAMES.join(",") {
            return Err(bad("feature set differs"));
        }
        let imputation: Vec<f64> = lines
            .next()
            .and_then(|l| l.strip_prefix("impute "))
            .ok_or_else(|| bad("missing imputation"))?
            .split(' ')
            .map(|v| v.parse().map_err(|_| bad("bad imputation value")))
            .collect::<Result<_, _>>()?;
        let baselines = lines
            .next()
            .and_then(|l| l.strip_prefix("baselines"))
            .ok_or_else(|| bad("missing baselines"))?
            .split_whitespace()
            .map(|item| parse_baseline(item).ok_or_else(|| bad("bad baseline")))
            .collect::<Result<Vec<_>, _>>()?;
        let (forest, rest) = RandomForest::parse(lines.next().unwrap_or(""))?;
        if !rest.is_empty() || imputation.len() != forest.n_features || forest.n_features != FEATURE_NAMES.len() {
            return Err(bad("inconsistent model"));
        }
        Ok(Model {
            imputation,
            forest,
            baselines,
        })
    }

    /// The fitted baseline of one kind, if the model carries it.
    pub fn baseline(&self, kind: BaselineKind) -> Option<Baseline> {
        self.baselines.iter().copied().find(|b| b.kind == kind)
    }

    /// Scores the forest and every carried baseline on `test`. Baselines
    /// fall back to the training medians when their value is missing.
    pub fn evaluate_on(&self, test: &[&LabeledExample]) -> Result<Vec<(String, Evaluation)>, PredictError> {
        let truth: Vec<OutcomeLabel> = test.iter().map(|e| e.label).collect();
        let rf: Vec<OutcomeLabel> = test.iter().map(|e| self.predict(&e.features)).collect();
        let mut rows = vec![("RF".to_string(), evaluate(&truth, &rf)?)];
        for b in &self.baselines {
            let predicted: Vec<OutcomeLabel> = test
                .iter()
                .map(|e| b.predict(&FeatureVector(impute(&e.features, &self.imputation))))
                .collect::<Result<_, _>>()?;
            rows.push((b.kind.to_string(), evaluate(&truth, &predicted)?));
        }
        Ok(rows)
    }
}

fn parse_baseline(item: &str) -> Option<Baseline> {
    let mut parts = item.split(':');
    let kind = match parts.next()? {
        "SPS" => BaselineKind::Sps,
        "IF" => BaselineKind::If,
        "CostSave" => BaselineKind::CostSave,
        _ => return None,
    };
    let high = parts.next()?.parse().ok()?;
    let low = parts.next()?.parse().ok()?;
    if parts.next().is_some() {
        return None;
    }
    Some(Baseline {
        kind,
        thresholds: Thresholds { high, low },
    })
}

fn impute(features: &FeatureVector, imputation: &[f64]) -> Vec<f64> {
    features
        .0
        .iter()
        .zip(imputation)
        .map(|(&v, &m)| if v.is_nan() { m } else { v })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Sps,
    If,
    CostSave,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::Sps, BaselineKind::If, BaselineKind::CostSave];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Sps => "SPS",
            BaselineKind::If => "IF",
            BaselineKind::CostSave => "CostSave",
        })
    }
}

/// Values at or above `high` predict NoInterrupt, at or above `low`
/// Interrupted, anything lower NoFulfill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub high: f64,
    pub low: f64,
}

impl Thresholds {
    pub fn classify(self, v: f64) -> OutcomeLabel {
        if v >= self.high {
            OutcomeLabel::NoInterrupt
        } else if v >= self.low {
            OutcomeLabel::Interrupted
        } else {
            OutcomeLabel::NoFulfill
        }
    }
}

/// Current value a baseline reads from a feature vector.
pub fn current_value(kind: BaselineKind, features: &FeatureVector) -> Option<f64> {
    let i = match kind {
        BaselineKind::Sps => SPS_LAST,
        BaselineKind::If => IF_LAST,
        BaselineKind::CostSave => SAVINGS,
    };
    Some(features.0[i]).filter(|v| !v.is_nan())
}

/// Single-signal rule. The placement rule is fixed; the others use
/// `thresholds`.
pub fn baseline_predict(kind: BaselineKind, value: f64, thresholds: Thresholds) -> OutcomeLabel {
    match kind {
        BaselineKind::Sps => match Band3::of_value(value) {
            Band3::High => OutcomeLabel::NoInterrupt,
            Band3::Medium => OutcomeLabel::Interrupted,
            Band3::Low => OutcomeLabel::NoFulfill,
        },
        _ => thresholds.classify(value),
    }
}

/// A fitted baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub kind: BaselineKind,
    pub thresholds: Thresholds,
}

impl Baseline {
    pub fn sps() -> Self {
        Baseline {
            kind: BaselineKind::Sps,
            thresholds: Thresholds { high: 3.0, low: 2.0 },
        }
    }

    /// Picks the threshold pair with the best accuracy on `examples` from a
    /// grid over the observed values; ties keep the earliest pair.
    pub fn fit(kind: BaselineKind, examples: &[LabeledExample]) -> Baseline {
        if kind == BaselineKind::Sps {
            return Baseline::sps();
        }
        let values: Vec<(f64, OutcomeLabel)> = examples
            .iter()
            .filter_map(|e| current_value(kind, &e.features).map(|v| (v, e.label)))
            .collect();
        let mut grid: Vec<f64> = match kind {
            BaselineKind::If => vec![1.0, 1.5, 2.0, 2.5, 3.0],
            _ => {
                let mut sorted: Vec<f64> = values.iter().map(|v| v.0).collect();
                sorted.sort_by(f64::total_cmp);
                (0..=20)
                    .filter_map(|q| sorted.get(((sorted.len().saturating_sub(1)) * q) / 20).copied())
                    .collect()
            }
        };
        grid.push(f64::INFINITY);
        grid.dedup();
        let mut best: Option<(Thresholds, usize)> = None;
        for (i, &high) in grid.iter().enumerate() {
            for &low in &grid[..=i] {
                let t = Thresholds { high, low };
                let correct = values.iter().filter(|(v, l)| t.classify(*v) == *l).count();
                if best.is_none_or(|b| correct > b.1) {
                    best = Some((t, correct));
                }
            }
        }
        let best = best.expect("grid is never empty");
        Baseline { kind, thresholds: best.0 }
    }

    pub fn predict(&self, features: &FeatureVector) -> Result<OutcomeLabel, PredictError> {
        let v = current_value(self.kind, features).ok_or(PredictError::MissingValue(self.kind))?;
        Ok(baseline_predict(self.kind, v, self.thresholds))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predictions, in label order.
    pub confusion: [[usize; 3]; 3],
    pub per_class_f1: [Option<f64>; 3],
    pub support: usize,
}

/// Accuracy, macro-F1 over classes present in truth or prediction, and the
/// confusion matrix.
pub fn evaluate(truth: &[OutcomeLabel], predicted: &[OutcomeLabel]) -> Result<Evaluation, PredictError> {
    if truth.len() != predicted.len() {
        return Err(PredictError::LengthMismatch(truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(PredictError::EmptyTest);
    }
    let mut confusion = [[0usize; 3]; 3];
    for (t, p) in truth.iter().zip(predicted) {
        confusion[t.index()][p.index()] += 1;
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let mut per_class_f1 = [None; 3];
    for (c, slot) in per_class_f1.iter_mut().enumerate() {
        let tp = confusion[c][c] as f64;
        let actual: usize = confusion[c].iter().sum();
        let called: usize = (0..3).map(|r| confusion[r][c]).sum();
        if actual + called == 0 {
            continue;
        }
        // F1 = 2·TP / (actual + predicted)
        *slot = Some(2.0 * tp / (actual + called) as f64);
    }
    let present: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    Ok(Evaluation {
        accuracy: correct as f64 / truth.len() as f64,
        macro_f1: present.iter().sum::<f64>() / present.len() as f64,
        confusion,
        per_class_f1,
        support: truth.len(),
    })
}

/// Results of fitting every method on one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<(String, Evaluation)>,
    pub train_size: usize,
    pub test_size: usize,
}

impl Comparison {
    pub fn accuracy(&self, method: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == method).map(|r| r.1.accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,accuracy,f1\n");
        for (name, e) in &self.rows {
            out.push_str(&format!("{name},{:.4},{:.4}\n", e.accuracy, e.macro_f1));
        }
        out
    }
}

/// Trains the forest and fits the baselines on a stratified 70/30 split,
/// then evaluates all four on the held-out side. Baselines fall back to the
/// forest's imputation when their current value is missing.
pub fn compare(examples: &[LabeledExample], params: ForestParams, seed: u64) -> Result<Comparison, PredictError> {
    let labels: Vec<OutcomeLabel> = examples.iter().map(|e| e.label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, TRAIN_FRACTION, seed);
    let train: Vec<LabeledExample> = train_idx.iter().map(|&i| examples[i].clone()).collect();
    let test: Vec<&LabeledExample> = test_idx.iter().map(|&i| &examples[i]).collect();
    if test.is_empty() {
        return Err(PredictError::EmptyTest);
    }
    let model = Model::train(&train, params, seed)?;
    let rows = model.evaluate_on(&test)?;
    Ok(Comparison {
        rows,
        train_size: train.len(),
        test_size: test.len(),
    })
}
