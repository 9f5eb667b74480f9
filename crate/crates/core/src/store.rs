//! Append-only time-series archive.
//!
//! Records live in per-day JSON-line segment files. Every line carries the
//! id and size of the batch it was appended in; on open, a batch becomes
//! visible only if all of its lines are present, so a torn write leaves no
//! partial batch behind. An in-memory index ordered by (series, timestamp)
//! serves queries. Each record remembers the batch that committed it, which
//! lets paginated readers pin a snapshot while appends continue.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    timestamp_from_secs, ArchiveRecord, InstanceType, Location, Metric, ModelError, Region, Zone,
};

pub const MAX_PAGE: usize = 10_000;
const IMPORT_CHUNK: usize = 50_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage full: {used} of {limit} bytes used")]
    StorageFull { used: u64, limit: u64 },
    #[error("corrupt batch: record {index}: {source}")]
    CorruptBatch { index: usize, source: ModelError },
    #[error("range start is after range end")]
    RangeInverted,
    #[error("grid period must be positive")]
    ZeroGrid,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("store unavailable: {0}")]
    Io(#[from] std::io::Error),
}

/// Identity of one stored time series.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub instance: InstanceType,
    pub region: Region,
    pub az: Option<Zone>,
    pub metric: Metric,
}

impl SeriesKey {
    pub fn new(instance: InstanceType, location: Location, metric: Metric) -> Self {
        SeriesKey {
            instance,
            region: location.region_code().clone(),
            az: location.az().cloned(),
            metric,
        }
    }

    pub fn of(record: &ArchiveRecord) -> Self {
        SeriesKey::new(record.instance.clone(), record.location.clone(), record.metric)
    }

    pub fn location(&self) -> Location {
        Location::new(self.region.clone(), self.az.clone()).expect("key built from a valid location")
    }

    fn record(&self, ts: i64, value: f64) -> ArchiveRecord {
        ArchiveRecord {
            timestamp: timestamp_from_secs(ts),
            instance: self.instance.clone(),
            location: self.location(),
            metric: self.metric,
            value,
        }
    }
}

/// Partial series key. An empty list matches everything on that dimension.
/// A region-level record matches an AZ filter when its region holds one of
/// the listed AZs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct KeyFilter {
    #[serde(default)]
    pub instances: Vec<InstanceType>,
    #[serde(default)]
    pub regions: Vec<Region>,
    #[serde(default)]
    pub azs: Vec<Zone>,
    #[serde(default)]
    pub metrics: Vec<Metric>,
}

impl KeyFilter {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn metric(metric: Metric) -> Self {
        KeyFilter {
            metrics: vec![metric],
            ..Self::default()
        }
    }

    pub fn matches(&self, key: &SeriesKey) -> bool {
        let any = |list_empty: bool, hit: bool| list_empty || hit;
        any(self.instances.is_empty(), self.instances.contains(&key.instance))
            && any(self.regions.is_empty(), self.regions.contains(&key.region))
            && any(self.metrics.is_empty(), self.metrics.contains(&key.metric))
            && any(
                self.azs.is_empty(),
                match &key.az {
                    Some(az) => self.azs.contains(az),
                    None => self.azs.iter().any(|z| z.region() == key.region),
                },
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AppendReport {
    pub accepted: usize,
    pub duplicates: usize,
}

/// A value change between consecutive samples of one series.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ChangeEvent {
    pub key: SeriesKey,
    pub at: DateTime<Utc>,
    pub old_value: f64,
    pub new_value: f64,
}

/// Resume point of a paginated query: the snapshot it reads and the last
/// (series, timestamp) already returned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub as_of: u64,
    pub key: SeriesKey,
    pub ts: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub records: Vec<ArchiveRecord>,
    pub next: Option<Cursor>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentLine {
    batch: u64,
    size: usize,
    #[serde(flatten)]
    record: ArchiveRecord,
}

#[derive(Default)]
struct Index {
    series: BTreeMap<SeriesKey, BTreeMap<i64, Sample>>,
    // highest committed batch id
    version: u64,
    len: usize,
    bytes: u64,
}

#[derive(Debug, Clone, Copy)]
struct Sample {
    value: f64,
    batch: u64,
}

pub struct Store {
    dir: Option<PathBuf>,
    limit_bytes: Option<u64>,
    index: RwLock<Index>,
    writer: Mutex<()>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store {
            dir: None,
            limit_bytes: None,
            index: RwLock::new(Index::default()),
            writer: Mutex::new(()),
        }
    }

    /// Opens (creating if needed) a store directory and rebuilds the index
    /// from its segments.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut segments: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seg-") && n.ends_with(".jsonl"))
            })
            .collect();
        segments.sort();

        let mut batches: BTreeMap<u64, (usize, Vec<ArchiveRecord>)> = BTreeMap::new();
        let mut bytes = 0;
        let mut max_batch = 0;
        for path in &segments {
            terminate_torn_line(path)?;
            bytes += fs::metadata(path)?.len();
            let reader = BufReader::new(File::open(path)?);
            for line in reader.lines() {
                let line = line?;
                // torn trailing writes fail to parse and are dropped with their batch
                let Ok(parsed) = serde_json::from_str::<SegmentLine>(&line) else {
                    continue;
                };
                max_batch = max_batch.max(parsed.batch);
                let entry = batches
                    .entry(parsed.batch)
                    .or_insert_with(|| (parsed.size, Vec::new()));
                entry.1.push(parsed.record);
            }
        }
        let mut index = Index {
            bytes,
            ..Index::default()
        };
        for (batch, (size, records)) in batches {
            if records.len() != size {
                continue;
            }
            for r in records {
                index.insert(SeriesKey::of(&r), r.timestamp.timestamp(), r.value, batch);
            }
        }
        index.version = max_batch;
        Ok(Store {
            dir: Some(dir),
            limit_bytes: None,
            index: RwLock::new(index),
            writer: Mutex::new(()),
        })
    }

    /// Caps the on-disk footprint; appends beyond it fail with `StorageFull`.
    pub fn with_limit(mut self, bytes: u64) -> Self {
        self.limit_bytes = Some(bytes);
        self
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Atomically appends a batch. Rows whose (series, timestamp) already
    /// exists, in the store or earlier in the batch, are skipped and counted.
    pub fn append(&self, records: &[ArchiveRecord]) -> Result<AppendReport, StoreError> {
        for (index, r) in records.iter().enumerate() {
            r.validate()
                .map_err(|source| StoreError::CorruptBatch { index, source })?;
        }
        let _guard = self.writer.lock().expect("writer lock");
        let (fresh, batch) = {
            let index = self.index.read().expect("index lock");
            let mut seen = BTreeSet::new();
            let mut fresh = Vec::new();
            for r in records {
                let key = SeriesKey::of(r);
                let ts = r.timestamp.timestamp();
                let exists = index.series.get(&key).is_some_and(|s| s.contains_key(&ts));
                if !exists && seen.insert((key, ts)) {
                    fresh.push(r);
                }
            }
            (fresh, index.version + 1)
        };
        let duplicates = records.len() - fresh.len();
        if fresh.is_empty() {
            return Ok(AppendReport {
                accepted: 0,
                duplicates,
            });
        }
        let written = match &self.dir {
            Some(dir) => self.write_batch(dir, batch, &fresh)?,
            None => 0,
        };
        let mut index = self.index.write().expect("index lock");
        for r in &fresh {
            index.insert(SeriesKey::of(r), r.timestamp.timestamp(), r.value, batch);
        }
        index.version = batch;
        index.bytes += written;
        Ok(AppendReport {
            accepted: fresh.len(),
            duplicates,
        })
    }

    fn write_batch(&self, dir: &Path, batch: u64, records: &[&ArchiveRecord]) -> Result<u64, StoreError> {
        let mut by_day: BTreeMap<NaiveDate, Vec<u8>> = BTreeMap::new();
        for r in records {
            let line = SegmentLine {
                batch,
                size: records.len(),
                record: (*r).clone(),
            };
            let buf = by_day.entry(r.timestamp.date_naive()).or_default();
            serde_json::to_writer(&mut *buf, &line).expect("segment line serializes");
            buf.push(b'\n');
        }
        let total: u64 = by_day.values().map(|b| b.len() as u64).sum();
        if let Some(limit) = self.limit_bytes {
            let used = self.index.read().expect("index lock").bytes;
            if used + total > limit {
                return Err(StoreError::StorageFull { used, limit });
            }
        }
        for (day, buf) in by_day {
            let path = dir.join(format!("seg-{}.jsonl", day.format("%Y-%m-%d")));
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            file.write_all(&buf)?;
            file.sync_data()?;
        }
        Ok(total)
    }

    /// Id of the last committed batch; grows with every successful append.
    pub fn version(&self) -> u64 {
        self.index.read().expect("index lock").version
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First and last timestamp in the archive.
    pub fn span(&self) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
        let index = self.index.read().expect("index lock");
        let first = index.series.values().filter_map(|s| s.keys().next()).min()?;
        let last = index.series.values().filter_map(|s| s.keys().next_back()).max()?;
        Some((timestamp_from_secs(*first), timestamp_from_secs(*last)))
    }

    pub fn series_keys(&self, filter: &KeyFilter) -> Vec<SeriesKey> {
        let index = self.index.read().expect("index lock");
        index.series.keys().filter(|k| filter.matches(k)).cloned().collect()
    }

    /// All matching records in `[from, to]`, ordered by (series, timestamp).
    pub fn query(
        &self,
        filter: &KeyFilter,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<ArchiveRecord>, StoreError> {
        if from > to {
            return Err(StoreError::RangeInverted);
        }
        let (lo, hi) = (from.timestamp(), to.timestamp());
        let index = self.index.read().expect("index lock");
        Ok(index
            .series
            .iter()
            .filter(|(k, _)| filter.matches(k))
            .flat_map(|(k, s)| s.range(lo..=hi).map(move |(&ts, v)| k.record(ts, v.value)))
            .collect())
    }

    /// One page of `query`, reading the snapshot pinned by the cursor (or
    /// the current one for a first page).
    pub fn query_page(
        &self,
        filter: &KeyFilter,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        cursor: Option<&Cursor>,
        limit: usize,
    ) -> Result<Page, StoreError> {
        if from > to {
            return Err(StoreError::RangeInverted);
        }
        let limit = limit.clamp(1, MAX_PAGE);
        let (lo, hi) = (from.timestamp(), to.timestamp());
        let index = self.index.read().expect("index lock");
        let as_of = cursor.map_or(index.version, |c| c.as_of);
        let start = match cursor {
            Some(c) => Bound::Included(&c.key),
            None => Bound::Unbounded,
        };
        let mut records = Vec::new();
        let mut last: Option<(&SeriesKey, i64)> = None;
        for (key, samples) in index.series.range::<SeriesKey, _>((start, Bound::Unbounded)) {
            if !filter.matches(key) {
                continue;
            }
            let after = match cursor {
                Some(c) if &c.key == key => Bound::Excluded(c.ts.max(lo - 1)),
                _ => Bound::Included(lo),
            };
            if let Bound::Excluded(a) = after {
                if a >= hi {
                    continue;
                }
            }
            for (&ts, sample) in samples.range((after, Bound::Included(hi))) {
                if sample.batch > as_of {
                    continue;
                }
                if records.len() == limit {
                    let (k, t) = last.expect("page is non-empty");
                    return Ok(Page {
                        records,
                        next: Some(Cursor {
                            as_of,
                            key: k.clone(),
                            ts: t,
                        }),
                    });
                }
                records.push(key.record(ts, sample.value));
                last = Some((key, ts));
            }
        }
        Ok(Page { records, next: None })
    }

    /// Samples of one series in `[from, to]` as (unix seconds, value).
    pub fn samples(&self, key: &SeriesKey, from: DateTime<Utc>, to: DateTime<Utc>) -> Vec<(i64, f64)> {
        let index = self.index.read().expect("index lock");
        index.series.get(key).map_or_else(Vec::new, |s| {
            s.range(from.timestamp()..=to.timestamp())
                .map(|(&t, v)| (t, v.value))
                .collect()
        })
    }

    /// Every sample of every series matching `filter`.
    pub fn series(&self, filter: &KeyFilter) -> Vec<(SeriesKey, Vec<(i64, f64)>)> {
        let index = self.index.read().expect("index lock");
        index
            .series
            .iter()
            .filter(|(k, _)| filter.matches(k))
            .map(|(k, s)| (k.clone(), s.iter().map(|(&t, v)| (t, v.value)).collect()))
            .collect()
    }

    pub fn change_events(
        &self,
        key: &SeriesKey,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<ChangeEvent>, StoreError> {
        if from > to {
            return Err(StoreError::RangeInverted);
        }
        Ok(change_points(&self.samples(key, from, to))
            .into_iter()
            .map(|(at, old_value, new_value)| ChangeEvent {
                key: key.clone(),
                at: timestamp_from_secs(at),
                old_value,
                new_value,
            })
            .collect())
    }

    /// Values forward-filled onto the grid `from, from + grid, ...` up to
    /// `to`. Grid points before the first sample are omitted.
    pub fn resample_ffill(
        &self,
        key: &SeriesKey,
        grid_secs: i64,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<(DateTime<Utc>, f64)>, StoreError> {
        if grid_secs <= 0 {
            return Err(StoreError::ZeroGrid);
        }
        if from > to {
            return Err(StoreError::RangeInverted);
        }
        let index = self.index.read().expect("index lock");
        let Some(series) = index.series.get(key) else {
            return Ok(Vec::new());
        };
        let samples: Vec<(i64, f64)> = series
            .range(..=to.timestamp())
            .map(|(&t, v)| (t, v.value))
            .collect();
        Ok(forward_fill(&samples, grid_secs, from.timestamp(), to.timestamp())
            .into_iter()
            .map(|(t, v)| (timestamp_from_secs(t), v))
            .collect())
    }

    /// Writes matching records in canonical line-delimited JSON.
    pub fn export(
        &self,
        filter: &KeyFilter,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
        out: impl Write,
    ) -> Result<usize, StoreError> {
        let records = self.query(filter, from, to)?;
        let mut out = BufWriter::new(out);
        for r in &records {
            out.write_all(r.to_json_line().as_bytes())?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(records.len())
    }

    /// Reads canonical line-delimited JSON and appends it in chunks.
    pub fn import(&self, input: impl Read) -> Result<AppendReport, StoreError> {
        let mut report = AppendReport {
            accepted: 0,
            duplicates: 0,
        };
        let mut chunk = Vec::with_capacity(IMPORT_CHUNK);
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = ArchiveRecord::from_json_line(&line).map_err(|e| StoreError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            chunk.push(record);
            if chunk.len() == IMPORT_CHUNK {
                let r = self.append(&chunk)?;
                report.accepted += r.accepted;
                report.duplicates += r.duplicates;
                chunk.clear();
            }
        }
        if !chunk.is_empty() {
            let r = self.append(&chunk)?;
            report.accepted += r.accepted;
            report.duplicates += r.duplicates;
        }
        Ok(report)
    }
}

impl Index {
    fn insert(&mut self, key: SeriesKey, ts: i64, value: f64, batch: u64) {
        let series = self.series.entry(key).or_default();
        if series.insert(ts, Sample { value, batch }).is_none() {
            self.len += 1;
        }
    }
}

// Ends a torn trailing line so the next append starts on a fresh line.
fn terminate_torn_line(path: &Path) -> std::io::Result<()> {
    use std::io::{Seek, SeekFrom};
    let mut file = OpenOptions::new().read(true).append(true).open(path)?;
    if file.metadata()?.len() == 0 {
        return Ok(());
    }
    file.seek(SeekFrom::End(-1))?;
    let mut last = [0u8];
    file.read_exact(&mut last)?;
    if last[0] != b'\n' {
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// (time, old, new) wherever a sample differs from the one before it.
pub fn change_points(samples: &[(i64, f64)]) -> Vec<(i64, f64, f64)> {
    samples
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| (w[1].0, w[0].1, w[1].1))
        .collect()
}

/// Forward-fills time-ordered samples onto `from + k * grid <= to`.
pub fn forward_fill(samples: &[(i64, f64)], grid: i64, from: i64, to: i64) -> Vec<(i64, f64)> {
    let mut out = Vec::new();
    let mut next = 0;
    let mut current = None;
    let mut t = from;
    while t <= to {
        while next < samples.len() && samples[next].0 <= t {
            current = Some(samples[next].1);
            next += 1;
        }
        if let Some(v) = current {
            out.push((t, v));
        }
        t += grid;
    }
    out
}
