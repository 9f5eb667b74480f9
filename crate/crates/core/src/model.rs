//! Shared domain vocabulary: instance taxonomy, locations, scores, archive
//! records and the score conversion rules.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed instance type `{0}`")]
    MalformedInstanceType(String),
    #[error("unknown instance family `{0}`")]
    UnknownFamily(String),
    #[error("unknown instance size `{0}`")]
    UnknownSize(String),
    #[error("malformed region code `{0}`")]
    MalformedRegion(String),
    #[error("availability zone `{zone}` does not belong to region `{region}`")]
    ZoneRegionMismatch { zone: String, region: String },
    #[error("malformed availability zone `{0}`")]
    MalformedZone(String),
    #[error("placement score {0} outside 1..=10")]
    ScoreOutOfRange(u8),
    #[error("placement score {0} outside the single-type single-AZ range 1..=3")]
    OutOfBandScore(u8),
    #[error("interruption-free score {0} is not one of 1.0, 1.5, 2.0, 2.5, 3.0")]
    InvalidInterruptionFree(f64),
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("unknown interruption band `{0}`")]
    UnknownBand(String),
    #[error("{metric} value {value} out of range")]
    ValueOutOfRange { metric: Metric, value: f64 },
    #[error("{metric} record requires an availability zone")]
    ZoneRequired { metric: Metric },
    #[error("savings ratio {0} outside [0, 1]")]
    InvalidSavings(f64),
    #[error("price {0} must be positive")]
    InvalidPrice(f64),
    #[error("invalid timestamp `{0}`")]
    InvalidTimestamp(String),
}

/// Broad instance class, listed in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyClass {
    General,
    ComputeOptimized,
    MemoryOptimized,
    AcceleratedComputing,
    StorageOptimized,
}

impl FamilyClass {
    pub const ALL: [FamilyClass; 5] = [
        FamilyClass::General,
        FamilyClass::ComputeOptimized,
        FamilyClass::MemoryOptimized,
        FamilyClass::AcceleratedComputing,
        FamilyClass::StorageOptimized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyClass::General => "general",
            FamilyClass::ComputeOptimized => "compute-optimized",
            FamilyClass::MemoryOptimized => "memory-optimized",
            FamilyClass::AcceleratedComputing => "accelerated-computing",
            FamilyClass::StorageOptimized => "storage-optimized",
        }
    }
}

impl fmt::Display for FamilyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// Every family the taxonomy knows. Anything else is rejected at parse time.
const FAMILIES: &[(&str, FamilyClass)] = &[
    // T, M, A
    ("t2", FamilyClass::General),
    ("t3", FamilyClass::General),
    ("t3a", FamilyClass::General),
    ("t4g", FamilyClass::General),
    ("m4", FamilyClass::General),
    ("m5", FamilyClass::General),
    ("m5a", FamilyClass::General),
    ("m5ad", FamilyClass::General),
    ("m5d", FamilyClass::General),
    ("m5dn", FamilyClass::General),
    ("m5n", FamilyClass::General),
    ("m5zn", FamilyClass::General),
    ("m6a", FamilyClass::General),
    ("m6g", FamilyClass::General),
    ("m6gd", FamilyClass::General),
    ("m6i", FamilyClass::General),
    ("m6id", FamilyClass::General),
    ("a1", FamilyClass::General),
    // C
    ("c4", FamilyClass::ComputeOptimized),
    ("c5", FamilyClass::ComputeOptimized),
    ("c5a", FamilyClass::ComputeOptimized),
    ("c5ad", FamilyClass::ComputeOptimized),
    ("c5d", FamilyClass::ComputeOptimized),
    ("c5n", FamilyClass::ComputeOptimized),
    ("c6a", FamilyClass::ComputeOptimized),
    ("c6g", FamilyClass::ComputeOptimized),
    ("c6gd", FamilyClass::ComputeOptimized),
    ("c6gn", FamilyClass::ComputeOptimized),
    ("c6i", FamilyClass::ComputeOptimized),
    ("c6id", FamilyClass::ComputeOptimized),
    ("c7g", FamilyClass::ComputeOptimized),
    // R, X, Z
    ("r4", FamilyClass::MemoryOptimized),
    ("r5", FamilyClass::MemoryOptimized),
    ("r5a", FamilyClass::MemoryOptimized),
    ("r5ad", FamilyClass::MemoryOptimized),
    ("r5b", FamilyClass::MemoryOptimized),
    ("r5d", FamilyClass::MemoryOptimized),
    ("r5dn", FamilyClass::MemoryOptimized),
    ("r5n", FamilyClass::MemoryOptimized),
    ("r6g", FamilyClass::MemoryOptimized),
    ("r6gd", FamilyClass::MemoryOptimized),
    ("r6i", FamilyClass::MemoryOptimized),
    ("x1", FamilyClass::MemoryOptimized),
    ("x1e", FamilyClass::MemoryOptimized),
    ("x2gd", FamilyClass::MemoryOptimized),
    ("x2idn", FamilyClass::MemoryOptimized),
    ("x2iedn", FamilyClass::MemoryOptimized),
    ("z1d", FamilyClass::MemoryOptimized),
    // P, G, DL, Inf, F, VT
    ("p2", FamilyClass::AcceleratedComputing),
    ("p3", FamilyClass::AcceleratedComputing),
    ("p3dn", FamilyClass::AcceleratedComputing),
    ("p4d", FamilyClass::AcceleratedComputing),
    ("g3", FamilyClass::AcceleratedComputing),
    ("g3s", FamilyClass::AcceleratedComputing),
    ("g4ad", FamilyClass::AcceleratedComputing),
    ("g4dn", FamilyClass::AcceleratedComputing),
    ("g5", FamilyClass::AcceleratedComputing),
    ("g5g", FamilyClass::AcceleratedComputing),
    ("dl1", FamilyClass::AcceleratedComputing),
    ("inf1", FamilyClass::AcceleratedComputing),
    ("f1", FamilyClass::AcceleratedComputing),
    ("vt1", FamilyClass::AcceleratedComputing),
    // I, D, H
    ("i3", FamilyClass::StorageOptimized),
    ("i3en", FamilyClass::StorageOptimized),
    ("i4i", FamilyClass::StorageOptimized),
    ("im4gn", FamilyClass::StorageOptimized),
    ("is4gen", FamilyClass::StorageOptimized),
    ("d2", FamilyClass::StorageOptimized),
    ("d3", FamilyClass::StorageOptimized),
    ("d3en", FamilyClass::StorageOptimized),
    ("h1", FamilyClass::StorageOptimized),
];

const NAMED_SIZES: &[(&str, u32)] = &[
    ("nano", 1),
    ("micro", 2),
    ("small", 3),
    ("medium", 4),
    ("large", 5),
    ("xlarge", 6),
];

pub fn family_class(family: &str) -> Option<FamilyClass> {
    FAMILIES
        .iter()
        .find(|(name, _)| *name == family)
        .map(|(_, class)| *class)
}

/// Every family in the static taxonomy, in table order.
pub fn known_families() -> impl Iterator<Item = (&'static str, FamilyClass)> {
    FAMILIES.iter().copied()
}

/// Ordering rank of a size code; larger sizes rank higher, `metal` last.
pub fn size_rank(size: &str) -> Option<u32> {
    if let Some((_, rank)) = NAMED_SIZES.iter().find(|(name, _)| *name == size) {
        return Some(*rank);
    }
    if size == "metal" || size.starts_with("metal-") {
        return Some(10_000);
    }
    let multiple = size.strip_suffix("xlarge")?;
    if multiple.is_empty() || !multiple.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u32 = multiple.parse().ok()?;
    (n >= 2).then_some(6 + n)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceType {
    family: String,
    size: String,
}

impl InstanceType {
    pub fn new(family: &str, size: &str) -> Result<Self, ModelError> {
        if family_class(family).is_none() {
            return Err(ModelError::UnknownFamily(family.to_string()));
        }
        if size_rank(size).is_none() {
            return Err(ModelError::UnknownSize(size.to_string()));
        }
        Ok(Self {
            family: family.to_string(),
            size: size.to_string(),
        })
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn size(&self) -> &str {
        &self.size
    }

    pub fn code(&self) -> String {
        format!("{}.{}", self.family, self.size)
    }

    pub fn family_class(&self) -> FamilyClass {
        family_class(&self.family).expect("validated at construction")
    }

    pub fn size_rank(&self) -> u32 {
        size_rank(&self.size).expect("validated at construction")
    }
}

impl FromStr for InstanceType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (family, size) = s
            .split_once('.')
            .ok_or_else(|| ModelError::MalformedInstanceType(s.to_string()))?;
        if family.is_empty() || size.is_empty() || size.contains('.') {
            return Err(ModelError::MalformedInstanceType(s.to_string()));
        }
        InstanceType::new(family, size)
    }
}

impl fmt::Display for InstanceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.family, self.size)
    }
}

impl Serialize for InstanceType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstanceType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Region code in `continent-coordinate-id` form, e.g. `us-east-1`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Region(String);

impl Region {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The `index`-th zone of this region (`a`, `b`, ...).
    pub fn zone(&self, index: usize) -> Zone {
        assert!(index < 26, "zone index {index} out of range");
        Zone(format!("{}{}", self.0, (b'a' + index as u8) as char))
    }
}

impl FromStr for Region {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('-').collect();
        let ok = parts.len() >= 3
            && parts[..parts.len() - 1]
                .iter()
                .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_lowercase()))
            && {
                let id = parts[parts.len() - 1];
                !id.is_empty() && id.bytes().all(|b| b.is_ascii_digit())
            };
        if ok {
            Ok(Region(s.to_string()))
        } else {
            Err(ModelError::MalformedRegion(s.to_string()))
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Availability zone identifier: region code followed by one letter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Zone(String);

impl Zone {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn region(&self) -> Region {
        Region(self.0[..self.0.len() - 1].to_string())
    }
}

impl FromStr for Zone {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let last = s.bytes().last();
        match last {
            Some(b) if b.is_ascii_lowercase() && s.len() > 1 => {
                s[..s.len() - 1]
                    .parse::<Region>()
                    .map_err(|_| ModelError::MalformedZone(s.to_string()))?;
                Ok(Zone(s.to_string()))
            }
            _ => Err(ModelError::MalformedZone(s.to_string())),
        }
    }
}

impl fmt::Display for Zone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(Region);
string_serde!(Zone);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location {
    region: Region,
    az: Option<Zone>,
}

impl Location {
    pub fn region(region: Region) -> Self {
        Self { region, az: None }
    }

    pub fn zone(az: Zone) -> Self {
        Self {
            region: az.region(),
            az: Some(az),
        }
    }

    pub fn new(region: Region, az: Option<Zone>) -> Result<Self, ModelError> {
        if let Some(zone) = &az {
            if zone.region() != region {
                return Err(ModelError::ZoneRegionMismatch {
                    zone: zone.to_string(),
                    region: region.to_string(),
                });
            }
        }
        Ok(Self { region, az })
    }

    pub fn region_code(&self) -> &Region {
        &self.region
    }

    pub fn az(&self) -> Option<&Zone> {
        self.az.as_ref()
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.az {
            Some(az) => f.write_str(az.as_str()),
            None => f.write_str(self.region.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpotPlacementScore(u8);

impl SpotPlacementScore {
    pub fn new(value: u8) -> Result<Self, ModelError> {
        if (1..=10).contains(&value) {
            Ok(Self(value))
        } else {
            Err(ModelError::ScoreOutOfRange(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for SpotPlacementScore {
    type Error = ModelError;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<SpotPlacementScore> for u8 {
    fn from(score: SpotPlacementScore) -> u8 {
        score.0
    }
}

/// Three-level availability category. Numeric anchors are 3.0, 2.0 and 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band3 {
    High,
    Medium,
    Low,
}

impl Band3 {
    pub const ALL: [Band3; 3] = [Band3::High, Band3::Medium, Band3::Low];

    pub fn value(self) -> f64 {
        match self {
            Band3::High => 3.0,
            Band3::Medium => 2.0,
            Band3::Low => 1.0,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Band3::High => 'H',
            Band3::Medium => 'M',
            Band3::Low => 'L',
        }
    }

    pub fn from_letter(c: char) -> Option<Band3> {
        match c {
            'H' => Some(Band3::High),
            'M' => Some(Band3::Medium),
            'L' => Some(Band3::Low),
            _ => None,
        }
    }

    /// Category of a numeric score: 3.0 and above is High, 2.0 and above
    /// Medium, anything lower Low.
    pub fn of_value(value: f64) -> Band3 {
        if value >= 3.0 {
            Band3::High
        } else if value >= 2.0 {
            Band3::Medium
        } else {
            Band3::Low
        }
    }

    /// One notch lower; `Low` stays `Low`.
    pub fn worse(self) -> Band3 {
        match self {
            Band3::High => Band3::Medium,
            _ => Band3::Low,
        }
    }
}

pub fn placement_score_to_band3(score: SpotPlacementScore) -> Result<Band3, ModelError> {
    match score.value() {
        3 => Ok(Band3::High),
        2 => Ok(Band3::Medium),
        1 => Ok(Band3::Low),
        other => Err(ModelError::OutOfBandScore(other)),
    }
}

/// The advisor's prior-month interruption frequency category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InterruptionBand {
    #[serde(rename = "LT5")]
    Lt5,
    #[serde(rename = "B5_10")]
    B5To10,
    #[serde(rename = "B10_15")]
    B10To15,
    #[serde(rename = "B15_20")]
    B15To20,
    #[serde(rename = "GT20")]
    Gt20,
}

impl InterruptionBand {
    /// Ordered from least to most frequent interruption.
    pub const ALL: [InterruptionBand; 5] = [
        InterruptionBand::Lt5,
        InterruptionBand::B5To10,
        InterruptionBand::B10To15,
        InterruptionBand::B15To20,
        InterruptionBand::Gt20,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InterruptionBand::Lt5 => "LT5",
            InterruptionBand::B5To10 => "B5_10",
            InterruptionBand::B10To15 => "B10_15",
            InterruptionBand::B15To20 => "B15_20",
            InterruptionBand::Gt20 => "GT20",
        }
    }
}

impl FromStr for InterruptionBand {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InterruptionBand::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| ModelError::UnknownBand(s.to_string()))
    }
}

/// Numeric form of an interruption band. Stored as half-steps so only the
/// five legal values are representable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InterruptionFreeScore(u8);

impl InterruptionFreeScore {
    pub const ALL: [f64; 5] = [1.0, 1.5, 2.0, 2.5, 3.0];

    pub fn from_value(value: f64) -> Result<Self, ModelError> {
        let doubled = value * 2.0;
        if doubled.fract() == 0.0 && (2.0..=6.0).contains(&doubled) {
            Ok(Self(doubled as u8))
        } else {
            Err(ModelError::InvalidInterruptionFree(value))
        }
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    pub fn to_band(self) -> InterruptionBand {
        match self.0 {
            6 => InterruptionBand::Lt5,
            5 => InterruptionBand::B5To10,
            4 => InterruptionBand::B10To15,
            3 => InterruptionBand::B15To20,
            _ => InterruptionBand::Gt20,
        }
    }
}

pub fn interruption_band_to_score(band: InterruptionBand) -> InterruptionFreeScore {
    InterruptionFreeScore(match band {
        InterruptionBand::Lt5 => 6,
        InterruptionBand::B5To10 => 5,
        InterruptionBand::B10To15 => 4,
        InterruptionBand::B15To20 => 3,
        InterruptionBand::Gt20 => 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Metric {
    PlacementScore,
    InterruptionFree,
    SpotPrice,
    Savings,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::PlacementScore,
        Metric::InterruptionFree,
        Metric::SpotPrice,
        Metric::Savings,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::PlacementScore => "placementScore",
            Metric::InterruptionFree => "interruptionFree",
            Metric::SpotPrice => "spotPrice",
            Metric::Savings => "savings",
        }
    }

    /// Metrics observed per AZ. The advisor metrics are region-granular.
    pub fn requires_zone(self) -> bool {
        matches!(self, Metric::PlacementScore | Metric::SpotPrice)
    }

    pub fn validate(self, value: f64) -> Result<(), ModelError> {
        let ok = value.is_finite()
            && match self {
                Metric::PlacementScore => (1.0..=10.0).contains(&value) && value.fract() == 0.0,
                Metric::InterruptionFree => InterruptionFreeScore::from_value(value).is_ok(),
                Metric::SpotPrice => value > 0.0,
                Metric::Savings => (0.0..=1.0).contains(&value),
            };
        if ok {
            Ok(())
        } else {
            Err(ModelError::ValueOutOfRange {
                metric: self,
                value,
            })
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| ModelError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestStatus {
    PendingEvaluation,
    Holding,
    Fulfilled,
    Terminal,
}

impl RequestStatus {
    pub const ALL: [RequestStatus; 4] = [
        RequestStatus::PendingEvaluation,
        RequestStatus::Holding,
        RequestStatus::Fulfilled,
        RequestStatus::Terminal,
    ];

    /// Whether `self -> next` is a legal observation step. Re-observing an
    /// unchanged state is legal everywhere; `Fulfilled -> PendingEvaluation`
    /// is the persistent-request interruption.
    pub fn can_transition(self, next: RequestStatus) -> bool {
        use RequestStatus::*;
        if self == next {
            return true;
        }
        matches!(
            (self, next),
            (PendingEvaluation, Holding | Fulfilled | Terminal)
                | (Holding, Fulfilled | Terminal)
                | (Fulfilled, Terminal | PendingEvaluation)
        )
    }

    pub fn code(self) -> &'static str {
        match self {
            RequestStatus::PendingEvaluation => "P",
            RequestStatus::Holding => "H",
            RequestStatus::Fulfilled => "F",
            RequestStatus::Terminal => "T",
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Result<DateTime<Utc>, ModelError> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|_| ModelError::InvalidTimestamp(raw.to_string()))
}

pub fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn timestamp_from_secs(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(secs, 0)
        .single()
        .expect("timestamp in range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpotPriceRecord {
    pub timestamp: DateTime<Utc>,
    pub instance: InstanceType,
    pub az: Zone,
    pub price_usd_per_hour: f64,
}

impl SpotPriceRecord {
    pub fn new(
        timestamp: DateTime<Utc>,
        instance: InstanceType,
        az: Zone,
        price_usd_per_hour: f64,
    ) -> Result<Self, ModelError> {
        if !(price_usd_per_hour > 0.0 && price_usd_per_hour.is_finite()) {
            return Err(ModelError::InvalidPrice(price_usd_per_hour));
        }
        Ok(Self {
            timestamp,
            instance,
            az,
            price_usd_per_hour,
        })
    }
}

/// One timestamped observation of one metric at one (instance, location).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordLine", into = "RecordLine")]
pub struct ArchiveRecord {
    pub timestamp: DateTime<Utc>,
    pub instance: InstanceType,
    pub location: Location,
    pub metric: Metric,
    pub value: f64,
}

impl ArchiveRecord {
    pub fn new(
        timestamp: DateTime<Utc>,
        instance: InstanceType,
        location: Location,
        metric: Metric,
        value: f64,
    ) -> Result<Self, ModelError> {
        let record = Self {
            timestamp,
            instance,
            location,
            metric,
            value,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.metric.requires_zone() && self.location.az().is_none() {
            return Err(ModelError::ZoneRequired {
                metric: self.metric,
            });
        }
        self.metric.validate(self.value)
    }

    /// Canonical line-delimited JSON form.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    ts: String,
    instance: InstanceType,
    region: Region,
    az: Option<Zone>,
    metric: Metric,
    value: f64,
}

impl TryFrom<RecordLine> for ArchiveRecord {
    type Error = ModelError;

    fn try_from(line: RecordLine) -> Result<Self, Self::Error> {
        let location = Location::new(line.region, line.az)?;
        ArchiveRecord::new(
            parse_timestamp(&line.ts)?,
            line.instance,
            location,
            line.metric,
            line.value,
        )
    }
}

impl From<ArchiveRecord> for RecordLine {
    fn from(record: ArchiveRecord) -> Self {
        RecordLine {
            ts: format_timestamp(record.timestamp),
            instance: record.instance,
            region: record.location.region,
            az: record.location.az,
            metric: record.metric,
            value: record.value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_mapping_matches_reference_scores() {
        let expected = [
            (InterruptionBand::Lt5, 3.0),
            (InterruptionBand::B5To10, 2.5),
            (InterruptionBand::B10To15, 2.0),
            (InterruptionBand::B15To20, 1.5),
            (InterruptionBand::Gt20, 1.0),
        ];
        for (band, value) in expected {
            assert_eq!(interruption_band_to_score(band).value(), value);
        }
    }

    #[test]
    fn band_mapping_round_trips() {
        let mut seen = std::collections::HashSet::new();
        for band in InterruptionBand::ALL {
            let score = interruption_band_to_score(band);
            assert!(seen.insert(score), "not injective at {band:?}");
            assert_eq!(score.to_band(), band);
            assert_eq!(
                InterruptionFreeScore::from_value(score.value()).unwrap(),
                score
            );
        }
    }

    #[test]
    fn interruption_free_rejects_other_values() {
        for bad in [0.5, 1.25, 3.5, 0.0, f64::NAN] {
            assert!(InterruptionFreeScore::from_value(bad).is_err());
        }
    }

    #[test]
    fn placement_band3() {
        let band = |v| placement_score_to_band3(SpotPlacementScore::new(v).unwrap());
        assert_eq!(band(3).unwrap(), Band3::High);
        assert_eq!(band(2).unwrap(), Band3::Medium);
        assert_eq!(band(1).unwrap(), Band3::Low);
        assert_eq!(band(7), Err(ModelError::OutOfBandScore(7)));
        assert!(SpotPlacementScore::new(0).is_err());
        assert!(SpotPlacementScore::new(11).is_err());
    }

    #[test]
    fn request_status_machine() {
        use RequestStatus::*;
        let legal = [
            (PendingEvaluation, PendingEvaluation),
            (PendingEvaluation, Holding),
            (PendingEvaluation, Fulfilled),
            (PendingEvaluation, Terminal),
            (Holding, Holding),
            (Holding, Fulfilled),
            (Holding, Terminal),
            (Fulfilled, Fulfilled),
            (Fulfilled, Terminal),
            (Fulfilled, PendingEvaluation),
            (Terminal, Terminal),
        ];
        let mut count = 0;
        for from in RequestStatus::ALL {
            for to in RequestStatus::ALL {
                let expected = legal.contains(&(from, to));
                assert_eq!(from.can_transition(to), expected, "{from:?} -> {to:?}");
                count += usize::from(expected);
            }
        }
        assert_eq!(count, legal.len());
        for to in [PendingEvaluation, Holding, Fulfilled] {
            assert!(!Terminal.can_transition(to));
        }
    }

    #[test]
    fn instance_type_parsing() {
        let t: InstanceType = "g4dn.2xlarge".parse().unwrap();
        assert_eq!(t.family(), "g4dn");
        assert_eq!(t.size(), "2xlarge");
        assert_eq!(t.code(), "g4dn.2xlarge");
        assert_eq!(t.family_class(), FamilyClass::AcceleratedComputing);
        assert_eq!(
            "m5.large".parse::<InstanceType>().unwrap().family_class(),
            FamilyClass::General
        );
        assert_eq!(
            "d3en.xlarge"
                .parse::<InstanceType>()
                .unwrap()
                .family_class(),
            FamilyClass::StorageOptimized
        );
        assert_eq!(
            "zz9.large".parse::<InstanceType>(),
            Err(ModelError::UnknownFamily("zz9".into()))
        );
        assert!("c5".parse::<InstanceType>().is_err());
        assert!("c5.huge".parse::<InstanceType>().is_err());
        assert!("c5.a.b".parse::<InstanceType>().is_err());
    }

    #[test]
    fn size_ranks_are_ordered() {
        let sizes = [
            "nano", "small", "large", "xlarge", "2xlarge", "4xlarge", "24xlarge", "metal",
        ];
        let ranks: Vec<u32> = sizes.iter().map(|s| size_rank(s).unwrap()).collect();
        assert!(ranks.windows(2).all(|w| w[0] < w[1]));
        assert!(size_rank("1xlarge").is_none());
    }

    #[test]
    fn locations() {
        let az: Zone = "us-east-1a".parse().unwrap();
        assert_eq!(az.region().as_str(), "us-east-1");
        let region: Region = "eu-west-2".parse().unwrap();
        assert!(Location::new(region.clone(), Some(az)).is_err());
        assert_eq!(region.zone(2).as_str(), "eu-west-2c");
        assert!("useast1".parse::<Region>().is_err());
        assert!("us-east-1".parse::<Zone>().is_err());
        assert!("us-gov-west-1".parse::<Region>().is_ok());
    }

    #[test]
    fn record_json_line_format() {
        let rec = ArchiveRecord::new(
            parse_timestamp("2022-01-01T00:10:00Z").unwrap(),
            "p3.2xlarge".parse().unwrap(),
            Location::zone("us-east-1b".parse().unwrap()),
            Metric::PlacementScore,
            3.0,
        )
        .unwrap();
        let line = rec.to_json_line();
        assert_eq!(
            line,
            r#"{"ts":"2022-01-01T00:10:00Z","instance":"p3.2xlarge","region":"us-east-1","az":"us-east-1b","metric":"placementScore","value":3.0}"#
        );
        assert_eq!(ArchiveRecord::from_json_line(&line).unwrap(), rec);

        let bad = r#"{"ts":"2022-01-01T00:10:00Z","instance":"p3.2xlarge","region":"us-east-1","az":"us-east-1b","metric":"placementScore","value":11.0}"#;
        assert!(ArchiveRecord::from_json_line(bad).is_err());
        let region_level = r#"{"ts":"2022-01-01T00:10:00Z","instance":"p3.2xlarge","region":"us-east-1","az":null,"metric":"interruptionFree","value":2.5}"#;
        assert!(ArchiveRecord::from_json_line(region_level).is_ok());
        let zone_missing = r#"{"ts":"2022-01-01T00:10:00Z","instance":"p3.2xlarge","region":"us-east-1","az":null,"metric":"spotPrice","value":2.5}"#;
        assert!(ArchiveRecord::from_json_line(zone_missing).is_err());
    }
}
