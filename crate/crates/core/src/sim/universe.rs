//! Simulated universe definition: regions, instance types, support and
//! optional initial bands.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Band3, FamilyClass, InstanceType, Region, Zone};
use crate::planner::SupportMap;

use super::SimError;

pub const DEFAULT_START: &str = "2022-01-01T00:00:00Z";

const REGION_POOL: &[&str] = &[
    "us-east-1",
    "us-west-2",
    "eu-west-1",
    "ap-northeast-1",
    "eu-central-1",
    "us-east-2",
    "ap-southeast-1",
    "us-west-1",
    "ap-south-1",
    "eu-west-2",
    "ap-northeast-2",
    "ap-southeast-2",
    "ca-central-1",
    "sa-east-1",
    "eu-north-1",
    "eu-west-3",
    "ap-northeast-3",
    "me-south-1",
    "af-south-1",
    "eu-south-1",
];

// Generator order; earlier families are picked first.
const FAMILY_POOL: &[&str] = &[
    "m5", "c5", "r5", "g4dn", "i3", "t3", "c5a", "r5a", "p3", "d3", "m6i", "c6i", "x1e", "inf1",
    "m5a", "i3en", "r6i", "g5", "c5n", "m5n", "z1d", "p2", "d2", "t3a", "c6a", "r5n", "g3", "h1",
    "m6a", "dl1",
];

const SIZE_POOL: &[&str] = &["large", "xlarge", "2xlarge", "4xlarge"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegionSpec {
    pub code: Region,
    pub az_count: u32,
}

impl RegionSpec {
    pub fn zones(&self) -> Vec<Zone> {
        (0..self.az_count as usize)
            .map(|i| self.code.zone(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TypeSpec {
    pub instance: InstanceType,
    pub on_demand_usd: f64,
    /// Region -> number of supporting AZs (the first N zones of the region).
    pub support: BTreeMap<Region, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InitialBand {
    pub instance: InstanceType,
    pub az: Zone,
    pub sps: Band3,
    #[serde(rename = "if")]
    pub if_band: Band3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Universe {
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    pub regions: Vec<RegionSpec>,
    pub types: Vec<TypeSpec>,
    #[serde(default)]
    pub initial_bands: Vec<InitialBand>,
}

fn default_start() -> DateTime<Utc> {
    crate::model::parse_timestamp(DEFAULT_START).expect("valid constant")
}

impl Universe {
    pub fn from_json(raw: &str) -> Result<Self, SimError> {
        let universe: Universe =
            serde_json::from_str(raw).map_err(|e| SimError::InvalidUniverse(e.to_string()))?;
        universe.validate()?;
        Ok(universe)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidUniverse(format!("{}: {e}", path.display())))?;
        Self::from_json(&raw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("universe serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let mut seen = BTreeMap::new();
        for r in &self.regions {
            if r.az_count == 0 || r.az_count > 26 {
                return Err(SimError::InvalidUniverse(format!(
                    "region {} has {} AZs",
                    r.code, r.az_count
                )));
            }
            if seen.insert(r.code.clone(), r.az_count).is_some() {
                return Err(SimError::InvalidUniverse(format!(
                    "duplicate region {}",
                    r.code
                )));
            }
        }
        let mut types = std::collections::BTreeSet::new();
        for t in &self.types {
            if !types.insert(&t.instance) {
                return Err(SimError::InvalidUniverse(format!(
                    "duplicate type {}",
                    t.instance
                )));
            }
            if t.on_demand_usd.is_nan() || t.on_demand_usd <= 0.0 {
                return Err(SimError::InvalidUniverse(format!(
                    "{} needs a positive on-demand price",
                    t.instance
                )));
            }
            for (region, &n) in &t.support {
                match seen.get(region) {
                    Some(&azs) if n >= 1 && n <= azs => {}
                    Some(_) => {
                        return Err(SimError::InvalidUniverse(format!(
                            "{} supports {n} AZs in {region}",
                            t.instance
                        )))
                    }
                    None => {
                        return Err(SimError::InvalidUniverse(format!(
                            "{} references unknown region {region}",
                            t.instance
                        )))
                    }
                }
            }
        }
        for band in &self.initial_bands {
            let supported = self
                .types
                .iter()
                .find(|t| t.instance == band.instance)
                .and_then(|t| t.support.get(&band.az.region()))
                .is_some_and(|&n| self.zone_index(&band.az).is_some_and(|i| i < n as usize));
            if !supported {
                return Err(SimError::InvalidUniverse(format!(
                    "initial band for unsupported pair {} {}",
                    band.instance, band.az
                )));
            }
        }
        Ok(())
    }

    fn zone_index(&self, az: &Zone) -> Option<usize> {
        let region = az.region();
        self.regions
            .iter()
            .find(|r| r.code == region)?
            .zones()
            .iter()
            .position(|z| z == az)
    }

    pub fn support_map(&self) -> SupportMap {
        let mut map = SupportMap::new();
        for t in &self.types {
            for (region, &n) in &t.support {
                map.insert(t.instance.clone(), region.clone(), n)
                    .expect("validated AZ count");
            }
        }
        map
    }

    /// Supporting zones of a type, in region then zone order.
    pub fn zones_of(&self, spec: &TypeSpec) -> Vec<Zone> {
        spec.support
            .iter()
            .flat_map(|(region, &n)| (0..n as usize).map(move |i| region.zone(i)))
            .collect()
    }

    /// Seeded synthetic universe. Types cycle through sizes within each
    /// family, so `n_types / 4` families each get four sizes.
    pub fn generate(seed: u64, n_types: usize, n_regions: usize, max_az: u32) -> Universe {
        assert!(
            n_regions <= REGION_POOL.len(),
            "at most {} regions",
            REGION_POOL.len()
        );
        assert!(n_types <= FAMILY_POOL.len() * SIZE_POOL.len());
        assert!((1..=26).contains(&max_az));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let regions: Vec<RegionSpec> = REGION_POOL[..n_regions]
            .iter()
            .map(|code| RegionSpec {
                code: code.parse().expect("valid region"),
                az_count: rng.random_range(2.min(max_az)..=max_az),
            })
            .collect();
        let types = (0..n_types)
            .map(|i| {
                let family = FAMILY_POOL[i / SIZE_POOL.len()];
                let size = SIZE_POOL[i % SIZE_POOL.len()];
                let instance = InstanceType::new(family, size).expect("pool entries are valid");
                let class = instance.family_class();
                let p_supported = match class {
                    FamilyClass::AcceleratedComputing => 0.55,
                    FamilyClass::StorageOptimized => 0.7,
                    _ => 0.85,
                };
                let mut support = BTreeMap::new();
                for (r, region) in regions.iter().enumerate() {
                    // the first region carries every type
                    if r == 0 || rng.random_bool(p_supported) {
                        let n = if rng.random_bool(0.7) {
                            region.az_count
                        } else {
                            rng.random_range(1..=region.az_count)
                        };
                        support.insert(region.code.clone(), n);
                    }
                }
                TypeSpec {
                    on_demand_usd: on_demand_price(&instance),
                    instance,
                    support,
                }
            })
            .collect();
        Universe {
            start: default_start(),
            regions,
            types,
            initial_bands: Vec::new(),
        }
    }

    /// Every type offered in every AZ of every region.
    pub fn full(types: &[&str], regions: &[(&str, u32)]) -> Universe {
        let regions: Vec<RegionSpec> = regions
            .iter()
            .map(|(code, n)| RegionSpec {
                code: code.parse().expect("valid region"),
                az_count: *n,
            })
            .collect();
        let types = types
            .iter()
            .map(|code| {
                let instance: InstanceType = code.parse().expect("valid type");
                TypeSpec {
                    on_demand_usd: on_demand_price(&instance),
                    support: regions
                        .iter()
                        .map(|r| (r.code.clone(), r.az_count))
                        .collect(),
                    instance,
                }
            })
            .collect();
        Universe {
            start: default_start(),
            regions,
            types,
            initial_bands: Vec::new(),
        }
    }

    /// The 60 type x 8 region x up to 4 AZ default universe.
    pub fn default_with_seed(seed: u64) -> Universe {
        Universe::generate(seed, 60, 8, 4)
    }
}

fn on_demand_price(instance: &InstanceType) -> f64 {
    let base = match instance.family_class() {
        FamilyClass::General => 0.096,
        FamilyClass::ComputeOptimized => 0.085,
        FamilyClass::MemoryOptimized => 0.126,
        FamilyClass::AcceleratedComputing => 0.526,
        FamilyClass::StorageOptimized => 0.156,
    };
    let multiplier = size_multiplier(instance.size());
    ((base * multiplier) * 10_000.0).round() / 10_000.0
}

/// Capacity of a size relative to `large`.
fn size_multiplier(size: &str) -> f64 {
    match size {
        "nano" | "micro" | "small" | "medium" => 0.5,
        "large" => 1.0,
        "xlarge" => 2.0,
        s if s.starts_with("metal") => 48.0,
        s => s
            .strip_suffix("xlarge")
            .and_then(|k| k.parse::<f64>().ok())
            .map_or(1.0, |k| 2.0 * k),
    }
}

/// Long-run availability propensity of a type in [0.05, 0.95]; lower for
/// accelerated families and for larger sizes.
pub fn propensity(instance: &InstanceType) -> f64 {
    let class = match instance.family_class() {
        FamilyClass::General => 0.85,
        FamilyClass::ComputeOptimized => 0.8,
        FamilyClass::MemoryOptimized => 0.75,
        FamilyClass::AcceleratedComputing => 0.4,
        FamilyClass::StorageOptimized => 0.65,
    };
    let step = size_multiplier(instance.size()).log2().max(0.0);
    (class - 0.1 * step).clamp(0.05, 0.95)
}
