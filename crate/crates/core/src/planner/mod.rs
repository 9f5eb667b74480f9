//! Placement-score query planning.
//!
//! Each instance type's supporting regions are packed into as few queries
//! as possible so that every query returns at most `capacity` per-AZ scores.
//! The resulting queries are then sharded across accounts so that no
//! account exceeds the vendor's daily unique-query allowance.

mod packing;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{InstanceType, Region};

pub use packing::{
    first_fit_decreasing, optimal_bin_count_oracle, pack, PackingError, EXACT_LIMIT, ORACLE_LIMIT,
};

/// Per-query result cap of the placement-score API.
pub const RESULT_CAP: u32 = 10;
/// Unique placement-score queries allowed per account per 24 h.
pub const DAILY_UNIQUE_QUERIES: usize = 50;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("{instance} in {region} has {az_count} AZs, more than the query capacity {capacity}")]
    RegionTooLarge {
        instance: InstanceType,
        region: Region,
        az_count: u32,
        capacity: u32,
    },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("per-account limit must be positive")]
    ZeroAccountLimit,
    #[error("{instance} in {region} has an AZ count of zero")]
    ZeroAzCount {
        instance: InstanceType,
        region: Region,
    },
    #[error("malformed support map: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which regions support each instance type, with the number of supporting
/// AZs per region. Absence means unsupported.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportMap {
    entries: BTreeMap<InstanceType, BTreeMap<Region, u32>>,
}

impl SupportMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        instance: InstanceType,
        region: Region,
        az_count: u32,
    ) -> Result<(), PlanError> {
        if az_count == 0 {
            return Err(PlanError::ZeroAzCount { instance, region });
        }
        self.entries
            .entry(instance)
            .or_default()
            .insert(region, az_count);
        Ok(())
    }

    pub fn from_json(raw: &str) -> Result<Self, PlanError> {
        let map: SupportMap = serde_json::from_str(raw)?;
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("support map serializes")
    }

    fn validate(&self) -> Result<(), PlanError> {
        for (instance, regions) in &self.entries {
            for (region, &az_count) in regions {
                if az_count == 0 {
                    return Err(PlanError::ZeroAzCount {
                        instance: instance.clone(),
                        region: region.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn types(&self) -> impl Iterator<Item = &InstanceType> {
        self.entries.keys()
    }

    pub fn regions_of(&self, instance: &InstanceType) -> Option<&BTreeMap<Region, u32>> {
        self.entries.get(instance)
    }

    pub fn az_count(&self, instance: &InstanceType, region: &Region) -> Option<u32> {
        self.entries.get(instance)?.get(region).copied()
    }

    /// Every region appearing anywhere in the map.
    pub fn regions(&self) -> BTreeSet<&Region> {
        self.entries.values().flat_map(|r| r.keys()).collect()
    }

    pub fn pairs(&self) -> BTreeSet<(InstanceType, Region)> {
        self.entries
            .iter()
            .flat_map(|(t, regions)| regions.keys().map(move |r| (t.clone(), r.clone())))
            .collect()
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }
}

/// A placement-score request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlacementQuery {
    pub instance_types: Vec<InstanceType>,
    pub regions: Vec<Region>,
    pub target_capacity: u32,
    pub single_az: bool,
}

/// What the vendor counts as one unique query. The single-AZ flag is not
/// part of it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryKey {
    pub instance_types: Vec<InstanceType>,
    pub regions: Vec<Region>,
    pub target_capacity: u32,
}

impl PlacementQuery {
    pub fn key(&self) -> QueryKey {
        let mut instance_types = self.instance_types.clone();
        instance_types.sort();
        instance_types.dedup();
        let mut regions = self.regions.clone();
        regions.sort();
        regions.dedup();
        QueryKey {
            instance_types,
            regions,
            target_capacity: self.target_capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NaiveCount {
    /// |types| x |regions| over the map's global region set.
    pub upper_bound: usize,
    /// Supported (type, region) pairs.
    pub pair_count: usize,
}

pub fn naive_query_count(map: &SupportMap) -> NaiveCount {
    NaiveCount {
        upper_bound: map.entries.len() * map.regions().len(),
        pair_count: map.pair_count(),
    }
}

/// Packs each instance type's regions into single-type, single-AZ queries
/// whose AZ sum stays within `capacity`.
pub fn plan_queries(map: &SupportMap, capacity: u32) -> Result<Vec<PlacementQuery>, PlanError> {
    if capacity == 0 {
        return Err(PlanError::ZeroCapacity);
    }
    for (instance, regions) in &map.entries {
        if let Some((region, &az_count)) = regions.iter().find(|(_, &n)| n > capacity) {
            return Err(PlanError::RegionTooLarge {
                instance: instance.clone(),
                region: region.clone(),
                az_count,
                capacity,
            });
        }
    }
    let per_type: Vec<Vec<PlacementQuery>> = map
        .entries
        .par_iter()
        .map(|(instance, regions)| {
            let names: Vec<&Region> = regions.keys().collect();
            let weights: Vec<u32> = regions.values().copied().collect();
            let bins = pack(&weights, capacity).expect("weights checked against capacity");
            bins.into_iter()
                .map(|bin| PlacementQuery {
                    instance_types: vec![instance.clone()],
                    regions: bin.into_iter().map(|i| names[i].clone()).collect(),
                    target_capacity: 1,
                    single_az: true,
                })
                .collect()
        })
        .collect();
    Ok(per_type.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountAssignment {
    pub account: String,
    pub queries: Vec<PlacementQuery>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryPlan {
    pub assignments: Vec<AccountAssignment>,
}

/// One row of the plan file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct PlanRow {
    account: String,
    instance_types: Vec<InstanceType>,
    regions: Vec<Region>,
    target_capacity: u32,
    single_az: bool,
}

impl QueryPlan {
    pub fn is_empty(&self) -> bool {
        self.assignments.iter().all(|a| a.queries.is_empty())
    }

    pub fn query_count(&self) -> usize {
        self.assignments.iter().map(|a| a.queries.len()).sum()
    }

    pub fn queries(&self) -> impl Iterator<Item = (&str, &PlacementQuery)> {
        self.assignments
            .iter()
            .flat_map(|a| a.queries.iter().map(move |q| (a.account.as_str(), q)))
    }

    /// Every (type, region) pair the plan touches, with multiplicity.
    pub fn pair_multiset(&self) -> BTreeMap<(InstanceType, Region), usize> {
        let mut out = BTreeMap::new();
        for (_, q) in self.queries() {
            for t in &q.instance_types {
                for r in &q.regions {
                    *out.entry((t.clone(), r.clone())).or_insert(0) += 1;
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<PlanRow> = self
            .queries()
            .map(|(account, q)| PlanRow {
                account: account.to_string(),
                instance_types: q.instance_types.clone(),
                regions: q.regions.clone(),
                target_capacity: q.target_capacity,
                single_az: q.single_az,
            })
            .collect();
        serde_json::to_string_pretty(&rows).expect("plan serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self, PlanError> {
        let rows: Vec<PlanRow> = serde_json::from_str(raw)?;
        let mut plan = QueryPlan::default();
        for row in rows {
            let query = PlacementQuery {
                instance_types: row.instance_types,
                regions: row.regions,
                target_capacity: row.target_capacity,
                single_az: row.single_az,
            };
            match plan.assignments.last_mut() {
                Some(last) if last.account == row.account => last.queries.push(query),
                _ => plan.assignments.push(AccountAssignment {
                    account: row.account,
                    queries: vec![query],
                }),
            }
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, PlanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn account_id(index: usize) -> String {
    format!("account-{index:03}")
}

/// Fills accounts in order, `per_account_limit` queries each.
pub fn shard_accounts(
    queries: Vec<PlacementQuery>,
    per_account_limit: usize,
) -> Result<QueryPlan, PlanError> {
    if per_account_limit == 0 {
        return Err(PlanError::ZeroAccountLimit);
    }
    let mut assignments = Vec::with_capacity(queries.len().div_ceil(per_account_limit));
    let mut queries = queries.into_iter().peekable();
    while queries.peek().is_some() {
        let chunk: Vec<PlacementQuery> = queries.by_ref().take(per_account_limit).collect();
        assignments.push(AccountAssignment {
            account: account_id(assignments.len()),
            queries: chunk,
        });
    }
    Ok(QueryPlan { assignments })
}
