//! Query-string parameters: one value per name, comma-separated lists.

use std::collections::BTreeMap;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use spotarc::model::{parse_timestamp, Metric};
use spotarc::store::Store;

use crate::error::ApiError;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Params(pub BTreeMap<String, String>);

impl Params {
    /// Rejects repeated and unrecognized names.
    pub fn parse(pairs: Vec<(String, String)>, allowed: &[&str]) -> Result<Self, ApiError> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if !allowed.contains(&k.as_str()) {
                return Err(ApiError::bad_request(
                    "InvalidParameter",
                    format!("unknown parameter `{k}`; expected one of {}", allowed.join(", ")),
                ));
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(ApiError::bad_request("InvalidParameter", format!("parameter `{k}` given twice")));
            }
        }
        Ok(Params(map))
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name).map(String::as_str)
    }

    pub fn require(&self, name: &str) -> Result<&str, ApiError> {
        self.get(name)
            .ok_or_else(|| ApiError::bad_request("InvalidParameter", format!("missing parameter `{name}`")))
    }

    pub fn time(&self, name: &str) -> Result<Option<DateTime<Utc>>, ApiError> {
        self.get(name)
            .map(|raw| parse_timestamp(raw).map_err(|e| ApiError::bad_request("InvalidParameter", format!("{name}: {e}"))))
            .transpose()
    }

    pub fn int(&self, name: &str) -> Result<Option<i64>, ApiError> {
        self.get(name)
            .map(|raw| {
                raw.parse::<i64>()
                    .map_err(|_| ApiError::bad_request("InvalidParameter", format!("{name}: `{raw}` is not an integer")))
            })
            .transpose()
    }

    pub fn bool(&self, name: &str) -> Result<Option<bool>, ApiError> {
        self.get(name)
            .map(|raw| match raw {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(ApiError::bad_request("InvalidParameter", format!("{name}: `{raw}` is not a boolean"))),
            })
            .transpose()
    }

    pub fn list<T>(&self, name: &str) -> Result<Vec<T>, ApiError>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        split(self.get(name))
            .map(|item| item.parse::<T>().map_err(|e| ApiError::bad_request("InvalidParameter", format!("{name}: {e}"))))
            .collect()
    }

    pub fn metric(&self, name: &str) -> Result<Option<Metric>, ApiError> {
        self.get(name).map(parse_metric).transpose()
    }

    pub fn metrics(&self, name: &str) -> Result<Vec<Metric>, ApiError> {
        split(self.get(name)).map(parse_metric).collect()
    }

    /// `[from, to]`, defaulting to the archive span.
    pub fn range(&self, store: &Store) -> Result<(DateTime<Utc>, DateTime<Utc>), ApiError> {
        let (from, to) = (self.time("from")?, self.time("to")?);
        let (lo, hi) = spotarc::analysis::archive_range(store);
        let range = match (from, to) {
            (Some(f), Some(t)) => (f, t),
            (Some(f), None) => (f, hi.max(f)),
            (None, Some(t)) => (lo.min(t), t),
            (None, None) => (lo, hi),
        };
        if range.0 > range.1 {
            return Err(ApiError::bad_request("RangeInverted", "from is after to"));
        }
        Ok(range)
    }
}

fn split(raw: Option<&str>) -> impl Iterator<Item = &str> {
    raw.into_iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty())
}

fn parse_metric(raw: &str) -> Result<Metric, ApiError> {
    raw.parse::<Metric>().map_err(|e| ApiError::bad_request("UnknownMetric", e.to_string()))
}
