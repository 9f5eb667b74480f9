//! Read-only query API over the archive.
//!
//! GET /v1/records, /v1/analysis/{name}, /v1/meta, plus the what-if
//! endpoints (/v1/whatif/scores, /v1/whatif/budget, /v1/predict) that need a
//! simulator or a trained model attached.

use std::collections::BTreeSet;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::routing::get;
use axum::{Json, Router};
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{Duration, Utc};
use lru::LruCache;
use serde_json::{json, Value};
use spotarc::analysis::{
    aggregate_heatmap, correlation_cdf, score_difference_histogram, update_frequency_cdf, value_distribution, ColDim,
    RowDim, DEFAULT_GRID_SECS,
};
use spotarc::model::{format_timestamp, InstanceType, Metric, ModelError, Region, Zone};
use spotarc::planner::{PlacementQuery, DAILY_UNIQUE_QUERIES};
use spotarc::predictor::{featurize, Model, PredictError};
use spotarc::sim::{Catalog, VendorSim};
use spotarc::store::{Cursor, KeyFilter, Store, MAX_PAGE};
use tower_http::cors::CorsLayer;

use crate::error::ApiError;
use crate::params::Params;

pub const ANALYSES: [&str; 5] = ["distribution", "correlation", "frequency", "heatmap", "difference"];
pub const INSUFFICIENT_HISTORY: &str = "insufficient history";
const MEMO_CAPACITY: usize = 64;
const RECORD_PARAMS: [&str; 8] = ["from", "to", "instanceTypes", "regions", "azs", "metrics", "cursor", "limit"];

type MemoKey = (String, Vec<(String, String)>, u64);

pub struct ApiState {
    store: Arc<Store>,
    sim: Option<(Arc<Mutex<VendorSim>>, Catalog)>,
    model: Option<Model>,
    memo: Mutex<LruCache<MemoKey, Arc<Value>>>,
}

impl ApiState {
    pub fn new(store: Arc<Store>) -> Self {
        ApiState {
            store,
            sim: None,
            model: None,
            memo: Mutex::new(LruCache::new(NonZeroUsize::new(MEMO_CAPACITY).expect("non-zero"))),
        }
    }

    pub fn with_sim(mut self, sim: Arc<Mutex<VendorSim>>) -> Self {
        let catalog = sim.lock().expect("sim lock").catalog();
        self.sim = Some((sim, catalog));
        self
    }

    pub fn with_model(mut self, model: Model) -> Self {
        self.model = Some(model);
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn memo_len(&self) -> usize {
        self.memo.lock().expect("memo lock").len()
    }

    fn catalog(&self) -> Option<&Catalog> {
        self.sim.as_ref().map(|(_, c)| c)
    }

    fn sim(&self) -> Result<&Mutex<VendorSim>, ApiError> {
        self.sim
            .as_ref()
            .map(|(s, _)| s.as_ref())
            .ok_or_else(|| ApiError::not_found("NotConfigured", "no simulator attached to this server"))
    }

    fn known_types(&self) -> BTreeSet<InstanceType> {
        let mut types: BTreeSet<InstanceType> =
            self.store.series_keys(&KeyFilter::all()).into_iter().map(|k| k.instance).collect();
        if let Some(c) = self.catalog() {
            types.extend(c.types.iter().map(|t| t.instance.clone()));
        }
        types
    }

    /// Parses an instance-type list; 404 for types neither archived nor
    /// in the simulator catalog.
    fn instance_types(&self, params: &Params, name: &str) -> Result<Vec<InstanceType>, ApiError> {
        let mut out = Vec::new();
        for raw in params.get(name).into_iter().flat_map(|s| s.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
            let t = raw.parse::<InstanceType>().map_err(|e| match e {
                ModelError::UnknownFamily(_) | ModelError::UnknownSize(_) => {
                    ApiError::not_found("UnknownInstanceType", format!("unknown instance type `{raw}`"))
                }
                other => ApiError::bad_request("InvalidParameter", format!("{name}: {other}")),
            })?;
            out.push(t);
        }
        if !out.is_empty() {
            let known = self.known_types();
            if let Some(t) = out.iter().find(|t| !known.contains(t)) {
                return Err(ApiError::not_found("UnknownInstanceType", format!("unknown instance type `{t}`")));
            }
        }
        Ok(out)
    }
}

pub fn router(state: Arc<ApiState>) -> Router {
    Router::new()
        .route("/v1/records", get(records))
        .route("/v1/analysis/{name}", get(analysis))
        .route("/v1/meta", get(meta))
        .route("/v1/whatif/scores", get(whatif_scores))
        .route("/v1/whatif/budget", get(whatif_budget))
        .route("/v1/predict", get(predict))
        .fallback(|| async { ApiError::not_found("NotFound", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub fn encode_cursor(c: &Cursor) -> String {
    URL_SAFE_NO_PAD.encode(serde_json::to_vec(c).expect("cursor serializes"))
}

pub fn decode_cursor(raw: &str) -> Result<Cursor, ApiError> {
    let bad = || ApiError::bad_request("InvalidCursor", "cursor is not one this server issued");
    let bytes = URL_SAFE_NO_PAD.decode(raw).map_err(|_| bad())?;
    serde_json::from_slice(&bytes).map_err(|_| bad())
}

async fn records(
    State(s): State<Arc<ApiState>>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    let p = Params::parse(pairs, &RECORD_PARAMS)?;
    let filter = KeyFilter {
        instances: s.instance_types(&p, "instanceTypes")?,
        regions: p.list::<Region>("regions")?,
        azs: p.list::<Zone>("azs")?,
        metrics: p.metrics("metrics")?,
    };
    let (from, to) = p.range(&s.store)?;
    let limit = match p.int("limit")? {
        None => MAX_PAGE,
        Some(n) if (1..=MAX_PAGE as i64).contains(&n) => n as usize,
        Some(n) => return Err(ApiError::bad_request("InvalidParameter", format!("limit {n} outside 1..={MAX_PAGE}"))),
    };
    let cursor = p.get("cursor").map(decode_cursor).transpose()?;
    let page = s.store.query_page(&filter, from, to, cursor.as_ref(), limit)?;
    Ok(Json(json!({
        "records": page.records,
        "nextCursor": page.next.as_ref().map(encode_cursor),
    })))
}

fn allowed_params(name: &str) -> &'static [&'static str] {
    match name {
        "distribution" | "frequency" => &["metric", "from", "to"],
        "correlation" => &["a", "b", "grid", "from", "to"],
        "heatmap" => &["metric", "rows", "cols", "from", "to"],
        _ => &["grid", "from", "to"],
    }
}

fn grid(p: &Params) -> Result<i64, ApiError> {
    match p.int("grid")? {
        None => Ok(DEFAULT_GRID_SECS),
        Some(g) if g > 0 => Ok(g),
        Some(g) => Err(ApiError::bad_request("InvalidParameter", format!("grid {g} must be positive"))),
    }
}

fn to_value<T: serde::Serialize>(v: T) -> Value {
    serde_json::to_value(v).expect("analysis result serializes")
}

/// Runs one named analysis with query-string parameters. The value is
/// what `/v1/analysis/{name}` returns under `result`.
pub fn analysis_result(store: &Store, name: &str, params: &Params) -> Result<Value, ApiError> {
    if !ANALYSES.contains(&name) {
        return Err(ApiError::not_found("UnknownAnalysis", format!("unknown analysis `{name}`")));
    }
    let (from, to) = params.range(store)?;
    let metric = |default: Option<Metric>| -> Result<Metric, ApiError> {
        match (params.metric("metric")?, default) {
            (Some(m), _) | (None, Some(m)) => Ok(m),
            (None, None) => Err(ApiError::bad_request("InvalidParameter", "missing parameter `metric`")),
        }
    };
    Ok(match name {
        "distribution" => to_value(value_distribution(store, metric(None)?, from, to)?),
        "frequency" => to_value(update_frequency_cdf(store, metric(None)?, from, to)?),
        "heatmap" => {
            let rows = match params.get("rows").unwrap_or("family") {
                "family" => RowDim::Family,
                "familyClass" => RowDim::FamilyClass,
                other => return Err(ApiError::bad_request("InvalidParameter", format!("rows: `{other}`"))),
            };
            let cols = match params.get("cols").unwrap_or("region") {
                "region" => ColDim::Region,
                "day" => ColDim::Day,
                other => return Err(ApiError::bad_request("InvalidParameter", format!("cols: `{other}`"))),
            };
            to_value(aggregate_heatmap(store, rows, cols, metric(Some(Metric::PlacementScore))?, from, to)?)
        }
        "correlation" => {
            let a = params.metric("a")?.unwrap_or(Metric::PlacementScore);
            let b = params.metric("b")?.unwrap_or(Metric::InterruptionFree);
            let cdf = correlation_cdf(store, a, b, grid(params)?, from, to)?;
            if cdf.defined() == 0 {
                return Err(ApiError::unprocessable(
                    "AllUndefined",
                    format!("none of {} series pairs has a defined correlation", cdf.keys),
                ));
            }
            to_value(cdf)
        }
        _ => to_value(score_difference_histogram(store, grid(params)?, from, to)?),
    })
}

async fn analysis(
    State(s): State<Arc<ApiState>>,
    Path(name): Path<String>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    if !ANALYSES.contains(&name.as_str()) {
        return Err(ApiError::not_found("UnknownAnalysis", format!("unknown analysis `{name}`")));
    }
    let params = Params::parse(pairs, allowed_params(&name))?;
    let key: MemoKey = (
        name.clone(),
        params.0.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        s.store.version(),
    );
    let cached = s.memo.lock().expect("memo lock").get(&key).cloned();
    let result = match cached {
        Some(v) => v,
        None => {
            let (state, n, p) = (s.clone(), name.clone(), params.clone());
            let v = tokio::task::spawn_blocking(move || analysis_result(&state.store, &n, &p))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))??;
            let v = Arc::new(v);
            s.memo.lock().expect("memo lock").put(key, v.clone());
            v
        }
    };
    Ok(Json(json!({
        "analysis": name,
        "generatedAt": format_timestamp(Utc::now()),
        "params": params.0,
        "result": *result,
    })))
}

async fn meta(State(s): State<Arc<ApiState>>) -> Json<Value> {
    let mut types = BTreeSet::new();
    let mut regions = BTreeSet::new();
    let mut azs = BTreeSet::new();
    for k in s.store.series_keys(&KeyFilter::all()) {
        types.insert(k.instance.to_string());
        regions.insert(k.region.to_string());
        if let Some(z) = k.az {
            azs.insert(z.to_string());
        }
    }
    if let Some(c) = s.catalog() {
        types.extend(c.types.iter().map(|t| t.instance.to_string()));
        for r in &c.regions {
            regions.insert(r.region.to_string());
            azs.extend(r.zones.iter().map(|z| z.to_string()));
        }
    }
    let span = s
        .store
        .span()
        .map(|(a, b)| json!({ "from": format_timestamp(a), "to": format_timestamp(b) }));
    Json(json!({
        "instanceTypes": types,
        "regions": regions,
        "azs": azs,
        "metrics": Metric::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "span": span,
        "version": s.store.version(),
        "simulator": s.sim.is_some(),
        "model": s.model.is_some(),
    }))
}

fn budget_json(sim: &VendorSim, account: &str) -> Value {
    json!({
        "account": account,
        "used": sim.budget_used(account),
        "remaining": sim.budget_remaining(account),
        "limit": DAILY_UNIQUE_QUERIES,
        "at": format_timestamp(sim.now()),
    })
}

/// Live placement scores for a candidate set, charged to `account`.
async fn whatif_scores(
    State(s): State<Arc<ApiState>>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    let p = Params::parse(pairs, &["account", "instanceTypes", "regions", "capacity", "singleAz"])?;
    let sim = s.sim()?;
    let account = p.get("account").unwrap_or("ui").to_string();
    let capacity = p.int("capacity")?.unwrap_or(1);
    let query = PlacementQuery {
        instance_types: s.instance_types(&p, "instanceTypes")?,
        regions: p.list::<Region>("regions")?,
        target_capacity: u32::try_from(capacity)
            .map_err(|_| ApiError::bad_request("InvalidParameter", format!("capacity {capacity} out of range")))?,
        single_az: p.bool("singleAz")?.unwrap_or(true),
    };
    let mut sim = sim.lock().expect("sim lock");
    let scores = sim.placement_score_query(&account, &query)?;
    Ok(Json(json!({
        "account": account,
        "queriedAt": format_timestamp(sim.now()),
        "scores": scores,
        "budget": budget_json(&sim, &account),
    })))
}

async fn whatif_budget(
    State(s): State<Arc<ApiState>>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    let p = Params::parse(pairs, &["account"])?;
    let sim = s.sim()?.lock().expect("sim lock");
    Ok(Json(budget_json(&sim, p.get("account").unwrap_or("ui"))))
}

/// Predicted outcome for one (type, AZ) from its month of history.
async fn predict(
    State(s): State<Arc<ApiState>>,
    Query(pairs): Query<Vec<(String, String)>>,
) -> Result<Json<Value>, ApiError> {
    let p = Params::parse(pairs, &["instance", "az", "asOf"])?;
    let model = s
        .model
        .as_ref()
        .ok_or_else(|| ApiError::not_found("NotConfigured", "no predictor model loaded"))?;
    let instance = s
        .instance_types(&p, "instance")?
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::bad_request("InvalidParameter", "missing parameter `instance`"))?;
    let az: Zone = p
        .require("az")?
        .parse()
        .map_err(|e: ModelError| ApiError::bad_request("InvalidParameter", format!("az: {e}")))?;
    let as_of = match p.time("asOf")? {
        Some(t) => t,
        None => match &s.sim {
            Some((sim, _)) => sim.lock().expect("sim lock").now(),
            None => s.store.span().map_or_else(Utc::now, |(_, last)| last + Duration::seconds(1)),
        },
    };
    let label = match featurize(&s.store, &instance, &az, as_of) {
        Ok(f) => model.predict(&f).as_str().to_string(),
        Err(PredictError::NoHistory) => INSUFFICIENT_HISTORY.to_string(),
        Err(e) => return Err(ApiError::internal(e.to_string())),
    };
    Ok(Json(json!({
        "instance": instance,
        "az": az,
        "asOf": format_timestamp(as_of),
        "label": label,
    })))
}
