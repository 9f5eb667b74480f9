//! Wire facade over the vendor simulator, served on its own port.
//!
//! GET  /v1/vendor/catalog
//! GET  /v1/vendor/now
//! POST /v1/vendor/advance            {to}
//! POST /v1/vendor/placement-scores   {account, query}
//! GET  /v1/vendor/advisor
//! GET  /v1/vendor/price-history      ?instance&az&from&to
//! POST /v1/vendor/spot-requests      {instance, az, bid, persistent}
//! GET  /v1/vendor/spot-requests/{id}
//! GET  /v1/vendor/budget             ?account

use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use spotarc::model::{format_timestamp, InstanceType, SpotPriceRecord, Zone};
use spotarc::planner::{PlacementQuery, DAILY_UNIQUE_QUERIES};
use spotarc::sim::{AdvisorEntry, Catalog, ScoreEntry, SpotRequest, VendorSim};
use tower_http::cors::CorsLayer;

use crate::error::ApiError;

type Sim = Arc<Mutex<VendorSim>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvanceBody {
    pub to: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NowBody {
    pub now: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoresBody {
    pub account: String,
    pub query: PlacementQuery,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceHistoryParams {
    pub instance: InstanceType,
    pub az: Zone,
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitBody {
    pub instance: InstanceType,
    pub az: Zone,
    pub bid: f64,
    pub persistent: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct AccountParams {
    account: String,
}

pub fn vendor_router(sim: Sim) -> Router {
    Router::new()
        .route("/v1/vendor/catalog", get(catalog))
        .route("/v1/vendor/now", get(now))
        .route("/v1/vendor/advance", post(advance))
        .route("/v1/vendor/placement-scores", post(scores))
        .route("/v1/vendor/advisor", get(advisor))
        .route("/v1/vendor/price-history", get(price_history))
        .route("/v1/vendor/spot-requests", post(submit))
        .route("/v1/vendor/spot-requests/{id}", get(request))
        .route("/v1/vendor/budget", get(budget))
        .fallback(|| async { ApiError::not_found("NotFound", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(sim)
}

fn lock(sim: &Sim) -> std::sync::MutexGuard<'_, VendorSim> {
    sim.lock().expect("sim lock")
}

async fn catalog(State(sim): State<Sim>) -> Json<Catalog> {
    Json(lock(&sim).catalog())
}

async fn now(State(sim): State<Sim>) -> Json<NowBody> {
    Json(NowBody { now: lock(&sim).now() })
}

async fn advance(State(sim): State<Sim>, Json(body): Json<AdvanceBody>) -> Result<Json<NowBody>, ApiError> {
    let mut sim = lock(&sim);
    sim.advance_to(body.to)?;
    Ok(Json(NowBody { now: sim.now() }))
}

async fn scores(State(sim): State<Sim>, Json(body): Json<ScoresBody>) -> Result<Json<Vec<ScoreEntry>>, ApiError> {
    Ok(Json(lock(&sim).placement_score_query(&body.account, &body.query)?))
}

async fn advisor(State(sim): State<Sim>) -> Json<Vec<AdvisorEntry>> {
    Json(lock(&sim).advisor_snapshot())
}

async fn price_history(
    State(sim): State<Sim>,
    Query(p): Query<PriceHistoryParams>,
) -> Result<Json<Vec<SpotPriceRecord>>, ApiError> {
    Ok(Json(lock(&sim).price_history(&p.instance, &p.az, p.from, p.to)?))
}

async fn submit(State(sim): State<Sim>, Json(b): Json<SubmitBody>) -> Result<Json<SpotRequest>, ApiError> {
    Ok(Json(lock(&sim).submit_spot_request(&b.instance, &b.az, b.bid, b.persistent)?))
}

async fn request(State(sim): State<Sim>, Path(id): Path<u64>) -> Result<Json<SpotRequest>, ApiError> {
    Ok(Json(lock(&sim).spot_request(id)?))
}

async fn budget(State(sim): State<Sim>, Query(p): Query<AccountParams>) -> Json<Value> {
    let sim = lock(&sim);
    Json(json!({
        "account": p.account,
        "used": sim.budget_used(&p.account),
        "remaining": sim.budget_remaining(&p.account),
        "limit": DAILY_UNIQUE_QUERIES,
        "at": format_timestamp(sim.now()),
    }))
}
