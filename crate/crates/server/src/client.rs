//! Blocking vendor client for the simulator facade.

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use spotarc::model::{format_timestamp, InstanceType, SpotPriceRecord, Zone};
use spotarc::planner::PlacementQuery;
use spotarc::sim::{AdvisorEntry, Catalog, ScoreEntry, SpotRequest, VendorError};
use spotarc::vendor::Vendor;
use ureq::http::Response;
use ureq::{Agent, Body};

use crate::error::vendor_error_from_body;
use crate::vendor_api::{AdvanceBody, NowBody, ScoresBody, SubmitBody};

pub struct HttpVendor {
    base: String,
    agent: Agent,
}

impl HttpVendor {
    /// `base` is the facade root, e.g. `http://127.0.0.1:8081`.
    pub fn new(base: &str) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        HttpVendor {
            base: base.trim_end_matches('/').to_string(),
            agent,
        }
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}/v1/vendor/{path}", self.base)
    }

    fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, VendorError> {
        let mut req = self.agent.get(&self.url(path));
        for (k, v) in query {
            req = req.query(*k, v);
        }
        decode(req.call().map_err(transport)?)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, VendorError> {
        decode(self.agent.post(&self.url(path)).send_json(body).map_err(transport)?)
    }
}

fn transport(e: ureq::Error) -> VendorError {
    VendorError::Transport(e.to_string())
}

fn decode<T: DeserializeOwned>(mut resp: Response<Body>) -> Result<T, VendorError> {
    let status = resp.status().as_u16();
    let body: Value = resp.body_mut().read_json().map_err(transport)?;
    if (200..300).contains(&status) {
        serde_json::from_value(body).map_err(|e| VendorError::Transport(format!("bad response body: {e}")))
    } else {
        Err(vendor_error_from_body(status, &body))
    }
}

impl Vendor for HttpVendor {
    fn catalog(&mut self) -> Result<Catalog, VendorError> {
        self.get("catalog", &[])
    }

    fn now(&mut self) -> Result<DateTime<Utc>, VendorError> {
        self.get::<NowBody>("now", &[]).map(|b| b.now)
    }

    fn advance_to(&mut self, t: DateTime<Utc>) -> Result<(), VendorError> {
        self.post::<_, NowBody>("advance", &AdvanceBody { to: t }).map(|_| ())
    }

    fn placement_scores(&mut self, account: &str, query: &PlacementQuery) -> Result<Vec<ScoreEntry>, VendorError> {
        let body = ScoresBody {
            account: account.to_string(),
            query: query.clone(),
        };
        self.post("placement-scores", &body)
    }

    fn advisor(&mut self) -> Result<Vec<AdvisorEntry>, VendorError> {
        self.get("advisor", &[])
    }

    fn price_history(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    ) -> Result<Vec<SpotPriceRecord>, VendorError> {
        self.get(
            "price-history",
            &[
                ("instance", instance.to_string()),
                ("az", az.to_string()),
                ("from", format_timestamp(from)),
                ("to", format_timestamp(to)),
            ],
        )
    }

    fn submit_spot_request(
        &mut self,
        instance: &InstanceType,
        az: &Zone,
        bid: f64,
        persistent: bool,
    ) -> Result<SpotRequest, VendorError> {
        let body = SubmitBody {
            instance: instance.clone(),
            az: az.clone(),
            bid,
            persistent,
        };
        self.post("spot-requests", &body)
    }

    fn spot_request(&mut self, id: u64) -> Result<SpotRequest, VendorError> {
        self.get(&format!("spot-requests/{id}"), &[])
    }
}
