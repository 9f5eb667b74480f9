//! JSON error bodies: `{code, message}`.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};
use spotarc::analysis::AnalysisError;
use spotarc::sim::VendorError;
use spotarc::store::StoreError;

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
    /// Structured payload of a vendor error, for wire clients.
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.to_string(),
            message: message.into(),
            detail: None,
        }
    }

    pub fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    pub fn body(&self) -> Value {
        let mut body = json!({ "code": self.code, "message": self.message });
        if let Some(d) = &self.detail {
            body["detail"] = d.clone();
        }
        body
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", self.status.as_u16(), self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::RangeInverted => ApiError::bad_request("RangeInverted", e.to_string()),
            StoreError::ZeroGrid => ApiError::bad_request("InvalidParameter", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Store(s) => s.into(),
            AnalysisError::UnsupportedMetric(_) => ApiError::bad_request("UnsupportedMetric", e.to_string()),
            AnalysisError::OffGrid { .. } => ApiError::unprocessable("OffGrid", e.to_string()),
            AnalysisError::LengthMismatch(..) | AnalysisError::TooShort(_) => {
                ApiError::unprocessable("InsufficientData", e.to_string())
            }
        }
    }
}

pub fn vendor_status(e: &VendorError) -> StatusCode {
    match e {
        VendorError::QueryBudgetExhausted { .. } => StatusCode::TOO_MANY_REQUESTS,
        VendorError::UnknownRegion(_)
        | VendorError::UnknownType(_)
        | VendorError::UnknownLocation { .. }
        | VendorError::UnknownRequest(_) => StatusCode::NOT_FOUND,
        VendorError::Transport(_) => StatusCode::BAD_GATEWAY,
        VendorError::InvalidUniverse(_) => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

impl From<VendorError> for ApiError {
    fn from(e: VendorError) -> Self {
        let detail = serde_json::to_value(&e).ok().and_then(|v| v.get("detail").cloned());
        ApiError {
            status: vendor_status(&e),
            code: e.code().to_string(),
            message: e.to_string(),
            detail,
        }
    }
}

/// Rebuilds a vendor error from a wire body; unknown shapes become
/// transport errors.
pub fn vendor_error_from_body(status: u16, body: &Value) -> VendorError {
    let mut tagged = serde_json::Map::new();
    if let Some(code) = body.get("code") {
        tagged.insert("code".into(), code.clone());
    }
    if let Some(detail) = body.get("detail") {
        tagged.insert("detail".into(), detail.clone());
    }
    serde_json::from_value(Value::Object(tagged)).unwrap_or_else(|_| {
        let message = body.get("message").and_then(Value::as_str).unwrap_or("no message");
        VendorError::Transport(format!("status {status}: {message}"))
    })
}
