//! HTTP surface of the archive: a read-only query and analysis API, a wire
//! facade over the vendor simulator, and a blocking client for that facade.

pub mod api;
pub mod background;
pub mod client;
pub mod error;
pub mod params;
pub mod vendor_api;

pub use api::{analysis_result, router, ApiState, ANALYSES};
pub use background::{run_forever, Background};
pub use client::HttpVendor;
pub use error::ApiError;
pub use vendor_api::vendor_router;
