//! Spot instance dataset archive.
//!
//! Plans placement-score collection under vendor query limits, simulates a
//! vendor with the three spot data feeds, archives observations as time
//! series, analyzes them, runs request-outcome experiments and trains an
//! outcome predictor on the archived history.

pub mod model;
pub mod planner;
pub mod sim;
pub mod store;
pub mod vendor;
pub mod collector;
pub mod analysis;
pub mod experiment;
pub mod predictor;
