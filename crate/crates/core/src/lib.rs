//! Engine for exploring clinical-trial eligibility criteria.

pub mod api;
pub mod cohort;
pub mod dsl;
pub mod ehr;
pub mod grid;
pub mod metrics;
pub mod pipeline;
pub mod results;
pub mod session;
pub mod sweep;
pub mod temporal;
