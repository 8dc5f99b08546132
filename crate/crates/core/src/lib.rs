//! Capacity planning for attention/FFN disaggregated LLM decoding.
//!
//! [`analytic`] sizes the attention-to-FFN ratio in closed form from workload
//! statistics and latency coefficients; [`simcore`] checks those predictions
//! with a deterministic discrete-event simulation of one bundle, and
//! [`metrics`] turns simulation output into throughput, TPOT and idle ratios.

pub mod analytic;
pub mod calibrate;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod simcore;
