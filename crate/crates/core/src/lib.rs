//! Prompt-aware scheduling for text-to-image serving clusters that use
//! approximate caching, plus a deterministic discrete-event simulator and
//! the baselines it is compared against.
//!
//! The main entry points are [`controller::controller_tick`] (periodic
//! resource decisions), the [`dispatcher`] functions (per-prompt routing and
//! batching), and [`sim::simulate`] (an end-to-end run from a [`Config`]).

// `!(x > 0.0)` is how validation rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cache;
pub mod config;
pub mod controller;
pub mod dispatcher;
pub mod domain;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod rng;
pub mod sim;
pub mod workload;

pub use config::{validate_config, Config};
pub use domain::{ClusterAssignment, Histogram, KGrid, KLevel, LatencyProfile, Prompt, QualityProfile, RoutePlan};
pub use error::{Error, Result, Violation};
pub use metrics::{MetricsLog, RunSummary};
pub use sim::{run, simulate};
