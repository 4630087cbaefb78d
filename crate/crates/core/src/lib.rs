//! Dynamic network cartography from partial, noisy measurements.
//!
//! - [`netmodel`]: synthetic topology, routing, traffic, anomalies, sampling.
//! - [`solvers`]: proximal operators and composite convex solvers.
//! - [`traffic_dict`]: semi-supervised dictionary learning for link-count imputation.
//! - [`delay_kkf`]: kriged Kalman filtering of path delays and path selection.
//! - [`anomaly_batch`], [`anomaly_distributed`], [`anomaly_online`]:
//!   sparse-plus-low-rank anomalography, centralized, in-network and streaming.

pub mod anomaly_batch;
pub mod anomaly_distributed;
pub mod anomaly_online;
pub mod delay_kkf;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod netmodel;
pub mod solvers;
pub mod traffic_dict;

pub use error::{Error, Result};
