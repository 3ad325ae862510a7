//! Covariance analysis of Kalman filtering over lossy links.
//!
//! The error covariance of a filter whose measurements arrive with
//! probability `γ̄` follows a random iteration of two Riccati maps. This crate
//! provides the SPD matrix toolbox, the maps themselves, four distances on the
//! SPD cone with their matching means, a seeded simulator and exact scalar
//! results to compare against.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closed_form;
pub mod error;
pub mod ifs;
pub mod means;
pub mod metrics;
pub mod spd;
pub mod stats;
pub mod system;

pub use error::{Error, Result};
pub use means::{MeanEstimator, MeanRegistry, MeanResult};
pub use metrics::{Distance, MetricKind, MetricRegistry};
pub use spd::{SpdMatrix, SymMatrix, Symmetric};
pub use system::{ScalarSystem, SystemModel};
