//! Profit-based fair-lending audits.
//!
//! Group-level internal rates of return are computed from loan cashflows
//! weighted by demographic proxy probabilities, risk models are checked for
//! per-group miscalibration, and regression counterfactuals estimate what a
//! demographically aware model would change. A seeded synthetic lending
//! market exercises every stage end to end.

pub mod amortization;
pub mod bootstrap;
pub mod counterfactual;
pub mod data;
pub mod demography;
pub mod error;
pub mod irr;
pub mod metrics;
pub mod pipeline;
pub mod regression;
pub mod report;
pub mod risk;
pub mod stats;
pub mod synth;

pub use error::{AuditError, Result};
