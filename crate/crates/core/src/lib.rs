//! Data minimization for session-based recommender systems: per-session
//! leave-one-out valuation, impact lifecycles and data-size curves.

pub mod cli;
pub mod cor;
pub mod corpus;
pub mod curve;
pub mod embed;
pub mod error;
pub mod kpi;
pub mod lifecycle;
pub mod sensitivity;
pub mod synthgen;

pub use error::{Error, Result};
