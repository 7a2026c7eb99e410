//! Estimating city-level travel patterns from street imagery.
//!
//! The pipeline runs in the order of the modules below: sample street
//! locations from a road network, resolve them to dated panoramas, collect
//! human annotations of road users, collapse those into per-city counts,
//! and fit and cross-validate regression models that predict commute mode
//! shares and walking/cycling participation.

pub mod geo;
pub mod imagery;
pub mod sampling;
pub mod stats;
pub mod annotation;
pub mod aggregation;
pub mod harness;
pub mod gender;
