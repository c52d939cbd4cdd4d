//! Scenario-driven front end for the KLJN loop simulator.
//!
//! The library half exists so integration tests (and other tools) can drive
//! runs without shelling out: [`scenario`] declares the TOML schema,
//! [`presets`] ships the built-in scenario files, [`runner`] executes them,
//! and [`plots`] turns finished runs into plot data.

// Same conventions as the core crate: NaN-rejecting `!(x > 0.0)` validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod plots;
pub mod presets;
pub mod runner;
pub mod scenario;
