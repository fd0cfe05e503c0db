//! Continuous compliance over layered event logs.
//!
//! Business-flow and compliance-check events are evaluated against a registry of
//! declarative compliance rules. Every detected breach becomes a calculated event
//! in its own violation layer, follow-up actions become a fourth layer, and the
//! stacked log feeds process models, lead-time analytics and a rule/case
//! violation network.
//!
//! This crate is `no_std` (it needs `alloc`). Reading files, talking to webhooks
//! and the command line live in the `ccl` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod analytics;
pub mod crl;
pub mod engine;
pub mod event;
pub mod followup;
pub mod layers;
pub mod network;

#[cfg(feature = "testing")]
pub mod testing;

pub use crl::{parse_registry, pretty_print, validate_registry, ComplianceRule, RulePattern, RuleRegistry};
pub use engine::{Engine, EngineCheckpoint, ViolationRecord};
pub use event::{canonical_order, merge_logs, Event, EventLog, Layer, Timestamp, Trace};
pub use layers::MultiLayerLog;
