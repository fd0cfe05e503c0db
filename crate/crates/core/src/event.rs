//! Events, traces and logs.
//!
//! Every event belongs to one of four layers. Inside a trace events are kept in
//! canonical order: timestamp first, then layer, then the ordinal the event got
//! from its source. Calculated layers therefore sort after the business events
//! that caused them when both happen on the same day.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A UTC instant.
pub type Timestamp = DateTime<Utc>;

/// Origin of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "business_flow")]
    BusinessFlow,
    #[serde(rename = "compliance_check")]
    ComplianceCheck,
    #[serde(rename = "violation")]
    ComplianceViolation,
    #[serde(rename = "follow_up")]
    ComplianceFollowUp,
}

impl Layer {
    pub const ALL: [Layer; 4] = [
        Layer::BusinessFlow,
        Layer::ComplianceCheck,
        Layer::ComplianceViolation,
        Layer::ComplianceFollowUp,
    ];

    /// Name used in event files.
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::BusinessFlow => "business_flow",
            Layer::ComplianceCheck => "compliance_check",
            Layer::ComplianceViolation => "violation",
            Layer::ComplianceFollowUp => "follow_up",
        }
    }

    /// Fill color used by timelines, process models and reports.
    pub fn color(self) -> &'static str {
        match self {
            Layer::BusinessFlow => "blue",
            Layer::ComplianceCheck => "green",
            Layer::ComplianceViolation => "red",
            Layer::ComplianceFollowUp => "orange",
        }
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown layer `{0}` (expected business_flow, compliance_check, violation or follow_up)")]
pub struct UnknownLayer(pub String);

impl FromStr for Layer {
    type Err = UnknownLayer;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "business_flow" => Ok(Layer::BusinessFlow),
            "compliance_check" => Ok(Layer::ComplianceCheck),
            "violation" => Ok(Layer::ComplianceViolation),
            "follow_up" => Ok(Layer::ComplianceFollowUp),
            other => Err(UnknownLayer(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed timestamp `{0}` (expected YYYY-MM-DD or YYYY-MM-DDTHH:MM:SSZ)")]
pub struct TimestampError(pub String);

/// Parses `YYYY-MM-DD` (midnight UTC) or `YYYY-MM-DDTHH:MM:SSZ`.
pub fn parse_timestamp(raw: &str) -> Result<Timestamp, TimestampError> {
    let s = raw.trim();
    let err = || TimestampError(raw.to_string());
    if s.len() == 10 {
        let date = NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| err())?;
        return Ok(date.and_time(NaiveTime::MIN).and_utc());
    }
    let body = s.strip_suffix('Z').ok_or_else(err)?;
    let naive = NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M:%S").map_err(|_| err())?;
    Ok(naive.and_utc())
}

/// Inverse of [`parse_timestamp`]: midnight instants print as bare dates.
pub fn format_timestamp(ts: &Timestamp) -> String {
    if ts.time() == NaiveTime::MIN {
        ts.format("%Y-%m-%d").to_string()
    } else {
        let ts = ts.with_nanosecond(0).unwrap_or(*ts);
        ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
    }
}

/// One activity occurrence in a case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub case_id: String,
    pub activity: String,
    pub timestamp: Timestamp,
    pub layer: Layer,
    pub ordinal: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attributes: BTreeMap<String, String>,
}

/// Sort key of the canonical order.
pub type EventKey = (Timestamp, Layer, u64);

impl Event {
    pub fn new(
        case_id: impl Into<String>,
        activity: impl Into<String>,
        timestamp: Timestamp,
        layer: Layer,
        ordinal: u64,
    ) -> Self {
        Event {
            case_id: case_id.into(),
            activity: activity.into(),
            timestamp,
            layer,
            ordinal,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn key(&self) -> EventKey {
        (self.timestamp, self.layer, self.ordinal)
    }
}

/// The events of one case in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub case_id: String,
    pub events: Vec<Event>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub case_attributes: BTreeMap<String, String>,
}

impl Trace {
    pub fn new(case_id: impl Into<String>) -> Self {
        Trace {
            case_id: case_id.into(),
            events: Vec::new(),
            case_attributes: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_canonical(&self) -> bool {
        self.events.windows(2).all(|w| w[0].key() <= w[1].key())
    }
}

/// Sorts a trace by `(timestamp, layer, ordinal)`. Stable and idempotent.
pub fn canonical_order(mut trace: Trace) -> Trace {
    trace.events.sort_by_key(Event::key);
    trace
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("event {ordinal} of case `{case_id}` has an empty activity")]
    EmptyActivity { case_id: String, ordinal: u64 },
    #[error("duplicate event (case `{case_id}`, layer {layer}, ordinal {ordinal})")]
    DuplicateEvent { case_id: String, layer: Layer, ordinal: u64 },
    #[error(
        "event (case `{case_id}`, layer {layer}, ordinal {ordinal}) appears in both `{first}` and `{second}`"
    )]
    MergeConflict {
        case_id: String,
        layer: Layer,
        ordinal: u64,
        first: String,
        second: String,
    },
    #[error("ordinal overflow while merging {sources} logs")]
    OrdinalOverflow { sources: usize },
}

/// A set of traces keyed by case id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLog {
    pub traces: BTreeMap<String, Trace>,
    pub source: String,
}

impl EventLog {
    pub fn new(source: impl Into<String>) -> Self {
        EventLog { traces: BTreeMap::new(), source: source.into() }
    }

    /// Groups events into traces, validates them and sorts every trace.
    pub fn from_events(
        source: impl Into<String>,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<Self, LogError> {
        let mut log = EventLog::new(source);
        let mut seen = BTreeSet::new();
        for event in events {
            if event.activity.trim().is_empty() {
                return Err(LogError::EmptyActivity {
                    case_id: event.case_id,
                    ordinal: event.ordinal,
                });
            }
            if !seen.insert((event.case_id.clone(), event.layer, event.ordinal)) {
                return Err(LogError::DuplicateEvent {
                    case_id: event.case_id,
                    layer: event.layer,
                    ordinal: event.ordinal,
                });
            }
            log.traces
                .entry(event.case_id.clone())
                .or_insert_with(|| Trace::new(event.case_id.clone()))
                .events
                .push(event);
        }
        for trace in log.traces.values_mut() {
            trace.events.sort_by_key(Event::key);
        }
        Ok(log)
    }

    pub fn trace(&self, case_id: &str) -> Option<&Trace> {
        self.traces.get(case_id)
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.traces.values().flat_map(|t| t.events.iter())
    }

    pub fn event_count(&self) -> usize {
        self.traces.values().map(Trace::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn activities(&self) -> BTreeSet<String> {
        self.events().map(|e| e.activity.clone()).collect()
    }

    /// Attaches case attributes; existing values win.
    pub fn set_case_attributes(&mut self, attributes: &BTreeMap<String, BTreeMap<String, String>>) {
        for (case_id, attrs) in attributes {
            if let Some(trace) = self.traces.get_mut(case_id) {
                for (k, v) in attrs {
                    trace.case_attributes.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
        }
    }
}

/// Unions several logs into one.
///
/// The `(case_id, layer, ordinal)` triples of the inputs must be disjoint.
/// Ordinals are re-assigned as `ordinal * logs.len() + source_index`, which keeps
/// every source's order, makes them unique across sources and does not move
/// when a source grows by appending.
pub fn merge_logs(logs: &[EventLog]) -> Result<EventLog, LogError> {
    let n = logs.len();
    if n == 1 {
        return Ok(logs[0].clone());
    }
    let mut owner: BTreeMap<(&str, Layer, u64), usize> = BTreeMap::new();
    for (idx, log) in logs.iter().enumerate() {
        for event in log.events() {
            if let Some(&first) = owner.get(&(event.case_id.as_str(), event.layer, event.ordinal)) {
                return Err(LogError::MergeConflict {
                    case_id: event.case_id.clone(),
                    layer: event.layer,
                    ordinal: event.ordinal,
                    first: logs[first].source.clone(),
                    second: log.source.clone(),
                });
            }
            owner.insert((event.case_id.as_str(), event.layer, event.ordinal), idx);
        }
    }

    let source = logs.iter().map(|l| l.source.as_str()).collect::<Vec<_>>().join(" + ");
    let mut merged = EventLog::new(source);
    for (idx, log) in logs.iter().enumerate() {
        for (case_id, trace) in &log.traces {
            let target = merged
                .traces
                .entry(case_id.clone())
                .or_insert_with(|| Trace::new(case_id.clone()));
            for (k, v) in &trace.case_attributes {
                target.case_attributes.entry(k.clone()).or_insert_with(|| v.clone());
            }
            for event in &trace.events {
                let ordinal = event
                    .ordinal
                    .checked_mul(n as u64)
                    .and_then(|o| o.checked_add(idx as u64))
                    .ok_or(LogError::OrdinalOverflow { sources: n })?;
                let mut event = event.clone();
                event.ordinal = ordinal;
                target.events.push(event);
            }
        }
    }
    for trace in merged.traces.values_mut() {
        trace.events.sort_by_key(Event::key);
    }
    Ok(merged)
}

/// `activity@date#ordinal`, used in evidence summaries.
pub fn event_reference(activity: &str, ts: &Timestamp, ordinal: u64) -> String {
    format!("{}@{}#{}", activity, format_timestamp(ts), ordinal)
}
