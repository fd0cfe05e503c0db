//! Rule evaluation and the calculated violation layer.
//!
//! Semantics per pattern, over a trace in canonical order:
//!
//! * **Precedence** – a target with no earlier guard is a violation. It is
//!   stamped with the first later guard if that guard comes no later than the
//!   next completion event, otherwise (completion first) with the target itself.
//!   Until one of the two happens the target is pending and nothing is emitted.
//! * **Absence** – every occurrence, stamped with itself.
//! * **Existence** – at the first completion event, if the activity has not
//!   occurred yet; stamped with the completion.
//! * **Response** – a trigger is satisfied by a response that comes before the
//!   next completion and within the deadline. Otherwise it is stamped with the
//!   completion when that comes first, or with `trigger + deadline` once the
//!   clock is strictly past it.
//! * **Content** – each event (or the case, at its first event) whose attribute
//!   fails the predicate. Missing attributes are not checked.
//!
//! One violation is emitted per offending occurrence. Its dedup key is
//! `case_id|rule_id|ordinal` of the primary offending event.

mod automaton;
mod checkpoint;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crl::RuleRegistry;
use crate::event::{event_reference, format_timestamp, Event, EventLog, Layer, Timestamp, Trace};

pub use automaton::EvidenceRef;
use automaton::{Context, Finding, RuleState};
pub use checkpoint::{CaseState, EngineCheckpoint, Watermark, CHECKPOINT_SCHEMA};

/// Completion activity assumed when none is configured.
pub const DEFAULT_COMPLETION: &str = "Completed";

/// A detected breach of one rule in one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub case_id: String,
    pub rule_id: String,
    pub violation_ts: Timestamp,
    pub detection_ts: Timestamp,
    /// The first entry is the primary offending event.
    pub evidence: Vec<EvidenceRef>,
    pub dedup_key: String,
}

impl ViolationRecord {
    pub fn primary_ordinal(&self) -> u64 {
        self.evidence.first().map_or(0, |e| e.ordinal)
    }

    /// Sort key of every violation list this crate returns.
    pub fn order_key(&self) -> (Timestamp, &str, &str, u64) {
        (self.violation_ts, &self.rule_id, &self.case_id, self.primary_ordinal())
    }

    pub fn evidence_summary(&self) -> String {
        self.evidence
            .iter()
            .map(|e| event_reference(&e.activity, &e.timestamp, e.ordinal))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

pub fn dedup_key(case_id: &str, rule_id: &str, ordinal: u64) -> String {
    format!("{case_id}|{rule_id}|{ordinal}")
}

/// Activity name of a calculated violation event.
pub fn violation_activity(rule_id: &str) -> String {
    format!("Continuous Audit finding; {rule_id} violation")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("clock {clock} is earlier than event at {event} in case `{case_id}`")]
    ClockBehindEvents { case_id: String, clock: String, event: String },
    #[error("trace of case `{case_id}` is not in canonical order")]
    NotCanonical { case_id: String },
    #[error("stale run: clock {clock} is earlier than the previous run at {previous}")]
    ClockRegression { clock: String, previous: String },
}

/// Evaluates a rule registry over traces.
#[derive(Debug, Clone)]
pub struct Engine<'r> {
    registry: &'r RuleRegistry,
    completion: BTreeSet<String>,
}

impl<'r> Engine<'r> {
    pub fn new(registry: &'r RuleRegistry) -> Self {
        let completion = [DEFAULT_COMPLETION.to_string()].into_iter().collect();
        Engine { registry, completion }
    }

    /// Replaces the set of activities that mark a case as complete.
    pub fn with_completion<I, S>(mut self, activities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.completion = activities.into_iter().map(Into::into).collect();
        self
    }

    pub fn registry(&self) -> &RuleRegistry {
        self.registry
    }

    pub fn completion(&self) -> &BTreeSet<String> {
        &self.completion
    }

    /// All violations of `trace` as seen at `clock`, sorted by
    /// `(violation_ts, rule_id)`.
    pub fn evaluate_case(&self, trace: &Trace, clock: Timestamp) -> Result<Vec<ViolationRecord>, EngineError> {
        check_trace(trace, clock)?;
        let mut state = CaseState::default();
        let mut out = Vec::new();
        self.advance(&mut state, trace, &trace.events, clock, &mut out);
        out.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Ok(out)
    }

    /// Violations of every trace in `log`.
    pub fn evaluate_records(&self, log: &EventLog, clock: Timestamp) -> Result<Vec<ViolationRecord>, EngineError> {
        let mut all = Vec::new();
        for trace in log.traces.values() {
            all.extend(self.evaluate_case(trace, clock)?);
        }
        all.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        Ok(all)
    }

    /// The calculated violation layer of `log`.
    pub fn evaluate_log(&self, log: &EventLog, clock: Timestamp) -> Result<EventLog, EngineError> {
        let records = self.evaluate_records(log, clock)?;
        Ok(violation_layer(&records))
    }

    /// Feeds `events` (all of the same case, canonical, past the watermark)
    /// and then applies the clock.
    fn advance(
        &self,
        state: &mut CaseState,
        trace: &Trace,
        events: &[Event],
        clock: Timestamp,
        out: &mut Vec<ViolationRecord>,
    ) {
        self.sync_rules(state);
        let ctx = Context {
            registry: self.registry,
            completion: &self.completion,
            case_attributes: &trace.case_attributes,
        };
        let mut findings: Vec<(usize, Finding)> = Vec::new();
        let mut buf = Vec::new();
        for event in events {
            for (idx, rule) in self.registry.rules.iter().enumerate() {
                let slot = state.rules.get_mut(&rule.rule_id).expect("synced");
                slot.state.feed(&rule.pattern, event, &ctx, &mut buf);
                findings.extend(buf.drain(..).map(|f| (idx, f)));
            }
            state.watermark = Some(Watermark::of(event));
        }
        for (idx, rule) in self.registry.rules.iter().enumerate() {
            let slot = state.rules.get_mut(&rule.rule_id).expect("synced");
            slot.state.finish(&rule.pattern, clock, &mut buf);
            findings.extend(buf.drain(..).map(|f| (idx, f)));
        }
        for (idx, finding) in findings {
            let rule_id = &self.registry.rules[idx].rule_id;
            let primary = finding.evidence[0].ordinal;
            out.push(ViolationRecord {
                case_id: trace.case_id.clone(),
                rule_id: rule_id.clone(),
                violation_ts: finding.violation_ts,
                detection_ts: clock,
                evidence: finding.evidence,
                dedup_key: dedup_key(&trace.case_id, rule_id, primary),
            });
        }
    }

    /// Drops state of removed rules and restarts rules whose text changed.
    fn sync_rules(&self, state: &mut CaseState) {
        state.rules.retain(|id, _| self.registry.rule(id).is_some());
        for rule in &self.registry.rules {
            let fingerprint = crate::crl::print_pattern(&rule.pattern);
            let fresh = state.rules.get(&rule.rule_id).is_none_or(|s| s.fingerprint != fingerprint);
            if fresh {
                state.rules.insert(
                    rule.rule_id.clone(),
                    checkpoint::RuleSlot { fingerprint, state: RuleState::initial(&rule.pattern) },
                );
            }
        }
    }
}

fn check_trace(trace: &Trace, clock: Timestamp) -> Result<(), EngineError> {
    if !trace.is_canonical() {
        return Err(EngineError::NotCanonical { case_id: trace.case_id.clone() });
    }
    if let Some(last) = trace.events.last() {
        if last.timestamp > clock {
            return Err(EngineError::ClockBehindEvents {
                case_id: trace.case_id.clone(),
                clock: format_timestamp(&clock),
                event: format_timestamp(&last.timestamp),
            });
        }
    }
    Ok(())
}

/// One violation-layer event for `record`.
pub fn violation_event(record: &ViolationRecord, ordinal: u64) -> Event {
    let mut attributes = BTreeMap::new();
    attributes.insert("rule_id".to_string(), record.rule_id.clone());
    attributes.insert("detection_ts".to_string(), format_timestamp(&record.detection_ts));
    attributes.insert("evidence".to_string(), record.evidence_summary());
    attributes.insert("dedup_key".to_string(), record.dedup_key.clone());
    Event {
        case_id: record.case_id.clone(),
        activity: violation_activity(&record.rule_id),
        timestamp: record.violation_ts,
        layer: Layer::ComplianceViolation,
        ordinal,
        attributes,
    }
}

/// Builds the violation layer; ordinals follow the order of `records`.
pub fn violation_layer(records: &[ViolationRecord]) -> EventLog {
    let events = records.iter().enumerate().map(|(i, r)| violation_event(r, i as u64));
    EventLog::from_events("violations", events).expect("violation events are unique by ordinal")
}
