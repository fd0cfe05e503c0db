//! Follow-up actions and the ledger that makes them exactly-once.
//!
//! Transports live elsewhere; this module decides what still needs doing and
//! turns completed actions into follow-up layer events.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::ViolationRecord;
use crate::event::{format_timestamp, Event, EventLog, Layer, Timestamp};

pub const REPORT_SENT: &str = "Compliance report sent";
pub const INCIDENT_CREATED: &str = "Compliance Incident created";
pub const INCIDENT_RESOLVED: &str = "Compliance Incident resolved";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowUpKind {
    Report,
    Ticket,
    RpaTrigger,
}

impl fmt::Display for FollowUpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FollowUpKind::Report => "report",
            FollowUpKind::Ticket => "ticket",
            FollowUpKind::RpaTrigger => "rpa_trigger",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Planned,
    Sent,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationRef {
    pub case_id: String,
    pub rule_id: String,
    pub dedup_key: String,
}

impl From<&ViolationRecord> for ViolationRef {
    fn from(v: &ViolationRecord) -> Self {
        ViolationRef { case_id: v.case_id.clone(), rule_id: v.rule_id.clone(), dedup_key: v.dedup_key.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action for {dedup_key} is already {from:?}")]
pub struct TransitionError {
    pub dedup_key: String,
    pub from: ActionStatus,
}

/// One attempt to act on a violation. Status only moves out of `Planned`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpAction {
    pub kind: FollowUpKind,
    /// Output path or webhook URL.
    pub target: String,
    pub violation: ViolationRef,
    pub status: ActionStatus,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FollowUpAction {
    pub fn planned(kind: FollowUpKind, target: impl Into<String>, violation: ViolationRef) -> Self {
        FollowUpAction { kind, target: target.into(), violation, status: ActionStatus::Planned, attempts: 0, error: None }
    }

    pub fn mark_sent(&mut self, attempts: u32) -> Result<(), TransitionError> {
        self.settle(ActionStatus::Sent, attempts, None)
    }

    pub fn mark_failed(&mut self, attempts: u32, error: impl Into<String>) -> Result<(), TransitionError> {
        self.settle(ActionStatus::Failed, attempts, Some(error.into()))
    }

    fn settle(&mut self, to: ActionStatus, attempts: u32, error: Option<String>) -> Result<(), TransitionError> {
        if self.status != ActionStatus::Planned {
            return Err(TransitionError { dedup_key: self.violation.dedup_key.clone(), from: self.status });
        }
        self.status = to;
        self.attempts = attempts;
        self.error = error;
        Ok(())
    }
}

/// Webhook body for tickets and RPA triggers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketPayload {
    pub case_id: String,
    pub rule_id: String,
    pub rule_text: String,
    pub violation_ts: String,
    pub detection_ts: String,
    pub evidence: Vec<String>,
    pub dedup_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
}

impl TicketPayload {
    pub fn new(violation: &ViolationRecord, rule_text: &str) -> Self {
        let evidence = violation
            .evidence
            .iter()
            .map(|e| crate::event::event_reference(&e.activity, &e.timestamp, e.ordinal))
            .collect();
        TicketPayload {
            case_id: violation.case_id.clone(),
            rule_id: violation.rule_id.clone(),
            rule_text: if rule_text.trim().is_empty() { violation.rule_id.clone() } else { rule_text.to_string() },
            violation_ts: iso(&violation.violation_ts),
            detection_ts: iso(&violation.detection_ts),
            evidence,
            dedup_key: violation.dedup_key.clone(),
            action: None,
        }
    }

    pub fn with_action(mut self, action: impl Into<String>) -> Self {
        self.action = Some(action.into());
        self
    }

    pub fn is_complete(&self) -> bool {
        [&self.case_id, &self.rule_id, &self.rule_text, &self.violation_ts, &self.detection_ts, &self.dedup_key]
            .iter()
            .all(|s| !s.is_empty())
            && !self.evidence.is_empty()
    }
}

fn iso(ts: &Timestamp) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FollowUpError {
    #[error("no incident was created for case `{case_id}` and rule `{rule_id}`")]
    NoOpenIncident { case_id: String, rule_id: String },
    #[error("incident for case `{case_id}` and rule `{rule_id}` is already resolved")]
    AlreadyResolved { case_id: String, rule_id: String },
    #[error("resolution at {resolved_at} precedes incident creation at {created_at}")]
    ResolvedBeforeCreated { resolved_at: String, created_at: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Incident {
    pub case_id: String,
    pub rule_id: String,
    pub created_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
}

/// Record of every follow-up already performed, keyed by violation dedup key,
/// plus the follow-up layer events produced so far.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FollowUpLedger {
    pub incidents: BTreeMap<String, Incident>,
    pub reported: BTreeSet<String>,
    pub rpa_triggered: BTreeSet<String>,
    pub events: Vec<Event>,
}

impl FollowUpLedger {
    pub fn needs_ticket(&self, dedup_key: &str) -> bool {
        !self.incidents.contains_key(dedup_key)
    }

    pub fn needs_report(&self, dedup_key: &str) -> bool {
        !self.reported.contains(dedup_key)
    }

    pub fn needs_rpa(&self, dedup_key: &str) -> bool {
        !self.rpa_triggered.contains(dedup_key)
    }

    pub fn mark_rpa_triggered(&mut self, dedup_key: &str) {
        self.rpa_triggered.insert(dedup_key.to_string());
    }

    fn push(&mut self, case_id: &str, activity: &str, clock: Timestamp, rules: &[&str], keys: &[&str]) -> Event {
        let event = Event::new(case_id, activity, clock, Layer::ComplianceFollowUp, self.events.len() as u64)
            .with_attribute("rule_id", rules.join(";"))
            .with_attribute("dedup_key", keys.join(";"));
        self.events.push(event.clone());
        event
    }

    /// One report event per case among `violations` not reported yet.
    pub fn record_reports(&mut self, violations: &[ViolationRecord], clock: Timestamp) -> Vec<Event> {
        let mut by_case: BTreeMap<&str, (BTreeSet<&str>, Vec<&str>)> = BTreeMap::new();
        for v in violations.iter().filter(|v| self.needs_report(&v.dedup_key)) {
            let entry = by_case.entry(&v.case_id).or_default();
            entry.0.insert(&v.rule_id);
            if !entry.1.contains(&v.dedup_key.as_str()) {
                entry.1.push(&v.dedup_key);
            }
        }
        let mut out = Vec::new();
        for (case_id, (rules, keys)) in by_case {
            let rules: Vec<&str> = rules.into_iter().collect();
            out.push(self.push(case_id, REPORT_SENT, clock, &rules, &keys));
            self.reported.extend(keys.iter().map(|k| k.to_string()));
        }
        out
    }

    /// Records a created incident. Returns `None` if one already exists.
    pub fn record_incident(&mut self, violation: &ViolationRecord, clock: Timestamp) -> Option<Event> {
        if !self.needs_ticket(&violation.dedup_key) {
            return None;
        }
        self.incidents.insert(
            violation.dedup_key.clone(),
            Incident {
                case_id: violation.case_id.clone(),
                rule_id: violation.rule_id.clone(),
                created_at: clock,
                resolved_at: None,
            },
        );
        Some(self.push(&violation.case_id, INCIDENT_CREATED, clock, &[&violation.rule_id], &[&violation.dedup_key]))
    }

    /// Resolves every open incident of `(case_id, rule_id)` with one event.
    pub fn record_resolution(&mut self, case_id: &str, rule_id: &str, clock: Timestamp) -> Result<Event, FollowUpError> {
        let matching: Vec<String> = self
            .incidents
            .iter()
            .filter(|(_, i)| i.case_id == case_id && i.rule_id == rule_id)
            .map(|(k, _)| k.clone())
            .collect();
        if matching.is_empty() {
            return Err(FollowUpError::NoOpenIncident { case_id: case_id.into(), rule_id: rule_id.into() });
        }
        let open: Vec<String> =
            matching.into_iter().filter(|k| self.incidents[k].resolved_at.is_none()).collect();
        if open.is_empty() {
            return Err(FollowUpError::AlreadyResolved { case_id: case_id.into(), rule_id: rule_id.into() });
        }
        if let Some(latest) = open.iter().map(|k| self.incidents[k].created_at).max() {
            if clock < latest {
                return Err(FollowUpError::ResolvedBeforeCreated {
                    resolved_at: format_timestamp(&clock),
                    created_at: format_timestamp(&latest),
                });
            }
        }
        for k in &open {
            if let Some(i) = self.incidents.get_mut(k) {
                i.resolved_at = Some(clock);
            }
        }
        let keys: Vec<&str> = open.iter().map(String::as_str).collect();
        Ok(self.push(case_id, INCIDENT_RESOLVED, clock, &[rule_id], &keys))
    }

    pub fn incidents_created(&self, dedup_key: &str) -> usize {
        self.events
            .iter()
            .filter(|e| e.activity == INCIDENT_CREATED && e.attributes.get("dedup_key").is_some_and(|k| k == dedup_key))
            .count()
    }

    /// The follow-up layer.
    pub fn layer(&self) -> EventLog {
        EventLog::from_events("followups", self.events.iter().cloned()).expect("ledger ordinals are unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EvidenceRef;
    use crate::event::parse_timestamp;
    use alloc::vec;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn violation(case: &str, rule: &str, ordinal: u64) -> ViolationRecord {
        ViolationRecord {
            case_id: case.into(),
            rule_id: rule.into(),
            violation_ts: ts("2021-07-21"),
            detection_ts: ts("2021-07-21"),
            evidence: vec![EvidenceRef { activity: "Shipment started".into(), timestamp: ts("2021-07-20"), ordinal }],
            dedup_key: crate::engine::dedup_key(case, rule, ordinal),
        }
    }

    #[test]
    fn table5_sequence() {
        let v = violation("C02", "R01", 5);
        let mut ledger = FollowUpLedger::default();
        let reports = ledger.record_reports(core::slice::from_ref(&v), ts("2021-07-21"));
        assert_eq!(reports.len(), 1);
        assert_eq!((reports[0].case_id.as_str(), reports[0].activity.as_str()), ("C02", REPORT_SENT));
        assert_eq!(reports[0].timestamp, ts("2021-07-21"));

        let created = ledger.record_incident(&v, ts("2021-07-22")).unwrap();
        assert_eq!(created.activity, INCIDENT_CREATED);
        assert!(ledger.record_incident(&v, ts("2021-07-23")).is_none());
        assert_eq!(ledger.incidents_created(&v.dedup_key), 1);

        let resolved = ledger.record_resolution("C02", "R01", ts("2021-07-22")).unwrap();
        assert_eq!(resolved.activity, INCIDENT_RESOLVED);
        assert!(matches!(
            ledger.record_resolution("C02", "R01", ts("2021-07-23")),
            Err(FollowUpError::AlreadyResolved { .. })
        ));
        assert!(matches!(
            ledger.record_resolution("C99", "R01", ts("2021-07-23")),
            Err(FollowUpError::NoOpenIncident { .. })
        ));
        let layer = ledger.layer();
        let acts: Vec<&str> = layer.trace("C02").unwrap().events.iter().map(|e| e.activity.as_str()).collect();
        assert_eq!(acts, vec![REPORT_SENT, INCIDENT_CREATED, INCIDENT_RESOLVED]);
    }

    #[test]
    fn reports_are_per_case_and_once() {
        let vs = vec![violation("A", "R1", 0), violation("A", "R2", 1), violation("B", "R1", 0)];
        let mut ledger = FollowUpLedger::default();
        let events = ledger.record_reports(&vs, ts("2021-07-21"));
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].attributes["rule_id"], "R1;R2");
        assert!(ledger.record_reports(&vs, ts("2021-07-22")).is_empty());
        assert!(ledger.record_reports(&[], ts("2021-07-22")).is_empty());
    }

    #[test]
    fn resolution_cannot_precede_creation() {
        let v = violation("C02", "R01", 5);
        let mut ledger = FollowUpLedger::default();
        ledger.record_incident(&v, ts("2021-07-22"));
        assert!(matches!(
            ledger.record_resolution("C02", "R01", ts("2021-07-21")),
            Err(FollowUpError::ResolvedBeforeCreated { .. })
        ));
    }

    #[test]
    fn action_transitions() {
        let v = violation("C02", "R01", 5);
        let mut a = FollowUpAction::planned(FollowUpKind::Ticket, "http://localhost/x", (&v).into());
        a.mark_sent(1).unwrap();
        assert_eq!(a.status, ActionStatus::Sent);
        assert!(a.mark_failed(2, "late").is_err());
        let mut b = FollowUpAction::planned(FollowUpKind::RpaTrigger, "http://localhost/y", (&v).into());
        b.mark_failed(3, "HTTP 500").unwrap();
        assert_eq!((b.status, b.attempts), (ActionStatus::Failed, 3));
        assert!(b.mark_sent(4).is_err());
    }

    #[test]
    fn payload_fields() {
        let v = violation("C02", "R01", 5);
        let p = TicketPayload::new(&v, "\"Shipment started\" only after \"Delivery created\"");
        assert!(p.is_complete());
        assert_eq!(p.violation_ts, "2021-07-21T00:00:00Z");
        assert_eq!(p.evidence, vec!["Shipment started@2021-07-20#5".to_string()]);
        assert_eq!(TicketPayload::new(&v, "").rule_text, "R01");
        assert_eq!(p.with_action("restart").action.as_deref(), Some("restart"));
    }
}
