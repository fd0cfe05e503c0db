//! Follow-up delivery: report files, ticket and RPA webhooks.
//!
//! Webhooks get up to three attempts. 5xx responses and transport errors are
//! retried after 1s and 2s; any other non-2xx response fails at once. In dry-run
//! mode the transport is never touched and every action counts as sent.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use ccl_core::analytics::PeriodSummary;
use ccl_core::crl::RuleRegistry;
use ccl_core::engine::ViolationRecord;
use ccl_core::event::{format_timestamp, Event, Timestamp};
use ccl_core::followup::{FollowUpAction, FollowUpKind, FollowUpLedger, TicketPayload};
use thiserror::Error;
use url::Url;

use crate::state::write_atomic;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("invalid webhook endpoint `{url}`: {reason}")]
    InvalidEndpoint { url: String, reason: String },
    #[error("cannot write report {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Checks that `raw` is an absolute http(s) URL.
pub fn validate_endpoint(raw: &str) -> Result<Url, DispatchError> {
    let invalid = |reason: String| DispatchError::InvalidEndpoint { url: raw.into(), reason };
    let url = Url::parse(raw).map_err(|e| invalid(e.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(invalid(format!("unsupported scheme `{}`", url.scheme())));
    }
    if url.host_str().is_none_or(str::is_empty) {
        return Err(invalid("missing host".into()));
    }
    Ok(url)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("{0}")]
    Network(String),
}

/// Sends one JSON POST and returns the HTTP status.
pub trait Transport {
    fn post_json(&mut self, url: &str, body: &str) -> Result<u16, TransportError>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { agent }
    }
}

impl Transport for HttpTransport {
    fn post_json(&mut self, url: &str, body: &str) -> Result<u16, TransportError> {
        log::debug!("POST {url}");
        match self.agent.post(url).header("Content-Type", "application/json").send(body) {
            Ok(resp) => Ok(resp.status().as_u16()),
            Err(ureq::Error::Timeout(_)) => Err(TransportError::Timeout),
            Err(e) => Err(TransportError::Network(e.to_string())),
        }
    }
}

pub trait Sleep {
    fn sleep(&mut self, d: Duration);
}

pub struct ThreadSleep;

impl Sleep for ThreadSleep {
    fn sleep(&mut self, d: Duration) {
        std::thread::sleep(d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, base_delay: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Wait before attempt `attempt + 1`, doubling from the base delay.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt.saturating_sub(1))
    }
}

pub struct Dispatcher<'a> {
    transport: &'a mut dyn Transport,
    sleeper: &'a mut dyn Sleep,
    pub policy: RetryPolicy,
    pub dry_run: bool,
}

impl<'a> Dispatcher<'a> {
    pub fn new(transport: &'a mut dyn Transport, sleeper: &'a mut dyn Sleep, dry_run: bool) -> Self {
        Dispatcher { transport, sleeper, policy: RetryPolicy::default(), dry_run }
    }

    fn deliver(&mut self, action: &mut FollowUpAction, payload: &TicketPayload) {
        if self.dry_run {
            action.mark_sent(0).expect("fresh action");
            return;
        }
        let body = serde_json::to_string(payload).expect("payload serializes");
        let mut last_error = String::new();
        for attempt in 1..=self.policy.attempts {
            let retry = match self.transport.post_json(&action.target, &body) {
                Ok(status) if (200..300).contains(&status) => {
                    action.mark_sent(attempt).expect("fresh action");
                    return;
                }
                Ok(status) => {
                    last_error = format!("HTTP {status}");
                    status >= 500
                }
                Err(e) => {
                    last_error = e.to_string();
                    true
                }
            };
            if !retry {
                action.mark_failed(attempt, last_error).expect("fresh action");
                return;
            }
            if attempt < self.policy.attempts {
                log::warn!("{} for {}: {last_error}; retrying", action.kind, action.violation.dedup_key);
                self.sleeper.sleep(self.policy.delay_after(attempt));
            }
        }
        action.mark_failed(self.policy.attempts, last_error).expect("fresh action");
    }

    /// Opens an incident for `violation` unless the ledger already has one.
    /// Returns the settled action and, when sent, the follow-up event.
    pub fn create_ticket(
        &mut self,
        ledger: &mut FollowUpLedger,
        violation: &ViolationRecord,
        rule_text: &str,
        endpoint: &str,
        clock: Timestamp,
    ) -> Result<Option<(FollowUpAction, Option<Event>)>, DispatchError> {
        validate_endpoint(endpoint)?;
        if !ledger.needs_ticket(&violation.dedup_key) {
            return Ok(None);
        }
        let mut action = FollowUpAction::planned(FollowUpKind::Ticket, endpoint, violation.into());
        self.deliver(&mut action, &TicketPayload::new(violation, rule_text));
        let event = match action.status {
            ccl_core::followup::ActionStatus::Sent => ledger.record_incident(violation, clock),
            _ => None,
        };
        Ok(Some((action, event)))
    }

    /// Starts the RPA bot once per violation. Emits no follow-up event.
    pub fn trigger_rpa(
        &mut self,
        ledger: &mut FollowUpLedger,
        violation: &ViolationRecord,
        rule_text: &str,
        endpoint: &str,
    ) -> Result<Option<FollowUpAction>, DispatchError> {
        validate_endpoint(endpoint)?;
        if !ledger.needs_rpa(&violation.dedup_key) {
            return Ok(None);
        }
        let mut action = FollowUpAction::planned(FollowUpKind::RpaTrigger, endpoint, violation.into());
        self.deliver(&mut action, &TicketPayload::new(violation, rule_text).with_action("rpa"));
        if action.status == ccl_core::followup::ActionStatus::Sent {
            ledger.mark_rpa_triggered(&violation.dedup_key);
        }
        Ok(Some(action))
    }
}

/// `report_<clock>.md`, with the time part only when it is not midnight.
pub fn report_file_name(clock: &Timestamp) -> String {
    format!("report_{}.md", format_timestamp(clock).replace(':', ""))
}

/// Writes a report on the violations the ledger has not reported yet and
/// emits one report event per covered case. Nothing is written or emitted
/// when there is nothing to report or the write fails.
pub fn render_report(
    violations: &[ViolationRecord],
    period: &PeriodSummary,
    registry: &RuleRegistry,
    clock: Timestamp,
    outbox: &Path,
    ledger: &mut FollowUpLedger,
) -> Result<Option<(PathBuf, Vec<Event>)>, DispatchError> {
    let pending: Vec<ViolationRecord> =
        violations.iter().filter(|v| ledger.needs_report(&v.dedup_key)).cloned().collect();
    if pending.is_empty() {
        return Ok(None);
    }
    let text = report_markdown(&pending, period, registry, clock);
    let path = outbox.join(report_file_name(&clock));
    write_atomic(&path, text.as_bytes())
        .map_err(|source| DispatchError::Io { path: path.display().to_string(), source })?;
    let events = ledger.record_reports(&pending, clock);
    Ok(Some((path, events)))
}

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

pub fn report_markdown(
    violations: &[ViolationRecord],
    period: &PeriodSummary,
    registry: &RuleRegistry,
    clock: Timestamp,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Compliance report {}\n", format_timestamp(&clock));
    let cases: std::collections::BTreeSet<&str> = violations.iter().map(|v| v.case_id.as_str()).collect();
    let _ = writeln!(out, "{} new violation(s) in {} case(s).\n", violations.len(), cases.len());

    let mut by_rule: BTreeMap<&str, Vec<&ViolationRecord>> = BTreeMap::new();
    for v in violations {
        by_rule.entry(&v.rule_id).or_default().push(v);
    }
    for (rule_id, vs) in by_rule {
        let text = registry.rule(rule_id).map_or("", |r| r.description.as_str());
        let _ = writeln!(out, "## {rule_id}\n");
        if !text.is_empty() {
            let _ = writeln!(out, "`{}`\n", text.replace('`', "'"));
        }
        let _ = writeln!(out, "| Case | Violation | Detected | Evidence |\n|---|---|---|---|");
        for v in vs {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                cell(&v.case_id),
                format_timestamp(&v.violation_ts),
                format_timestamp(&v.detection_ts),
                cell(&v.evidence_summary())
            );
        }
        out.push('\n');
    }

    let _ = writeln!(out, "## Violations per {}\n", period.granularity);
    let _ = writeln!(out, "| Period | Rule | Count |\n|---|---|---|");
    for (key, rules) in &period.periods {
        for (rule, n) in rules {
            let _ = writeln!(out, "| {key} | {} | {n} |", cell(rule));
        }
    }
    let _ = writeln!(out, "\nTotal: {}", period.total());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccl_core::analytics::{summarize, Granularity};
    use ccl_core::crl::parse_registry;
    use ccl_core::engine::EvidenceRef;
    use ccl_core::event::parse_timestamp;
    use ccl_core::followup::{ActionStatus, INCIDENT_CREATED, REPORT_SENT};

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    fn c02() -> ViolationRecord {
        ViolationRecord {
            case_id: "C02".into(),
            rule_id: "R01".into(),
            violation_ts: ts("2021-07-21"),
            detection_ts: ts("2021-07-21"),
            evidence: vec![EvidenceRef { activity: "Shipment started".into(), timestamp: ts("2021-07-20"), ordinal: 5 }],
            dedup_key: "C02|R01|5".into(),
        }
    }

    /// Replies with a fixed script of outcomes and records every call.
    struct Scripted {
        replies: Vec<Result<u16, TransportError>>,
        calls: Vec<(String, String)>,
    }

    impl Transport for Scripted {
        fn post_json(&mut self, url: &str, body: &str) -> Result<u16, TransportError> {
            self.calls.push((url.into(), body.into()));
            if self.replies.is_empty() {
                Ok(200)
            } else {
                self.replies.remove(0)
            }
        }
    }

    #[derive(Default)]
    struct Recorded(Vec<Duration>);

    impl Sleep for Recorded {
        fn sleep(&mut self, d: Duration) {
            self.0.push(d);
        }
    }

    const URL: &str = "http://tickets.example/api";

    fn ticket(replies: Vec<Result<u16, TransportError>>, dry_run: bool) -> (FollowUpAction, Option<Event>, Scripted, Recorded) {
        let mut transport = Scripted { replies, calls: Vec::new() };
        let mut sleeper = Recorded::default();
        let mut ledger = FollowUpLedger::default();
        let (action, event) = Dispatcher::new(&mut transport, &mut sleeper, dry_run)
            .create_ticket(&mut ledger, &c02(), "R01 text", URL, ts("2021-07-22"))
            .unwrap()
            .unwrap();
        (action, event, transport, sleeper)
    }

    #[test]
    fn dry_run_creates_incident_without_io() {
        let (action, event, transport, sleeper) = ticket(vec![], true);
        assert_eq!(action.status, ActionStatus::Sent);
        let event = event.unwrap();
        assert_eq!((event.case_id.as_str(), event.activity.as_str()), ("C02", INCIDENT_CREATED));
        assert_eq!(event.timestamp, ts("2021-07-22"));
        assert!(transport.calls.is_empty());
        assert!(sleeper.0.is_empty());
    }

    #[test]
    fn created_on_201() {
        let (action, event, transport, _) = ticket(vec![Ok(201)], false);
        assert_eq!((action.status, action.attempts), (ActionStatus::Sent, 1));
        assert!(event.is_some());
        let body: serde_json::Value = serde_json::from_str(&transport.calls[0].1).unwrap();
        assert_eq!(body["case_id"], "C02");
        assert_eq!(body["violation_ts"], "2021-07-21T00:00:00Z");
    }

    #[test]
    fn three_server_errors_fail() {
        let (action, event, transport, sleeper) = ticket(vec![Ok(500), Ok(502), Ok(503)], false);
        assert_eq!((action.status, action.attempts), (ActionStatus::Failed, 3));
        assert!(event.is_none());
        assert_eq!(transport.calls.len(), 3);
        assert_eq!(sleeper.0, vec![Duration::from_secs(1), Duration::from_secs(2)]);
    }

    #[test]
    fn client_errors_are_permanent() {
        let (action, event, transport, sleeper) = ticket(vec![Ok(404)], false);
        assert_eq!((action.status, action.attempts), (ActionStatus::Failed, 1));
        assert_eq!(action.error.as_deref(), Some("HTTP 404"));
        assert!(event.is_none());
        assert_eq!(transport.calls.len(), 1);
        assert!(sleeper.0.is_empty());
    }

    #[test]
    fn timeouts_retry_then_succeed() {
        let (action, event, transport, _) = ticket(vec![Err(TransportError::Timeout), Ok(200)], false);
        assert_eq!((action.status, action.attempts), (ActionStatus::Sent, 2));
        assert!(event.is_some());
        assert_eq!(transport.calls.len(), 2);
    }

    #[test]
    fn ticket_is_created_once() {
        let mut transport = Scripted { replies: vec![], calls: Vec::new() };
        let mut sleeper = Recorded::default();
        let mut ledger = FollowUpLedger::default();
        let mut d = Dispatcher::new(&mut transport, &mut sleeper, false);
        assert!(d.create_ticket(&mut ledger, &c02(), "", URL, ts("2021-07-22")).unwrap().is_some());
        assert!(d.create_ticket(&mut ledger, &c02(), "", URL, ts("2021-07-23")).unwrap().is_none());
        assert_eq!(ledger.incidents_created("C02|R01|5"), 1);
        assert_eq!(transport.calls.len(), 1);
    }

    #[test]
    fn rpa_trigger() {
        let mut transport = Scripted { replies: vec![Ok(202)], calls: Vec::new() };
        let mut sleeper = Recorded::default();
        let mut ledger = FollowUpLedger::default();
        let action = Dispatcher::new(&mut transport, &mut sleeper, false)
            .trigger_rpa(&mut ledger, &c02(), "", URL)
            .unwrap()
            .unwrap();
        assert_eq!(action.status, ActionStatus::Sent);
        assert!(ledger.events.is_empty());
        let body: serde_json::Value = serde_json::from_str(&transport.calls[0].1).unwrap();
        assert_eq!(body["action"], "rpa");

        let mut failing = Scripted {
            replies: vec![Err(TransportError::Network("unreachable".into())); 3],
            calls: Vec::new(),
        };
        let action = Dispatcher::new(&mut failing, &mut sleeper, false)
            .trigger_rpa(&mut FollowUpLedger::default(), &c02(), "", URL)
            .unwrap()
            .unwrap();
        assert_eq!(action.status, ActionStatus::Failed);
    }

    #[test]
    fn endpoint_validation() {
        assert!(validate_endpoint("https://x.example/hook").is_ok());
        assert!(validate_endpoint("ftp://x.example/hook").is_err());
        assert!(validate_endpoint("not a url").is_err());
        let mut transport = Scripted { replies: vec![], calls: Vec::new() };
        let mut sleeper = Recorded::default();
        let r = Dispatcher::new(&mut transport, &mut sleeper, true).create_ticket(
            &mut FollowUpLedger::default(),
            &c02(),
            "",
            "mailto:x",
            ts("2021-07-22"),
        );
        assert!(matches!(r, Err(DispatchError::InvalidEndpoint { .. })));
    }

    #[test]
    fn report_file_and_events() {
        let dir = tempfile::tempdir().unwrap();
        let reg = parse_registry(r#"rule R01: "Shipment started" only after "Delivery created""#).unwrap();
        let mut ledger = FollowUpLedger::default();
        let vs = vec![c02()];
        let summary = summarize(&vs, Granularity::Week);
        let (path, events) =
            render_report(&vs, &summary, &reg, ts("2021-07-21"), dir.path(), &mut ledger).unwrap().unwrap();
        assert_eq!(path.file_name().unwrap(), "report_2021-07-21.md");
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("| C02 | 2021-07-21 |"));
        assert!(text.contains("2021-W29"));
        assert_eq!(events.len(), 1);
        assert_eq!((events[0].activity.as_str(), events[0].timestamp), (REPORT_SENT, ts("2021-07-21")));
        assert!(render_report(&vs, &summary, &reg, ts("2021-07-22"), dir.path(), &mut ledger).unwrap().is_none());
        assert!(render_report(&[], &summary, &reg, ts("2021-07-22"), dir.path(), &mut FollowUpLedger::default())
            .unwrap()
            .is_none());
        assert_eq!(report_file_name(&ts("2021-07-21T10:15:00Z")), "report_2021-07-21T101500Z.md");
    }

    #[test]
    fn unwritable_outbox_emits_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let mut ledger = FollowUpLedger::default();
        let vs = vec![c02()];
        let summary = summarize(&vs, Granularity::Week);
        let r = render_report(&vs, &summary, &RuleRegistry::default(), ts("2021-07-21"), &blocker, &mut ledger);
        assert!(matches!(r, Err(DispatchError::Io { .. })));
        assert!(ledger.events.is_empty());
    }
}
