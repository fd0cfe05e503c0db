//! Left-to-right evaluation of one rule over one case.
//!
//! Batch and incremental evaluation both drive this automaton; incremental runs
//! persist the state between calls, so the two agree on every split of a trace.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::crl::{ContentScope, RulePattern, RuleRegistry};
use crate::event::{Event, Timestamp};

/// Reference to an event that supports a violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub activity: alloc::string::String,
    pub timestamp: Timestamp,
    pub ordinal: u64,
}

impl From<&Event> for EvidenceRef {
    fn from(e: &Event) -> Self {
        EvidenceRef { activity: e.activity.clone(), timestamp: e.timestamp, ordinal: e.ordinal }
    }
}

/// A violation before it is stamped with case, rule and detection clock.
/// `evidence[0]` is the primary offending event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Finding {
    pub violation_ts: Timestamp,
    pub evidence: Vec<EvidenceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub(crate) enum RuleState {
    Precedence { guard_seen: bool, pending: Vec<EvidenceRef> },
    Absence,
    Existence { seen: bool, settled: bool },
    Response { pending: Vec<EvidenceRef> },
    Content { started: bool },
}

pub(crate) struct Context<'a> {
    pub registry: &'a RuleRegistry,
    pub completion: &'a BTreeSet<alloc::string::String>,
    pub case_attributes: &'a BTreeMap<alloc::string::String, alloc::string::String>,
}

impl RuleState {
    pub fn initial(pattern: &RulePattern) -> Self {
        match pattern {
            RulePattern::Precedence { .. } => RuleState::Precedence { guard_seen: false, pending: Vec::new() },
            RulePattern::Absence { .. } => RuleState::Absence,
            RulePattern::Existence { .. } => RuleState::Existence { seen: false, settled: false },
            RulePattern::Response { .. } => RuleState::Response { pending: Vec::new() },
            RulePattern::Content { .. } => RuleState::Content { started: false },
        }
    }

    /// Advances over `event`, appending settled violations to `out`.
    pub fn feed(&mut self, pattern: &RulePattern, event: &Event, ctx: &Context<'_>, out: &mut Vec<Finding>) {
        let completes = ctx.completion.contains(&event.activity);
        match (self, pattern) {
            (RuleState::Precedence { guard_seen, pending }, RulePattern::Precedence { target, guard }) => {
                let is_guard = event.activity == *guard;
                if is_guard {
                    for p in pending.drain(..) {
                        out.push(Finding { violation_ts: event.timestamp, evidence: vec![p, event.into()] });
                    }
                }
                if event.activity == *target && !*guard_seen {
                    pending.push(event.into());
                }
                if is_guard {
                    *guard_seen = true;
                }
                if completes {
                    for p in pending.drain(..) {
                        out.push(Finding { violation_ts: p.timestamp, evidence: vec![p] });
                    }
                }
            }
            (RuleState::Absence, RulePattern::Absence { activity }) => {
                if event.activity == *activity {
                    out.push(Finding { violation_ts: event.timestamp, evidence: vec![event.into()] });
                }
            }
            (RuleState::Existence { seen, settled }, RulePattern::Existence { activity }) => {
                if event.activity == *activity {
                    *seen = true;
                }
                if completes && !*settled {
                    *settled = true;
                    if !*seen {
                        out.push(Finding { violation_ts: event.timestamp, evidence: vec![event.into()] });
                    }
                }
            }
            (RuleState::Response { pending }, RulePattern::Response { trigger, response, deadline }) => {
                if let Some(d) = deadline {
                    expire(pending, d.as_duration(), event.timestamp, out);
                }
                if event.activity == *response {
                    pending.clear();
                }
                if event.activity == *trigger {
                    pending.push(event.into());
                }
                if completes {
                    for p in pending.drain(..) {
                        out.push(Finding { violation_ts: event.timestamp, evidence: vec![p, event.into()] });
                    }
                }
            }
            (RuleState::Content { started }, RulePattern::Content { scope, attribute, operator, values }) => {
                let value = match scope {
                    ContentScope::Event => event.attributes.get(attribute),
                    ContentScope::Case if !*started => {
                        ctx.case_attributes.get(attribute).or_else(|| event.attributes.get(attribute))
                    }
                    ContentScope::Case => None,
                };
                *started = true;
                if let Some(value) = value {
                    if !ctx.registry.content_holds(value, *operator, values) {
                        out.push(Finding { violation_ts: event.timestamp, evidence: vec![event.into()] });
                    }
                }
            }
            // Callers reset the state whenever the pattern changes.
            _ => unreachable!("rule state does not match its pattern"),
        }
    }

    /// Emits response deadlines the clock has passed.
    pub fn finish(&mut self, pattern: &RulePattern, clock: Timestamp, out: &mut Vec<Finding>) {
        if let (RuleState::Response { pending }, RulePattern::Response { deadline: Some(d), .. }) = (self, pattern) {
            expire(pending, d.as_duration(), clock, out);
        }
    }
}

fn expire(pending: &mut Vec<EvidenceRef>, deadline: chrono::Duration, now: Timestamp, out: &mut Vec<Finding>) {
    pending.retain(|p| {
        let due = p.timestamp + deadline;
        if due < now {
            out.push(Finding { violation_ts: due, evidence: vec![p.clone()] });
            false
        } else {
            true
        }
    });
}
