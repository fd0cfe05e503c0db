//! Incremental evaluation across runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::automaton::RuleState;
use super::{check_trace, Engine, EngineError, ViolationRecord};
use crate::event::{format_timestamp, Event, EventKey, EventLog, Layer, Timestamp};

pub const CHECKPOINT_SCHEMA: &str = "ccl.engine-checkpoint/1";

/// Last event processed for a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub timestamp: Timestamp,
    pub layer: Layer,
    pub ordinal: u64,
}

impl Watermark {
    pub fn of(event: &Event) -> Self {
        Watermark { timestamp: event.timestamp, layer: event.layer, ordinal: event.ordinal }
    }

    pub fn key(&self) -> EventKey {
        (self.timestamp, self.layer, self.ordinal)
    }

    /// Whether `event` was already consumed.
    pub fn covers(&self, event: &Event) -> bool {
        event.key() <= self.key()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct RuleSlot {
    pub fingerprint: String,
    pub state: RuleState,
}

/// Evaluation state of one case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseState {
    pub watermark: Option<Watermark>,
    #[serde(default)]
    pub(crate) rules: BTreeMap<String, RuleSlot>,
}

/// Everything needed to resume evaluation without re-reading old events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCheckpoint {
    pub schema: String,
    pub cases: BTreeMap<String, CaseState>,
    pub emitted_keys: BTreeSet<String>,
    pub clock_of_last_run: Option<Timestamp>,
}

impl Default for EngineCheckpoint {
    fn default() -> Self {
        EngineCheckpoint {
            schema: CHECKPOINT_SCHEMA.to_string(),
            cases: BTreeMap::new(),
            emitted_keys: BTreeSet::new(),
            clock_of_last_run: None,
        }
    }
}

impl EngineCheckpoint {
    pub fn watermark(&self, case_id: &str) -> Option<Watermark> {
        self.cases.get(case_id).and_then(|c| c.watermark)
    }

    /// Drops events the checkpoint has already consumed. Returns the remaining
    /// log and the number of events dropped.
    pub fn unseen(&self, log: &EventLog) -> (EventLog, usize) {
        let mut fresh = EventLog::new(log.source.clone());
        let mut dropped = 0;
        for (case_id, trace) in &log.traces {
            let mut trace = trace.clone();
            if let Some(wm) = self.watermark(case_id) {
                let before = trace.events.len();
                trace.events.retain(|e| !wm.covers(e));
                dropped += before - trace.events.len();
            }
            if !trace.events.is_empty() {
                fresh.traces.insert(case_id.clone(), trace);
            }
        }
        (fresh, dropped)
    }
}

impl Engine<'_> {
    /// Evaluates events that arrived since `checkpoint` was taken.
    ///
    /// Events at or below a case's watermark were consumed by an earlier run
    /// and are skipped, so replaying a batch emits nothing. Returns only violations not emitted before, plus the advanced
    /// checkpoint. The clock doubles as a watermark: a later run must not
    /// deliver events older than this run's clock, or deadline-based
    /// violations may differ from a single batch run.
    pub fn evaluate_incremental(
        &self,
        new_events: &EventLog,
        checkpoint: &EngineCheckpoint,
        clock: Timestamp,
    ) -> Result<(Vec<ViolationRecord>, EngineCheckpoint), EngineError> {
        if let Some(previous) = checkpoint.clock_of_last_run {
            if clock < previous {
                return Err(EngineError::ClockRegression {
                    clock: format_timestamp(&clock),
                    previous: format_timestamp(&previous),
                });
            }
        }
        for trace in new_events.traces.values() {
            check_trace(trace, clock)?;
        }
        let (new_events, _) = checkpoint.unseen(new_events);

        let mut next = checkpoint.clone();
        let mut found = Vec::new();
        for (case_id, trace) in &new_events.traces {
            let state = next.cases.entry(case_id.clone()).or_default();
            self.advance(state, trace, &trace.events, clock, &mut found);
        }
        for (case_id, state) in next.cases.iter_mut() {
            if new_events.traces.contains_key(case_id) {
                continue;
            }
            let idle = crate::event::Trace::new(case_id.clone());
            self.advance(state, &idle, &[], clock, &mut found);
        }

        let mut emitted: Vec<ViolationRecord> =
            found.into_iter().filter(|v| next.emitted_keys.insert(v.dedup_key.clone())).collect();
        emitted.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
        next.clock_of_last_run = Some(clock);
        Ok((emitted, next))
    }
}
