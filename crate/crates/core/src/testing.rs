//! Reference evaluator and seeded generators for tests.
//!
//! The reference evaluator looks at whole traces by index instead of running
//! an automaton, so it shares no code with the engine beyond the data types.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use chrono::{Duration, TimeZone, Utc};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::crl::{
    ComplianceRule, ContentOperator, ContentScope, Deadline, DurationUnit, RulePattern, RuleRegistry, ValueList,
    ValueRef,
};
use crate::engine::{ViolationRecord, DEFAULT_COMPLETION};
use crate::event::{Event, EventLog, Layer, Timestamp, Trace};

/// `(case_id, rule_id, violation_ts, evidence ordinals)`, comparable across
/// evaluators.
pub type Outcome = (String, String, Timestamp, Vec<u64>);

pub fn outcomes_of(records: &[ViolationRecord]) -> Vec<Outcome> {
    let mut out: Vec<Outcome> = records
        .iter()
        .map(|r| (r.case_id.clone(), r.rule_id.clone(), r.violation_ts, r.evidence.iter().map(|e| e.ordinal).collect()))
        .collect();
    out.sort();
    out
}

/// Violations of every rule in every trace, computed from first principles.
pub fn reference_evaluate(
    registry: &RuleRegistry,
    completion: &BTreeSet<String>,
    log: &EventLog,
    clock: Timestamp,
) -> Vec<Outcome> {
    let mut out = Vec::new();
    for trace in log.traces.values() {
        for rule in &registry.rules {
            for (ts, evidence) in reference_rule(registry, completion, trace, &rule.pattern, clock) {
                let ordinals = evidence.iter().map(|&i| trace.events[i].ordinal).collect();
                out.push((trace.case_id.clone(), rule.rule_id.clone(), ts, ordinals));
            }
        }
    }
    out.sort();
    out
}

/// Violation timestamp and evidence indices of one rule over one trace.
fn reference_rule(
    registry: &RuleRegistry,
    completion: &BTreeSet<String>,
    trace: &Trace,
    pattern: &RulePattern,
    clock: Timestamp,
) -> Vec<(Timestamp, Vec<usize>)> {
    let ev = &trace.events;
    let n = ev.len();
    let act = |i: usize| ev[i].activity.as_str();
    let ts = |i: usize| ev[i].timestamp;
    let is_completion = |i: usize| completion.contains(&ev[i].activity);
    let first_from = |from: usize, pred: &dyn Fn(usize) -> bool| (from..n).find(|&i| pred(i));

    let mut found = Vec::new();
    match pattern {
        RulePattern::Precedence { target, guard } => {
            for i in (0..n).filter(|&i| act(i) == target) {
                if (0..i).any(|h| act(h) == guard) {
                    continue;
                }
                let j = first_from(i + 1, &|x| act(x) == guard);
                let k = first_from(i, &|x| is_completion(x));
                match (j, k) {
                    (Some(j), k) if k.is_none_or(|k| j <= k) => found.push((ts(j), vec![i, j])),
                    (_, Some(_)) => found.push((ts(i), vec![i])),
                    _ => {}
                }
            }
        }
        RulePattern::Absence { activity } => {
            found.extend((0..n).filter(|&i| act(i) == activity).map(|i| (ts(i), vec![i])));
        }
        RulePattern::Existence { activity } => {
            if let Some(k) = first_from(0, &|x| is_completion(x)) {
                if !(0..=k).any(|h| act(h) == activity) {
                    found.push((ts(k), vec![k]));
                }
            }
        }
        RulePattern::Response { trigger, response, deadline } => {
            let limit = deadline.map(|d| d.as_duration());
            for i in (0..n).filter(|&i| act(i) == trigger) {
                if is_completion(i) {
                    found.push((ts(i), vec![i, i]));
                    continue;
                }
                let due = limit.map(|d| ts(i) + d);
                let expiry = due.and_then(|due| first_from(i + 1, &|x| ts(x) > due));
                let answer = first_from(i + 1, &|x| act(x) == response);
                let close = first_from(i + 1, &|x| is_completion(x));
                // At one index, expiry is checked before the response, and the
                // response before completion.
                let first = [expiry, answer, close].into_iter().flatten().min();
                match first {
                    Some(m) if Some(m) == expiry => found.push((due.unwrap(), vec![i])),
                    Some(m) if Some(m) == answer => {}
                    Some(m) => found.push((ts(m), vec![i, m])),
                    None => {
                        if let Some(due) = due.filter(|&due| due < clock) {
                            found.push((due, vec![i]));
                        }
                    }
                }
            }
        }
        RulePattern::Content { scope, attribute, operator, values } => {
            let fails = |v: &str| !reference_holds(registry, v, *operator, values);
            match scope {
                ContentScope::Event => {
                    for i in 0..n {
                        if ev[i].attributes.get(attribute).is_some_and(|v| fails(v)) {
                            found.push((ts(i), vec![i]));
                        }
                    }
                }
                ContentScope::Case if n > 0 => {
                    let v = trace.case_attributes.get(attribute).or_else(|| ev[0].attributes.get(attribute));
                    if v.is_some_and(|v| fails(v)) {
                        found.push((ts(0), vec![0]));
                    }
                }
                ContentScope::Case => {}
            }
        }
    }
    found
}

fn reference_holds(registry: &RuleRegistry, value: &str, op: ContentOperator, values: &ValueRef) -> bool {
    let same = |a: &str, b: &str| a.trim().eq_ignore_ascii_case(b.trim());
    let member = match values {
        ValueRef::Single(v) => same(value, v),
        ValueRef::Inline(vs) => vs.iter().any(|v| same(value, v)),
        ValueRef::List(name) => registry.value_lists.get(name).is_some_and(|l| l.values.iter().any(|v| same(value, v))),
    };
    matches!(op, ContentOperator::In | ContentOperator::Eq) == member
}

/// Seeded source of random test data.
pub struct Gen {
    rng: ChaCha8Rng,
}

/// Size limits for [`Gen::log`].
#[derive(Debug, Clone, Copy)]
pub struct LogShape {
    pub max_cases: usize,
    pub max_events_per_case: usize,
    pub max_alphabet: usize,
}

impl Default for LogShape {
    fn default() -> Self {
        LogShape { max_cases: 200, max_events_per_case: 8, max_alphabet: 6 }
    }
}

/// Activity pool of generated logs; the completion activity comes first so it
/// is part of every alphabet.
pub const ACTIVITIES: [&str; 6] = [DEFAULT_COMPLETION, "A", "B", "C", "D", "E"];
const VALUES: [&str; 5] = ["US", " us ", "DE", "acme", "Fr"];

impl Gen {
    pub fn new(seed: u64) -> Self {
        Gen { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Uniform in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        (self.rng.next_u64() % n as u64) as usize
    }

    /// Uniform in `lo..=hi`.
    pub fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn chance(&mut self, percent: usize) -> bool {
        self.below(100) < percent
    }

    pub fn pick<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }

    pub fn base_time() -> Timestamp {
        Utc.with_ymd_and_hms(2021, 7, 1, 0, 0, 0).unwrap()
    }

    /// Times on a coarse grid so that ties are common.
    fn time(&mut self) -> Timestamp {
        Self::base_time() + Duration::days(self.below(8) as i64) + Duration::hours(6 * self.below(3) as i64)
    }

    /// A random business-flow and compliance-check log.
    pub fn log(&mut self, shape: LogShape) -> EventLog {
        let alphabet = &ACTIVITIES[..self.range(2, shape.max_alphabet.clamp(2, ACTIVITIES.len()))];
        let cases = self.range(1, shape.max_cases.max(1));
        let mut events = Vec::new();
        let mut ordinal = 0u64;
        let mut case_attributes = BTreeMap::new();
        for c in 0..cases {
            let case_id = format!("C{c:03}");
            for _ in 0..self.range(1, shape.max_events_per_case.max(1)) {
                let layer = if self.chance(15) { Layer::ComplianceCheck } else { Layer::BusinessFlow };
                let mut e = Event::new(case_id.clone(), *self.pick(alphabet), self.time(), layer, ordinal);
                ordinal += 1;
                if self.chance(40) {
                    e = e.with_attribute("country", *self.pick(&VALUES));
                }
                events.push(e);
            }
            if self.chance(30) {
                let attrs: BTreeMap<String, String> =
                    [("partner".to_string(), self.pick(&VALUES).to_string())].into_iter().collect();
                case_attributes.insert(case_id, attrs);
            }
        }
        let mut log = EventLog::from_events("generated", events).expect("generated events are unique");
        log.set_case_attributes(&case_attributes);
        log
    }

    /// A clock at or after every event of `log`.
    pub fn clock_after(&mut self, log: &EventLog) -> Timestamp {
        let last = log.events().map(|e| e.timestamp).max().unwrap_or_else(Self::base_time);
        last + Duration::hours(6 * self.below(8) as i64)
    }

    pub fn pattern(&mut self, kind: usize) -> RulePattern {
        // "Z" never occurs in generated logs.
        const POOL: [&str; 7] = [DEFAULT_COMPLETION, "A", "B", "C", "D", "E", "Z"];
        let mut a = || POOL[(self.rng.next_u64() % POOL.len() as u64) as usize].to_string();
        match kind % 5 {
            0 => RulePattern::Precedence { target: a(), guard: a() },
            1 => RulePattern::Absence { activity: a() },
            2 => RulePattern::Existence { activity: a() },
            3 => {
                let (trigger, response) = (a(), a());
                let deadline = match self.below(3) {
                    0 => None,
                    1 => Some(Deadline { amount: self.range(1, 3) as u32, unit: DurationUnit::Days }),
                    _ => Some(Deadline { amount: self.range(1, 30) as u32, unit: DurationUnit::Hours }),
                };
                RulePattern::Response { trigger, response, deadline }
            }
            _ => {
                let scope = if self.chance(50) { ContentScope::Event } else { ContentScope::Case };
                let attribute = if scope == ContentScope::Event { "country" } else { *self.pick(&["partner", "country"]) };
                let (operator, values) = match self.below(4) {
                    0 => (ContentOperator::Eq, ValueRef::Single(self.pick(&VALUES).to_string())),
                    1 => (ContentOperator::Neq, ValueRef::Single(self.pick(&VALUES).to_string())),
                    2 => {
                        let op = if self.chance(50) { ContentOperator::In } else { ContentOperator::NotIn };
                        let vs = (0..self.range(1, 3)).map(|_| self.pick(&VALUES).to_string()).collect();
                        (op, ValueRef::Inline(vs))
                    }
                    _ => {
                        let op = if self.chance(50) { ContentOperator::In } else { ContentOperator::NotIn };
                        (op, ValueRef::List("watch".to_string()))
                    }
                };
                RulePattern::Content { scope, attribute: attribute.to_string(), operator, values }
            }
        }
    }

    /// Between 1 and `max_rules` rules of random kinds, plus the `watch` list.
    pub fn registry(&mut self, max_rules: usize) -> RuleRegistry {
        let rules = (0..self.range(1, max_rules.max(1)))
            .map(|i| {
                let kind = self.below(5);
                ComplianceRule { rule_id: format!("R{}", i + 1), pattern: self.pattern(kind), description: String::new() }
            })
            .collect();
        let mut value_lists = BTreeMap::new();
        value_lists.insert(
            "watch".to_string(),
            ValueList { path: "watch.txt".into(), values: ["us", "acme"].iter().map(|s| s.to_string()).collect() },
        );
        RuleRegistry { rules, value_lists }
    }

    /// Violations over `rules` rule ids and `cases` case ids.
    pub fn violations(&mut self, count: usize, rules: usize, cases: usize) -> Vec<ViolationRecord> {
        (0..count)
            .map(|i| {
                let rule_id = format!("R{}", self.below(rules.max(1)));
                let case_id = format!("C{}", self.below(cases.max(1)));
                let t = self.time();
                ViolationRecord {
                    dedup_key: crate::engine::dedup_key(&case_id, &rule_id, i as u64),
                    case_id,
                    rule_id,
                    violation_ts: t,
                    detection_ts: t,
                    evidence: Vec::new(),
                }
            })
            .collect()
    }

    /// Splits `log` into `chunks` pieces along `cuts` chronological boundaries.
    /// Piece `i` holds the events with time in `(cut[i-1], cut[i]]`; the
    /// returned clocks are the cuts, with the last one at `final_clock`.
    pub fn chronological_split(
        &mut self,
        log: &EventLog,
        chunks: usize,
        final_clock: Timestamp,
    ) -> Vec<(EventLog, Timestamp)> {
        let mut times: Vec<Timestamp> = log.events().map(|e| e.timestamp).collect::<BTreeSet<_>>().into_iter().collect();
        let mut cuts: BTreeSet<Timestamp> = BTreeSet::new();
        while cuts.len() + 1 < chunks && !times.is_empty() {
            cuts.insert(times.remove(self.below(times.len())));
        }
        let mut bounds: Vec<Timestamp> = cuts.into_iter().collect();
        bounds.push(final_clock);
        let mut lower: Option<Timestamp> = None;
        bounds
            .into_iter()
            .map(|upper| {
                let events =
                    log.events().filter(|e| lower.is_none_or(|l| e.timestamp > l) && e.timestamp <= upper).cloned();
                let mut piece = EventLog::from_events("chunk", events).expect("subset of a valid log");
                let attrs: BTreeMap<String, BTreeMap<String, String>> =
                    log.traces.iter().map(|(k, t)| (k.clone(), t.case_attributes.clone())).collect();
                piece.set_case_attributes(&attrs);
                lower = Some(upper);
                (piece, upper)
            })
            .collect()
    }
}
