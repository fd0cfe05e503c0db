//! Property tests over generated logs, registries and violation sets.

use std::collections::{BTreeMap, BTreeSet};

use ccl_core::analytics::{discover_dfg, lead_times, summarize, Granularity, LeadTimeMetric};
use ccl_core::crl::{parse_registry, parse_registry_with, pretty_print, MapResolver, RulePattern};
use ccl_core::engine::{Engine, EngineCheckpoint, ViolationRecord, DEFAULT_COMPLETION};
use ccl_core::event::{canonical_order, merge_logs, Event, EventLog, Layer, Timestamp, Trace};
use ccl_core::followup::FollowUpLedger;
use ccl_core::layers::{compose, filter_event_types, render_timeline, MultiLayerLog};
use ccl_core::network::{build_network, components, layout, LayoutParams, NodeId};
use ccl_core::testing::{outcomes_of, reference_evaluate, Gen, LogShape};
use chrono::Duration;
use proptest::prelude::*;

fn small() -> LogShape {
    LogShape { max_cases: 30, ..LogShape::default() }
}

type Fact = (String, String, Timestamp, Layer, BTreeMap<String, String>);

fn multiset(logs: &[&EventLog]) -> Vec<Fact> {
    let mut out: Vec<Fact> = logs
        .iter()
        .flat_map(|l| l.events())
        .map(|e| (e.case_id.clone(), e.activity.clone(), e.timestamp, e.layer, e.attributes.clone()))
        .collect();
    out.sort();
    out
}

/// Deals the events of `log` into `k` logs.
fn deal(g: &mut Gen, log: &EventLog, k: usize) -> Vec<EventLog> {
    let mut parts: Vec<Vec<Event>> = vec![Vec::new(); k];
    for e in log.events() {
        parts[g.below(k)].push(e.clone());
    }
    parts.into_iter().map(|p| EventLog::from_events("part", p).unwrap()).collect()
}

fn completion() -> BTreeSet<String> {
    [DEFAULT_COMPLETION.to_string()].into_iter().collect()
}

fn keyed(records: &[ViolationRecord]) -> BTreeSet<(String, Timestamp)> {
    records.iter().map(|r| (r.dedup_key.clone(), r.violation_ts)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_order_is_idempotent(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        for trace in log.traces.values() {
            let mut shuffled = trace.clone();
            shuffled.events.reverse();
            let n = shuffled.events.len();
            for i in 0..n {
                shuffled.events.swap(i, g.below(n));
            }
            let once = canonical_order(shuffled);
            prop_assert!(once.is_canonical());
            prop_assert_eq!(&once, trace);
            prop_assert_eq!(canonical_order(once.clone()), once);
        }
    }

    #[test]
    fn merge_preserves_the_event_multiset(seed in any::<u64>(), k in 1usize..5) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let parts = deal(&mut g, &log, k);
        let merged = merge_logs(&parts).unwrap();
        prop_assert_eq!(multiset(&[&merged]), multiset(&[&log]));
        prop_assert!(merged.traces.values().all(Trace::is_canonical));

        let mut reversed = parts.clone();
        reversed.reverse();
        prop_assert_eq!(multiset(&[&merge_logs(&reversed).unwrap()]), multiset(&[&log]));
        if k >= 3 {
            // Re-number the inner result so the outer inputs stay disjoint.
            let mut inner = merge_logs(&parts[..2]).unwrap();
            let offset = log.events().map(|e| e.ordinal).max().unwrap_or(0) + 1;
            for trace in inner.traces.values_mut() {
                trace.events.iter_mut().for_each(|e| e.ordinal += offset);
            }
            let mut nested = vec![inner];
            nested.extend_from_slice(&parts[2..]);
            prop_assert_eq!(multiset(&[&merge_logs(&nested).unwrap()]), multiset(&[&log]));
        }
        prop_assert_eq!(merge_logs(std::slice::from_ref(&log)).unwrap(), log);
    }

    #[test]
    fn engine_matches_reference(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let reg = g.registry(5);
        let clock = g.clock_after(&log);
        let got = Engine::new(&reg).evaluate_records(&log, clock).unwrap();
        prop_assert_eq!(outcomes_of(&got), reference_evaluate(&reg, &completion(), &log, clock));
        prop_assert_eq!(&got, &Engine::new(&reg).evaluate_records(&log, clock).unwrap());
    }

    #[test]
    fn incremental_equals_batch(seed in any::<u64>(), chunks in 2usize..=5) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let reg = g.registry(5);
        let clock = g.clock_after(&log);
        let engine = Engine::new(&reg);
        let batch = engine.evaluate_records(&log, clock).unwrap();

        let mut checkpoint = EngineCheckpoint::default();
        let mut all = Vec::new();
        let pieces = g.chronological_split(&log, chunks, clock);
        for (piece, at) in &pieces {
            let (found, next) = engine.evaluate_incremental(piece, &checkpoint, *at).unwrap();
            all.extend(found);
            checkpoint = next;
        }
        prop_assert_eq!(keyed(&all), keyed(&batch));
        prop_assert_eq!(all.len(), batch.len());
        for (piece, _) in &pieces {
            let (again, _) = engine.evaluate_incremental(piece, &checkpoint, clock).unwrap();
            prop_assert!(again.is_empty());
        }
    }

    #[test]
    fn later_events_keep_settled_violations(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let reg = g.registry(5);
        let clock = g.clock_after(&log);
        let engine = Engine::new(&reg);
        let stable = |r: &&ViolationRecord| {
            matches!(
                reg.rule(&r.rule_id).unwrap().pattern,
                RulePattern::Precedence { .. } | RulePattern::Absence { .. } | RulePattern::Content { .. }
            )
        };
        let before: Vec<ViolationRecord> =
            engine.evaluate_records(&log, clock).unwrap().iter().filter(stable).cloned().collect();

        let extra = g.log(small());
        let shift = clock - Gen::base_time() + Duration::hours(1);
        let next_ordinal = log.events().map(|e| e.ordinal).max().unwrap_or(0) + 1;
        let appended = extra.events().filter(|e| log.trace(&e.case_id).is_some()).map(|e| {
            let mut e = e.clone();
            e.timestamp += shift;
            e.ordinal += next_ordinal;
            e
        });
        let mut grown = EventLog::from_events("grown", log.events().cloned().chain(appended)).unwrap();
        let attrs = log.traces.iter().map(|(k, t)| (k.clone(), t.case_attributes.clone())).collect();
        grown.set_case_attributes(&attrs);
        let later_clock = g.clock_after(&grown);
        let after = keyed(&engine.evaluate_records(&grown, later_clock).unwrap());
        prop_assert!(keyed(&before).is_subset(&after));
    }

    #[test]
    fn registry_round_trips(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let reg = g.registry(5);
        let text = pretty_print(&reg);
        let mut lists = MapResolver(
            [("watch.txt".to_string(), vec!["US".to_string(), " acme ".to_string()])].into_iter().collect(),
        );
        prop_assert_eq!(parse_registry_with(&text, &mut lists).unwrap(), reg);
    }

    #[test]
    fn precedence_aliases_agree(a in "[A-Za-z0-9_\"\\\\-][A-Za-z0-9 _\"\\\\-]{0,11}", b in "[A-Za-z0-9_\"\\\\-][A-Za-z0-9 _\"\\\\-]{0,11}") {
        let q = |s: &str| format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        let forms = [
            format!("rule R: {} only after {}", q(&b), q(&a)),
            format!("rule R: {} before {}", q(&a), q(&b)),
            format!("rule R: {} not before {}", q(&b), q(&a)),
        ];
        let parsed: Vec<_> = forms.iter().map(|f| parse_registry(f).unwrap()).collect();
        prop_assert_eq!(&parsed[0].rules[0].pattern, &RulePattern::Precedence { target: b.clone(), guard: a.clone() });
        prop_assert_eq!(&parsed[0], &parsed[1]);
        prop_assert_eq!(&parsed[0], &parsed[2]);
    }

    #[test]
    fn compose_and_filter(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let reg = g.registry(5);
        let clock = g.clock_after(&log);
        let by_layer = |layer: Layer| {
            EventLog::from_events(layer.as_str(), log.events().filter(|e| e.layer == layer).cloned()).unwrap()
        };
        let (b, c) = (by_layer(Layer::BusinessFlow), by_layer(Layer::ComplianceCheck));
        let v = Engine::new(&reg).evaluate_log(&log, clock).unwrap();
        let mut ledger = FollowUpLedger::default();
        let records = Engine::new(&reg).evaluate_records(&log, clock).unwrap();
        ledger.record_reports(&records, clock);
        let f = ledger.layer();

        let m = compose(&b, &c, &v, &f).unwrap();
        prop_assert_eq!(multiset(&[&m.log]), multiset(&[&b, &c, &v, &f]));
        prop_assert_eq!(m.layer_manifest.values().sum::<usize>(), m.event_count());

        let all: Vec<String> = m.log.activities().into_iter().collect();
        let keep: BTreeSet<String> = all.iter().filter(|_| g.chance(50)).cloned().collect();
        let once = filter_event_types(&m, &keep);
        prop_assert_eq!(filter_event_types(&once, &keep), once.clone());
        let original = multiset(&[&m.log]);
        for fact in multiset(&[&once.log]) {
            prop_assert!(keep.contains(&fact.1));
            prop_assert!(original.binary_search(&fact).is_ok());
        }
        for (case_id, trace) in &m.log.traces {
            let rows = render_timeline(&m, case_id).unwrap().rows;
            let expected: Vec<_> = trace.events.iter().map(|e| (e.timestamp, e.activity.clone(), e.layer)).collect();
            let got: Vec<_> = rows.into_iter().map(|r| (r.timestamp, r.activity, r.layer)).collect();
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn dfg_conservation_and_additivity(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let m = MultiLayerLog::new(log.clone());
        let filter: Option<BTreeSet<Layer>> =
            g.chance(50).then(|| [Layer::BusinessFlow].into_iter().collect());
        let dfg = discover_dfg(&m, filter.as_ref());
        let lengths: Vec<usize> = m
            .log
            .traces
            .values()
            .map(|t| t.events.iter().filter(|e| filter.as_ref().is_none_or(|f| f.contains(&e.layer))).count())
            .filter(|&n| n > 0)
            .collect();
        prop_assert_eq!(dfg.edge_traversals(), lengths.iter().map(|n| n - 1).sum::<usize>());
        prop_assert_eq!(dfg.trace_count(), lengths.len());
        prop_assert_eq!(dfg.nodes.values().sum::<usize>(), lengths.iter().sum::<usize>());
        for (from, to) in dfg.edges.keys() {
            prop_assert!(dfg.nodes.contains_key(from) && dfg.nodes.contains_key(to));
        }

        // Case ids of the second log are renamed so the union is disjoint.
        let other = g.log(small());
        let mut summed = discover_dfg(&MultiLayerLog::new(log.clone()), None);
        summed.merge(&discover_dfg(&MultiLayerLog::new(other.clone()), None));
        let renamed = EventLog::from_events(
            "o",
            other.events().map(|e| Event { case_id: format!("x{}", e.case_id), ..e.clone() }),
        )
        .unwrap();
        let union = merge_logs(&[log.clone(), renamed]).unwrap();
        prop_assert_eq!(discover_dfg(&MultiLayerLog::new(union), None), summed);
    }

    #[test]
    fn summary_totals(seed in any::<u64>(), n in 0usize..60) {
        let mut g = Gen::new(seed);
        let mut vs = g.violations(n, 4, 10);
        for gran in [Granularity::Week, Granularity::Day] {
            let s = summarize(&vs, gran);
            prop_assert_eq!(s.total(), n);
            vs.reverse();
            prop_assert_eq!(summarize(&vs, gran), s);
        }
    }

    #[test]
    fn lead_times_are_non_negative_for_later_clocks(seed in any::<u64>()) {
        let mut g = Gen::new(seed);
        let log = g.log(small());
        let reg = g.registry(5);
        let clock = g.clock_after(&log);
        let records = Engine::new(&reg).evaluate_records(&log, clock).unwrap();
        let mut ledger = FollowUpLedger::default();
        let report_at = clock + Duration::hours(g.below(48) as i64);
        ledger.record_reports(&records, report_at);
        let ticket_at = report_at + Duration::hours(g.below(48) as i64);
        for r in &records {
            ledger.record_incident(r, ticket_at);
        }
        let m = MultiLayerLog::new(merge_logs(&[log, ledger.layer()]).unwrap());
        let stats = lead_times(&m, &records);
        for row in &stats.rows {
            for metric in LeadTimeMetric::ALL {
                if let Some(d) = row.delta(metric) {
                    prop_assert!(d >= 0, "{metric} = {d}");
                }
            }
        }
    }

    #[test]
    fn network_invariants(seed in any::<u64>(), n in 1usize..40) {
        let mut g = Gen::new(seed);
        let vs = g.violations(n, 5, 15);
        let net = build_network(&vs);
        prop_assert!(net.is_well_formed());
        prop_assert_eq!(net.rule_nodes.values().sum::<usize>(), n);

        let clusters = components(&net, 3);
        prop_assert_eq!(clusters.iter().map(|c| c.node_count()).sum::<usize>(), net.node_count());
        let mut seen: BTreeSet<NodeId> = BTreeSet::new();
        for c in &clusters {
            for r in &c.rule_ids {
                prop_assert!(seen.insert(NodeId::Rule(r.clone())));
            }
            for k in &c.case_ids {
                prop_assert!(seen.insert(NodeId::Case(k.clone())));
            }
            prop_assert_eq!(c.systemic_candidate, c.case_count() >= 3);
        }
        for (r, k) in net.edges.keys() {
            let holder = clusters.iter().find(|c| c.rule_ids.contains(r)).unwrap();
            prop_assert!(holder.case_ids.contains(k));
        }

        let params = LayoutParams { max_iterations: 200, seed, ..LayoutParams::default() };
        let a = layout(&net, &params).unwrap();
        let b = layout(&net, &params).unwrap();
        prop_assert_eq!(a.without_positions(), net.clone());
        prop_assert_eq!(a.positions.len(), net.node_count());
        for (k, p) in &a.positions {
            prop_assert!(p.0.is_finite() && p.1.is_finite());
            prop_assert_eq!(p.0.to_bits(), b.positions[k].0.to_bits());
            prop_assert_eq!(p.1.to_bits(), b.positions[k].1.to_bits());
        }
    }
}
