//! Multi-layer logs and per-case timelines.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use thiserror::Error;

use crate::event::{format_timestamp, merge_logs, EventLog, Layer, LogError, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayerError {
    #[error("{input} input contains a {found} event ({activity} in case `{case_id}`)")]
    WrongLayer {
        input: Layer,
        found: Layer,
        case_id: String,
        activity: String,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("case `{0}` not found")]
    UnknownCase(String),
}

/// A log whose events span several layers, with per-layer counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MultiLayerLog {
    pub log: EventLog,
    pub layer_manifest: BTreeMap<Layer, usize>,
}

impl MultiLayerLog {
    pub fn new(log: EventLog) -> Self {
        let mut layer_manifest = BTreeMap::new();
        for e in log.events() {
            *layer_manifest.entry(e.layer).or_insert(0) += 1;
        }
        MultiLayerLog { log, layer_manifest }
    }

    pub fn event_count(&self) -> usize {
        self.log.event_count()
    }
}

/// Stacks the four layers into one log, canonically ordered per case.
pub fn compose(
    business: &EventLog,
    checks: &EventLog,
    violations: &EventLog,
    followups: &EventLog,
) -> Result<MultiLayerLog, LayerError> {
    let inputs = [
        (Layer::BusinessFlow, business),
        (Layer::ComplianceCheck, checks),
        (Layer::ComplianceViolation, violations),
        (Layer::ComplianceFollowUp, followups),
    ];
    for (expected, log) in inputs {
        if let Some(e) = log.events().find(|e| e.layer != expected) {
            return Err(LayerError::WrongLayer {
                input: expected,
                found: e.layer,
                case_id: e.case_id.clone(),
                activity: e.activity.clone(),
            });
        }
    }
    let logs: Vec<EventLog> = inputs.iter().map(|(_, l)| (*l).clone()).collect();
    Ok(MultiLayerLog::new(merge_logs(&logs)?))
}

/// Keeps only events whose activity is in `keep`. Cases left empty are dropped.
pub fn filter_event_types(log: &MultiLayerLog, keep: &BTreeSet<String>) -> MultiLayerLog {
    let mut out = EventLog::new(log.log.source.clone());
    for (case_id, trace) in &log.log.traces {
        let mut trace = trace.clone();
        trace.events.retain(|e| keep.contains(&e.activity));
        if !trace.events.is_empty() {
            out.traces.insert(case_id.clone(), trace);
        }
    }
    MultiLayerLog::new(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineRow {
    pub timestamp: Timestamp,
    pub activity: String,
    pub layer: Layer,
    pub color: &'static str,
}

/// The layered event sequence of one case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Timeline {
    pub case_id: String,
    pub rows: Vec<TimelineRow>,
}

pub fn render_timeline(log: &MultiLayerLog, case_id: &str) -> Result<Timeline, LayerError> {
    let trace = log.log.trace(case_id).ok_or_else(|| LayerError::UnknownCase(case_id.into()))?;
    let rows = trace
        .events
        .iter()
        .map(|e| TimelineRow {
            timestamp: e.timestamp,
            activity: e.activity.clone(),
            layer: e.layer,
            color: e.layer.color(),
        })
        .collect();
    Ok(Timeline { case_id: case_id.into(), rows })
}

impl Timeline {
    /// Tab-separated rows with a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("timestamp\tactivity\tlayer\tcolor\n");
        for r in &self.rows {
            let activity = r.activity.replace(['\t', '\n'], " ");
            let _ = writeln!(out, "{}\t{}\t{}\t{}", format_timestamp(&r.timestamp), activity, r.layer, r.color);
        }
        out
    }

    /// Standalone HTML page without scripts.
    pub fn to_html(&self) -> String {
        let mut out = String::new();
        let title = format!("Case {}", escape_html(&self.case_id));
        let _ = write!(
            out,
            "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n\
             <style>\nbody {{ font-family: sans-serif; }}\ntable {{ border-collapse: collapse; }}\n\
             td, th {{ padding: 4px 10px; border-bottom: 1px solid #ddd; text-align: left; }}\n\
             .swatch {{ display: inline-block; width: 12px; height: 12px; margin-right: 6px; }}\n</style>\n\
             </head>\n<body>\n<h1>{title}</h1>\n<table>\n\
             <tr><th>Timestamp</th><th>Activity</th><th>Layer</th></tr>\n"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td><span class=\"swatch\" style=\"background:{}\"></span>{}</td></tr>",
                format_timestamp(&r.timestamp),
                escape_html(&r.activity),
                r.color,
                r.layer
            );
        }
        out.push_str("</table>\n</body>\n</html>\n");
        out
    }
}

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}
